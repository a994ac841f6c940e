#include "eadnet/metrics.hpp"

namespace eadnet {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) fail_invalid("confusion matrix: need at least one class");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

std::uint64_t ConfusionMatrix::at(int truth, int pred) const {
  return counts_[static_cast<std::size_t>(truth) * k_ + pred];
}

std::uint64_t& ConfusionMatrix::at(int truth, int pred) {
  return counts_[static_cast<std::size_t>(truth) * k_ + pred];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) fail_invalid("confusion matrix: merge of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

void accumulate(ConfusionMatrix& cm, const LabelMap& predictions, const LabelMap& truth) {
  if (predictions.n != truth.n || predictions.h != truth.h || predictions.w != truth.w)
    fail_invalid("accumulate: prediction and truth maps differ in size");
  const int k = cm.num_classes();
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const int t = truth.data[i];
    if (t == kIgnoreLabel) continue;
    const int p = predictions.data[i];
    if (t >= k) fail_invalid("accumulate: truth label ", t, " out of range for ", k, " classes");
    if (p >= k)
      fail_invalid("accumulate: predicted label ", p, " out of range for ", k, " classes");
    ++cm.at(t, p);
  }
}

MiouResult miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) fail_invalid("miou: no evaluated pixels");
  const int k = cm.num_classes();
  MiouResult res;
  res.per_class.assign(static_cast<std::size_t>(k), 0.0);
  res.valid.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t diag = cm.at(c, c);
    const std::uint64_t uni = row + col - diag;
    if (uni == 0) continue;  // class absent everywhere: 0/0, excluded
    const double iou = static_cast<double>(diag) / static_cast<double>(uni);
    res.per_class[static_cast<std::size_t>(c)] = iou;
    res.valid[static_cast<std::size_t>(c)] = true;
    sum += iou;
    ++present;
  }
  res.miou = present > 0 ? sum / present : 0.0;
  return res;
}

}  // namespace eadnet
