#pragma once

#include <cstdint>
#include <vector>

#include "eadnet/tensor.hpp"

namespace eadnet {

// K x K counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  std::uint64_t at(int truth, int pred) const;
  std::uint64_t& at(int truth, int pred);
  std::uint64_t total() const;
  // Shards accumulated per image merge by addition.
  void merge(const ConfusionMatrix& other);

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

// Counts every non-ignored pixel; labels must be < num_classes or the
// ignore value.
void accumulate(ConfusionMatrix& cm, const LabelMap& predictions, const LabelMap& truth);

struct MiouResult {
  double miou = 0.0;
  std::vector<double> per_class;  // meaningful only where valid
  std::vector<bool> valid;        // class appears in truth or prediction
};

// IoU_k = diag / (row + col - diag); classes absent from both truth and
// prediction are excluded from the mean.
MiouResult miou(const ConfusionMatrix& cm);

}  // namespace eadnet
