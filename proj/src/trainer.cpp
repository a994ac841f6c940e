#include "eadnet/trainer.hpp"

#include <cmath>
#include <fstream>

namespace eadnet {

namespace {

// Stacks samples into one (B,3,H,W) tensor + (B,H,W) label map.
void make_batch(const std::vector<LabeledSample>& data, const std::vector<std::size_t>& idx,
                Tensor* images, LabelMap* labels) {
  const Dims4 d0 = data[idx[0]].image.dims;
  *images = Tensor(Dims4{static_cast<int>(idx.size()), d0.c, d0.h, d0.w});
  *labels = LabelMap(static_cast<int>(idx.size()), d0.h, d0.w);
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const LabeledSample& s = data[idx[j]];
    if (!(s.image.dims == d0)) fail_invalid("train: samples differ in size");
    std::copy(s.image.data.begin(), s.image.data.end(),
              images->data.begin() + static_cast<std::ptrdiff_t>(j * s.image.data.size()));
    std::copy(s.labels.data.begin(), s.labels.data.end(),
              labels->data.begin() + static_cast<std::ptrdiff_t>(j * s.labels.data.size()));
  }
}

}  // namespace

TrainResult train_model(const EadnetModel& model, ParamStore& store,
                        const std::vector<LabeledSample>& data, const TrainerConfig& cfg) {
  if (data.empty()) fail_invalid("train: empty dataset");
  if (cfg.batch < 1) fail_invalid("train: batch size must be positive");
  if (cfg.iters < 0) fail_invalid("train: negative iteration count");

  TrainResult result;
  if (cfg.iters == 0) return result;

  PolySchedule schedule{cfg.base_lr, cfg.iters, cfg.lr_power};
  AdamState adam;
  std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.batch));

  for (int it = 0; it < cfg.iters; ++it) {
    const double lr = poly_lr(schedule, it);
    for (int j = 0; j < cfg.batch; ++j)
      idx[static_cast<std::size_t>(j)] =
          (static_cast<std::size_t>(it) * cfg.batch + j) % data.size();
    Tensor images;
    LabelMap labels;
    make_batch(data, idx, &images, &labels);

    Tape tape;
    StoreBinding binding(tape, store, /*record_grads=*/true);
    const VarId x = op_input(tape, images);
    const auto trace = model.forward_trace(binding, x, /*training=*/true);
    const VarId loss_id =
        op_cross_entropy(tape, trace.back().second, labels, kIgnoreLabel, cfg.reduction);
    const double loss = tape.value(loss_id).data[0];
    if (!std::isfinite(loss))
      throw std::runtime_error(
          detail::cat("train: non-finite loss ", loss, " at iteration ", it));

    store.zero_grads();
    tape.backward(loss_id);
    binding.export_grads();
    if (cfg.weight_decay > 0.0) {
      for (const auto& name : store.names()) {
        ParamEntry& e = store.at(name);
        if (!e.trainable) continue;
        for (std::size_t i = 0; i < e.value.data.size(); ++i)
          e.grad.data[i] += static_cast<float>(cfg.weight_decay) * e.value.data[i];
      }
    }
    adam_step(store, adam, static_cast<float>(lr));
    result.log.push_back(TrainRecord{it, lr, loss});
  }
  if (!cfg.log_path.empty()) write_loss_log(cfg.log_path, result.log);
  return result;
}

MiouResult evaluate_model(const EadnetModel& model, const ParamStore& store,
                          const std::vector<LabeledSample>& data) {
  if (data.empty()) fail_invalid("evaluate: empty dataset");
  ConfusionMatrix cm(model.config().num_classes);
  for (const auto& sample : data) {
    const Tensor logits = model.infer(store, sample.image);
    accumulate(cm, argmax_channels(logits), sample.labels);
  }
  return miou(cm);
}

void write_loss_log(const std::string& path, const std::vector<TrainRecord>& log) {
  std::ofstream f(path);
  if (!f) fail_io("cannot open '", path, "' for writing");
  f << "iter,lr,loss\n";
  for (const auto& r : log) f << r.iter << ',' << r.lr << ',' << r.loss << '\n';
  if (!f) fail_io("failed writing '", path, "'");
}

}  // namespace eadnet
