#pragma once

#include <string>
#include <vector>

#include "eadnet/metrics.hpp"
#include "eadnet/network.hpp"
#include "eadnet/synth.hpp"

namespace eadnet {

struct TrainerConfig {
  int iters = 2000;
  int batch = 4;
  double base_lr = 5e-4;
  double lr_power = 0.9;
  double weight_decay = 0.0;
  Reduction reduction = Reduction::Mean;
  std::string log_path;  // optional CSV "iter,lr,loss"
};

struct TrainRecord {
  int iter = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<TrainRecord> log;
};

// Adam + poly schedule over deterministic round-robin batches. Aborts
// with a diagnostic on non-finite loss.
TrainResult train_model(const EadnetModel& model, ParamStore& store,
                        const std::vector<LabeledSample>& data, const TrainerConfig& cfg);

MiouResult evaluate_model(const EadnetModel& model, const ParamStore& store,
                          const std::vector<LabeledSample>& data);

void write_loss_log(const std::string& path, const std::vector<TrainRecord>& log);

}  // namespace eadnet
