#pragma once

#include <cstdint>

namespace strider {

struct TrainConfig {
  int steps = 2000;      // pre-training optimizer steps
  int epochs = 20;       // fine-tuning epochs
  int batch = 64;
  double lr = 1e-3;
  double warmup_fraction = 0.05;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  // Fine-tuning stops early once validation accuracy reaches this value
  // (values above 1 disable early stopping).
  double target_val_accuracy = 2.0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

}  // namespace strider
