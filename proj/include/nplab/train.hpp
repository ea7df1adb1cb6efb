#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "nplab/dataset.hpp"
#include "nplab/model.hpp"

namespace nplab {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  int epochs = 5;
  int64_t batch_size = 32;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
};

struct EpochStats {
  double loss = 0.0;      // sample-weighted mean over the epoch's batches
  double accuracy = 0.0;  // classifier tasks; 0 for regression
};

// Called after each epoch's parameter updates (1-based epoch index), e.g. to
// snapshot checkpoints mid-training.
using EpochCallback = std::function<void(int epoch, const Model& m, const EpochStats& stats)>;

// Mini-batch training, deterministic in cfg.seed: epoch e shuffles with
// stream 100 + e, so histories replay bit-for-bit.  A non-finite batch loss
// aborts with the epoch index in the message.  epochs == 0 leaves the model
// untouched and returns an empty history; otherwise the history has exactly
// cfg.epochs entries.
std::vector<EpochStats> train_classifier(Model& m, const Dataset& d, const TrainConfig& cfg,
                                         const EpochCallback& on_epoch = {});

// Same loop with mean-absolute-error loss against target tensors (row i of
// targets pairs with row i of inputs).  Used for the conjugate generator.
std::vector<EpochStats> train_regression(Model& m, const Tensor& inputs, const Tensor& targets,
                                         const TrainConfig& cfg,
                                         const EpochCallback& on_epoch = {});

}  // namespace nplab
