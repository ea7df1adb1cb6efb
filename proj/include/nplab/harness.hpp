#pragma once

#include "nplab/config.hpp"
#include "nplab/report.hpp"

namespace nplab {

// Runs one configured experiment end to end and emits its report under
// cfg.out_dir.  Stages execute in order; a stage failure rethrows the same
// error type with the stage name prefixed, leaving the artifacts written so
// far on disk for inspection (the report itself is only emitted on success).
//
// Determinism: with a fixed config and seed, every artifact and every report
// byte outside the "timestamps" object is identical across runs.  Seed
// derivation is fixed: train split uses seed, test split seed + 1; the
// classifier initializes and trains with seed, the generator with seed + 1,
// Monte-Carlo packet sampling with seed + 2.
MetricsReport run_experiment(const ExperimentConfig& cfg);

}  // namespace nplab
