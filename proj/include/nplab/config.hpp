#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace nplab {

// One JSON document configures a whole experiment.  Unknown keys are rejected
// at every nesting level, "seed" is mandatory, and every other field has a
// pinned default, so the canonical (fully defaulted) form below is a complete
// record of what a run used.

enum class DatasetKind { digits, digits_striped, blobs, two_moons, idx, cifar10 };
enum class ModelKind { mlp, convnet };

struct DatasetSection {
  DatasetKind kind = DatasetKind::digits;
  int64_t train_count = 2000;
  int64_t test_count = 1000;
  // blobs / two-moons geometry
  int64_t dimension = 2;
  double noise = 0.2;
  // digit-corpus texture
  double pixel_noise = 0.08;
  double stripe_amplitude = 0.15;
  double stripe_frequency = 10.0;
  // digits kinds round-trip through IDX files under <out>/data by default so
  // the on-disk codec sits on the hot path of every run.
  bool via_idx = true;
  // kind == idx
  std::string train_images, train_labels, test_images, test_labels;
  // kind == cifar10
  std::string train_bin, test_bin;
};

struct ModelSection {
  ModelKind kind = ModelKind::convnet;
  // mlp: hidden widths only; input/output widths come from the data.
  std::vector<int64_t> hidden = {128};
  std::string activation = "relu";
  // convnet channel plan
  int64_t c1 = 8;
  int64_t c2 = 16;
};

struct TrainSection {
  int64_t epochs = 5;
  int64_t batch_size = 32;
  double lr = 1e-3;
  std::string optimizer = "adam";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // epochs (1-based) at which to snapshot the model; also the checkpoint set
  // examined by the uncertainty and spectra studies.
  std::vector<int64_t> checkpoint_epochs;
};

struct AttackSection {
  double epsilon = 0.1;
  double alpha = 0.025;
  int64_t steps = 4;
  std::string target = "true-label";
  int64_t target_class = 0;
};

struct ConjugateSection {
  double epsilon = 0.1;
  int64_t steps = 50;
  // augment experiment: the N values at which accuracy is recorded.
  std::vector<int64_t> record_steps = {0, 50};
};

struct GeneratorSection {
  int64_t base_channels = 8;
  int64_t depth = 3;
  int64_t epochs = 5;
  int64_t batch_size = 32;
  double lr = 1e-3;
};

struct PacketSection {
  double pad = 4.0;
  int64_t nodes = 128;
  // empty = every class present in the dataset
  std::vector<int64_t> labels;
  bool save_dumps = true;
  int64_t mc_samples = 0;
};

struct SpectralSection {
  int64_t r0 = 12, r1 = 18, c0 = 12, c1 = 18;
  bool grayscale = true;
  double epsilon = 0.1;
  int64_t probe_count = 200;
};

struct ExperimentConfig {
  std::string experiment;  // set from the subcommand
  uint64_t seed = 0;
  std::string out_dir = "run-out";
  DatasetSection dataset;
  ModelSection model;
  TrainSection train;
  AttackSection attack;
  ConjugateSection conjugate;
  GeneratorSection generator;
  PacketSection packet;
  SpectralSection spectral;
  // standalone stages that consume earlier artifacts
  std::string checkpoint;   // classifier checkpoint path (attack/augment/gen-conjugates)
  std::string conjugates;   // conjugate manifest path (train-generator)
  // Fully defaulted document, insertion-ordered; hashed for provenance.
  // out_dir is excluded: it names a run location, so two runs of one
  // experiment into different directories still hash (and report) the same.
  nlohmann::ordered_json canonical;
};

// Parses and validates; experiment_name comes from the CLI subcommand and
// must match the optional "experiment" field when that is present.
ExperimentConfig parse_config(const nlohmann::ordered_json& doc, const std::string& experiment_name);

nlohmann::ordered_json load_config_file(const std::string& path);

// --override key=value with dotted paths; value parsed as JSON when possible,
// kept as a string otherwise.
void apply_override(nlohmann::ordered_json& doc, const std::string& assignment);

const char* dataset_kind_name(DatasetKind k);

}  // namespace nplab
