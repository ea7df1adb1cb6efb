#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nplab/autograd.hpp"
#include "nplab/dataset.hpp"
#include "nplab/model.hpp"

namespace nplab {

// attack ascends the loss (adversarial); augment descends it (the opposite
// step used to build conjugates).
enum class AttackDirection { attack, augment };

// true_label: gradient of the loss at the sample's own label.
// fixed_class: descend toward one chosen class.
// least_likely: descend toward the currently least-probable class,
// recomputed from the logits at every step.
enum class AttackTarget { true_label, fixed_class, least_likely };

struct AttackSpec {
  double epsilon = 0.1;  // l-inf budget, input units
  double alpha = 0.025;  // per-step size
  int steps = 4;
  AttackDirection direction = AttackDirection::attack;
  AttackTarget target = AttackTarget::true_label;
  int target_class = 0;  // fixed_class mode only
  bool clip_perturbation = true;
  // Adversarial images must stay valid images; conjugate construction must
  // not clamp or the telescoping identity breaks.
  bool clamp_to_valid_range = true;
  double value_lo = 0.0;
  double value_hi = 1.0;

  void validate() const;  // epsilon/alpha >= 0, steps >= 0, lo < hi
};

// Differentiable classifier view: appends the logits subgraph for an input
// node.  Lets the attack loop run unchanged over a bare classifier or the
// generator+classifier composition.
using LogitsBuilder = std::function<NodeId(Graph&, NodeId)>;

LogitsBuilder classifier_builder(const Model& classifier);
// Logits of classifier(x + delta_scale * generator(x)); attack gradients flow
// through both.  delta_scale undoes the normalization applied to the
// generator's training targets (a tanh head cannot reach a raw N-step
// displacement, so the generator learns delta / delta_scale).
LogitsBuilder composed_builder(const Model& generator, const Model& classifier,
                               double delta_scale = 1.0);

// Scalar objective view for the generic attack core; classifier attacks wrap
// their cross-entropy (with target-mode orientation folded in) as one of
// these, and custom objectives plug in directly.
using LossBuilder = std::function<NodeId(Graph&, NodeId)>;

// One epsilon-sized step on an arbitrary scalar objective: ascends for
// direction=attack, descends for augment.  Target modes do not apply here.
Tensor fgsm_objective(const LossBuilder& loss, const Tensor& x0, const AttackSpec& spec);
Tensor pgd_objective(const LossBuilder& loss, const Tensor& x0, const AttackSpec& spec);

// Single step of size epsilon along sign(grad); spec.alpha and spec.steps are
// ignored.  x0 is a batch (leading batch axis), y one label per row.
Tensor fgsm(const LogitsBuilder& f, const Tensor& x0, const std::vector<int>& y,
            const AttackSpec& spec);
Tensor fgsm(const Model& m, const Tensor& x0, const std::vector<int>& y, const AttackSpec& spec);

// steps iterations of size alpha; the cumulative perturbation is clipped into
// [-epsilon, epsilon] (clip_perturbation), then the image is clamped to the
// value range (clamp_to_valid_range).  The returned batch satisfies
// max_i |x_adv[i] - x0[i]| <= epsilon exactly as measured in doubles.
Tensor pgd(const LogitsBuilder& f, const Tensor& x0, const std::vector<int>& y,
           const AttackSpec& spec);
Tensor pgd(const Model& m, const Tensor& x0, const std::vector<int>& y, const AttackSpec& spec);

// One sample's accumulated opposite-FGSM output: x0 and the conjugate delta
// (sum of the per-step moves), never clamped.
struct ConjugateRecord {
  Tensor x0;     // feature shape, no batch axis
  int label = 0;
  Tensor delta;  // same shape as x0
  int steps = 0;
  double epsilon = 0.0;
};

struct OppositeTrajectory {
  std::vector<Tensor> states;       // X_0 .. X_N, each feature-shaped
  std::vector<Tensor> step_deltas;  // D_0 .. D_{N-1}
  ConjugateRecord record;           // record.delta accumulates exactly sum(D_n)
};

// X_{n+1} = X_n - epsilon * sign(grad of the sample's loss at its own label).
// States are materialized as x0 + (running delta), so X_N == x0 + delta holds
// bit-for-bit and delta telescopes exactly.
OppositeTrajectory opposite_fgsm_iterate(const Model& m, const Tensor& x0, int label,
                                         double epsilon, int steps);

// One record per dataset sample, batched internally; bit-identical to running
// opposite_fgsm_iterate sample by sample.
std::vector<ConjugateRecord> build_conjugate_dataset(const Model& m, const Dataset& d,
                                                     double epsilon, int steps);

// Dataset view of x0 + delta with the original labels; the value range widens
// to cover the shifted samples.
Dataset conjugate_augmented(const Dataset& d, const std::vector<ConjugateRecord>& records);

// Accuracy on pgd-attacked inputs (spec.direction must be attack); the value
// range is taken from the dataset, not the spec.
double robust_accuracy(const Model& m, const Dataset& d, const AttackSpec& spec);
double robust_accuracy_composed(const Model& generator, const Model& classifier, const Dataset& d,
                                const AttackSpec& spec, double delta_scale = 1.0);
double clean_accuracy_composed(const Model& generator, const Model& classifier, const Dataset& d,
                               double delta_scale = 1.0);

// Persistence: manifest JSON (epsilon, steps, count, feature shape, model
// checkpoint hash, payload filename) + binary payload of (x0, delta) pairs.
// Round trips are bit-exact.
struct ConjugateSet {
  std::vector<ConjugateRecord> records;
  double epsilon = 0.0;
  int steps = 0;
  std::string model_hash;  // checkpoint file hash the records were built from
};

void save_conjugates(const ConjugateSet& set, const std::filesystem::path& manifest_path,
                     const std::string& payload_filename);
ConjugateSet load_conjugates(const std::filesystem::path& manifest_path);

}  // namespace nplab
