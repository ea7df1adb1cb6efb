// Attack procedures: step identities that hold exactly (zero budget,
// telescoping, antisymmetry, the closed-form linear-model step), the l-inf
// budget as measured in doubles, target modes, and the conjugate persistence
// round trip.  Statistical trends (RA < TA, augmentation helps) run on a
// small trained blob classifier.
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nplab/attacks.hpp"
#include "nplab/common.hpp"
#include "nplab/model.hpp"
#include "nplab/synthetic.hpp"
#include "nplab/train.hpp"

using namespace nplab;

namespace {

// One trained fixture shared by the statistical subcases.
const Dataset& blob_data() {
  static const Dataset d = make_synthetic({SyntheticKind::gaussian_blobs, 2, 80, 0.45, 101});
  return d;
}

const Model& blob_model() {
  static const Model m = [] {
    Model model = build_model(MlpSpec{{2, 16, 2}}, 12);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.lr = 1e-2;
    cfg.seed = 12;
    (void)train_classifier(model, blob_data(), cfg);
    return model;
  }();
  return m;
}

AttackSpec blob_attack_spec() {
  AttackSpec spec;
  spec.epsilon = 0.4;  // sized to the blob feature scale, not image units
  spec.alpha = 0.1;
  spec.steps = 4;
  spec.value_lo = blob_data().value_lo;
  spec.value_hi = blob_data().value_hi;
  return spec;
}

}  // namespace

TEST_CASE("attack spec validation") {
  AttackSpec spec;
  spec.epsilon = -0.1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = AttackSpec{};
  spec.steps = -1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = AttackSpec{};
  spec.value_lo = 1.0;
  spec.value_hi = 0.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("fgsm step identities") {
  const Model& m = blob_model();
  const Tensor x0 = rows_block(blob_data().inputs, 0, 8);
  const std::vector<int> y(blob_data().labels.begin(), blob_data().labels.begin() + 8);

  SUBCASE("zero budget returns the input unchanged") {
    AttackSpec spec = blob_attack_spec();
    spec.epsilon = 0.0;
    const Tensor xa = fgsm(m, x0, y, spec);
    CHECK(xa.values() == x0.values());
  }

  SUBCASE("closed-form linear model: x + eps * sign(2w(wx - y))") {
    // Scalar objective l = (w*x - t)^2 with w = 1.5, t = 2, so the gradient
    // at x is 2w(wx - t) and the step direction is its sign.
    const double w = 1.5, t = 2.0, eps = 0.25;
    LossBuilder objective = [&](Graph& g, NodeId xn) {
      NodeId pred = g.scalar_mul(xn, w);
      return g.l2_loss(pred, g.leaf(Tensor({1, 1}, {t})));
    };
    AttackSpec spec;
    spec.epsilon = eps;
    spec.clamp_to_valid_range = false;
    for (double x : {0.5, 2.0, -1.0}) {
      const Tensor xa = fgsm_objective(objective, Tensor({1, 1}, {x}), spec);
      const double expected = x + eps * (2.0 * w * (w * x - t) > 0.0 ? 1.0 : -1.0);
      CHECK(xa[0] == doctest::Approx(expected).epsilon(1e-15));
    }
  }

  SUBCASE("attack and augment steps are antisymmetric") {
    // On a zero input the perturbations are represented exactly, so the
    // antisymmetry is bitwise.
    AttackSpec spec = blob_attack_spec();
    spec.clamp_to_valid_range = false;
    Tensor zero = Tensor::zeros(x0.shape());
    const Tensor xa = fgsm(m, zero, y, spec);
    spec.direction = AttackDirection::augment;
    const Tensor xg = fgsm(m, zero, y, spec);
    REQUIRE(xa.size() == xg.size());
    for (int64_t i = 0; i < xa.size(); ++i) CHECK(xa[i] == -xg[i]);
  }

  SUBCASE("targeted step moves toward the target class") {
    // Descending the target-class loss must not decrease the target logit.
    AttackSpec spec = blob_attack_spec();
    spec.target = AttackTarget::fixed_class;
    spec.target_class = 0;
    spec.clamp_to_valid_range = false;
    const Tensor xa = fgsm(m, x0, y, spec);
    Graph g;
    const Tensor before = g.value(model_forward(g, m, g.leaf(x0)));
    const Tensor after = g.value(model_forward(g, m, g.leaf(xa)));
    double margin_before = 0.0, margin_after = 0.0;
    for (int64_t r = 0; r < 8; ++r) {
      margin_before += before[r * 2 + 0] - before[r * 2 + 1];
      margin_after += after[r * 2 + 0] - after[r * 2 + 1];
    }
    CHECK(margin_after > margin_before);
  }
}

TEST_CASE("pgd budget and accuracy relations") {
  const Model& m = blob_model();
  const Dataset& d = blob_data();
  const AttackSpec spec = blob_attack_spec();

  SUBCASE("cumulative perturbation respects the l-inf budget exactly") {
    const Tensor x0 = rows_block(d.inputs, 0, 32);
    const std::vector<int> y(d.labels.begin(), d.labels.begin() + 32);
    const Tensor xa = pgd(m, x0, y, spec);
    for (int64_t i = 0; i < x0.size(); ++i)
      CHECK(std::fabs(xa[i] - x0[i]) <= spec.epsilon);
    // With 4 steps of 0.1 the budget 0.4 should actually be reached somewhere.
    double max_move = 0.0;
    for (int64_t i = 0; i < x0.size(); ++i)
      max_move = std::max(max_move, std::fabs(xa[i] - x0[i]));
    CHECK(max_move > 0.9 * spec.epsilon);
  }

  SUBCASE("values stay inside the valid range") {
    const Tensor x0 = rows_block(d.inputs, 0, 32);
    const std::vector<int> y(d.labels.begin(), d.labels.begin() + 32);
    const Tensor xa = pgd(m, x0, y, spec);
    for (int64_t i = 0; i < xa.size(); ++i) {
      CHECK(xa[i] >= spec.value_lo);
      CHECK(xa[i] <= spec.value_hi);
    }
  }

  SUBCASE("zero budget makes robust accuracy equal test accuracy") {
    AttackSpec zero = spec;
    zero.epsilon = 0.0;
    CHECK(robust_accuracy(m, d, zero) == evaluate_accuracy(m, d));
  }

  SUBCASE("a real budget does not raise accuracy above clean + slack") {
    const double ta = evaluate_accuracy(m, d);
    const double ra = robust_accuracy(m, d, spec);
    CHECK(ra <= ta + 0.02);
    CHECK(ra < ta);  // this fixture is genuinely attackable
  }

  SUBCASE("augment direction is rejected for robust accuracy") {
    AttackSpec bad = spec;
    bad.direction = AttackDirection::augment;
    CHECK_THROWS_AS((void)robust_accuracy(m, d, bad), ConfigError);
  }

  SUBCASE("least-likely targeting degrades accuracy at least as a trend") {
    AttackSpec ll = spec;
    ll.target = AttackTarget::least_likely;
    CHECK(robust_accuracy(m, d, ll) <= evaluate_accuracy(m, d));
  }
}

TEST_CASE("opposite-fgsm iteration and conjugates") {
  const Model& m = blob_model();
  const Dataset& d = blob_data();
  const double eps = 0.05;

  SUBCASE("zero steps yield a zero conjugate and a single-state trajectory") {
    const Tensor x0 = rows_block(d.inputs, 0, 1).reshaped({2});
    OppositeTrajectory tr = opposite_fgsm_iterate(m, x0, d.labels[0], eps, 0);
    CHECK(tr.states.size() == 1);
    CHECK(tr.step_deltas.empty());
    CHECK(tr.record.delta.max_abs() == 0.0);
  }

  SUBCASE("telescoping holds to the last bit and steps are eps-sized") {
    const Tensor x0 = rows_block(d.inputs, 3, 4).reshaped({2});
    const int n = 12;
    OppositeTrajectory tr = opposite_fgsm_iterate(m, x0, d.labels[3], eps, n);
    REQUIRE(tr.states.size() == (size_t)n + 1);
    REQUIRE(tr.step_deltas.size() == (size_t)n);

    Tensor folded = Tensor::zeros(x0.shape());
    for (const Tensor& dn : tr.step_deltas) {
      CHECK(dn.max_abs() <= eps);
      for (int64_t i = 0; i < folded.size(); ++i) folded[i] += dn[i];
    }
    CHECK(folded.values() == tr.record.delta.values());
    for (int64_t i = 0; i < x0.size(); ++i)
      CHECK(tr.states.back()[i] == x0[i] + tr.record.delta[i]);
    CHECK(tr.record.delta.max_abs() <= n * eps + 1e-12);
  }

  SUBCASE("batched construction matches the per-sample iteration bitwise") {
    const Dataset small = subset(d, 9, 7);
    const auto records = build_conjugate_dataset(m, small, eps, 5);
    REQUIRE(records.size() == 9);
    for (int64_t i = 0; i < 9; ++i) {
      const Tensor x0 = rows_block(small.inputs, i, i + 1).reshaped({2});
      OppositeTrajectory tr = opposite_fgsm_iterate(m, x0, small.labels[(size_t)i], eps, 5);
      CHECK(records[(size_t)i].delta.values() == tr.record.delta.values());
      CHECK(records[(size_t)i].label == small.labels[(size_t)i]);
    }
  }

  SUBCASE("augmentation does not hurt accuracy on the training fixture") {
    const auto records = build_conjugate_dataset(m, d, eps, 10);
    const Dataset augmented = conjugate_augmented(d, records);
    CHECK(evaluate_accuracy(m, augmented) >= evaluate_accuracy(m, d));
  }
}

TEST_CASE("composed generator+classifier attacks") {
  const Model& cls = blob_model();
  const Dataset& d = blob_data();

  SUBCASE("an all-zero generator changes nothing") {
    // Image-shaped path: tiny convnet + matching generator, both on 8x8.
    const Dataset digits8 = [] {
      Dataset out;
      out.inputs = Tensor::zeros({12, 1, 8, 8});
      RngStream rng(3, 0);
      rng.fill_uniform(out.inputs, 0.0, 1.0);
      out.labels = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2};
      out.class_count = 3;
      return out;
    }();
    Model conv = build_model(ConvNetSpec{1, 8, 4, 8, 3}, 2);
    Model gen = build_model(UnetSpec{1, 8, 4, 2}, 2);
    for (auto& [name, t] : gen.params)
      for (double& v : t.values()) v = 0.0;

    AttackSpec spec;
    spec.epsilon = 0.1;
    spec.alpha = 0.025;
    spec.steps = 4;
    CHECK(clean_accuracy_composed(gen, conv, digits8) == evaluate_accuracy(conv, digits8));
    CHECK(robust_accuracy_composed(gen, conv, digits8, spec) ==
          robust_accuracy(conv, digits8, spec));
  }

  SUBCASE("zero budget equals composed clean accuracy") {
    Model conv = build_model(ConvNetSpec{1, 8, 4, 8, 3}, 2);
    Model gen = build_model(UnetSpec{1, 8, 4, 2}, 9);
    Dataset digits8;
    digits8.inputs = Tensor::zeros({6, 1, 8, 8});
    RngStream rng(4, 0);
    rng.fill_uniform(digits8.inputs, 0.0, 1.0);
    digits8.labels = {0, 1, 2, 0, 1, 2};
    digits8.class_count = 3;

    AttackSpec spec;
    spec.epsilon = 0.0;
    CHECK(robust_accuracy_composed(gen, conv, digits8, spec) ==
          clean_accuracy_composed(gen, conv, digits8));
  }

  SUBCASE("shape mismatch between generator and classifier is rejected") {
    Model conv = build_model(ConvNetSpec{1, 8, 4, 8, 3}, 2);
    Model gen16 = build_model(UnetSpec{1, 16, 4, 2}, 2);
    Dataset wide;
    wide.inputs = Tensor::zeros({2, 1, 16, 16});
    wide.labels = {0, 1};
    wide.class_count = 3;
    AttackSpec spec;
    CHECK_THROWS_AS((void)robust_accuracy_composed(gen16, conv, wide, spec), ConfigError);
  }

  (void)cls;
  (void)d;
}

TEST_CASE("conjugate persistence round trip") {
  const Model& m = blob_model();
  const Dataset small = subset(blob_data(), 6, 3);
  ConjugateSet set;
  set.records = build_conjugate_dataset(m, small, 0.05, 4);
  set.epsilon = 0.05;
  set.steps = 4;
  set.model_hash = "0123456789abcdef";

  const auto dir = std::filesystem::temp_directory_path();
  const auto manifest = dir / "nplab_conj_manifest.json";
  const auto payload = "nplab_conj_payload.bin";

  SUBCASE("round trip is bit-exact") {
    save_conjugates(set, manifest, payload);
    const ConjugateSet back = load_conjugates(manifest);
    CHECK(back.epsilon == set.epsilon);
    CHECK(back.steps == set.steps);
    CHECK(back.model_hash == set.model_hash);
    REQUIRE(back.records.size() == set.records.size());
    for (size_t i = 0; i < set.records.size(); ++i) {
      CHECK(back.records[i].label == set.records[i].label);
      CHECK(back.records[i].x0.values() == set.records[i].x0.values());
      CHECK(back.records[i].delta.values() == set.records[i].delta.values());
    }
    std::filesystem::remove(manifest);
    std::filesystem::remove(dir / payload);
  }

  SUBCASE("payload size mismatch is rejected") {
    save_conjugates(set, manifest, payload);
    const auto full = std::filesystem::file_size(dir / payload);
    std::filesystem::resize_file(dir / payload, full - 8);
    CHECK_THROWS_WITH_AS((void)load_conjugates(manifest), doctest::Contains("expected"),
                         DataError);
    std::filesystem::remove(manifest);
    std::filesystem::remove(dir / payload);
  }

  SUBCASE("missing manifest is rejected") {
    CHECK_THROWS_AS((void)load_conjugates(dir / "nplab_conj_nope.json"), DataError);
  }
}
