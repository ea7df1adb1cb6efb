// Model construction, forward shapes, training behavior, and the checkpoint
// round trip.  Expected numbers are closed-form (parameter arithmetic, the
// two-logit cross-entropy value) or structural (shape traces, determinism).
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nplab/checkpoint.hpp"
#include "nplab/common.hpp"
#include "nplab/model.hpp"
#include "nplab/synthetic.hpp"
#include "nplab/train.hpp"

using namespace nplab;

namespace {

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("model construction and initialization") {
  SUBCASE("mlp [2,16,2] has 82 parameters") {
    // 2*16 + 16 + 16*2 + 2
    Model m = build_model(MlpSpec{{2, 16, 2}}, 7);
    CHECK(m.param_count() == 82);
    CHECK(m.params.size() == 4);  // two weight/bias pairs
    CHECK(m.param("fc0.w").shape() == std::vector<int64_t>{2, 16});
    CHECK(m.param("fc1.b").shape() == std::vector<int64_t>{2});
  }

  SUBCASE("same seed builds identical weights, different seeds differ") {
    Model a = build_model(MlpSpec{{2, 16, 2}}, 7);
    Model b = build_model(MlpSpec{{2, 16, 2}}, 7);
    Model c = build_model(MlpSpec{{2, 16, 2}}, 8);
    CHECK(a.param("fc0.w").values() == b.param("fc0.w").values());
    CHECK(a.param("fc0.w").values() != c.param("fc0.w").values());
  }

  SUBCASE("biases start at zero; weights stay inside the fan bound") {
    Model m = build_model(MlpSpec{{3, 5, 2}, Activation::relu}, 11);
    CHECK(m.param("fc0.b").max_abs() == 0.0);
    // He-uniform bound for fan_in 3.
    CHECK(m.param("fc0.w").max_abs() <= std::sqrt(6.0 / 3.0));
  }

  SUBCASE("bad plans are rejected") {
    CHECK_THROWS_AS((void)build_model(MlpSpec{{4}}, 0), ConfigError);
    CHECK_THROWS_AS((void)build_model(ConvNetSpec{1, 30, 8, 16, 10}, 0), ConfigError);
    // depth 4 needs the extent divisible by 8; 28 is not.
    CHECK_THROWS_AS((void)build_model(UnetSpec{1, 28, 8, 4}, 0), ConfigError);
  }
}

TEST_CASE("forward shapes and closed-form losses") {
  SUBCASE("convnet logits are (batch, classes)") {
    Model m = build_model(ConvNetSpec{}, 3);
    Graph g;
    NodeId out = model_forward(g, m, g.leaf(Tensor::zeros({2, 1, 28, 28})));
    CHECK(g.value(out).shape() == std::vector<int64_t>{2, 10});
  }

  SUBCASE("generator output shape equals input shape, values in [-1, 1]") {
    Model m = build_model(UnetSpec{1, 28, 4, 3}, 5);
    Graph g;
    Tensor x = Tensor::zeros({2, 1, 28, 28});
    RngStream rng(9, 0);
    rng.fill_uniform(x, 0.0, 1.0);
    NodeId out = model_forward(g, m, g.leaf(x));
    const Tensor& v = g.value(out);
    CHECK(v.shape() == x.shape());
    CHECK(v.max_abs() <= 1.0);  // tanh head
  }

  SUBCASE("wrong input shape names the expectation") {
    Model m = build_model(ConvNetSpec{}, 3);
    Graph g;
    CHECK_THROWS_WITH_AS((void)model_forward(g, m, g.leaf(Tensor::zeros({2, 1, 27, 27}))),
                         doctest::Contains("(2, 1, 27, 27)"), ConfigError);
  }

  SUBCASE("mlp flattens image-shaped batches to the same logits") {
    Model m = build_model(MlpSpec{{12, 6, 3}}, 21);
    Tensor flat = Tensor::zeros({2, 12});
    RngStream rng(4, 0);
    rng.fill_uniform(flat, -1.0, 1.0);
    Graph g;
    NodeId a = model_forward(g, m, g.leaf(flat));
    NodeId b = model_forward(g, m, g.leaf(flat.reshaped({2, 3, 2, 2})));
    CHECK(g.value(a).values() == g.value(b).values());
    CHECK_THROWS_WITH_AS((void)model_forward(g, m, g.leaf(Tensor::zeros({2, 13}))),
                         doctest::Contains("13"), ConfigError);
  }

  SUBCASE("untrained 10-class loss sits near ln 10") {
    Model m = build_model(ConvNetSpec{}, 17);
    Tensor x = Tensor::zeros({8, 1, 28, 28});
    RngStream rng(17, 1);
    rng.fill_uniform(x, 0.0, 1.0);
    const double loss = classifier_loss(m, x, {0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(0.5 / std::log(10.0)));
  }

  SUBCASE("two-logit cross-entropy matches the closed form") {
    // Logits (1, -1), true class 0: loss = ln(1 + e^-2).
    Graph g;
    NodeId loss = g.softmax_cross_entropy(g.leaf(Tensor({1, 2}, {1.0, -1.0})), {0});
    CHECK(g.value(loss).item() == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(g.value(loss).item() == doctest::Approx(0.126928).epsilon(1e-5));
  }

  SUBCASE("L1 loss vanishes on identical tensors") {
    Model m = build_model(UnetSpec{1, 8, 2, 2}, 1);
    Graph g;
    Tensor x = Tensor::zeros({1, 1, 8, 8});
    NodeId out = model_forward(g, m, g.leaf(x));
    Tensor same = g.value(out);
    NodeId loss = g.l1_loss(out, g.leaf(same));
    CHECK(g.value(loss).item() == 0.0);
  }
}

TEST_CASE("accuracy evaluation") {
  // A fixed linear model keeps the argmax fully predictable.
  Model m = build_model(MlpSpec{{2, 3}}, 0);
  for (auto& [name, t] : m.params)
    for (double& v : t.values()) v = 0.0;
  // Logits = (x0, x1, 0).
  m.params[0].second = Tensor({2, 3}, {1, 0, 0, 0, 1, 0});

  Dataset d;
  d.inputs = Tensor({4, 2}, {2, 1, /**/ -1, 3, /**/ -2, -2, /**/ 5, 5});
  d.labels = {0, 1, 0, 1};
  d.class_count = 3;
  d.value_lo = -5.0;
  d.value_hi = 5.0;

  SUBCASE("argmax ties resolve to the lowest class index") {
    // Row 2 gives logits (-2,-2,0): class 2 wins outright.  Row 3 gives
    // (5,5,0): tie between 0 and 1 resolves to 0, so label 1 misses.
    const std::vector<int> pred = predict_classes(m, d.inputs);
    CHECK(pred == std::vector<int>{0, 1, 2, 0});
    CHECK(evaluate_accuracy(m, d) == doctest::Approx(0.5));
  }

  SUBCASE("accuracy is invariant under logit rescaling") {
    const std::vector<int> before = predict_classes(m, d.inputs);
    for (double& v : m.params[0].second.values()) v *= 3.0;
    CHECK(predict_classes(m, d.inputs) == before);
  }

  SUBCASE("batched and unbatched evaluation agree") {
    CHECK(predict_classes(m, d.inputs, 1) == predict_classes(m, d.inputs, 256));
  }
}

TEST_CASE("training loop") {
  const SyntheticSpec blob_spec{SyntheticKind::gaussian_blobs, 2, 60, 0.3, 21};
  const Dataset blobs = make_synthetic(blob_spec);

  SUBCASE("epochs == 0 returns an empty history and leaves weights untouched") {
    Model m = build_model(MlpSpec{{2, 8, 2}}, 4);
    const Tensor before = m.param("fc0.w");
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK(train_classifier(m, blobs, cfg).empty());
    CHECK(m.param("fc0.w").values() == before.values());
  }

  SUBCASE("history has one entry per epoch and training is deterministic") {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 5;
    Model a = build_model(MlpSpec{{2, 8, 2}}, 4);
    Model b = build_model(MlpSpec{{2, 8, 2}}, 4);
    const auto ha = train_classifier(a, blobs, cfg);
    const auto hb = train_classifier(b, blobs, cfg);
    REQUIRE(ha.size() == 3);
    for (size_t e = 0; e < 3; ++e) {
      CHECK(ha[e].loss == hb[e].loss);
      CHECK(ha[e].accuracy == hb[e].accuracy);
    }
    CHECK(a.param("fc1.w").values() == b.param("fc1.w").values());
  }

  SUBCASE("well-separated blobs reach 100% training accuracy") {
    Model m = build_model(MlpSpec{{2, 16, 2}}, 4);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.lr = 1e-2;
    cfg.seed = 5;
    const auto history = train_classifier(m, blobs, cfg);
    CHECK(evaluate_accuracy(m, blobs) == doctest::Approx(1.0));
    // Loss should fall overall and be non-increasing in most adjacent pairs.
    CHECK(history.back().loss < history.front().loss);
    int non_increasing = 0;
    for (size_t e = 1; e < history.size(); ++e)
      if (history[e].loss <= history[e - 1].loss) ++non_increasing;
    CHECK((double)non_increasing >= 0.8 * (double)(history.size() - 1));
  }

  SUBCASE("two-moons MLP exceeds 95% with a nonlinear boundary") {
    const Dataset moons = make_synthetic({SyntheticKind::two_moons, 2, 100, 0.1, 33});
    Model m = build_model(MlpSpec{{2, 16, 16, 2}}, 6);
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.lr = 1e-2;
    cfg.seed = 6;
    (void)train_classifier(m, moons, cfg);
    CHECK(evaluate_accuracy(m, moons) >= 0.95);
  }

  SUBCASE("sgd also reduces the loss") {
    Model m = build_model(MlpSpec{{2, 8, 2}}, 4);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.optimizer = OptimizerKind::sgd;
    cfg.lr = 0.05;
    const auto history = train_classifier(m, blobs, cfg);
    CHECK(history.back().loss < history.front().loss);
  }

  SUBCASE("divergence aborts with the epoch index") {
    Model m = build_model(MlpSpec{{2, 8, 2}}, 4);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.optimizer = OptimizerKind::sgd;
    // Two steps at this rate multiply layer magnitudes past the f64 range
    // (first step ~1e300 weights, second step's logits overflow to inf).
    cfg.lr = 1e300;
    CHECK_THROWS_WITH_AS((void)train_classifier(m, blobs, cfg),
                         doctest::Contains("diverged at epoch"), InvariantError);
  }

  SUBCASE("epoch callback sees 1-based indices and the live model") {
    Model m = build_model(MlpSpec{{2, 8, 2}}, 4);
    TrainConfig cfg;
    cfg.epochs = 3;
    std::vector<int> seen;
    (void)train_classifier(m, blobs, cfg, [&](int epoch, const Model& mm, const EpochStats&) {
      seen.push_back(epoch);
      CHECK(mm.param_count() == m.param_count());
    });
    CHECK(seen == std::vector<int>{1, 2, 3});
  }

  SUBCASE("regression on the identity map drives L1 toward zero") {
    // Tiny generator learning target == 0.5 * input on 8x8 patches.
    RngStream rng(2, 0);
    Tensor x = Tensor::zeros({16, 1, 8, 8});
    rng.fill_uniform(x, -0.5, 0.5);
    Tensor y = x;
    for (double& v : y.values()) v *= 0.5;
    Model m = build_model(UnetSpec{1, 8, 4, 2}, 2);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.lr = 3e-3;
    cfg.batch_size = 8;
    const auto history = train_regression(m, x, y, cfg);
    REQUIRE(history.size() == 30);
    CHECK(history.back().loss < 0.5 * history.front().loss);
    CHECK(history.back().accuracy == 0.0);
  }
}

TEST_CASE("checkpoint round trip") {
  const std::filesystem::path path = temp_file("nplab_ckpt_test.bin");

  SUBCASE("save/load is bit-exact and preserves the spec") {
    Model m = build_model(ConvNetSpec{}, 13);
    // Perturb away from init so the test is not about the initializer.
    RngStream rng(99, 0);
    for (auto& [name, t] : m.params) rng.fill_normal(t, 0.0, 0.1);
    save_checkpoint(m, path);
    Model back = load_checkpoint(path);
    CHECK(model_kind(back.spec) == std::string("convnet"));
    REQUIRE(back.params.size() == m.params.size());
    for (size_t p = 0; p < m.params.size(); ++p) {
      CHECK(back.params[p].first == m.params[p].first);
      CHECK(back.params[p].second.values() == m.params[p].second.values());
    }
    std::filesystem::remove(path);
  }

  SUBCASE("mlp spec survives the JSON header") {
    Model m = build_model(MlpSpec{{2, 16, 2}, Activation::tanh}, 1);
    save_checkpoint(m, path);
    Model back = load_checkpoint(path);
    const auto& spec = std::get<MlpSpec>(back.spec);
    CHECK(spec.widths == std::vector<int64_t>{2, 16, 2});
    CHECK(spec.activation == Activation::tanh);
    std::filesystem::remove(path);
  }

  SUBCASE("corrupt files are rejected with context") {
    {
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      f << "XXXX not a checkpoint";
    }
    CHECK_THROWS_WITH_AS((void)load_checkpoint(path), doctest::Contains("bad magic"), DataError);

    Model m = build_model(MlpSpec{{2, 4, 2}}, 1);
    save_checkpoint(m, path);
    // Truncate the payload mid-tensor.
    const auto full = (long long)std::filesystem::file_size(path);
    std::filesystem::resize_file(path, (uintmax_t)(full - 9));
    CHECK_THROWS_WITH_AS((void)load_checkpoint(path), doctest::Contains("truncated"), DataError);
    std::filesystem::remove(path);

    CHECK_THROWS_AS((void)load_checkpoint(temp_file("nplab_ckpt_missing.bin")), DataError);
  }
}
