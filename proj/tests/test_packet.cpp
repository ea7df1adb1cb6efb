// Packet construction and operator statistics against analytic oracles: the
// Gaussian equality case (product exactly 1/2 in the limit), the sine packet
// (closed form by integration by parts), the discrete commutator identity,
// and the surface/symmetry identities of the expectation integrals.
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nplab/common.hpp"
#include "nplab/model.hpp"
#include "nplab/packet.hpp"
#include "nplab/synthetic.hpp"
#include "nplab/train.hpp"

using namespace nplab;

namespace {

constexpr double kPi = 3.14159265358979323846;

// l on a 1-d grid from a callable; the packet pipeline normalizes it.
PacketGrid packet_1d(double lo, double hi, int64_t n, double (*f)(double)) {
  Tensor values = Tensor::zeros({n});
  const double h = (hi - lo) / (double)(n - 1);
  for (int64_t j = 0; j < n; ++j) values[j] = f(lo + h * (double)j);
  return build_packet_from_values(GridDomain{{lo}, {hi}}, values);
}

double gauss01(double x) { return std::exp(-x * x / 4.0); }          // psi^2 = N(0,1)
double gauss_at_03(double x) { return std::exp(-(x - 0.3) * (x - 0.3) / 4.0); }
double sine01(double x) { return std::sin(kPi * x); }                // on [0,1]
double linear_ramp(double x) { return x; }                           // on positive domain

// Trained two-blob fixture for the model-driven packets.
const Dataset& blob_data() {
  static const Dataset d = make_synthetic({SyntheticKind::gaussian_blobs, 2, 60, 0.35, 77});
  return d;
}

const Model& blob_model() {
  static const Model m = [] {
    Model model = build_model(MlpSpec{{2, 16, 2}, Activation::tanh}, 31);
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.lr = 1e-2;
    cfg.seed = 31;
    (void)train_classifier(model, blob_data(), cfg);
    return model;
  }();
  return m;
}

GridDomain blob_domain(double pad) {
  return GridDomain{{blob_data().value_lo - pad, blob_data().value_lo - pad},
                    {blob_data().value_hi + pad, blob_data().value_hi + pad}};
}

}  // namespace

TEST_CASE("packet normalization") {
  SUBCASE("constant loss c on [0,1]: beta = c^2 and psi == 1") {
    Tensor values = Tensor::full({101}, 3.0);
    PacketGrid p = build_packet_from_values(GridDomain{{0.0}, {1.0}}, values);
    CHECK(p.beta == doctest::Approx(9.0).epsilon(1e-12));
    for (int64_t i = 0; i < p.psi.size(); ++i) CHECK(p.psi[i] == doctest::Approx(1.0).epsilon(1e-12));
    p.validate();
  }

  SUBCASE("gaussian bump normalizes to unit mass") {
    PacketGrid p = packet_1d(-8.0, 8.0, 512, gauss01);
    p.validate();  // includes quadrature(psi^2) == 1 +- 1e-6
    CHECK(p.boundary_ok);
  }

  SUBCASE("identically zero loss is rejected") {
    Tensor values = Tensor::zeros({64});
    CHECK_THROWS_WITH_AS((void)build_packet_from_values(GridDomain{{0.0}, {1.0}}, values),
                         doctest::Contains("normalizer is zero"), InvariantError);
  }

  SUBCASE("negative loss values are rejected") {
    Tensor values = Tensor::full({64}, 1.0);
    values[10] = -0.5;
    CHECK_THROWS_AS((void)build_packet_from_values(GridDomain{{0.0}, {1.0}}, values), ConfigError);
  }

  SUBCASE("boundary-decay violation is flagged with the measured ratio") {
    // A constant has boundary mass equal to interior mass: ratio 1.
    PacketGrid p = build_packet_from_values(GridDomain{{0.0}, {1.0}}, Tensor::full({64}, 2.0));
    CHECK_FALSE(p.boundary_ok);
    CHECK(p.boundary_ratio == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("expectation integrals") {
  SUBCASE("symmetric packet: <x> at the midpoint, <p> at zero") {
    PacketGrid p = packet_1d(-8.0, 8.0, 1024, gauss01);
    CHECK(std::fabs(expectation_x(p, 0)) <= 1e-6);
    CHECK(std::fabs(expectation_p(p, 0)) <= 1e-4);
  }

  SUBCASE("gaussian centered at 0.3 on [-5,5]") {
    PacketGrid p = packet_1d(-5.0, 5.0, 1024, gauss_at_03);
    // Refinement oracle: the 2x grid agrees, so 1e-4 absolute is safe.
    PacketGrid fine = packet_1d(-5.0, 5.0, 2048, gauss_at_03);
    CHECK(std::fabs(expectation_x(p, 0) - 0.3) <= 1e-4);
    CHECK(std::fabs(expectation_x(p, 0) - expectation_x(fine, 0)) <= 1e-6);
  }

  SUBCASE("surface identity holds for every decaying packet") {
    PacketGrid p = packet_1d(0.0, 1.0, 512, sine01);
    CHECK(std::fabs(expectation_p(p, 0)) <= 1e-4);
  }
}

TEST_CASE("uncertainty products") {
  SUBCASE("gaussian equality case: sigma_x 1, sigma_p 0.5, product 0.5") {
    PacketGrid p = packet_1d(-8.0, 8.0, 2048, gauss01);
    UncertaintyResult r = uncertainty_product(p, 0);
    CHECK(std::fabs(r.stats.sigma_x - 1.0) <= 1e-3);
    CHECK(std::fabs(r.stats.sigma_p - 0.5) <= 1e-3);
    CHECK(std::fabs(r.stats.product - 0.5) <= 1e-3);
    CHECK(r.pass);
  }

  SUBCASE("sine packet: product = pi * sqrt(1/12 - 1/(2 pi^2))") {
    PacketGrid p = packet_1d(0.0, 1.0, 1024, sine01);
    const double expected = kPi * std::sqrt(1.0 / 12.0 - 1.0 / (2.0 * kPi * kPi));
    UncertaintyResult r = uncertainty_product(p, 0);
    CHECK(std::fabs(r.stats.product - expected) <= 1e-3);
    CHECK(r.pass);  // 0.5679 > 0.5
  }

  SUBCASE("refinement stability: doubling nodes moves sigma by < 0.5%") {
    PacketGrid a = packet_1d(-8.0, 8.0, 512, gauss01);
    PacketGrid b = packet_1d(-8.0, 8.0, 1024, gauss01);
    CHECK(std::fabs(sigma_x(b, 0) - sigma_x(a, 0)) / sigma_x(b, 0) < 0.005);
    CHECK(std::fabs(sigma_p(b, 0) - sigma_p(a, 0)) / sigma_p(b, 0) < 0.005);
  }

  SUBCASE("equality-case product converges at second order") {
    const double e1 = std::fabs(uncertainty_product(packet_1d(-8, 8, 256, gauss01), 0).stats.product - 0.5);
    const double e2 = std::fabs(uncertainty_product(packet_1d(-8, 8, 512, gauss01), 0).stats.product - 0.5);
    CHECK(e1 / e2 > 3.0);
    CHECK(e1 / e2 < 5.0);
  }
}

TEST_CASE("commutator identity") {
  SUBCASE("gaussian: residual within the h^2 bound, shrinking 4x when h halves") {
    PacketGrid coarse = packet_1d(-8.0, 8.0, 256, gauss01);
    PacketGrid fine = packet_1d(-8.0, 8.0, 511, gauss01);  // h exactly halved
    CommutatorReport rc = commutator_check(coarse);
    CommutatorReport rf = commutator_check(fine);
    CHECK(rc.pass);
    CHECK(rf.pass);
    const double ratio = rc.max_residual / rf.max_residual;
    CHECK(ratio > 3.0);
    CHECK(ratio < 5.0);
  }

  SUBCASE("linear psi: exact to rounding") {
    PacketGrid p = packet_1d(0.5, 1.5, 256, linear_ramp);
    CommutatorReport r = commutator_check(p);
    CHECK(r.max_residual <= 1e-12);
    CHECK(r.pass);
  }
}

TEST_CASE("model-driven packets") {
  const Model& m = blob_model();

  SUBCASE("bad plans are rejected") {
    CHECK_THROWS_AS((void)build_packet(m, 0, blob_domain(1.0), 32), ConfigError);
    CHECK_THROWS_AS((void)build_packet(m, 0, GridDomain{{0, 0, 0, 0}, {1, 1, 1, 1}}, 64),
                    ConfigError);
  }

  SUBCASE("trained blob packet: normalized, nonnegative, peaked off-cluster") {
    PacketGrid p = build_packet(m, 0, blob_domain(2.0), 96);
    p.validate();
    // The class-0 loss is small where the model predicts class 0 (around the
    // -1 center) and large toward the opposite cluster at +1, so the peak
    // must sit on the positive side of axis 0.
    int64_t peak = 0;
    for (int64_t i = 1; i < p.psi.size(); ++i)
      if (p.psi[i] > p.psi[peak]) peak = i;
    const int64_t row = peak / p.nodes[1];
    const double x0 = p.coord(0, row);
    CHECK(x0 > 0.0);
  }

  SUBCASE("per-axis statistics are finite and the report is self-consistent") {
    PacketGrid p = build_packet(m, 1, blob_domain(2.0), 96);
    for (int axis = 0; axis < 2; ++axis) {
      UncertaintyResult r = uncertainty_product(p, axis);
      CHECK(std::isfinite(r.stats.product));
      CHECK(r.stats.sigma_x >= 0.0);
      CHECK(r.stats.sigma_p >= 0.0);
      CHECK(r.stats.product == doctest::Approx(r.stats.sigma_x * r.stats.sigma_p));
      CHECK(r.tol == doctest::Approx(std::max(1e-3, 10.0 * p.h[(size_t)axis] * p.h[(size_t)axis])));
    }
  }
}

TEST_CASE("gradient alignment") {
  const Model& m = blob_model();
  PacketGrid p = build_packet(m, 0, blob_domain(2.0), 96);

  SUBCASE("cosine is 1 and the norm ratio recovers sqrt(beta)") {
    const Tensor x0 = Tensor({2}, {0.4, -0.3});
    AlignmentReport r = packet_gradient_alignment(m, p, x0);
    REQUIRE(r.defined);
    CHECK(std::fabs(r.cosine - 1.0) <= 1e-12);
    CHECK(std::fabs(r.scale_ratio - std::sqrt(p.beta)) <= 1e-9 * std::sqrt(p.beta));
  }

  SUBCASE("zero gradient reports undefined, not NaN") {
    // A constant-logits model: weights zero, so the loss never moves.
    Model flat = build_model(MlpSpec{{2, 4, 2}}, 0);
    for (auto& [name, t] : flat.params)
      for (double& v : t.values()) v = 0.0;
    PacketGrid flat_packet =
        build_packet_from_values(GridDomain{{0.0}, {1.0}}, Tensor::full({64}, 1.0), 0);
    AlignmentReport r = packet_gradient_alignment(flat, flat_packet, Tensor({2}, {0.1, 0.2}));
    CHECK_FALSE(r.defined);
    CHECK(std::isfinite(r.cosine));
  }
}

TEST_CASE("monte-carlo sigma estimate") {
  const Model& m = blob_model();

  SUBCASE("sample floor is enforced") {
    CHECK_THROWS_AS((void)mc_sigma_estimate(m, 0, blob_data(), 0, 500, 1), ConfigError);
  }

  SUBCASE("identical points give sigma_x exactly zero") {
    Dataset d;
    d.inputs = Tensor::zeros({4, 2});
    for (int64_t i = 0; i < 4; ++i) {
      d.inputs[i * 2] = 0.25;
      d.inputs[i * 2 + 1] = 0.5;
    }
    d.labels = {0, 0, 0, 0};
    d.class_count = 2;
    McSigma est = mc_sigma_estimate(m, 0, d, 0, 1000, 3);
    CHECK(est.stats.sigma_x == 0.0);
    CHECK(est.approximate);
  }

  SUBCASE("deterministic in the seed") {
    McSigma a = mc_sigma_estimate(m, 0, blob_data(), 0, 1500, 9);
    McSigma b = mc_sigma_estimate(m, 0, blob_data(), 0, 1500, 9);
    McSigma c = mc_sigma_estimate(m, 0, blob_data(), 1, 1500, 10);
    CHECK(a.stats.sigma_x == b.stats.sigma_x);
    CHECK(a.stats.sigma_p == b.stats.sigma_p);
    CHECK(a.stats.product != c.stats.product);
  }

  SUBCASE("uniform-grid measure reproduces grid quadrature within 10%") {
    // Dataset whose points are exactly the quadrature nodes.
    const GridDomain dom = blob_domain(2.0);
    const int64_t n = 64;
    Dataset grid;
    grid.inputs = Tensor::zeros({n * n, 2});
    const double h0 = (dom.hi[0] - dom.lo[0]) / (double)(n - 1);
    const double h1 = (dom.hi[1] - dom.lo[1]) / (double)(n - 1);
    for (int64_t r = 0; r < n; ++r)
      for (int64_t c = 0; c < n; ++c) {
        grid.inputs[(r * n + c) * 2] = dom.lo[0] + h0 * (double)r;
        grid.inputs[(r * n + c) * 2 + 1] = dom.lo[1] + h1 * (double)c;
      }
    grid.labels.assign((size_t)(n * n), 0);
    grid.class_count = 2;
    grid.value_lo = dom.lo[0];
    grid.value_hi = dom.hi[0];

    PacketGrid p = build_packet(m, 0, dom, n);
    McSigma est = mc_sigma_estimate(m, 0, grid, 0, 16000, 5);
    CHECK(std::fabs(est.stats.sigma_x - sigma_x(p, 0)) / sigma_x(p, 0) < 0.10);
    CHECK(std::fabs(est.stats.sigma_p - sigma_p(p, 0)) / sigma_p(p, 0) < 0.10);
  }
}

TEST_CASE("packet dump round trip") {
  const auto path = std::filesystem::temp_directory_path() / "nplab_packet_test.bin";
  PacketGrid p = packet_1d(-8.0, 8.0, 512, gauss01);
  save_packet(p, path);
  PacketGrid back = load_packet(path);
  CHECK(back.psi.values() == p.psi.values());
  CHECK(back.beta == p.beta);
  CHECK(back.lo == p.lo);
  CHECK(back.hi == p.hi);
  CHECK(back.nodes == p.nodes);
  CHECK(back.label == p.label);
  CHECK(back.boundary_ok == p.boundary_ok);
  std::filesystem::remove(path);

  SUBCASE("corrupt dump is rejected") {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "garbage";
    f.close();
    CHECK_THROWS_AS((void)load_packet(path), DataError);
    std::filesystem::remove(path);
  }
}
