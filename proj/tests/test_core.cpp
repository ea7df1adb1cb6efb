#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "nplab/autograd.hpp"
#include "nplab/grad_check.hpp"
#include "nplab/kernels.hpp"
#include "nplab/linops.hpp"
#include "nplab/rng.hpp"
#include "nplab/tensor.hpp"

using namespace nplab;

namespace {

std::vector<double> random_vec(RngStream& rng, int64_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Restores the dispatch decision when a test forces a backend.
struct BackendGuard {
  kernels::Backend saved = kernels::active_backend();
  ~BackendGuard() { kernels::force_backend(saved); }
};

}  // namespace

TEST_CASE("tensor: construction, reshape, scalar") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  Tensor s = Tensor::scalar(4.0);
  CHECK(s.rank() == 0);
  CHECK(s.size() == 1);
  CHECK(s.item() == 4.0);
  Tensor r = t.reshaped({3, -1});
  CHECK(r.shape() == std::vector<int64_t>{3, 2});
  CHECK_THROWS_AS((void)t.reshaped({4, 2}), Error);
  CHECK_THROWS_AS((void)Tensor({2, 2}, {1.0}), Error);
  CHECK_THROWS_AS((void)t.item(), Error);
}

TEST_CASE("kernels: SIMD backends match the scalar reference") {
  const auto& ref = kernels::scalar_table();
  RngStream rng(1234, 0);
  std::vector<kernels::Backend> candidates = {kernels::Backend::avx2, kernels::Backend::neon};
  bool tested_any = false;
  for (auto backend : candidates) {
    if (!kernels::backend_available(backend)) continue;
    tested_any = true;
    BackendGuard guard;
    kernels::force_backend(backend);
    const auto& t = kernels::table();
    // Sizes straddle the vector width to cover full lanes plus scalar tails.
    for (int64_t n : {1, 2, 3, 4, 5, 7, 8, 9, 31, 64, 100, 1001}) {
      auto a = random_vec(rng, n), b = random_vec(rng, n);
      // sprinkle exact zeros and negative zeros to pin the branch conventions
      if (n >= 4) {
        a[0] = 0.0;
        a[1] = -0.0;
      }
      std::vector<double> out1(a.size()), out2(a.size());

      t.add(a.data(), b.data(), out1.data(), n);
      ref.add(a.data(), b.data(), out2.data(), n);
      CHECK(out1 == out2);
      t.sub(a.data(), b.data(), out1.data(), n);
      ref.sub(a.data(), b.data(), out2.data(), n);
      CHECK(out1 == out2);
      t.mul(a.data(), b.data(), out1.data(), n);
      ref.mul(a.data(), b.data(), out2.data(), n);
      CHECK(out1 == out2);
      t.scale(a.data(), 0.7, out1.data(), n);
      ref.scale(a.data(), 0.7, out2.data(), n);
      CHECK(out1 == out2);
      out1 = b;
      out2 = b;
      t.axpy(-1.3, a.data(), out1.data(), n);
      ref.axpy(-1.3, a.data(), out2.data(), n);
      CHECK(out1 == out2);
      t.relu(a.data(), out1.data(), n);
      ref.relu(a.data(), out2.data(), n);
      CHECK(out1 == out2);
      t.relu_grad(a.data(), b.data(), out1.data(), n);
      ref.relu_grad(a.data(), b.data(), out2.data(), n);
      CHECK(out1 == out2);
      t.leaky_relu(a.data(), 0.01, out1.data(), n);
      ref.leaky_relu(a.data(), 0.01, out2.data(), n);
      CHECK(out1 == out2);
      t.leaky_relu_grad(a.data(), b.data(), 0.01, out1.data(), n);
      ref.leaky_relu_grad(a.data(), b.data(), 0.01, out2.data(), n);
      CHECK(out1 == out2);
      t.clamp(a.data(), -0.5, 0.5, out1.data(), n);
      ref.clamp(a.data(), -0.5, 0.5, out2.data(), n);
      CHECK(out1 == out2);
      t.sign(a.data(), out1.data(), n);
      ref.sign(a.data(), out2.data(), n);
      CHECK(out1 == out2);

      // Reductions fold in a different order: tolerance, not equality.
      double s1 = t.sum(a.data(), n), s2 = ref.sum(a.data(), n);
      CHECK(std::fabs(s1 - s2) <= 1e-13 * (1.0 + std::fabs(s2)));
      double d1 = t.dot(a.data(), b.data(), n), d2 = ref.dot(a.data(), b.data(), n);
      CHECK(std::fabs(d1 - d2) <= 1e-13 * (1.0 + std::fabs(d2)));
    }
  }
  if (!tested_any) { MESSAGE("no SIMD backend available; scalar-only machine"); }
  CHECK(kernels::backend_available(kernels::Backend::scalar));
}

TEST_CASE("kernels: matmul is bit-identical across backends") {
  // axpy keeps the k-accumulation order, so even the SIMD matmul must agree
  // exactly with the scalar one.
  RngStream rng(99, 0);
  int64_t m = 7, k = 13, n = 9;
  auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
  std::vector<double> c_ref(static_cast<size_t>(m * n));
  {
    BackendGuard guard;
    kernels::force_backend(kernels::Backend::scalar);
    linops::matmul(a.data(), b.data(), c_ref.data(), m, k, n);
  }
  for (auto backend : {kernels::Backend::avx2, kernels::Backend::neon}) {
    if (!kernels::backend_available(backend)) continue;
    BackendGuard guard;
    kernels::force_backend(backend);
    std::vector<double> c(static_cast<size_t>(m * n));
    linops::matmul(a.data(), b.data(), c.data(), m, k, n);
    CHECK(c == c_ref);
  }
}

TEST_CASE("rng: determinism, stream separation, distribution sanity") {
  RngStream a(42, 0), b(42, 0), c(42, 1);
  Tensor ta = draw_normal(a, {64});
  Tensor tb = draw_normal(b, {64});
  CHECK(ta.values() == tb.values());
  Tensor tc = draw_normal(c, {64});
  CHECK(ta.values() != tc.values());

  RngStream u(7, 0);
  double mean = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) mean += u.uniform();
  mean /= n;
  CHECK(std::fabs(mean - 0.5) < 0.01);

  RngStream p(3, 5);
  auto perm = p.permutation(100);
  std::set<int64_t> seen(perm.begin(), perm.end());
  CHECK(seen.size() == 100);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 99);
}

TEST_CASE("autograd: forward oracles") {
  Graph g;

  SUBCASE("matmul by the identity is exact") {
    Tensor id3({3, 3});
    for (int i = 0; i < 3; ++i) id3[i * 3 + i] = 1.0;
    RngStream rng(5, 0);
    Tensor a({3, 3}, random_vec(rng, 9));
    NodeId r = g.matmul(g.leaf(id3), g.leaf(a));
    CHECK(g.value(r).values() == a.values());
  }

  SUBCASE("matmul shape mismatch names both shapes") {
    NodeId a = g.leaf(Tensor({2, 3}));
    NodeId b = g.leaf(Tensor({4, 5}));
    CHECK_THROWS_WITH_AS((void)g.matmul(a, b),
                         doctest::Contains("(2, 3)"), Error);
    try {
      (void)g.matmul(a, b);
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("(4, 5)") != std::string::npos);
    }
  }

  SUBCASE("softmax-cross-entropy of uniform logits is ln K") {
    NodeId logits = g.leaf(Tensor::full({2, 10}, 0.3));
    NodeId ce = g.softmax_cross_entropy(logits, {0, 7});
    CHECK(g.value(ce)[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(g.value(ce)[1] == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }

  SUBCASE("conv2d all-ones 3x3 kernel over all-ones 5x5 image gives nines") {
    NodeId x = g.leaf(Tensor::full({1, 1, 5, 5}, 1.0));
    NodeId w = g.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
    NodeId y = g.conv2d(x, w, 1, 0);
    CHECK(g.value(y).shape() == std::vector<int64_t>{1, 1, 3, 3});
    for (int64_t i = 0; i < 9; ++i) CHECK(g.value(y)[i] == 9.0);
  }

  SUBCASE("conv2d channel mismatch is rejected") {
    NodeId x = g.leaf(Tensor({1, 2, 5, 5}));
    NodeId w = g.leaf(Tensor({4, 3, 3, 3}));
    CHECK_THROWS_AS((void)g.conv2d(x, w), Error);
  }

  SUBCASE("max-pool ties pick the lowest linear index") {
    Tensor x({1, 1, 2, 2}, {1.0, 1.0, 1.0, 1.0});
    NodeId xn = g.leaf(x, true);
    NodeId p = g.max_pool2d(xn, 2);
    NodeId s = g.sum(p);
    auto grads = g.backward(s);
    Tensor gx = grads.at(xn);
    CHECK(gx[0] == 1.0);
    CHECK(gx[1] == 0.0);
    CHECK(gx[3] == 0.0);
  }

  SUBCASE("clamp and sign forward conventions") {
    NodeId x = g.leaf(Tensor({5}, {-2.0, -0.5, 0.0, 0.5, 2.0}));
    NodeId cl = g.clamp(x, -1.0, 1.0);
    CHECK(g.value(cl).values() == std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0});
    NodeId sg = g.sign(x);
    CHECK(g.value(sg).values() == std::vector<double>{-1.0, -1.0, 0.0, 1.0, 1.0});
  }

  SUBCASE("transposed conv is the adjoint of conv") {
    // Spatial dims chosen so the strided conv discards no remainder,
    // otherwise the transposed shape formula reconstructs a smaller image.
    RngStream rng(11, 0);
    Tensor x({1, 2, 7, 7}, random_vec(rng, 98));
    Tensor w({3, 2, 3, 3}, random_vec(rng, 54));
    NodeId cx = g.conv2d(g.leaf(x), g.leaf(w), 2, 1);
    Tensor cval = g.value(cx);  // copy: later applies invalidate references
    Tensor y(cval.shape(), random_vec(rng, cval.size()));
    // Same buffer: conv weight (Co, Ci, KH, KW) reads as the transposed
    // conv's (in=Co, out=Ci, KH, KW).
    NodeId ty = g.transposed_conv2d(g.leaf(y), g.leaf(w), 2, 1);
    const Tensor& tval = g.value(ty);
    REQUIRE(tval.shape() == x.shape());
    const auto& kt = kernels::table();
    double lhs = kt.dot(cval.data(), y.data(), cval.size());
    double rhs = kt.dot(x.data(), tval.data(), x.size());
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("autograd: backward oracles") {
  SUBCASE("sum of squares at x = 3 gives gradient 6") {
    Graph g;
    NodeId x = g.leaf(Tensor::scalar(3.0), true);
    NodeId l = g.sum(g.mul(x, x));
    auto grads = g.backward(l);
    CHECK(grads.at(x).item() == doctest::Approx(6.0).epsilon(1e-14));
  }

  SUBCASE("unreached leaves read as zero") {
    Graph g;
    NodeId x = g.leaf(Tensor::scalar(2.0), true);
    NodeId y = g.leaf(Tensor({3}, {1.0, 2.0, 3.0}), true);
    NodeId l = g.sum(g.mul(x, x));
    auto grads = g.backward(l);
    CHECK(!grads.reached(y));
    Tensor gy = grads.grad(y);
    CHECK(gy.shape() == std::vector<int64_t>{3});
    CHECK(gy.values() == std::vector<double>{0.0, 0.0, 0.0});
  }

  SUBCASE("backward from a non-scalar is rejected") {
    Graph g;
    NodeId x = g.leaf(Tensor({3}, {1.0, 2.0, 3.0}), true);
    NodeId y = g.mul(x, x);
    CHECK_THROWS_AS((void)g.backward(y), Error);
  }

  SUBCASE("sum and mean gradients are exactly 1 and 1/n") {
    Graph g;
    NodeId x = g.leaf(Tensor({4}, {1.0, -2.0, 0.5, 9.0}), true);
    auto gs = g.backward(g.sum(x));
    for (int64_t i = 0; i < 4; ++i) CHECK(gs.at(x)[i] == 1.0);
    auto gm = g.backward(g.mean(x));
    for (int64_t i = 0; i < 4; ++i) CHECK(gm.at(x)[i] == 0.25);
  }

  SUBCASE("gradient flows through both consumers of a shared node") {
    // l = sum(x*x) + sum(x) -> dl/dx = 2x + 1
    Graph g;
    NodeId x = g.leaf(Tensor({2}, {1.5, -0.5}), true);
    NodeId l = g.add(g.sum(g.mul(x, x)), g.sum(x));
    auto grads = g.backward(l);
    CHECK(grads.at(x)[0] == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(grads.at(x)[1] == doctest::Approx(0.0).epsilon(1e-14));
  }

  SUBCASE("sign contributes a zero subgradient") {
    Graph g;
    NodeId x = g.leaf(Tensor({3}, {-1.0, 0.0, 2.0}), true);
    NodeId l = g.sum(g.sign(x));
    auto grads = g.backward(l);
    CHECK(!grads.reached(x));
    CHECK(grads.grad(x).values() == std::vector<double>{0.0, 0.0, 0.0});
  }
}

namespace {

// Builds loss(x) for one primitive under test, used both for the analytic
// gradient and as the finite-difference probe.
struct PrimitiveCase {
  const char* name;
  std::vector<int64_t> x_shape;
  std::function<NodeId(Graph&, NodeId)> build;  // x node -> scalar loss node
  double lo = -2.0, hi = 2.0;                   // probe range for x
};

void run_fd_case(const PrimitiveCase& pc, uint64_t seed) {
  RngStream rng(seed, 17);
  Tensor x(pc.x_shape, random_vec(rng, shape_size(pc.x_shape), pc.lo, pc.hi));
  Graph g;
  NodeId xn = g.leaf(x, true);
  NodeId loss = pc.build(g, xn);
  auto grads = g.backward(loss);
  Tensor analytic = grads.grad(xn);
  auto f = [&](const Tensor& probe) {
    Graph h;
    NodeId p = h.leaf(probe, false);
    return h.value(pc.build(h, p)).item();
  };
  auto rep = grad_check(f, x, analytic, 1e-5, 1e-5);
  INFO("primitive: ", pc.name, ", max rel err ", rep.max_rel_err, " at coord ",
       rep.worst_coord, " ", rep.note);
  CHECK(rep.pass);
}

}  // namespace

TEST_CASE("autograd: every differentiable primitive matches central differences") {
  RngStream rng(2024, 3);
  // Fixed companion tensors so the loss builder is a pure function of x.
  Tensor mate2({2, 3}, random_vec(rng, 6));
  Tensor mate_scalar = Tensor::scalar(0.7);
  Tensor matb({3, 4}, random_vec(rng, 12));
  Tensor w_conv({2, 3, 3, 3}, random_vec(rng, 54, -0.5, 0.5));
  Tensor w_tconv({3, 2, 2, 2}, random_vec(rng, 24, -0.5, 0.5));
  Tensor bias({3}, random_vec(rng, 3));
  Tensor target({2, 3}, random_vec(rng, 6, -1.0, 1.0));

  std::vector<PrimitiveCase> cases = {
      {"add", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.add(x, g.leaf(mate2))); }},
      {"add-scalar", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.add(x, g.leaf(mate_scalar))); }},
      {"sub", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.sub(g.leaf(mate2), x)); }},
      {"mul", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.mul(x, g.leaf(mate2))); }},
      {"mul-scalar-side", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.mul(g.leaf(mate_scalar), x)); }},
      {"scalar-mul", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.scalar_mul(x, -1.7)); }},
      {"matmul", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.matmul(x, g.leaf(matb))); }},
      {"matmul-rhs", {3, 4}, [&](Graph& g, NodeId x) { return g.sum(g.matmul(g.leaf(mate2.reshaped({2, 3})), x)); }},
      {"conv2d", {1, 3, 6, 6}, [&](Graph& g, NodeId x) { return g.sum(g.conv2d(x, g.leaf(w_conv), 1, 1)); }},
      {"conv2d-strided", {1, 3, 7, 7}, [&](Graph& g, NodeId x) { return g.mean(g.conv2d(x, g.leaf(w_conv), 2, 1)); }},
      {"conv2d-weight", {2, 3, 3, 3}, [&](Graph& g, NodeId x) {
         Tensor img({1, 3, 5, 5});
         RngStream r2(7, 7);
         r2.fill_uniform(img, -1.0, 1.0);
         return g.sum(g.conv2d(g.leaf(img), x, 1, 0));
       }},
      {"transposed-conv2d", {1, 3, 4, 4}, [&](Graph& g, NodeId x) { return g.sum(g.transposed_conv2d(x, g.leaf(w_tconv), 2, 0)); }},
      {"transposed-conv2d-weight", {3, 2, 2, 2}, [&](Graph& g, NodeId x) {
         Tensor img({1, 3, 4, 4});
         RngStream r2(8, 8);
         r2.fill_uniform(img, -1.0, 1.0);
         return g.sum(g.transposed_conv2d(g.leaf(img), x, 2, 0));
       }},
      // Keep probes away from the relu/leaky kinks at 0.
      {"relu", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.relu(x)); }, 0.2, 2.0},
      {"relu-negative-side", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.relu(x)); }, -2.0, -0.2},
      {"leaky-relu", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.leaky_relu(x, 0.1)); }, -2.0, -0.2},
      {"sigmoid", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.sigmoid(x)); }},
      {"tanh", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.tanh(x)); }},
      {"max-pool2d", {1, 2, 4, 4}, [&](Graph& g, NodeId x) { return g.sum(g.max_pool2d(x, 2)); }},
      {"mean", {2, 3}, [&](Graph& g, NodeId x) { return g.mean(g.mul(x, x)); }},
      {"softmax-cross-entropy", {2, 5}, [&](Graph& g, NodeId x) { return g.mean(g.softmax_cross_entropy(x, {1, 4})); }},
      {"l1-loss", {2, 3}, [&](Graph& g, NodeId x) { return g.l1_loss(x, g.leaf(target)); }},
      {"l2-loss", {2, 3}, [&](Graph& g, NodeId x) { return g.l2_loss(x, g.leaf(target)); }},
      {"concat", {2, 3}, [&](Graph& g, NodeId x) {
         NodeId other = g.leaf(mate2);
         return g.sum(g.mul(g.concat({x, other}, 1), g.concat({other, x}, 1)));
       }},
      {"reshape", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.mul(g.reshape(x, {3, 2}), g.reshape(x, {3, 2}))); }},
      {"clamp", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.clamp(x, -1.0, 1.0)); }, 0.1, 0.9},
      {"bias-add-x", {2, 3}, [&](Graph& g, NodeId x) { return g.sum(g.mul(g.bias_add(x, g.leaf(bias), 1), g.bias_add(x, g.leaf(bias), 1))); }},
      {"bias-add-b", {3}, [&](Graph& g, NodeId x) {
         NodeId base = g.leaf(mate2);
         NodeId y = g.bias_add(base, x, 1);
         return g.sum(g.mul(y, y));
       }},
  };
  for (size_t i = 0; i < cases.size(); ++i) {
    CAPTURE(cases[i].name);
    run_fd_case(cases[i], 1000 + i);
  }
}

TEST_CASE("grad_check: reports behave per contract") {
  SUBCASE("x squared passes easily") {
    auto f = [](const Tensor& t) { return t[0] * t[0]; };
    Tensor x = Tensor::scalar(3.0);
    Tensor analytic = Tensor::scalar(6.0);
    auto rep = grad_check(f, x, analytic, 1e-5, 1e-5);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-8);
  }

  SUBCASE("sign at zero is a documented kink failure") {
    auto f = [](const Tensor& t) { return t[0] > 0.0 ? 1.0 : (t[0] < 0.0 ? -1.0 : 0.0); };
    Tensor x = Tensor::scalar(0.0);
    Tensor analytic = Tensor::scalar(0.0);  // subgradient convention
    auto rep = grad_check(f, x, analytic, 1e-5, 1e-5);
    CHECK(!rep.pass);  // numeric slope is 1e5, analytic 0
  }

  SUBCASE("non-finite probe fails with the coordinate") {
    auto f = [](const Tensor& t) { return std::log(t[0]); };
    Tensor x = Tensor::scalar(0.5e-5);  // x - h goes negative
    Tensor analytic = Tensor::scalar(1.0 / 0.5e-5);
    auto rep = grad_check(f, x, analytic, 1e-5, 1e-5);
    CHECK(!rep.pass);
    CHECK(rep.worst_coord == 0);
    CHECK(!rep.note.empty());
  }
}

TEST_CASE("autograd: forward replay is bit-identical") {
  auto build = [] {
    RngStream rng(77, 1);
    Graph g;
    Tensor x({4, 8});
    rng.fill_normal(x, 0.0, 1.0);
    Tensor w({8, 5});
    rng.fill_normal(w, 0.0, 0.3);
    NodeId logits = g.matmul(g.leaf(x), g.leaf(w));
    NodeId loss = g.mean(g.softmax_cross_entropy(g.tanh(logits), {0, 1, 2, 3}));
    return g.value(loss).item();
  };
  CHECK(build() == build());
}
