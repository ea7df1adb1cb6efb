#include "nplab/packet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "nplab/autograd.hpp"
#include "nplab/common.hpp"
#include "nplab/rng.hpp"

namespace nplab {
namespace {

using json = nlohmann::ordered_json;

// Trapezoid weight along one axis: h at interior nodes, h/2 at the ends.
double axis_weight(int64_t j, int64_t n, double h) {
  return (j == 0 || j == n - 1) ? 0.5 * h : h;
}

// Per-axis index decomposition of a flat row-major position.
struct GridWalk {
  std::vector<int64_t> nodes;
  std::vector<int64_t> stride;  // row-major: last axis fastest

  explicit GridWalk(const std::vector<int64_t>& n) : nodes(n), stride(n.size(), 1) {
    for (int a = (int)n.size() - 2; a >= 0; --a) stride[(size_t)a] = stride[(size_t)a + 1] * n[(size_t)a + 1];
  }
  int64_t axis_index(int64_t flat, int axis) const {
    return (flat / stride[(size_t)axis]) % nodes[(size_t)axis];
  }
};

// Full tensor-product trapezoid weight of one node.
double node_weight(const PacketGrid& p, const GridWalk& w, int64_t flat) {
  double weight = 1.0;
  for (int a = 0; a < p.dimension(); ++a)
    weight *= axis_weight(w.axis_index(flat, a), p.nodes[(size_t)a], p.h[(size_t)a]);
  return weight;
}

// Central difference along an axis, one-sided at the edges.
Tensor axis_derivative(const PacketGrid& p, int axis) {
  const GridWalk w(p.nodes);
  const int64_t s = w.stride[(size_t)axis];
  const int64_t n = p.nodes[(size_t)axis];
  const double h = p.h[(size_t)axis];
  Tensor out = Tensor::zeros(p.psi.shape());
  for (int64_t i = 0; i < p.psi.size(); ++i) {
    const int64_t j = w.axis_index(i, axis);
    if (j == 0)
      out[i] = (p.psi[i + s] - p.psi[i]) / h;
    else if (j == n - 1)
      out[i] = (p.psi[i] - p.psi[i - s]) / h;
    else
      out[i] = (p.psi[i + s] - p.psi[i - s]) / (2.0 * h);
  }
  return out;
}

double quadrature(const PacketGrid& p, const Tensor& values) {
  const GridWalk w(p.nodes);
  double total = 0.0;
  for (int64_t i = 0; i < values.size(); ++i) total += node_weight(p, w, i) * values[i];
  return total;
}

void check_axis(const PacketGrid& p, int axis) {
  check<ConfigError>(axis >= 0 && axis < p.dimension(), "packet axis ", axis,
                     " outside dimension ", p.dimension());
}

// Shared normalization path for both construction routes.
PacketGrid normalize_packet(const GridDomain& domain, std::vector<int64_t> nodes,
                            Tensor loss_values, int label) {
  const size_t d = domain.lo.size();
  check<ConfigError>(d >= 1 && d == domain.hi.size(), "grid domain needs matching lo/hi axes");
  check<ConfigError>(d <= 3, "grid quadrature supports at most 3 axes, got ", (long long)d);
  for (size_t a = 0; a < d; ++a)
    check<ConfigError>(domain.lo[a] < domain.hi[a], "grid axis ", (long long)a,
                       " has empty extent [", domain.lo[a], ", ", domain.hi[a], "]");
  check<ConfigError>(loss_values.shape() == nodes, "loss grid shape ", loss_values.shape_str(),
                     " does not match the node plan");
  for (int64_t i = 0; i < loss_values.size(); ++i)
    check<ConfigError>(loss_values[i] >= 0.0, "packet loss values must be nonnegative, found ",
                       loss_values[i]);

  PacketGrid p;
  p.lo = domain.lo;
  p.hi = domain.hi;
  p.nodes = std::move(nodes);
  p.label = label;
  p.h.resize(d);
  for (size_t a = 0; a < d; ++a)
    p.h[a] = (domain.hi[a] - domain.lo[a]) / (double)(p.nodes[a] - 1);
  p.psi = std::move(loss_values);

  Tensor l2 = Tensor::zeros(p.psi.shape());
  for (int64_t i = 0; i < p.psi.size(); ++i) l2[i] = p.psi[i] * p.psi[i];
  p.beta = quadrature(p, l2);
  check<InvariantError>(p.beta > 0.0,
                        "packet normalizer is zero: the loss vanishes on the whole grid");
  const double inv_sqrt_beta = 1.0 / std::sqrt(p.beta);
  for (int64_t i = 0; i < p.psi.size(); ++i) p.psi[i] *= inv_sqrt_beta;

  // Boundary-decay diagnostic.
  const GridWalk w(p.nodes);
  double boundary_max = 0.0, interior_max = 0.0;
  for (int64_t i = 0; i < p.psi.size(); ++i) {
    bool on_boundary = false;
    for (int a = 0; a < (int)d && !on_boundary; ++a) {
      const int64_t j = w.axis_index(i, a);
      on_boundary = j == 0 || j == p.nodes[(size_t)a] - 1;
    }
    const double sq = p.psi[i] * p.psi[i];
    if (on_boundary)
      boundary_max = std::max(boundary_max, sq);
    else
      interior_max = std::max(interior_max, sq);
  }
  check<InvariantError>(interior_max > 0.0, "packet mass sits entirely on the grid boundary");
  p.boundary_ratio = boundary_max / interior_max;
  p.boundary_ok = p.boundary_ratio <= 1e-3;
  if (!p.boundary_ok)
    std::cerr << "warning: packet boundary decay violated (ratio "
              << format_msg(p.boundary_ratio) << " > 1e-3); enlarge the domain\n";
  return p;
}

// Per-sample loss of the model toward one label, evaluated over a batch of
// grid points.
std::vector<double> batch_loss(const Model& m, const Tensor& points, int label) {
  Graph g;
  NodeId logits = model_forward(g, m, g.leaf(points));
  const std::vector<int> labels((size_t)points.dim(0), label);
  NodeId ce = g.softmax_cross_entropy(logits, labels);
  return g.value(ce).values();
}

}  // namespace

void PacketGrid::validate() const {
  const size_t d = nodes.size();
  check<InvariantError>(d >= 1 && lo.size() == d && hi.size() == d && h.size() == d,
                        "packet grid axis metadata is inconsistent");
  check<InvariantError>(psi.shape() == nodes, "packet values have shape ", psi.shape_str(),
                        " but the grid plans ", Tensor::shape_str(nodes));
  for (int64_t i = 0; i < psi.size(); ++i)
    check<InvariantError>(psi[i] >= 0.0, "packet value ", psi[i], " is negative");
  Tensor sq = Tensor::zeros(psi.shape());
  for (int64_t i = 0; i < psi.size(); ++i) sq[i] = psi[i] * psi[i];
  const double mass = quadrature(*this, sq);
  check<InvariantError>(std::fabs(mass - 1.0) <= 1e-6, "packet normalization drifted: ", mass);
}

PacketGrid build_packet(const Model& m, int label, const GridDomain& domain,
                        int64_t nodes_per_axis) {
  const size_t d = domain.lo.size();
  check<ConfigError>(d >= 1 && d <= 3, "build_packet supports 1 to 3 axes, got ", (long long)d);
  check<ConfigError>(nodes_per_axis >= 64, "build_packet needs at least 64 nodes per axis, got ",
                     nodes_per_axis);
  const std::vector<int64_t> nodes(d, nodes_per_axis);
  const GridWalk w(nodes);
  int64_t total = 1;
  for (size_t a = 0; a < d; ++a) total *= nodes_per_axis;

  std::vector<double> h(d);
  for (size_t a = 0; a < d; ++a)
    h[a] = (domain.hi[a] - domain.lo[a]) / (double)(nodes_per_axis - 1);

  Tensor loss = Tensor::zeros(nodes);
  constexpr int64_t kBatch = 1024;
  for (int64_t start = 0; start < total; start += kBatch) {
    const int64_t stop = std::min(total, start + kBatch);
    Tensor points = Tensor::zeros({stop - start, (int64_t)d});
    for (int64_t i = start; i < stop; ++i)
      for (size_t a = 0; a < d; ++a)
        points[(i - start) * (int64_t)d + (int64_t)a] =
            domain.lo[a] + h[a] * (double)w.axis_index(i, (int)a);
    const std::vector<double> values = batch_loss(m, points, label);
    std::copy(values.begin(), values.end(), loss.values().begin() + start);
  }
  return normalize_packet(domain, nodes, std::move(loss), label);
}

PacketGrid build_packet_from_values(const GridDomain& domain, const Tensor& loss_values,
                                    int label) {
  for (int64_t n : loss_values.shape())
    check<ConfigError>(n >= 4, "packet grids need at least 4 nodes per axis, got ", n);
  return normalize_packet(domain, loss_values.shape(), loss_values, label);
}

double expectation_x(const PacketGrid& p, int axis) {
  check_axis(p, axis);
  const GridWalk w(p.nodes);
  double acc = 0.0;
  for (int64_t i = 0; i < p.psi.size(); ++i)
    acc += node_weight(p, w, i) * p.psi[i] * p.psi[i] * p.coord(axis, w.axis_index(i, axis));
  return acc;
}

double expectation_p(const PacketGrid& p, int axis) {
  check_axis(p, axis);
  const Tensor dpsi = axis_derivative(p, axis);
  const GridWalk w(p.nodes);
  double acc = 0.0;
  for (int64_t i = 0; i < p.psi.size(); ++i)
    acc += node_weight(p, w, i) * p.psi[i] * dpsi[i];
  return acc;
}

namespace {

double variance_guard(double variance, const char* what) {
  check<InvariantError>(variance >= -1e-12, what, " variance is negative beyond rounding: ",
                        variance);
  return std::max(variance, 0.0);
}

}  // namespace

double sigma_x(const PacketGrid& p, int axis) {
  check_axis(p, axis);
  const GridWalk w(p.nodes);
  const double mean = expectation_x(p, axis);
  double acc = 0.0;
  for (int64_t i = 0; i < p.psi.size(); ++i) {
    const double x = p.coord(axis, w.axis_index(i, axis));
    acc += node_weight(p, w, i) * p.psi[i] * p.psi[i] * x * x;
  }
  return std::sqrt(variance_guard(acc - mean * mean, "position"));
}

double sigma_p(const PacketGrid& p, int axis) {
  check_axis(p, axis);
  const Tensor dpsi = axis_derivative(p, axis);
  const GridWalk w(p.nodes);
  double acc = 0.0;
  for (int64_t i = 0; i < p.psi.size(); ++i)
    acc += node_weight(p, w, i) * dpsi[i] * dpsi[i];
  const double mean = expectation_p(p, axis);
  return std::sqrt(variance_guard(acc - mean * mean, "attack-operator"));
}

UncertaintyResult uncertainty_product(const PacketGrid& p, int axis) {
  check_axis(p, axis);
  UncertaintyResult r;
  r.stats.axis = axis;
  r.stats.mean_x = expectation_x(p, axis);
  r.stats.mean_p = expectation_p(p, axis);
  r.stats.sigma_x = sigma_x(p, axis);
  r.stats.sigma_p = sigma_p(p, axis);
  r.stats.product = r.stats.sigma_x * r.stats.sigma_p;
  const double h = p.h[(size_t)axis];
  r.tol = std::max(1e-3, 10.0 * h * h);
  r.pass = r.stats.product >= 0.5 - r.tol;
  return r;
}

CommutatorReport commutator_check(const PacketGrid& p) {
  CommutatorReport report;
  report.pass = true;
  const GridWalk w(p.nodes);
  for (int axis = 0; axis < p.dimension(); ++axis) {
    const int64_t s = w.stride[(size_t)axis];
    const int64_t n = p.nodes[(size_t)axis];
    const double h = p.h[(size_t)axis];
    double max_residual = 0.0, max_curvature = 0.0;
    for (int64_t i = 0; i < p.psi.size(); ++i) {
      const int64_t j = w.axis_index(i, axis);
      if (j == 0 || j == n - 1) continue;  // interior only
      const double x_prev = p.coord(axis, j - 1), x_next = p.coord(axis, j + 1);
      const double x = p.coord(axis, j);
      const double d_xpsi = (x_next * p.psi[i + s] - x_prev * p.psi[i - s]) / (2.0 * h);
      const double x_dpsi = x * (p.psi[i + s] - p.psi[i - s]) / (2.0 * h);
      max_residual = std::max(max_residual, std::fabs(d_xpsi - x_dpsi - p.psi[i]));
      max_curvature = std::max(
          max_curvature, std::fabs(p.psi[i + s] - 2.0 * p.psi[i] + p.psi[i - s]) / (h * h));
    }
    // The small floor keeps an exactly-linear psi (curvature at rounding
    // level) from failing on its own arithmetic noise.
    const double bound = 10.0 * h * h * max_curvature + 1e-12;
    if (max_residual > report.max_residual) {
      report.max_residual = max_residual;
      report.bound = bound;
    }
    if (max_residual > bound) report.pass = false;
  }
  return report;
}

AlignmentReport packet_gradient_alignment(const Model& m, const PacketGrid& p, const Tensor& x0) {
  Tensor point = x0;
  if (point.rank() == 1) point = point.reshaped({1, point.dim(0)});
  check<ConfigError>(point.rank() == 2 && point.dim(0) == 1,
                     "alignment expects a single point, got shape ", x0.shape_str());

  // grad of l and grad of psi = l/sqrt(beta), both by reverse mode.
  auto gradient = [&](double scale) {
    Graph g;
    NodeId xn = g.leaf(point, true);
    NodeId logits = model_forward(g, m, xn);
    NodeId ce = g.sum(g.softmax_cross_entropy(logits, {p.label}));
    NodeId out = scale == 1.0 ? ce : g.scalar_mul(ce, scale);
    return g.backward(out).grad(xn);
  };
  const Tensor grad_l = gradient(1.0);
  const Tensor grad_psi = gradient(1.0 / std::sqrt(p.beta));

  auto norm = [](const Tensor& t) {
    double s = 0.0;
    for (int64_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return std::sqrt(s);
  };
  AlignmentReport report;
  const double nl = norm(grad_l), np = norm(grad_psi);
  if (nl == 0.0 || np == 0.0) return report;  // undefined, not NaN
  report.defined = true;
  double dot = 0.0;
  for (int64_t i = 0; i < grad_l.size(); ++i) dot += grad_l[i] * grad_psi[i];
  report.cosine = dot / (nl * np);
  report.scale_ratio = nl / np;
  return report;
}

McSigma mc_sigma_estimate(const Model& m, int label, const Dataset& d, int axis, int64_t samples,
                          uint64_t seed) {
  d.validate();
  check<ConfigError>(samples >= 1000, "mc sigma estimate needs at least 1000 samples, got ",
                     samples);
  check<ConfigError>(axis >= 0 && axis < d.feature_size(), "mc axis ", axis,
                     " outside feature size ", d.feature_size());

  RngStream rng(seed, 0);
  std::vector<int64_t> idx((size_t)samples);
  for (int64_t& v : idx) v = rng.below(d.size());

  // Accumulate sum(l^2), sum(l^2 x), sum(l^2 x^2), sum(l dl), sum(dl^2) over
  // the sampled points; dl is the exact reverse-mode gradient component.
  double sw = 0.0, swx = 0.0, swxx = 0.0, sldl = 0.0, sdl2 = 0.0;
  constexpr int64_t kBatch = 512;
  const int64_t feat = d.feature_size();
  for (int64_t start = 0; start < samples; start += kBatch) {
    const int64_t stop = std::min(samples, start + kBatch);
    const std::span<const int64_t> part(idx.data() + start, (size_t)(stop - start));
    const Tensor x = gather_inputs(d, part);
    Graph g;
    NodeId xn = g.leaf(x, true);
    NodeId logits = model_forward(g, m, xn);
    const std::vector<int> labels((size_t)(stop - start), label);
    NodeId ce = g.softmax_cross_entropy(logits, labels);
    const Tensor losses = g.value(ce);
    const Tensor grads = g.backward(g.sum(ce)).grad(xn);
    for (int64_t r = 0; r < stop - start; ++r) {
      const double l = losses[r];
      const double xi = x[r * feat + axis];
      const double dl = grads[r * feat + axis];
      sw += l * l;
      swx += l * l * xi;
      swxx += l * l * xi * xi;
      sldl += l * dl;
      sdl2 += dl * dl;
    }
  }
  check<InvariantError>(sw > 0.0, "mc sigma estimate: loss vanished on every sampled point");

  McSigma out;
  out.stats.axis = axis;
  out.stats.mean_x = swx / sw;
  out.stats.mean_p = sldl / sw;
  out.stats.sigma_x =
      std::sqrt(variance_guard(swxx / sw - out.stats.mean_x * out.stats.mean_x, "mc position"));
  out.stats.sigma_p = std::sqrt(
      variance_guard(sdl2 / sw - out.stats.mean_p * out.stats.mean_p, "mc attack-operator"));
  out.stats.product = out.stats.sigma_x * out.stats.sigma_p;
  return out;
}

void save_packet(const PacketGrid& p, const std::filesystem::path& path) {
  json header;
  header["lo"] = p.lo;
  header["hi"] = p.hi;
  header["nodes"] = p.nodes;
  header["beta"] = p.beta;
  header["label"] = p.label;
  header["boundary_ratio"] = p.boundary_ratio;
  header["boundary_ok"] = p.boundary_ok;
  const std::string htext = header.dump();

  std::string out;
  out.append("NPPK", 4);
  auto put_u32 = [&out](uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
  };
  put_u32(1);  // version
  put_u32((uint32_t)htext.size());
  out += htext;
  for (double v : p.psi.values()) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back((char)((bits >> (8 * i)) & 0xff));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check<DataError>(f.good(), "cannot open packet dump for writing: ", path.string());
  f.write(out.data(), (std::streamsize)out.size());
  f.flush();
  check<DataError>(f.good(), "short write to packet dump: ", path.string());
}

PacketGrid load_packet(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  check<DataError>(f.good(), "cannot open packet dump: ", path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  check<DataError>(bytes.size() >= 12 && bytes.compare(0, 4, "NPPK") == 0, path.string(),
                   ": not a packet dump (bad magic)");
  size_t pos = 4;
  auto get_u32 = [&]() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (uint32_t)(uint8_t)bytes[pos + (size_t)i] << (8 * i);
    pos += 4;
    return v;
  };
  const uint32_t version = get_u32();
  check<DataError>(version == 1, path.string(), ": unsupported packet dump version ",
                   (long long)version);
  const uint32_t hlen = get_u32();
  check<DataError>(pos + hlen <= bytes.size(), path.string(), ": truncated header");
  json header = json::parse(bytes.substr(pos, hlen), nullptr, false);
  check<DataError>(!header.is_discarded(), path.string(), ": header is not valid JSON");
  pos += hlen;

  PacketGrid p;
  p.lo = header.at("lo").get<std::vector<double>>();
  p.hi = header.at("hi").get<std::vector<double>>();
  p.nodes = header.at("nodes").get<std::vector<int64_t>>();
  p.beta = header.at("beta").get<double>();
  p.label = header.at("label").get<int>();
  p.boundary_ratio = header.at("boundary_ratio").get<double>();
  p.boundary_ok = header.at("boundary_ok").get<bool>();
  const size_t d = p.nodes.size();
  check<DataError>(d >= 1 && p.lo.size() == d && p.hi.size() == d, path.string(),
                   ": header axis metadata is inconsistent");
  p.h.resize(d);
  for (size_t a = 0; a < d; ++a)
    p.h[a] = (p.hi[a] - p.lo[a]) / (double)(p.nodes[a] - 1);

  const int64_t count = shape_size(p.nodes);
  check<DataError>(bytes.size() - pos == (size_t)count * 8, path.string(), ": expected ",
                   count * 8, " payload bytes, found ", (long long)(bytes.size() - pos));
  p.psi = Tensor::zeros(p.nodes);
  for (int64_t i = 0; i < count; ++i) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= (uint64_t)(uint8_t)bytes[pos + (size_t)(i * 8 + b)] << (8 * b);
    std::memcpy(&p.psi[i], &bits, 8);
  }
  p.validate();
  return p;
}

}  // namespace nplab
