#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nplab/dataset.hpp"
#include "nplab/model.hpp"
#include "nplab/tensor.hpp"

namespace nplab {

// A model's per-class loss surface sampled on a uniform tensor-product grid
// and L2-normalized: psi = l / sqrt(beta), beta = quadrature(l^2).  All
// integrals below are trapezoid-rule tensor products on this grid.
struct PacketGrid {
  std::vector<double> lo, hi, h;  // per-axis extents and spacing
  std::vector<int64_t> nodes;     // per-axis node counts (endpoints included)
  Tensor psi;                     // d-dimensional, shape == nodes
  double beta = 0.0;              // normalizer: quadrature of l^2
  int label = 0;
  // Boundary decay diagnostic: max boundary psi^2 over max interior psi^2.
  // Values above 1e-3 mean the domain truncates real mass; construction
  // warns but proceeds (surface terms then contaminate <p> and sigma_p).
  double boundary_ratio = 0.0;
  bool boundary_ok = true;

  int dimension() const { return static_cast<int>(nodes.size()); }
  double coord(int axis, int64_t j) const { return lo[(size_t)axis] + h[(size_t)axis] * (double)j; }
  // Normalization within 1e-6, psi >= 0, shape consistency.
  void validate() const;
};

struct GridDomain {
  std::vector<double> lo, hi;  // one entry per axis, lo < hi
};

// Evaluates the model's per-sample cross-entropy loss toward `label` at every
// grid node and normalizes.  Rejects d > 3, nodes_per_axis < 64, and an
// identically zero loss; a boundary-decay violation only warns (stderr).
PacketGrid build_packet(const Model& m, int label, const GridDomain& domain,
                        int64_t nodes_per_axis);

// Same normalization pipeline from raw nonnegative samples of l on the grid
// (analytic fixtures and oracles); any node count >= 4 per axis is allowed.
PacketGrid build_packet_from_values(const GridDomain& domain, const Tensor& loss_values,
                                    int label = 0);

// Moment statistics for one axis.  mean_p uses <psi, d_i psi>; sigma_p uses
// the Hermitian-square convention integral((d_i psi)^2) - mean_p^2, which is
// the convention under which the Gaussian equality product 1/2 holds.
struct OperatorStats {
  int axis = 0;
  double mean_x = 0.0;
  double mean_p = 0.0;
  double sigma_x = 0.0;
  double sigma_p = 0.0;
  double product = 0.0;
};

double expectation_x(const PacketGrid& p, int axis);
double expectation_p(const PacketGrid& p, int axis);
double sigma_x(const PacketGrid& p, int axis);
double sigma_p(const PacketGrid& p, int axis);

// Stats plus the inequality verdict: pass iff product >= 0.5 - tol, where
// tol = max(1e-3, 10 h^2) absorbs the second-order quadrature error.
struct UncertaintyResult {
  OperatorStats stats;
  double tol = 0.0;
  bool pass = false;
};
UncertaintyResult uncertainty_product(const PacketGrid& p, int axis);

// Discrete product-rule identity d_i(x_i psi) - x_i d_i psi == psi + O(h^2);
// the residual's second-order term is exactly (h^2/2) psi''.
struct CommutatorReport {
  double max_residual = 0.0;  // worst |identity - psi| over interior nodes
  double bound = 0.0;         // 10 h^2 max|psi''| (+ small rounding floor)
  bool pass = false;
};
CommutatorReport commutator_check(const PacketGrid& p);

// Cosine between grad_x l and grad_x psi at one point -- proportional by
// construction (psi = l/sqrt(beta)), so cosine == 1 and the gradient-norm
// ratio recovers sqrt(beta).  A zero gradient is reported as undefined.
struct AlignmentReport {
  bool defined = false;
  double cosine = 0.0;
  double scale_ratio = 0.0;  // |grad l| / |grad psi| == sqrt(beta)
};
AlignmentReport packet_gradient_alignment(const Model& m, const PacketGrid& p, const Tensor& x0);

// Monte-Carlo stand-in for image-scale packets where grid quadrature is
// impossible: dataset points are the sampling measure, so the numbers are
// approximate and measure-dependent; no inequality verdict is attached.
struct McSigma {
  OperatorStats stats;
  bool approximate = true;
};
McSigma mc_sigma_estimate(const Model& m, int label, const Dataset& d, int axis, int64_t samples,
                          uint64_t seed);

// Packet dump: JSON header (domain, spacing, beta, label) + raw psi payload;
// round trips bit-exactly.
void save_packet(const PacketGrid& p, const std::filesystem::path& path);
PacketGrid load_packet(const std::filesystem::path& path);

}  // namespace nplab
