#pragma once

#include <cstdint>
#include <vector>

#include "nplab/rng.hpp"
#include "nplab/tensor.hpp"

namespace nplab {

// Primitive vocabulary of the tape.  bias_add is the one extension over the
// basic arithmetic set: it broadcasts a rank-1 tensor along a named axis
// (affine layers need it; everything else obeys "scalar broadcast only").
enum class Op {
  leaf,
  add,
  sub,
  mul,
  scalar_mul,
  matmul,
  conv2d,
  transposed_conv2d,
  relu,
  leaky_relu,
  sigmoid,
  tanh,
  max_pool2d,
  mean,
  sum,
  softmax_cross_entropy,
  l1_loss,
  l2_loss,
  concat,
  reshape,
  sign,
  clamp,
  bias_add,
};

const char* op_name(Op op);

struct PrimitiveAttrs {
  double scalar = 1.0;          // scalar_mul
  double lo = 0.0, hi = 1.0;    // clamp
  double slope = 0.01;          // leaky_relu
  int stride = 1, pad = 0;      // conv2d / transposed_conv2d
  int pool = 2;                 // max_pool2d window == stride
  int axis = 0;                 // concat / bias_add
  std::vector<int64_t> shape;   // reshape target (one -1 allowed)
  std::vector<int> labels;      // softmax_cross_entropy
};

using NodeId = int32_t;

struct Node {
  Op op = Op::leaf;
  std::vector<NodeId> inputs;
  PrimitiveAttrs attrs;
  Tensor value;
  Tensor saved;                  // softmax probabilities
  std::vector<int64_t> argmax;   // max-pool winners (flat indices into input)
  bool requires_grad = false;
};

class Graph;

// Gradients keyed by node id.  Leaves that backward never reached read as
// zero tensors of the leaf's shape.
class GradientMap {
 public:
  GradientMap(std::vector<Tensor> grads, const Graph* g) : grads_(std::move(grads)), graph_(g) {}
  bool reached(NodeId id) const;
  const Tensor& at(NodeId id) const;  // errors when unreached
  Tensor grad(NodeId id) const;       // zeros when unreached

 private:
  std::vector<Tensor> grads_;
  const Graph* graph_;
};

// Reverse-mode tape: append-only, topologically ordered by construction.
// Forward values are computed eagerly at apply() time and stored on the node,
// so replaying a build with identical inputs is bit-identical by construction.
class Graph {
 public:
  NodeId leaf(Tensor value, bool requires_grad = false);

  // Generic entry point; the typed helpers below all route through this.
  NodeId apply(Op op, std::vector<NodeId> inputs, PrimitiveAttrs attrs = {});

  NodeId add(NodeId a, NodeId b) { return apply(Op::add, {a, b}); }
  NodeId sub(NodeId a, NodeId b) { return apply(Op::sub, {a, b}); }
  NodeId mul(NodeId a, NodeId b) { return apply(Op::mul, {a, b}); }
  NodeId scalar_mul(NodeId x, double c);
  NodeId matmul(NodeId a, NodeId b) { return apply(Op::matmul, {a, b}); }
  NodeId conv2d(NodeId x, NodeId w, int stride = 1, int pad = 0);
  NodeId transposed_conv2d(NodeId x, NodeId w, int stride = 1, int pad = 0);
  NodeId relu(NodeId x) { return apply(Op::relu, {x}); }
  NodeId leaky_relu(NodeId x, double slope);
  NodeId sigmoid(NodeId x) { return apply(Op::sigmoid, {x}); }
  NodeId tanh(NodeId x) { return apply(Op::tanh, {x}); }
  NodeId max_pool2d(NodeId x, int pool);
  NodeId mean(NodeId x) { return apply(Op::mean, {x}); }
  NodeId sum(NodeId x) { return apply(Op::sum, {x}); }
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);
  NodeId l1_loss(NodeId a, NodeId b) { return apply(Op::l1_loss, {a, b}); }
  NodeId l2_loss(NodeId a, NodeId b) { return apply(Op::l2_loss, {a, b}); }
  NodeId concat(std::vector<NodeId> xs, int axis);
  NodeId reshape(NodeId x, std::vector<int64_t> shape);
  NodeId sign(NodeId x) { return apply(Op::sign, {x}); }
  NodeId clamp(NodeId x, double lo, double hi);
  NodeId bias_add(NodeId x, NodeId b, int axis);

  // References returned here are invalidated by the next leaf()/apply()
  // (nodes live in a growing vector); copy the tensor to keep it.
  const Tensor& value(NodeId id) const { return node(id).value; }
  const Node& node(NodeId id) const;
  int64_t node_count() const { return static_cast<int64_t>(nodes_.size()); }

  // Reverse sweep from a scalar-valued node.
  GradientMap backward(NodeId loss) const;

 private:
  friend class GradientMap;
  std::vector<Node> nodes_;

  Tensor forward(Node& n) const;
  void backprop_node(NodeId id, const Tensor& g, std::vector<Tensor>& grads) const;
  void accumulate(std::vector<Tensor>& grads, NodeId id, Tensor&& g) const;
};

// Spec-level RNG entry points (thin wrappers over RngStream).
RngStream rng_stream(uint64_t seed, uint64_t stream_id);
Tensor draw_normal(RngStream& s, std::vector<int64_t> shape);
Tensor draw_uniform(RngStream& s, std::vector<int64_t> shape);

}  // namespace nplab
