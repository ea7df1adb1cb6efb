#include "nplab/autograd.hpp"

#include <cmath>
#include <cstring>

#include "nplab/kernels.hpp"
#include "nplab/linops.hpp"

namespace nplab {

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scalar_mul: return "scalar-mul";
    case Op::matmul: return "matmul";
    case Op::conv2d: return "conv2d";
    case Op::transposed_conv2d: return "transposed-conv2d";
    case Op::relu: return "relu";
    case Op::leaky_relu: return "leaky-relu";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::max_pool2d: return "max-pool2d";
    case Op::mean: return "mean";
    case Op::sum: return "sum";
    case Op::softmax_cross_entropy: return "softmax-cross-entropy";
    case Op::l1_loss: return "l1-loss";
    case Op::l2_loss: return "l2-loss";
    case Op::concat: return "concat";
    case Op::reshape: return "reshape";
    case Op::sign: return "sign";
    case Op::clamp: return "clamp";
    case Op::bias_add: return "bias-add";
  }
  return "?";
}

namespace {

bool is_scalar0(const Tensor& t) { return t.rank() == 0; }

// add/sub/mul accept equal shapes or a rank-0 scalar on either side.
const Tensor& elementwise_result_side(const Tensor& a, const Tensor& b, Op op) {
  if (a.same_shape(b)) return a;
  if (is_scalar0(a)) return b;
  if (is_scalar0(b)) return a;
  throw Error(format_msg(op_name(op), ": shape mismatch between ", a.shape_str(), " and ",
                         b.shape_str(), " (only scalar broadcast is supported)"));
  }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

struct ConvDims {
  int64_t n, ci, h, w, co, kh, kw, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, int stride, int pad, bool transposed) {
  check(x.rank() == 4, op_name(transposed ? Op::transposed_conv2d : Op::conv2d),
        ": input must be rank-4 (N, C, H, W), got ", x.shape_str());
  check(wt.rank() == 4, op_name(transposed ? Op::transposed_conv2d : Op::conv2d),
        ": weight must be rank-4, got ", wt.shape_str());
  check(stride >= 1 && pad >= 0, "conv: stride must be >= 1 and pad >= 0, got stride ", stride,
        " pad ", pad);
  ConvDims d{};
  d.n = x.dim(0);
  d.ci = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  if (!transposed) {
    d.co = wt.dim(0);
    check(wt.dim(1) == d.ci, "conv2d: input channels ", x.shape_str(),
          " do not match weight ", wt.shape_str());
    d.kh = wt.dim(2);
    d.kw = wt.dim(3);
    d.ho = linops::conv_out_dim(d.h, d.kh, stride, pad);
    d.wo = linops::conv_out_dim(d.w, d.kw, stride, pad);
  } else {
    check(wt.dim(0) == d.ci, "transposed-conv2d: input channels ", x.shape_str(),
          " do not match weight ", wt.shape_str());
    d.co = wt.dim(1);
    d.kh = wt.dim(2);
    d.kw = wt.dim(3);
    d.ho = (d.h - 1) * stride - 2 * pad + d.kh;
    d.wo = (d.w - 1) * stride - 2 * pad + d.kw;
    check(d.ho >= 1 && d.wo >= 1, "transposed-conv2d: output size ", d.ho, "x", d.wo,
          " not positive for input ", x.shape_str(), " weight ", wt.shape_str());
  }
  return d;
}

}  // namespace

bool GradientMap::reached(NodeId id) const {
  return id >= 0 && id < static_cast<NodeId>(grads_.size()) &&
         grads_[static_cast<size_t>(id)].size() > 0;
}

const Tensor& GradientMap::at(NodeId id) const {
  check(reached(id), "gradient map: node ", id, " was not reached by backward");
  return grads_[static_cast<size_t>(id)];
}

Tensor GradientMap::grad(NodeId id) const {
  if (reached(id)) return grads_[static_cast<size_t>(id)];
  return Tensor::zeros(graph_->node(id).value.shape());
}

const Node& Graph::node(NodeId id) const {
  check(id >= 0 && id < static_cast<NodeId>(nodes_.size()), "node id ", id, " out of range");
  return nodes_[static_cast<size_t>(id)];
}

NodeId Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::apply(Op op, std::vector<NodeId> inputs, PrimitiveAttrs attrs) {
  check(op != Op::leaf, "apply: use leaf() to create leaves");
  for (NodeId id : inputs) node(id);  // range-check
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.attrs = std::move(attrs);
  n.requires_grad = false;
  for (NodeId id : n.inputs) n.requires_grad |= node(id).requires_grad;
  n.value = forward(n);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::scalar_mul(NodeId x, double c) {
  PrimitiveAttrs a;
  a.scalar = c;
  return apply(Op::scalar_mul, {x}, std::move(a));
}

NodeId Graph::conv2d(NodeId x, NodeId w, int stride, int pad) {
  PrimitiveAttrs a;
  a.stride = stride;
  a.pad = pad;
  return apply(Op::conv2d, {x, w}, std::move(a));
}

NodeId Graph::transposed_conv2d(NodeId x, NodeId w, int stride, int pad) {
  PrimitiveAttrs a;
  a.stride = stride;
  a.pad = pad;
  return apply(Op::transposed_conv2d, {x, w}, std::move(a));
}

NodeId Graph::leaky_relu(NodeId x, double slope) {
  PrimitiveAttrs a;
  a.slope = slope;
  return apply(Op::leaky_relu, {x}, std::move(a));
}

NodeId Graph::max_pool2d(NodeId x, int pool) {
  PrimitiveAttrs a;
  a.pool = pool;
  return apply(Op::max_pool2d, {x}, std::move(a));
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
  PrimitiveAttrs a;
  a.labels = std::move(labels);
  return apply(Op::softmax_cross_entropy, {logits}, std::move(a));
}

NodeId Graph::concat(std::vector<NodeId> xs, int axis) {
  PrimitiveAttrs a;
  a.axis = axis;
  return apply(Op::concat, std::move(xs), std::move(a));
}

NodeId Graph::reshape(NodeId x, std::vector<int64_t> shape) {
  PrimitiveAttrs a;
  a.shape = std::move(shape);
  return apply(Op::reshape, {x}, std::move(a));
}

NodeId Graph::clamp(NodeId x, double lo, double hi) {
  PrimitiveAttrs a;
  a.lo = lo;
  a.hi = hi;
  return apply(Op::clamp, {x}, std::move(a));
}

NodeId Graph::bias_add(NodeId x, NodeId b, int axis) {
  PrimitiveAttrs a;
  a.axis = axis;
  return apply(Op::bias_add, {x, b}, std::move(a));
}

Tensor Graph::forward(Node& n) const {
  const auto& kt = kernels::table();
  auto in = [&](size_t i) -> const Tensor& { return node(n.inputs[i]).value; };
  auto arity = [&](size_t k) {
    check(n.inputs.size() == k, op_name(n.op), ": expected ", k, " inputs, got ",
          n.inputs.size());
  };

  switch (n.op) {
    case Op::leaf:
      throw Error("leaf nodes carry their own value");

    case Op::add:
    case Op::sub:
    case Op::mul: {
      arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor out(elementwise_result_side(a, b, n.op).shape());
      int64_t m = out.size();
      if (a.same_shape(b)) {
        if (n.op == Op::add) kt.add(a.data(), b.data(), out.data(), m);
        else if (n.op == Op::sub) kt.sub(a.data(), b.data(), out.data(), m);
        else kt.mul(a.data(), b.data(), out.data(), m);
      } else if (is_scalar0(b)) {
        double c = b[0];
        for (int64_t i = 0; i < m; ++i) {
          double av = a[i];
          out[i] = n.op == Op::add ? av + c : (n.op == Op::sub ? av - c : av * c);
        }
      } else {  // a is the scalar
        double c = a[0];
        for (int64_t i = 0; i < m; ++i) {
          double bv = b[i];
          out[i] = n.op == Op::add ? c + bv : (n.op == Op::sub ? c - bv : c * bv);
        }
      }
      return out;
    }

    case Op::scalar_mul: {
      arity(1);
      Tensor out(in(0).shape());
      kt.scale(in(0).data(), n.attrs.scalar, out.data(), out.size());
      return out;
    }

    case Op::matmul: {
      arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      check(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
            "matmul: shapes do not conform: ", a.shape_str(), " x ", b.shape_str());
      Tensor out({a.dim(0), b.dim(1)});
      linops::matmul(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
      return out;
    }

    case Op::conv2d: {
      arity(2);
      const Tensor& x = in(0);
      const Tensor& wt = in(1);
      ConvDims d = conv_dims(x, wt, n.attrs.stride, n.attrs.pad, false);
      Tensor out({d.n, d.co, d.ho, d.wo});
      int64_t k = d.ci * d.kh * d.kw, l = d.ho * d.wo;
      std::vector<double> cols(static_cast<size_t>(k * l));
      for (int64_t s = 0; s < d.n; ++s) {
        linops::im2col(x.data() + s * d.ci * d.h * d.w, d.ci, d.h, d.w, d.kh, d.kw,
                       n.attrs.stride, n.attrs.pad, d.ho, d.wo, cols.data());
        linops::matmul(wt.data(), cols.data(), out.data() + s * d.co * l, d.co, k, l);
      }
      return out;
    }

    case Op::transposed_conv2d: {
      arity(2);
      const Tensor& x = in(0);
      const Tensor& wt = in(1);
      ConvDims d = conv_dims(x, wt, n.attrs.stride, n.attrs.pad, true);
      Tensor out({d.n, d.co, d.ho, d.wo});
      int64_t k = d.co * d.kh * d.kw, l = d.h * d.w;
      std::vector<double> cols(static_cast<size_t>(k * l));
      for (int64_t s = 0; s < d.n; ++s) {
        // cols = W^T x, then scatter kernels onto the (larger) output plane.
        linops::matmul_transa(wt.data(), x.data() + s * d.ci * l, cols.data(), k, d.ci, l);
        linops::col2im(cols.data(), d.co, d.ho, d.wo, d.kh, d.kw, n.attrs.stride, n.attrs.pad,
                       d.h, d.w, out.data() + s * d.co * d.ho * d.wo);
      }
      return out;
    }

    case Op::relu: {
      arity(1);
      Tensor out(in(0).shape());
      kt.relu(in(0).data(), out.data(), out.size());
      return out;
    }

    case Op::leaky_relu: {
      arity(1);
      Tensor out(in(0).shape());
      kt.leaky_relu(in(0).data(), n.attrs.slope, out.data(), out.size());
      return out;
    }

    case Op::sigmoid: {
      arity(1);
      Tensor out(in(0).shape());
      for (int64_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(in(0)[i]);
      return out;
    }

    case Op::tanh: {
      arity(1);
      Tensor out(in(0).shape());
      for (int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(in(0)[i]);
      return out;
    }

    case Op::max_pool2d: {
      arity(1);
      const Tensor& x = in(0);
      int64_t p = n.attrs.pool;
      check(x.rank() == 4, "max-pool2d: input must be rank-4, got ", x.shape_str());
      check(p >= 1 && x.dim(2) % p == 0 && x.dim(3) % p == 0,
            "max-pool2d: window ", p, " must divide spatial dims of ", x.shape_str());
      int64_t nn = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
      int64_t ho = h / p, wo = w / p;
      Tensor out({nn, c, ho, wo});
      n.argmax.assign(static_cast<size_t>(out.size()), 0);
      int64_t oi = 0;
      for (int64_t s = 0; s < nn; ++s)
        for (int64_t ch = 0; ch < c; ++ch) {
          const double* plane = x.data() + (s * c + ch) * h * w;
          int64_t base = (s * c + ch) * h * w;
          for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox, ++oi) {
              double best = plane[oy * p * w + ox * p];
              int64_t best_idx = oy * p * w + ox * p;
              for (int64_t ky = 0; ky < p; ++ky)
                for (int64_t kx = 0; kx < p; ++kx) {
                  int64_t idx = (oy * p + ky) * w + (ox * p + kx);
                  if (plane[idx] > best) {  // ties keep the lowest index
                    best = plane[idx];
                    best_idx = idx;
                  }
                }
              out[oi] = best;
              n.argmax[static_cast<size_t>(oi)] = base + best_idx;
            }
        }
      return out;
    }

    case Op::mean:
    case Op::sum: {
      arity(1);
      double s = kt.sum(in(0).data(), in(0).size());
      if (n.op == Op::mean) {
        check(in(0).size() > 0, "mean of an empty tensor");
        s /= static_cast<double>(in(0).size());
      }
      return Tensor::scalar(s);
    }

    case Op::softmax_cross_entropy: {
      arity(1);
      const Tensor& logits = in(0);
      check(logits.rank() == 2, "softmax-cross-entropy: logits must be rank-2 (N, K), got ",
            logits.shape_str());
      int64_t nn = logits.dim(0), kk = logits.dim(1);
      check(static_cast<int64_t>(n.attrs.labels.size()) == nn,
            "softmax-cross-entropy: ", n.attrs.labels.size(), " labels for ", nn, " rows");
      Tensor out({nn});
      n.saved = Tensor({nn, kk});
      for (int64_t r = 0; r < nn; ++r) {
        int label = n.attrs.labels[static_cast<size_t>(r)];
        check(label >= 0 && label < kk, "softmax-cross-entropy: label ", label,
              " out of range for ", kk, " classes");
        const double* row = logits.data() + r * kk;
        double m = row[0];
        for (int64_t j = 1; j < kk; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < kk; ++j) z += std::exp(row[j] - m);
        double lse = m + std::log(z);
        for (int64_t j = 0; j < kk; ++j) n.saved[r * kk + j] = std::exp(row[j] - lse);
        out[r] = lse - row[label];
      }
      return out;
    }

    case Op::l1_loss:
    case Op::l2_loss: {
      arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      check(a.same_shape(b), op_name(n.op), ": shape mismatch between ", a.shape_str(),
            " and ", b.shape_str());
      check(a.size() > 0, op_name(n.op), " of empty tensors");
      double s = 0.0;
      for (int64_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += n.op == Op::l1_loss ? std::fabs(d) : d * d;
      }
      return Tensor::scalar(s / static_cast<double>(a.size()));
    }

    case Op::concat: {
      check(!n.inputs.empty(), "concat: needs at least one input");
      const Tensor& first = in(0);
      int axis = n.attrs.axis;
      check(first.rank() >= 1 && axis >= 0 && axis < first.rank(),
            "concat: axis ", axis, " invalid for shape ", first.shape_str());
      std::vector<int64_t> out_shape = first.shape();
      for (size_t i = 1; i < n.inputs.size(); ++i) {
        const Tensor& t = in(i);
        check(t.rank() == first.rank(), "concat: rank mismatch between ", first.shape_str(),
              " and ", t.shape_str());
        for (int d = 0; d < first.rank(); ++d)
          check(d == axis || t.dim(d) == first.dim(d), "concat: shape mismatch between ",
                first.shape_str(), " and ", t.shape_str(), " outside axis ", axis);
        out_shape[static_cast<size_t>(axis)] += t.dim(axis);
      }
      Tensor out(out_shape);
      int64_t outer = 1, inner = 1;
      for (int d = 0; d < axis; ++d) outer *= first.dim(d);
      for (int d = axis + 1; d < first.rank(); ++d) inner *= first.dim(d);
      int64_t out_axis = out_shape[static_cast<size_t>(axis)];
      int64_t off = 0;
      for (size_t i = 0; i < n.inputs.size(); ++i) {
        const Tensor& t = in(i);
        int64_t da = t.dim(axis);
        for (int64_t o = 0; o < outer; ++o)
          std::memcpy(out.data() + (o * out_axis + off) * inner, t.data() + o * da * inner,
                      static_cast<size_t>(da * inner) * sizeof(double));
        off += da;
      }
      return out;
    }

    case Op::reshape:
      arity(1);
      return in(0).reshaped(n.attrs.shape);

    case Op::sign: {
      arity(1);
      Tensor out(in(0).shape());
      kt.sign(in(0).data(), out.data(), out.size());
      return out;
    }

    case Op::clamp: {
      arity(1);
      check(n.attrs.lo <= n.attrs.hi, "clamp: lo ", n.attrs.lo, " > hi ", n.attrs.hi);
      Tensor out(in(0).shape());
      kt.clamp(in(0).data(), n.attrs.lo, n.attrs.hi, out.data(), out.size());
      return out;
    }

    case Op::bias_add: {
      arity(2);
      const Tensor& x = in(0);
      const Tensor& b = in(1);
      int axis = n.attrs.axis;
      check(x.rank() >= 1 && axis >= 0 && axis < x.rank(), "bias-add: axis ", axis,
            " invalid for shape ", x.shape_str());
      check(b.rank() == 1 && b.dim(0) == x.dim(axis), "bias-add: bias ", b.shape_str(),
            " does not match axis ", axis, " of ", x.shape_str());
      int64_t outer = 1, inner = 1, m = x.dim(axis);
      for (int d = 0; d < axis; ++d) outer *= x.dim(d);
      for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
      Tensor out(x.shape());
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < m; ++j) {
          const double* src = x.data() + (o * m + j) * inner;
          double* dst = out.data() + (o * m + j) * inner;
          double bias = b[j];
          for (int64_t i = 0; i < inner; ++i) dst[i] = src[i] + bias;
        }
      return out;
    }
  }
  throw Error(format_msg("unhandled op ", op_name(n.op)));
}

// A default-constructed Tensor (no data) marks "no gradient yet"; a real
// rank-0 gradient has one element, so values().empty() is unambiguous.
void Graph::accumulate(std::vector<Tensor>& grads, NodeId id, Tensor&& g) const {
  const Node& n = node(id);
  if (!n.requires_grad) return;
  check(g.same_shape(n.value), "internal: gradient shape ", g.shape_str(),
        " does not match node value ", n.value.shape_str());
  Tensor& slot = grads[static_cast<size_t>(id)];
  if (slot.values().empty()) {
    slot = std::move(g);
    return;
  }
  kernels::table().add(slot.data(), g.data(), slot.data(), slot.size());
}

GradientMap Graph::backward(NodeId loss) const {
  const Node& ln = node(loss);
  check(ln.value.size() == 1, "backward: loss must be scalar-valued, got shape ",
        ln.value.shape_str());
  std::vector<Tensor> grads(nodes_.size());
  if (!ln.requires_grad) return GradientMap(std::move(grads), this);
  grads[static_cast<size_t>(loss)] = Tensor::full(ln.value.shape(), 1.0);
  for (NodeId id = loss; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.op == Op::leaf || !n.requires_grad) continue;
    const Tensor& g = grads[static_cast<size_t>(id)];
    if (g.values().empty()) continue;  // node is not on a path to the loss
    backprop_node(id, g, grads);
  }
  return GradientMap(std::move(grads), this);
}

void Graph::backprop_node(NodeId id, const Tensor& g, std::vector<Tensor>& grads) const {
  const Node& n = node(id);
  const auto& kt = kernels::table();
  auto in = [&](size_t i) -> const Tensor& { return node(n.inputs[i]).value; };
  auto reduce_if_scalar = [&](const Tensor& shaped_like, Tensor&& grad_full) -> Tensor {
    if (!is_scalar0(shaped_like) || grad_full.rank() == 0) return std::move(grad_full);
    return Tensor::scalar(kt.sum(grad_full.data(), grad_full.size()));
  };

  switch (n.op) {
    case Op::leaf:
      return;

    case Op::add: {
      Tensor ga = g, gb = g;
      accumulate(grads, n.inputs[0], reduce_if_scalar(in(0), std::move(ga)));
      accumulate(grads, n.inputs[1], reduce_if_scalar(in(1), std::move(gb)));
      return;
    }

    case Op::sub: {
      Tensor ga = g;
      Tensor gb(g.shape());
      kt.scale(g.data(), -1.0, gb.data(), g.size());
      accumulate(grads, n.inputs[0], reduce_if_scalar(in(0), std::move(ga)));
      accumulate(grads, n.inputs[1], reduce_if_scalar(in(1), std::move(gb)));
      return;
    }

    case Op::mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor ga(g.shape()), gb(g.shape());
      if (a.same_shape(b)) {
        kt.mul(g.data(), b.data(), ga.data(), g.size());
        kt.mul(g.data(), a.data(), gb.data(), g.size());
      } else if (is_scalar0(b)) {
        kt.scale(g.data(), b[0], ga.data(), g.size());
        kt.mul(g.data(), a.data(), gb.data(), g.size());
      } else {
        kt.mul(g.data(), b.data(), ga.data(), g.size());
        kt.scale(g.data(), a[0], gb.data(), g.size());
      }
      accumulate(grads, n.inputs[0], reduce_if_scalar(a, std::move(ga)));
      accumulate(grads, n.inputs[1], reduce_if_scalar(b, std::move(gb)));
      return;
    }

    case Op::scalar_mul: {
      Tensor gx(g.shape());
      kt.scale(g.data(), n.attrs.scalar, gx.data(), g.size());
      accumulate(grads, n.inputs[0], std::move(gx));
      return;
    }

    case Op::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      int64_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
      Tensor ga({m, k}), gb({k, p});
      linops::matmul_transb(g.data(), b.data(), ga.data(), m, p, k);   // dA = G B^T
      linops::matmul_transa(a.data(), g.data(), gb.data(), k, m, p);   // dB = A^T G
      accumulate(grads, n.inputs[0], std::move(ga));
      accumulate(grads, n.inputs[1], std::move(gb));
      return;
    }

    case Op::conv2d: {
      const Tensor& x = in(0);
      const Tensor& wt = in(1);
      ConvDims d = conv_dims(x, wt, n.attrs.stride, n.attrs.pad, false);
      int64_t k = d.ci * d.kh * d.kw, l = d.ho * d.wo;
      std::vector<double> cols(static_cast<size_t>(k * l));
      std::vector<double> dcols(static_cast<size_t>(k * l));
      std::vector<double> dw_s(static_cast<size_t>(d.co * k));
      Tensor gx(x.shape()), gw(wt.shape());
      for (int64_t s = 0; s < d.n; ++s) {
        const double* gout = g.data() + s * d.co * l;
        // input gradient: scatter W^T G back through im2col
        linops::matmul_transa(wt.data(), gout, dcols.data(), k, d.co, l);
        linops::col2im(dcols.data(), d.ci, d.h, d.w, d.kh, d.kw, n.attrs.stride, n.attrs.pad,
                       d.ho, d.wo, gx.data() + s * d.ci * d.h * d.w);
        // weight gradient: G cols^T, accumulated over the batch
        linops::im2col(x.data() + s * d.ci * d.h * d.w, d.ci, d.h, d.w, d.kh, d.kw,
                       n.attrs.stride, n.attrs.pad, d.ho, d.wo, cols.data());
        linops::matmul_transb(gout, cols.data(), dw_s.data(), d.co, l, k);
        kt.add(gw.data(), dw_s.data(), gw.data(), gw.size());
      }
      accumulate(grads, n.inputs[0], std::move(gx));
      accumulate(grads, n.inputs[1], std::move(gw));
      return;
    }

    case Op::transposed_conv2d: {
      const Tensor& x = in(0);
      const Tensor& wt = in(1);
      ConvDims d = conv_dims(x, wt, n.attrs.stride, n.attrs.pad, true);
      int64_t k = d.co * d.kh * d.kw, l = d.h * d.w;
      std::vector<double> cols(static_cast<size_t>(k * l));
      std::vector<double> dw_s(static_cast<size_t>(d.ci * k));
      Tensor gx(x.shape()), gw(wt.shape());
      for (int64_t s = 0; s < d.n; ++s) {
        const double* gout = g.data() + s * d.co * d.ho * d.wo;
        // gather the output gradient, then dX = W cols, dW = X cols^T
        linops::im2col(gout, d.co, d.ho, d.wo, d.kh, d.kw, n.attrs.stride, n.attrs.pad,
                       d.h, d.w, cols.data());
        linops::matmul(wt.data(), cols.data(), gx.data() + s * d.ci * l, d.ci, k, l);
        linops::matmul_transb(x.data() + s * d.ci * l, cols.data(), dw_s.data(), d.ci, l, k);
        kt.add(gw.data(), dw_s.data(), gw.data(), gw.size());
      }
      accumulate(grads, n.inputs[0], std::move(gx));
      accumulate(grads, n.inputs[1], std::move(gw));
      return;
    }

    case Op::relu: {
      Tensor gx(g.shape());
      kt.relu_grad(in(0).data(), g.data(), gx.data(), g.size());
      accumulate(grads, n.inputs[0], std::move(gx));
      return;
    }

    case Op::leaky_relu: {
      Tensor gx(g.shape());
      kt.leaky_relu_grad(in(0).data(), g.data(), n.attrs.slope, gx.data(), g.size());
      accumulate(grads, n.inputs[0], std::move(gx));
      return;
    }

    case Op::sigmoid: {
      Tensor gx(g.shape());
      for (int64_t i = 0; i < g.size(); ++i) {
        double y = n.value[i];
        gx[i] = g[i] * y * (1.0 - y);
      }
      accumulate(grads, n.inputs[0], std::move(gx));
      return;
    }

    case Op::tanh: {
      Tensor gx(g.shape());
      for (int64_t i = 0; i < g.size(); ++i) {
        double y = n.value[i];
        gx[i] = g[i] * (1.0 - y * y);
      }
      accumulate(grads, n.inputs[0], std::move(gx));
      return;
    }

    case Op::max_pool2d: {
      Tensor gx(in(0).shape());
      for (int64_t i = 0; i < g.size(); ++i) gx[n.argmax[static_cast<size_t>(i)]] += g[i];
      accumulate(grads, n.inputs[0], std::move(gx));
      return;
    }

    case Op::mean:
    case Op::sum: {
      double s = g.item();
      if (n.op == Op::mean) s /= static_cast<double>(in(0).size());
      accumulate(grads, n.inputs[0], Tensor::full(in(0).shape(), s));
      return;
    }

    case Op::softmax_cross_entropy: {
      const Tensor& logits = in(0);
      int64_t nn = logits.dim(0), kk = logits.dim(1);
      Tensor gx({nn, kk});
      for (int64_t r = 0; r < nn; ++r) {
        double gr = g[r];
        int label = n.attrs.labels[static_cast<size_t>(r)];
        for (int64_t j = 0; j < kk; ++j)
          gx[r * kk + j] = gr * (n.saved[r * kk + j] - (j == label ? 1.0 : 0.0));
      }
      accumulate(grads, n.inputs[0], std::move(gx));
      return;
    }

    case Op::l1_loss:
    case Op::l2_loss: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      double s = g.item() / static_cast<double>(a.size());
      Tensor ga(a.shape()), gb(a.shape());
      for (int64_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        double v;
        if (n.op == Op::l1_loss)
          v = s * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        else
          v = s * 2.0 * d;
        ga[i] = v;
        gb[i] = -v;
      }
      accumulate(grads, n.inputs[0], std::move(ga));
      accumulate(grads, n.inputs[1], std::move(gb));
      return;
    }

    case Op::concat: {
      const Tensor& first = in(0);
      int axis = n.attrs.axis;
      int64_t outer = 1, inner = 1;
      for (int d = 0; d < axis; ++d) outer *= first.dim(d);
      for (int d = axis + 1; d < first.rank(); ++d) inner *= first.dim(d);
      int64_t out_axis = n.value.dim(axis);
      int64_t off = 0;
      for (size_t i = 0; i < n.inputs.size(); ++i) {
        const Tensor& t = in(i);
        int64_t da = t.dim(axis);
        Tensor gi(t.shape());
        for (int64_t o = 0; o < outer; ++o)
          std::memcpy(gi.data() + o * da * inner, g.data() + (o * out_axis + off) * inner,
                      static_cast<size_t>(da * inner) * sizeof(double));
        off += da;
        accumulate(grads, n.inputs[i], std::move(gi));
      }
      return;
    }

    case Op::reshape:
      accumulate(grads, n.inputs[0], g.reshaped(in(0).shape()));
      return;

    case Op::sign:
      // subgradient 0 everywhere; nothing flows
      return;

    case Op::clamp: {
      const Tensor& x = in(0);
      Tensor gx(g.shape());
      for (int64_t i = 0; i < g.size(); ++i)
        gx[i] = (x[i] > n.attrs.lo && x[i] < n.attrs.hi) ? g[i] : 0.0;
      accumulate(grads, n.inputs[0], std::move(gx));
      return;
    }

    case Op::bias_add: {
      const Tensor& x = in(0);
      const Tensor& b = in(1);
      int axis = n.attrs.axis;
      int64_t outer = 1, inner = 1, m = x.dim(axis);
      for (int d = 0; d < axis; ++d) outer *= x.dim(d);
      for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
      Tensor gb(b.shape());
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < m; ++j) {
          const double* src = g.data() + (o * m + j) * inner;
          double s = 0.0;
          for (int64_t i = 0; i < inner; ++i) s += src[i];
          gb[j] += s;
        }
      accumulate(grads, n.inputs[0], Tensor(g));
      accumulate(grads, n.inputs[1], std::move(gb));
      return;
    }
  }
}

RngStream rng_stream(uint64_t seed, uint64_t stream_id) { return RngStream(seed, stream_id); }

Tensor draw_normal(RngStream& s, std::vector<int64_t> shape) {
  Tensor t(std::move(shape));
  s.fill_normal(t, 0.0, 1.0);
  return t;
}

Tensor draw_uniform(RngStream& s, std::vector<int64_t> shape) {
  Tensor t(std::move(shape));
  s.fill_uniform(t, 0.0, 1.0);
  return t;
}

}  // namespace nplab
