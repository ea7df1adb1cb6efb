#include "nplab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "nplab/common.hpp"
#include "nplab/rng.hpp"

namespace nplab {
namespace {

void validate_spec(const MlpSpec& s) {
  check<ConfigError>(s.widths.size() >= 2, "mlp needs at least input and output widths, got ",
                     (long long)s.widths.size());
  for (int64_t w : s.widths) check<ConfigError>(w >= 1, "mlp width must be positive, got ", w);
}

void validate_spec(const ConvNetSpec& s) {
  check<ConfigError>(s.in_channels >= 1 && s.c1 >= 1 && s.c2 >= 1 && s.classes >= 2,
                     "convnet channel/class plan must be positive");
  check<ConfigError>(s.hw >= 4 && s.hw % 4 == 0,
                     "convnet input extent must be a positive multiple of 4 (two 2x pools), got ",
                     s.hw);
}

void validate_spec(const UnetSpec& s) {
  check<ConfigError>(s.in_channels >= 1 && s.base_channels >= 1, "unet channels must be positive");
  check<ConfigError>(s.depth >= 1, "unet depth must be at least 1, got ", s.depth);
  const int64_t div = int64_t{1} << (s.depth - 1);
  check<ConfigError>(s.hw >= div && s.hw % div == 0, "unet depth ", s.depth,
                     " needs the input extent divisible by ", div, ", got ", s.hw);
}

// Uniform init on [-bound, bound] where bound follows the fan rule for the
// nonlinearity that consumes the layer's output.
enum class Fan { he, xavier };

Tensor init_tensor(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Fan fan,
                   RngStream& rng) {
  const double bound = fan == Fan::he ? std::sqrt(6.0 / (double)fan_in)
                                      : std::sqrt(6.0 / (double)(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape));
  rng.fill_uniform(t, -bound, bound);
  return t;
}

struct Builder {
  Model& m;
  RngStream rng;

  void linear(const std::string& name, int64_t in, int64_t out, Fan fan) {
    m.params.emplace_back(name + ".w", init_tensor({{in, out}}, in, out, fan, rng));
    m.params.emplace_back(name + ".b", Tensor::zeros({{out}}));
  }
  void conv(const std::string& name, int64_t co, int64_t ci, int64_t k, Fan fan) {
    m.params.emplace_back(name + ".w",
                          init_tensor({{co, ci, k, k}}, ci * k * k, co * k * k, fan, rng));
    m.params.emplace_back(name + ".b", Tensor::zeros({{co}}));
  }
  // Transposed conv weight is laid out (in, out, k, k).
  void conv_t(const std::string& name, int64_t ci, int64_t co, int64_t k, Fan fan) {
    m.params.emplace_back(name + ".w",
                          init_tensor({{ci, co, k, k}}, ci * k * k, co * k * k, fan, rng));
    m.params.emplace_back(name + ".b", Tensor::zeros({{co}}));
  }
};

void build_params(Model& m, const MlpSpec& s, uint64_t seed) {
  Builder b{m, RngStream(seed, 0)};
  const Fan hidden_fan = s.activation == Activation::relu ? Fan::he : Fan::xavier;
  for (size_t i = 0; i + 1 < s.widths.size(); ++i) {
    const bool last = i + 2 == s.widths.size();
    b.linear("fc" + std::to_string(i), s.widths[i], s.widths[i + 1],
             last ? Fan::xavier : hidden_fan);
  }
}

void build_params(Model& m, const ConvNetSpec& s, uint64_t seed) {
  Builder b{m, RngStream(seed, 0)};
  b.conv("conv1", s.c1, s.in_channels, 3, Fan::he);
  b.conv("conv2", s.c2, s.c1, 3, Fan::he);
  const int64_t q = s.hw / 4;
  b.linear("head", s.c2 * q * q, s.classes, Fan::xavier);
}

void build_params(Model& m, const UnetSpec& s, uint64_t seed) {
  Builder b{m, RngStream(seed, 0)};
  auto ch = [&](int level) { return s.base_channels << level; };
  for (int i = 0; i < s.depth; ++i) {
    const std::string lv = "enc" + std::to_string(i);
    b.conv(lv + ".conv1", ch(i), i == 0 ? s.in_channels : ch(i - 1), 3, Fan::he);
    b.conv(lv + ".conv2", ch(i), ch(i), 3, Fan::he);
  }
  for (int i = s.depth - 1; i >= 1; --i) {
    const std::string lv = "dec" + std::to_string(i - 1);
    b.conv_t(lv + ".up", ch(i), ch(i - 1), 2, Fan::he);
    // Concatenated skip doubles the channel count feeding conv1.
    b.conv(lv + ".conv1", ch(i - 1), ch(i), 3, Fan::he);
    b.conv(lv + ".conv2", ch(i - 1), ch(i - 1), 3, Fan::he);
  }
  b.conv("head", s.in_channels, ch(0), 1, Fan::xavier);
}

// Forward builders. `P` resolves a parameter name to its registered node.
class ParamNodes {
 public:
  ParamNodes(Graph& g, const Model& m, BoundParams* bound, bool requires_grad) {
    for (const auto& [name, value] : m.params) {
      NodeId id = g.leaf(value, requires_grad);
      by_name_.emplace_back(name, id);
      if (bound) bound->nodes.push_back(id);
    }
  }
  NodeId operator()(const std::string& name) const {
    for (const auto& [n, id] : by_name_)
      if (n == name) return id;
    throw InvariantError(format_msg("model parameter ", name, " missing from forward table"));
  }

 private:
  std::vector<std::pair<std::string, NodeId>> by_name_;
};

NodeId activation_node(Graph& g, Activation a, NodeId x) {
  return a == Activation::relu ? g.relu(x) : g.tanh(x);
}

NodeId forward_impl(Graph& g, const MlpSpec& s, const ParamNodes& P, NodeId x) {
  const Tensor& in = g.value(x);
  check<ConfigError>(in.rank() >= 2, "mlp expects a batched input, got ", in.shape_str());
  const int64_t batch = in.dim(0);
  const int64_t features = in.size() / batch;
  check<ConfigError>(features == s.widths.front(), "mlp expects ", s.widths.front(),
                     " features per sample, got ", features, " (input shape ", in.shape_str(),
                     ")");
  // Image-shaped batches flatten to (batch, features); gradients flow back
  // through the reshape in the original layout.
  if (in.rank() > 2) x = g.reshape(x, {batch, features});
  for (size_t i = 0; i + 1 < s.widths.size(); ++i) {
    const std::string lv = "fc" + std::to_string(i);
    x = g.bias_add(g.matmul(x, P(lv + ".w")), P(lv + ".b"), 1);
    if (i + 2 < s.widths.size()) x = activation_node(g, s.activation, x);
  }
  return x;
}

NodeId forward_impl(Graph& g, const ConvNetSpec& s, const ParamNodes& P, NodeId x) {
  const Tensor& in = g.value(x);
  check<ConfigError>(in.rank() == 4 && in.dim(1) == s.in_channels && in.dim(2) == s.hw &&
                         in.dim(3) == s.hw,
                     "convnet expects input shape (batch, ", s.in_channels, ", ", s.hw, ", ", s.hw,
                     "), got ", in.shape_str());
  const int64_t n = in.dim(0);
  x = g.relu(g.bias_add(g.conv2d(x, P("conv1.w"), 1, 1), P("conv1.b"), 1));
  x = g.max_pool2d(x, 2);
  x = g.relu(g.bias_add(g.conv2d(x, P("conv2.w"), 1, 1), P("conv2.b"), 1));
  x = g.max_pool2d(x, 2);
  const int64_t q = s.hw / 4;
  x = g.reshape(x, {{n, s.c2 * q * q}});
  return g.bias_add(g.matmul(x, P("head.w")), P("head.b"), 1);
}

NodeId forward_impl(Graph& g, const UnetSpec& s, const ParamNodes& P, NodeId x) {
  const Tensor& in = g.value(x);
  check<ConfigError>(in.rank() == 4 && in.dim(1) == s.in_channels && in.dim(2) == s.hw &&
                         in.dim(3) == s.hw,
                     "unet expects input shape (batch, ", s.in_channels, ", ", s.hw, ", ", s.hw,
                     "), got ", in.shape_str());
  auto block = [&](const std::string& lv, NodeId h) {
    h = g.relu(g.bias_add(g.conv2d(h, P(lv + ".conv1.w"), 1, 1), P(lv + ".conv1.b"), 1));
    h = g.relu(g.bias_add(g.conv2d(h, P(lv + ".conv2.w"), 1, 1), P(lv + ".conv2.b"), 1));
    return h;
  };
  std::vector<NodeId> skips;
  NodeId h = block("enc0", x);
  for (int i = 1; i < s.depth; ++i) {
    skips.push_back(h);
    h = block("enc" + std::to_string(i), g.max_pool2d(h, 2));
  }
  for (int i = s.depth - 1; i >= 1; --i) {
    const std::string lv = "dec" + std::to_string(i - 1);
    h = g.bias_add(g.transposed_conv2d(h, P(lv + ".up.w"), 2, 0), P(lv + ".up.b"), 1);
    h = g.concat({h, skips[(size_t)(i - 1)]}, 1);
    h = block(lv, h);
  }
  return g.tanh(g.bias_add(g.conv2d(h, P("head.w"), 1, 0), P("head.b"), 1));
}

}  // namespace

const char* model_kind(const ModelSpec& spec) {
  return std::visit(
      [](const auto& s) -> const char* {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, MlpSpec>) return "mlp";
        if constexpr (std::is_same_v<T, ConvNetSpec>) return "convnet";
        if constexpr (std::is_same_v<T, UnetSpec>) return "unet-generator";
      },
      spec);
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

const Tensor& Model::param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw ConfigError(format_msg("model has no parameter named ", name));
}

bool Model::all_finite() const {
  for (const auto& [name, t] : params)
    if (!t.all_finite()) return false;
  return true;
}

Model build_model(const ModelSpec& spec, uint64_t seed) {
  std::visit([](const auto& s) { validate_spec(s); }, spec);
  Model m;
  m.spec = spec;
  std::visit([&](const auto& s) { build_params(m, s, seed); }, spec);
  return m;
}

NodeId model_forward(Graph& g, const Model& m, NodeId input, BoundParams* bound,
                     bool params_require_grad) {
  ParamNodes P(g, m, bound, params_require_grad);
  return std::visit([&](const auto& s) { return forward_impl(g, s, P, input); }, m.spec);
}

NodeId classifier_loss_node(Graph& g, const Model& m, NodeId input, const std::vector<int>& labels,
                            BoundParams* bound, bool params_require_grad) {
  NodeId logits = model_forward(g, m, input, bound, params_require_grad);
  // softmax_cross_entropy yields per-sample losses; the training objective is
  // their batch mean.
  return g.mean(g.softmax_cross_entropy(logits, labels));
}

double classifier_loss(const Model& m, const Tensor& x, const std::vector<int>& labels) {
  Graph g;
  NodeId loss = classifier_loss_node(g, m, g.leaf(x, false), labels);
  return g.value(loss).item();
}

double generator_l1_loss(const Model& m, const Tensor& x, const Tensor& target) {
  Graph g;
  NodeId out = model_forward(g, m, g.leaf(x, false));
  NodeId loss = g.l1_loss(out, g.leaf(target, false));
  return g.value(loss).item();
}

std::vector<int> predict_classes(const Model& m, const Tensor& inputs, int64_t batch_size) {
  check<ConfigError>(batch_size >= 1, "batch size must be positive, got ", batch_size);
  const int64_t n = inputs.dim(0);
  std::vector<int> out((size_t)n);
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t stop = std::min(n, start + batch_size);
    Graph g;
    NodeId logits = model_forward(g, m, g.leaf(rows_block(inputs, start, stop), false));
    const Tensor& v = g.value(logits);
    const int64_t classes = v.dim(1);
    for (int64_t r = 0; r < stop - start; ++r) {
      int best = 0;
      for (int64_t c = 1; c < classes; ++c)
        if (v[r * classes + c] > v[r * classes + best]) best = (int)c;
      out[(size_t)(start + r)] = best;
    }
  }
  return out;
}

double evaluate_accuracy(const Model& m, const Dataset& d, int64_t batch_size) {
  d.validate();
  check<ConfigError>(d.size() > 0, "accuracy over an empty dataset is undefined");
  const std::vector<int> pred = predict_classes(m, d.inputs, batch_size);
  int64_t hits = 0;
  for (int64_t i = 0; i < d.size(); ++i)
    if (pred[(size_t)i] == d.labels[(size_t)i]) ++hits;
  return (double)hits / (double)d.size();
}

}  // namespace nplab
