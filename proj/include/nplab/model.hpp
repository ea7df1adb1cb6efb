#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nplab/autograd.hpp"
#include "nplab/dataset.hpp"
#include "nplab/tensor.hpp"

namespace nplab {

enum class Activation { relu, tanh };

// Fully connected classifier for the low-dimensional synthetic tasks.
struct MlpSpec {
  std::vector<int64_t> widths;  // input, hidden..., logits
  Activation activation = Activation::relu;
};

// Desk-scale "ConvNet": two conv/pool blocks and a linear head.
struct ConvNetSpec {
  int64_t in_channels = 1;
  int64_t hw = 28;  // square input extent
  int64_t c1 = 8;
  int64_t c2 = 16;
  int64_t classes = 10;
};

// Encoder-decoder generator with skip connections and a tanh output head;
// produces an input-shaped tensor.
struct UnetSpec {
  int64_t in_channels = 1;
  int64_t hw = 28;
  int64_t base_channels = 8;
  int depth = 3;  // encoder levels; spatial extent must divide by 2^(depth-1)
};

using ModelSpec = std::variant<MlpSpec, ConvNetSpec, UnetSpec>;

const char* model_kind(const ModelSpec& spec);

struct Model {
  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor>> params;  // creation-ordered

  int64_t param_count() const;
  const Tensor& param(const std::string& name) const;
  bool all_finite() const;
};

// Deterministic initialization: He-uniform ahead of relu layers,
// Xavier-uniform otherwise, biases zero, one draw stream in param order.
Model build_model(const ModelSpec& spec, uint64_t seed);

// Parameter leaves registered on g for one forward build, in params order.
struct BoundParams {
  std::vector<NodeId> nodes;
};

// Builds the model's forward graph from an existing input node, so callers
// can compose models (generator into classifier) and differentiate with
// respect to inputs, parameters, or both.
NodeId model_forward(Graph& g, const Model& m, NodeId input, BoundParams* bound = nullptr,
                     bool params_require_grad = false);

// Mean cross-entropy over the batch (classifiers).
NodeId classifier_loss_node(Graph& g, const Model& m, NodeId input, const std::vector<int>& labels,
                            BoundParams* bound = nullptr, bool params_require_grad = false);

// Convenience scalar evaluations.
double classifier_loss(const Model& m, const Tensor& x, const std::vector<int>& labels);
double generator_l1_loss(const Model& m, const Tensor& x, const Tensor& target);

// Batched argmax accuracy; ties resolve toward the lowest class index.
double evaluate_accuracy(const Model& m, const Dataset& d, int64_t batch_size = 256);
std::vector<int> predict_classes(const Model& m, const Tensor& inputs, int64_t batch_size = 256);

}  // namespace nplab
