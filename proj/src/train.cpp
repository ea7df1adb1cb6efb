#include "nplab/train.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "nplab/common.hpp"
#include "nplab/kernels.hpp"
#include "nplab/rng.hpp"

namespace nplab {
namespace {

// One optimizer slot per parameter tensor, allocated lazily on first step.
struct Optimizer {
  const TrainConfig& cfg;
  int64_t t = 0;                 // Adam step counter
  std::vector<Tensor> m1, m2;    // first/second moment estimates

  explicit Optimizer(const TrainConfig& c) : cfg(c) {}

  void step(Model& model, const std::vector<Tensor>& grads) {
    if (cfg.optimizer == OptimizerKind::sgd) {
      for (size_t p = 0; p < model.params.size(); ++p) {
        Tensor& w = model.params[p].second;
        const Tensor& g = grads[p];
        for (int64_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * g[i];
      }
      return;
    }
    if (m1.empty()) {
      for (const auto& [name, w] : model.params) {
        m1.push_back(Tensor::zeros(w.shape()));
        m2.push_back(Tensor::zeros(w.shape()));
      }
    }
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, (double)t);
    const double c2 = 1.0 - std::pow(cfg.beta2, (double)t);
    for (size_t p = 0; p < model.params.size(); ++p) {
      Tensor& w = model.params[p].second;
      const Tensor& g = grads[p];
      for (int64_t i = 0; i < w.size(); ++i) {
        m1[p][i] = cfg.beta1 * m1[p][i] + (1.0 - cfg.beta1) * g[i];
        m2[p][i] = cfg.beta2 * m2[p][i] + (1.0 - cfg.beta2) * g[i] * g[i];
        w[i] -= cfg.lr * (m1[p][i] / c1) / (std::sqrt(m2[p][i] / c2) + cfg.adam_eps);
      }
    }
  }
};

void validate(const TrainConfig& cfg, int64_t n) {
  check<ConfigError>(cfg.epochs >= 0, "epoch count must be non-negative, got ", cfg.epochs);
  check<ConfigError>(cfg.batch_size >= 1, "batch size must be positive, got ", cfg.batch_size);
  check<ConfigError>(cfg.lr > 0.0, "learning rate must be positive, got ", cfg.lr);
  check<ConfigError>(n >= 1, "training needs at least one sample");
}

// Builds the batch loss graph and returns {loss node, logits node or -1}.
struct BatchGraph {
  NodeId loss;
  NodeId logits;  // -1 for regression
};

using BatchFn = std::function<BatchGraph(Graph& g, const Model& m, std::span<const int64_t> idx,
                                         BoundParams& bound)>;

std::vector<EpochStats> run_loop(Model& model, int64_t n, const TrainConfig& cfg,
                                 const BatchFn& make_batch, const std::vector<int>* labels,
                                 const EpochCallback& on_epoch) {
  validate(cfg, n);
  Optimizer opt(cfg);
  std::vector<EpochStats> history;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    RngStream shuffle(cfg.seed, 100 + (uint64_t)epoch);
    const std::vector<int64_t> order = shuffle.permutation(n);
    double loss_sum = 0.0;
    int64_t hit_count = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t stop = std::min(n, start + cfg.batch_size);
      const std::span<const int64_t> idx(order.data() + start, (size_t)(stop - start));

      Graph g;
      BoundParams bound;
      const BatchGraph b = make_batch(g, model, idx, bound);
      const double batch_loss = g.value(b.loss).item();
      check<InvariantError>(std::isfinite(batch_loss), "training diverged at epoch ", epoch,
                            ": batch loss ", batch_loss);
      loss_sum += batch_loss * (double)(stop - start);

      if (labels) {
        // Argmax on the already-computed logits: ties go to the lowest class.
        const Tensor& lv = g.value(b.logits);
        const int64_t classes = lv.dim(1);
        for (int64_t r = 0; r < stop - start; ++r) {
          int best = 0;
          for (int64_t c = 1; c < classes; ++c)
            if (lv[r * classes + c] > lv[r * classes + best]) best = (int)c;
          if (best == (*labels)[(size_t)idx[(size_t)r]]) ++hit_count;
        }
      }

      GradientMap grads = g.backward(b.loss);
      std::vector<Tensor> param_grads;
      param_grads.reserve(bound.nodes.size());
      for (NodeId id : bound.nodes) param_grads.push_back(grads.grad(id));
      opt.step(model, param_grads);
    }
    EpochStats stats;
    stats.loss = loss_sum / (double)n;
    stats.accuracy = labels ? (double)hit_count / (double)n : 0.0;
    history.push_back(stats);
    if (on_epoch) on_epoch(epoch, model, stats);
  }
  return history;
}

}  // namespace

std::vector<EpochStats> train_classifier(Model& m, const Dataset& d, const TrainConfig& cfg,
                                         const EpochCallback& on_epoch) {
  d.validate();
  BatchFn make_batch = [&](Graph& g, const Model& model, std::span<const int64_t> idx,
                           BoundParams& bound) {
    NodeId x = g.leaf(gather_inputs(d, idx), false);
    NodeId logits = model_forward(g, model, x, &bound, /*params_require_grad=*/true);
    NodeId loss = g.mean(g.softmax_cross_entropy(logits, gather_labels(d, idx)));
    return BatchGraph{loss, logits};
  };
  return run_loop(m, d.size(), cfg, make_batch, &d.labels, on_epoch);
}

std::vector<EpochStats> train_regression(Model& m, const Tensor& inputs, const Tensor& targets,
                                         const TrainConfig& cfg, const EpochCallback& on_epoch) {
  check<ConfigError>(inputs.rank() >= 1 && targets.rank() >= 1 &&
                         inputs.dim(0) == targets.dim(0),
                     "regression needs one target row per input row, got ", inputs.shape_str(),
                     " vs ", targets.shape_str());
  auto gather = [](const Tensor& t, std::span<const int64_t> idx) {
    std::vector<int64_t> shape(t.shape().begin(), t.shape().end());
    shape[0] = (int64_t)idx.size();
    Tensor out = Tensor::zeros(shape);
    const int64_t row = t.size() / t.dim(0);
    for (size_t k = 0; k < idx.size(); ++k)
      std::copy_n(t.values().data() + idx[k] * row, row,
                  out.values().data() + (int64_t)k * row);
    return out;
  };
  BatchFn make_batch = [&](Graph& g, const Model& model, std::span<const int64_t> idx,
                           BoundParams& bound) {
    NodeId x = g.leaf(gather(inputs, idx), false);
    NodeId out = model_forward(g, model, x, &bound, /*params_require_grad=*/true);
    NodeId loss = g.l1_loss(out, g.leaf(gather(targets, idx), false));
    return BatchGraph{loss, NodeId{-1}};
  };
  return run_loop(m, inputs.dim(0), cfg, make_batch, nullptr, on_epoch);
}

}  // namespace nplab
