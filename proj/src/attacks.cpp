#include "nplab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "nplab/common.hpp"
#include "nplab/kernels.hpp"

namespace nplab {
namespace {

using json = nlohmann::ordered_json;

std::vector<int> label_block(const std::vector<int>& y, int64_t start, int64_t stop) {
  return std::vector<int>(y.begin() + start, y.begin() + stop);
}

// sign(grad of the objective at x), oriented so that +step ascends the loss
// for direction=attack and descends it for augment.
Tensor step_direction(const LossBuilder& loss, const Tensor& x, AttackDirection direction) {
  Graph g;
  NodeId xn = g.leaf(x, true);
  NodeId l = loss(g, xn);
  check<ConfigError>(g.value(l).size() == 1, "attack objective must be scalar, got shape ",
                     g.value(l).shape_str());
  GradientMap grads = g.backward(l);
  Tensor dir = grads.grad(xn);
  const auto& kt = kernels::table();
  kt.sign(dir.data(), dir.data(), dir.size());
  if (direction == AttackDirection::augment)
    kt.scale(dir.data(), -1.0, dir.data(), dir.size());
  return dir;
}

// Pulls x toward x0 until the measured double-precision difference respects
// the budget; clipping in perturbation space alone can overshoot by an ulp
// once x0 + p rounds.
void enforce_linf(Tensor& x, const Tensor& x0, double eps) {
  for (int64_t i = 0; i < x.size(); ++i) {
    while (x[i] - x0[i] > eps) x[i] = std::nextafter(x[i], x0[i]);
    while (x[i] - x0[i] < -eps) x[i] = std::nextafter(x[i], x0[i]);
  }
}

// Classifier objective: summed per-sample cross-entropy toward the labels the
// target mode selects, negated for the targeted modes (descending toward a
// target is ascending its negative).  Summing (not averaging) keeps each
// sample's gradient rows independent of the batch split.
LossBuilder classifier_objective(const LogitsBuilder& f, const std::vector<int>& y,
                                 const AttackSpec& spec) {
  return [&f, &y, &spec](Graph& g, NodeId xn) {
    NodeId logits = f(g, xn);
    const Tensor& lv = g.value(logits);
    check<ConfigError>(lv.rank() == 2 && lv.dim(0) == (int64_t)y.size(), "attack got ",
                       (long long)y.size(), " labels for logits of shape ", lv.shape_str());
    std::vector<int> labels;
    bool targeted = false;
    switch (spec.target) {
      case AttackTarget::true_label:
        labels = y;
        break;
      case AttackTarget::fixed_class:
        labels.assign(y.size(), spec.target_class);
        targeted = true;
        break;
      case AttackTarget::least_likely: {
        // Re-read the logits each call, so iterative attacks retarget the
        // currently least-probable class at every step.
        const int64_t classes = lv.dim(1);
        labels.resize(y.size());
        for (int64_t r = 0; r < lv.dim(0); ++r) {
          int worst = 0;
          for (int64_t c = 1; c < classes; ++c)
            if (lv[r * classes + c] < lv[r * classes + worst]) worst = (int)c;
          labels[(size_t)r] = worst;
        }
        targeted = true;
        break;
      }
    }
    NodeId total = g.sum(g.softmax_cross_entropy(logits, std::move(labels)));
    return targeted ? g.scalar_mul(total, -1.0) : total;
  };
}

void check_batch(const Tensor& x0, const std::vector<int>& y) {
  check<ConfigError>(x0.rank() >= 2, "attack inputs need a batch axis, got shape ",
                     x0.shape_str());
  check<ConfigError>((int64_t)y.size() == x0.dim(0), "attack got ", (long long)y.size(),
                     " labels for ", x0.dim(0), " samples");
}

}  // namespace

void AttackSpec::validate() const {
  check<ConfigError>(epsilon >= 0.0, "attack epsilon must be non-negative, got ", epsilon);
  check<ConfigError>(alpha >= 0.0, "attack alpha must be non-negative, got ", alpha);
  check<ConfigError>(steps >= 0, "attack step count must be non-negative, got ", steps);
  check<ConfigError>(value_lo < value_hi, "attack value range is empty: [", value_lo, ", ",
                     value_hi, "]");
}

LogitsBuilder classifier_builder(const Model& classifier) {
  return [&classifier](Graph& g, NodeId x) { return model_forward(g, classifier, x); };
}

LogitsBuilder composed_builder(const Model& generator, const Model& classifier,
                               double delta_scale) {
  check<ConfigError>(std::isfinite(delta_scale) && delta_scale != 0.0,
                     "delta_scale must be finite and nonzero, got ", delta_scale);
  return [&generator, &classifier, delta_scale](Graph& g, NodeId x) {
    NodeId delta = model_forward(g, generator, x);
    // Plain add when the scale is exactly 1 keeps the unscaled composition
    // bit-identical to the historical path.
    NodeId shifted = delta_scale == 1.0 ? g.add(x, delta)
                                        : g.add(x, g.scalar_mul(delta, delta_scale));
    return model_forward(g, classifier, shifted);
  };
}

Tensor fgsm_objective(const LossBuilder& loss, const Tensor& x0, const AttackSpec& spec) {
  spec.validate();
  const Tensor dir = step_direction(loss, x0, spec.direction);
  Tensor x = x0;
  const auto& kt = kernels::table();
  kt.axpy(spec.epsilon, dir.data(), x.data(), x.size());
  if (spec.clamp_to_valid_range)
    kt.clamp(x.data(), spec.value_lo, spec.value_hi, x.data(), x.size());
  enforce_linf(x, x0, spec.epsilon);
  return x;
}

Tensor pgd_objective(const LossBuilder& loss, const Tensor& x0, const AttackSpec& spec) {
  spec.validate();
  check<ConfigError>(spec.steps >= 1, "pgd needs at least one step");
  const auto& kt = kernels::table();
  Tensor p = Tensor::zeros(x0.shape());
  Tensor x = x0;
  for (int step = 0; step < spec.steps; ++step) {
    const Tensor dir = step_direction(loss, x, spec.direction);
    kt.axpy(spec.alpha, dir.data(), p.data(), p.size());
    if (spec.clip_perturbation)
      kt.clamp(p.data(), -spec.epsilon, spec.epsilon, p.data(), p.size());
    kt.add(x0.data(), p.data(), x.data(), x.size());
    if (spec.clamp_to_valid_range)
      kt.clamp(x.data(), spec.value_lo, spec.value_hi, x.data(), x.size());
    if (spec.clip_perturbation) enforce_linf(x, x0, spec.epsilon);
  }
  return x;
}

Tensor fgsm(const LogitsBuilder& f, const Tensor& x0, const std::vector<int>& y,
            const AttackSpec& spec) {
  check_batch(x0, y);
  return fgsm_objective(classifier_objective(f, y, spec), x0, spec);
}

Tensor fgsm(const Model& m, const Tensor& x0, const std::vector<int>& y, const AttackSpec& spec) {
  return fgsm(classifier_builder(m), x0, y, spec);
}

Tensor pgd(const LogitsBuilder& f, const Tensor& x0, const std::vector<int>& y,
           const AttackSpec& spec) {
  check_batch(x0, y);
  return pgd_objective(classifier_objective(f, y, spec), x0, spec);
}

Tensor pgd(const Model& m, const Tensor& x0, const std::vector<int>& y, const AttackSpec& spec) {
  return pgd(classifier_builder(m), x0, y, spec);
}

namespace {

// Shared opposite-step loop: delta accumulates the per-step moves; the
// current state is always re-materialized as x0 + delta, so the telescoping
// identity holds bit-for-bit.  on_step sees D_n right after it is applied.
void opposite_loop(const LogitsBuilder& f, const Tensor& x0, const std::vector<int>& y,
                   double epsilon, int steps, Tensor& delta,
                   const std::function<void(const Tensor& d)>& on_step) {
  AttackSpec step_spec;
  step_spec.direction = AttackDirection::augment;
  step_spec.target = AttackTarget::true_label;
  const LossBuilder objective = classifier_objective(f, y, step_spec);
  const auto& kt = kernels::table();
  Tensor xn = Tensor::zeros(x0.shape());
  for (int n = 0; n < steps; ++n) {
    kt.add(x0.data(), delta.data(), xn.data(), xn.size());
    Tensor d = step_direction(objective, xn, AttackDirection::augment);
    kt.scale(d.data(), epsilon, d.data(), d.size());
    kt.add(delta.data(), d.data(), delta.data(), delta.size());
    if (on_step) on_step(d);
  }
}

}  // namespace

OppositeTrajectory opposite_fgsm_iterate(const Model& m, const Tensor& x0, int label,
                                         double epsilon, int steps) {
  check<ConfigError>(steps >= 0, "opposite-fgsm step count must be non-negative, got ", steps);
  check<ConfigError>(epsilon >= 0.0, "opposite-fgsm epsilon must be non-negative, got ", epsilon);

  std::vector<int64_t> batched = x0.shape();
  batched.insert(batched.begin(), 1);
  const Tensor xb = x0.reshaped(batched);
  const std::vector<int> y{label};
  const auto& kt = kernels::table();

  OppositeTrajectory out;
  out.record = ConjugateRecord{x0, label, Tensor::zeros(batched), steps, epsilon};
  out.states.push_back(x0);
  opposite_loop(classifier_builder(m), xb, y, epsilon, steps, out.record.delta,
                [&](const Tensor& d) {
                  out.step_deltas.push_back(d.reshaped(x0.shape()));
                  Tensor state = Tensor::zeros(x0.shape());
                  kt.add(x0.data(), out.record.delta.data(), state.data(), state.size());
                  out.states.push_back(std::move(state));
                });
  out.record.delta = out.record.delta.reshaped(x0.shape());
  return out;
}

std::vector<ConjugateRecord> build_conjugate_dataset(const Model& m, const Dataset& d,
                                                     double epsilon, int steps) {
  d.validate();
  check<ConfigError>(steps >= 0, "conjugate step count must be non-negative, got ", steps);
  check<ConfigError>(epsilon >= 0.0, "conjugate epsilon must be non-negative, got ", epsilon);

  const LogitsBuilder f = classifier_builder(m);
  constexpr int64_t kBatch = 128;
  const int64_t n = d.size();
  const int64_t feat = d.feature_size();
  const std::vector<int64_t> fshape = d.feature_shape();
  std::vector<ConjugateRecord> records;
  records.reserve((size_t)n);
  for (int64_t start = 0; start < n; start += kBatch) {
    const int64_t stop = std::min(n, start + kBatch);
    const Tensor x0 = rows_block(d.inputs, start, stop);
    const std::vector<int> y = label_block(d.labels, start, stop);
    Tensor delta = Tensor::zeros(x0.shape());
    opposite_loop(f, x0, y, epsilon, steps, delta, {});
    for (int64_t r = 0; r < stop - start; ++r) {
      ConjugateRecord rec;
      rec.x0 = Tensor::zeros(fshape);
      rec.delta = Tensor::zeros(fshape);
      std::copy_n(x0.values().data() + r * feat, feat, rec.x0.values().data());
      std::copy_n(delta.values().data() + r * feat, feat, rec.delta.values().data());
      rec.label = d.labels[(size_t)(start + r)];
      rec.steps = steps;
      rec.epsilon = epsilon;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

Dataset conjugate_augmented(const Dataset& d, const std::vector<ConjugateRecord>& records) {
  check<ConfigError>((int64_t)records.size() == d.size(), "conjugate set holds ",
                     (long long)records.size(), " records for ", d.size(), " samples");
  Dataset out = d;
  const int64_t feat = d.feature_size();
  double lo = d.value_lo, hi = d.value_hi;
  for (int64_t i = 0; i < d.size(); ++i) {
    const ConjugateRecord& rec = records[(size_t)i];
    check<ConfigError>(rec.x0.size() == feat, "conjugate record ", i,
                       " feature size does not match the dataset");
    double* row = out.inputs.values().data() + i * feat;
    for (int64_t j = 0; j < feat; ++j) {
      row[j] = rec.x0[j] + rec.delta[j];
      lo = std::min(lo, row[j]);
      hi = std::max(hi, row[j]);
    }
  }
  out.value_lo = lo;
  out.value_hi = hi;
  return out;
}

namespace {

double argmax_hits(const Tensor& logits, const std::vector<int>& y) {
  const int64_t classes = logits.dim(1);
  double hits = 0;
  for (int64_t r = 0; r < logits.dim(0); ++r) {
    int best = 0;
    for (int64_t c = 1; c < classes; ++c)
      if (logits[r * classes + c] > logits[r * classes + best]) best = (int)c;
    if (best == y[(size_t)r]) ++hits;
  }
  return hits;
}

double attacked_accuracy(const LogitsBuilder& f, const Dataset& d, AttackSpec spec) {
  d.validate();
  check<ConfigError>(spec.direction == AttackDirection::attack,
                     "robust accuracy is defined for the attack direction");
  spec.value_lo = d.value_lo;
  spec.value_hi = d.value_hi;
  constexpr int64_t kBatch = 128;
  double hits = 0;
  for (int64_t start = 0; start < d.size(); start += kBatch) {
    const int64_t stop = std::min(d.size(), start + kBatch);
    const Tensor x0 = rows_block(d.inputs, start, stop);
    const std::vector<int> y = label_block(d.labels, start, stop);
    const Tensor xa = pgd(f, x0, y, spec);
    Graph g;
    hits += argmax_hits(g.value(f(g, g.leaf(xa))), y);
  }
  return hits / (double)d.size();
}

double builder_accuracy(const LogitsBuilder& f, const Dataset& d) {
  d.validate();
  constexpr int64_t kBatch = 128;
  double hits = 0;
  for (int64_t start = 0; start < d.size(); start += kBatch) {
    const int64_t stop = std::min(d.size(), start + kBatch);
    Graph g;
    hits += argmax_hits(g.value(f(g, g.leaf(rows_block(d.inputs, start, stop)))),
                        label_block(d.labels, start, stop));
  }
  return hits / (double)d.size();
}

}  // namespace

double robust_accuracy(const Model& m, const Dataset& d, const AttackSpec& spec) {
  return attacked_accuracy(classifier_builder(m), d, spec);
}

double robust_accuracy_composed(const Model& generator, const Model& classifier, const Dataset& d,
                                const AttackSpec& spec, double delta_scale) {
  return attacked_accuracy(composed_builder(generator, classifier, delta_scale), d, spec);
}

double clean_accuracy_composed(const Model& generator, const Model& classifier, const Dataset& d,
                               double delta_scale) {
  return builder_accuracy(composed_builder(generator, classifier, delta_scale), d);
}

void save_conjugates(const ConjugateSet& set, const std::filesystem::path& manifest_path,
                     const std::string& payload_filename) {
  check<ConfigError>(!set.records.empty(), "refusing to save an empty conjugate set");
  const std::vector<int64_t>& fshape = set.records.front().x0.shape();
  for (const ConjugateRecord& rec : set.records) {
    check<ConfigError>(rec.x0.shape() == fshape && rec.delta.shape() == fshape,
                       "conjugate records must share one feature shape");
    check<ConfigError>(rec.steps == set.steps && rec.epsilon == set.epsilon,
                       "conjugate records disagree with the set's epsilon/steps");
  }

  json manifest;
  manifest["epsilon"] = set.epsilon;
  manifest["steps"] = set.steps;
  manifest["count"] = set.records.size();
  manifest["feature_shape"] = fshape;
  manifest["model_checkpoint_hash"] = set.model_hash;
  manifest["payload"] = payload_filename;

  std::string bytes;
  auto put_u64 = [&bytes](uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back((char)((v >> (8 * i)) & 0xff));
  };
  auto put_f64 = [&](double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(bits);
  };
  for (const ConjugateRecord& rec : set.records) {
    put_u64((uint64_t)rec.label);
    for (double v : rec.x0.values()) put_f64(v);
    for (double v : rec.delta.values()) put_f64(v);
  }

  const std::filesystem::path payload_path = manifest_path.parent_path() / payload_filename;
  {
    std::ofstream f(payload_path, std::ios::binary | std::ios::trunc);
    check<DataError>(f.good(), "cannot open conjugate payload for writing: ",
                     payload_path.string());
    f.write(bytes.data(), (std::streamsize)bytes.size());
    f.flush();
    check<DataError>(f.good(), "short write to conjugate payload: ", payload_path.string());
  }
  std::ofstream f(manifest_path, std::ios::trunc);
  check<DataError>(f.good(), "cannot open conjugate manifest for writing: ",
                   manifest_path.string());
  f << manifest.dump(2) << "\n";
  f.flush();
  check<DataError>(f.good(), "short write to conjugate manifest: ", manifest_path.string());
}

ConjugateSet load_conjugates(const std::filesystem::path& manifest_path) {
  std::ifstream mf(manifest_path);
  check<DataError>(mf.good(), "cannot open conjugate manifest: ", manifest_path.string());
  json manifest = json::parse(mf, nullptr, false);
  check<DataError>(!manifest.is_discarded(), manifest_path.string(),
                   ": manifest is not valid JSON");
  for (const char* key :
       {"epsilon", "steps", "count", "feature_shape", "model_checkpoint_hash", "payload"})
    check<DataError>(manifest.contains(key), manifest_path.string(), ": manifest lacks the ", key,
                     " field");

  ConjugateSet set;
  set.epsilon = manifest.at("epsilon").get<double>();
  set.steps = manifest.at("steps").get<int>();
  set.model_hash = manifest.at("model_checkpoint_hash").get<std::string>();
  const auto count = manifest.at("count").get<uint64_t>();
  const auto fshape = manifest.at("feature_shape").get<std::vector<int64_t>>();
  const int64_t feat = shape_size(fshape);

  const std::filesystem::path payload_path =
      manifest_path.parent_path() / manifest.at("payload").get<std::string>();
  std::ifstream pf(payload_path, std::ios::binary);
  check<DataError>(pf.good(), "cannot open conjugate payload: ", payload_path.string());
  std::string bytes((std::istreambuf_iterator<char>(pf)), std::istreambuf_iterator<char>());
  const size_t record_bytes = 8 + 16 * (size_t)feat;
  check<DataError>(bytes.size() == record_bytes * count, payload_path.string(), ": expected ",
                   (long long)(record_bytes * count), " bytes for ", (long long)count,
                   " records, found ", (long long)bytes.size());

  size_t pos = 0;
  auto get_u64 = [&]() {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (uint64_t)(uint8_t)bytes[pos + (size_t)i] << (8 * i);
    pos += 8;
    return v;
  };
  auto get_f64 = [&]() {
    const uint64_t bits = get_u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  };
  set.records.resize(count);
  for (ConjugateRecord& rec : set.records) {
    rec.label = (int)get_u64();
    rec.steps = set.steps;
    rec.epsilon = set.epsilon;
    rec.x0 = Tensor::zeros(fshape);
    rec.delta = Tensor::zeros(fshape);
    for (double& v : rec.x0.values()) v = get_f64();
    for (double& v : rec.delta.values()) v = get_f64();
  }
  return set;
}

}  // namespace nplab
