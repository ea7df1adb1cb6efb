#include "nplab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "nplab/attacks.hpp"
#include "nplab/checkpoint.hpp"
#include "nplab/cifar10.hpp"
#include "nplab/common.hpp"
#include "nplab/digit_corpus.hpp"
#include "nplab/hash.hpp"
#include "nplab/idx_format.hpp"
#include "nplab/packet.hpp"
#include "nplab/spectral.hpp"
#include "nplab/synthetic.hpp"
#include "nplab/train.hpp"

namespace nplab {

namespace fs = std::filesystem;

namespace {

using ordered_json = nlohmann::ordered_json;

// Runs fn(stage_object); any failure is rethrown as the same error type with
// the stage name prefixed, so exit-code semantics survive the wrapping.
template <class Fn>
void run_stage(MetricsReport& rep, const std::string& name, Fn&& fn) {
  auto& obj = add_stage(rep, name);
  try {
    fn(obj);
  } catch (const ConfigError& e) {
    throw ConfigError(format_msg("stage ", name, ": ", e.what()));
  } catch (const DataError& e) {
    throw DataError(format_msg("stage ", name, ": ", e.what()));
  } catch (const InvariantError& e) {
    throw InvariantError(format_msg("stage ", name, ": ", e.what()));
  } catch (const std::exception& e) {
    throw DataError(format_msg("stage ", name, ": ", e.what()));
  }
}

std::string tensor_hash(const Tensor& t) {
  return "fnv1a:" + hash_hex(fnv1a64(t.data(), sizeof(double) * static_cast<size_t>(t.size())));
}

std::string file_hash(const fs::path& p) { return "fnv1a:" + hash_hex(fnv1a64_file(p)); }

void prepare_out_dir(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  check<ConfigError>(!ec, "cannot create output directory ", out.string(), ": ", ec.message());
  const fs::path probe = out / ".write-probe";
  {
    std::ofstream f(probe, std::ios::binary);
    f << "ok";
    f.flush();
    check<ConfigError>(f.good(), "output directory ", out.string(), " is not writable");
  }
  fs::remove(probe, ec);
}

struct Splits {
  Dataset train;
  Dataset test;
};

ordered_json dataset_summary(const Dataset& d) {
  ordered_json s;
  s["rows"] = d.size();
  s["classes"] = d.class_count;
  s["feature_shape"] = d.feature_shape();
  s["value_lo"] = d.value_lo;
  s["value_hi"] = d.value_hi;
  s["inputs_hash"] = tensor_hash(d.inputs);
  return s;
}

Splits load_splits(const ExperimentConfig& cfg, ordered_json& stage) {
  const DatasetSection& ds = cfg.dataset;
  Splits s;
  switch (ds.kind) {
    case DatasetKind::digits:
    case DatasetKind::digits_striped: {
      DigitCorpusSpec spec;
      spec.striped = ds.kind == DatasetKind::digits_striped;
      spec.stripe_amplitude = ds.stripe_amplitude;
      spec.stripe_frequency = ds.stripe_frequency;
      spec.noise = ds.pixel_noise;
      spec.count = ds.train_count;
      spec.seed = cfg.seed;
      Dataset train = make_digit_corpus(spec);
      spec.count = ds.test_count;
      spec.seed = cfg.seed + 1;
      Dataset test = make_digit_corpus(spec);
      if (ds.via_idx) {
        // Round-trip through the IDX codec so every run exercises the same
        // loader path real files would; training proceeds on the loaded
        // (byte-quantized) pixels, which keeps reruns bit-identical.
        const fs::path data = fs::path(cfg.out_dir) / "data";
        fs::create_directories(data);
        write_mnist_idx(train, data / "train-images.idx", data / "train-labels.idx");
        write_mnist_idx(test, data / "test-images.idx", data / "test-labels.idx");
        s.train = load_mnist_idx(data / "train-images.idx", data / "train-labels.idx");
        s.test = load_mnist_idx(data / "test-images.idx", data / "test-labels.idx");
        stage["idx_files"] = {"data/train-images.idx", "data/train-labels.idx",
                              "data/test-images.idx", "data/test-labels.idx"};
      } else {
        s.train = std::move(train);
        s.test = std::move(test);
      }
      break;
    }
    case DatasetKind::blobs:
    case DatasetKind::two_moons: {
      check<ConfigError>(ds.train_count % 2 == 0 && ds.test_count % 2 == 0,
                         "synthetic dataset counts must be even (two balanced classes), got ",
                         ds.train_count, "/", ds.test_count);
      SyntheticSpec spec;
      spec.kind = ds.kind == DatasetKind::blobs ? SyntheticKind::gaussian_blobs
                                                : SyntheticKind::two_moons;
      spec.dimension = static_cast<int>(ds.dimension);
      spec.noise = ds.noise;
      spec.per_class = ds.train_count / 2;
      spec.seed = cfg.seed;
      s.train = make_synthetic(spec);
      spec.per_class = ds.test_count / 2;
      spec.seed = cfg.seed + 1;
      s.test = make_synthetic(spec);
      break;
    }
    case DatasetKind::idx:
      s.train = load_mnist_idx(ds.train_images, ds.train_labels);
      s.test = load_mnist_idx(ds.test_images, ds.test_labels);
      break;
    case DatasetKind::cifar10:
      s.train = load_cifar10_bin(ds.train_bin);
      s.test = load_cifar10_bin(ds.test_bin);
      break;
  }
  check<DataError>(s.train.class_count == s.test.class_count,
                   "train/test class counts differ: ", s.train.class_count, " vs ",
                   s.test.class_count);
  stage["kind"] = dataset_kind_name(ds.kind);
  stage["train"] = dataset_summary(s.train);
  stage["test"] = dataset_summary(s.test);
  return s;
}

Model make_classifier_model(const ExperimentConfig& cfg, const Dataset& d) {
  if (cfg.model.kind == ModelKind::mlp) {
    MlpSpec spec;
    spec.widths.push_back(d.feature_size());
    spec.widths.insert(spec.widths.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
    spec.widths.push_back(d.class_count);
    spec.activation = cfg.model.activation == "tanh" ? Activation::tanh : Activation::relu;
    return build_model(spec, cfg.seed);
  }
  const std::vector<int64_t> shape = d.feature_shape();
  check<ConfigError>(shape.size() == 3 && shape[1] == shape[2],
                     "convnet needs square image features (C, H, W), got ",
                     Tensor::shape_str(shape));
  ConvNetSpec spec;
  spec.in_channels = shape[0];
  spec.hw = shape[1];
  spec.c1 = cfg.model.c1;
  spec.c2 = cfg.model.c2;
  spec.classes = d.class_count;
  return build_model(spec, cfg.seed);
}

TrainConfig train_config_from(const TrainSection& t, uint64_t seed) {
  TrainConfig c;
  c.epochs = static_cast<int>(t.epochs);
  c.batch_size = t.batch_size;
  c.lr = t.lr;
  c.optimizer = t.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  c.beta1 = t.beta1;
  c.beta2 = t.beta2;
  c.adam_eps = t.adam_eps;
  c.seed = seed;
  return c;
}

AttackSpec attack_spec_from(const AttackSection& a) {
  AttackSpec s;
  s.epsilon = a.epsilon;
  s.alpha = a.alpha;
  s.steps = static_cast<int>(a.steps);
  s.direction = AttackDirection::attack;
  s.target = a.target == "fixed-class"    ? AttackTarget::fixed_class
             : a.target == "least-likely" ? AttackTarget::least_likely
                                          : AttackTarget::true_label;
  s.target_class = static_cast<int>(a.target_class);
  return s;
}

struct TrainedClassifier {
  Model model;                                   // final state
  std::vector<std::pair<int, Model>> snapshots;  // configured checkpoint epochs
  std::vector<EpochStats> history;
  fs::path final_path;
  std::string final_hash;
};

// Trains the configured classifier, saving a checkpoint file at each mark and
// the final state; fills the stage object and the train_history table.
TrainedClassifier train_classifier_stage(const ExperimentConfig& cfg,
                                         const std::vector<int64_t>& marks,
                                         const Dataset& train_set, const Dataset& test_set,
                                         ordered_json& stage, MetricsReport& rep,
                                         bool keep_snapshots) {
  TrainedClassifier out{make_classifier_model(cfg, train_set), {}, {}, {}, {}};
  const std::set<int64_t> mark_set(marks.begin(), marks.end());
  const fs::path ckdir = fs::path(cfg.out_dir) / "checkpoints";
  fs::create_directories(ckdir);
  ordered_json saved = ordered_json::array();
  const auto on_epoch = [&](int epoch, const Model& m, const EpochStats&) {
    if (mark_set.count(epoch) == 0) return;
    if (keep_snapshots) out.snapshots.emplace_back(epoch, m);
    const std::string name = "classifier-epoch-" + std::to_string(epoch) + ".npck";
    save_checkpoint(m, ckdir / name);
    saved.push_back(ordered_json{{"epoch", epoch},
                                 {"path", "checkpoints/" + name},
                                 {"hash", file_hash(ckdir / name)}});
  };
  out.history = train_classifier(out.model, train_set, train_config_from(cfg.train, cfg.seed),
                                 on_epoch);
  out.final_path = ckdir / "classifier-final.npck";
  save_checkpoint(out.model, out.final_path);
  out.final_hash = file_hash(out.final_path);

  stage["epochs"] = cfg.train.epochs;
  stage["checkpoints"] = std::move(saved);
  stage["final_checkpoint"] =
      ordered_json{{"path", "checkpoints/classifier-final.npck"}, {"hash", out.final_hash}};
  stage["train_accuracy"] = evaluate_accuracy(out.model, train_set);
  stage["test_accuracy"] = evaluate_accuracy(out.model, test_set);

  ordered_json rows = ordered_json::array();
  std::vector<std::pair<double, double>> loss_pts, acc_pts;
  for (size_t i = 0; i < out.history.size(); ++i) {
    const double epoch = static_cast<double>(i + 1);
    rows.push_back(
        ordered_json::array({i + 1, out.history[i].loss, out.history[i].accuracy}));
    loss_pts.emplace_back(epoch, out.history[i].loss);
    acc_pts.emplace_back(epoch, out.history[i].accuracy);
  }
  add_table(rep, "train_history", {"epoch", "loss", "accuracy"}, std::move(rows));
  add_series(rep, "train_loss", loss_pts);
  add_series(rep, "train_accuracy", acc_pts);
  return out;
}

Model load_classifier_stage(const ExperimentConfig& cfg, ordered_json& stage) {
  check<ConfigError>(!cfg.checkpoint.empty(), "this experiment needs \"checkpoint\": a path to a ",
                     "classifier checkpoint (produce one with the train command)");
  Model m = load_checkpoint(cfg.checkpoint);
  stage["path"] = cfg.checkpoint;
  stage["hash"] = file_hash(cfg.checkpoint);
  stage["kind"] = model_kind(m.spec);
  stage["param_count"] = m.param_count();
  return m;
}

ConjugateSet build_conjugates_stage(const ExperimentConfig& cfg, const Model& cls,
                                    const std::string& cls_hash, const Dataset& train_set,
                                    ordered_json& stage) {
  ConjugateSet set;
  set.records = build_conjugate_dataset(cls, train_set, cfg.conjugate.epsilon,
                                        static_cast<int>(cfg.conjugate.steps));
  set.epsilon = cfg.conjugate.epsilon;
  set.steps = static_cast<int>(cfg.conjugate.steps);
  set.model_hash = cls_hash;
  const fs::path cdir = fs::path(cfg.out_dir) / "conjugates";
  fs::create_directories(cdir);
  save_conjugates(set, cdir / "manifest.json", "payload.bin");

  double max_delta = 0.0, mean_delta = 0.0;
  for (const auto& r : set.records) {
    max_delta = std::max(max_delta, r.delta.max_abs());
    double s = 0.0;
    for (int64_t i = 0; i < r.delta.size(); ++i) s += std::fabs(r.delta[i]);
    mean_delta += s / static_cast<double>(r.delta.size());
  }
  if (!set.records.empty()) mean_delta /= static_cast<double>(set.records.size());

  stage["count"] = set.records.size();
  stage["epsilon"] = set.epsilon;
  stage["steps"] = set.steps;
  stage["classifier_hash"] = cls_hash;
  stage["manifest"] = "conjugates/manifest.json";
  stage["payload"] = "conjugates/payload.bin";
  stage["manifest_hash"] = file_hash(cdir / "manifest.json");
  stage["payload_hash"] = file_hash(cdir / "payload.bin");
  stage["max_abs_delta"] = max_delta;
  stage["mean_abs_delta"] = mean_delta;
  return set;
}

struct TrainedGenerator {
  Model model;
  double delta_scale = 1.0;
  std::string hash;
};

// Fits the conjugate generator G so that delta_scale * G(x0) tracks the
// stored displacement delta.  delta_scale = steps * epsilon (the natural
// magnitude of an N-step accumulation) keeps the regression targets inside
// the tanh head's reach; a degenerate budget falls back to 1.
TrainedGenerator train_generator_stage(const ExperimentConfig& cfg, const ConjugateSet& set,
                                       ordered_json& stage, MetricsReport& rep) {
  check<DataError>(!set.records.empty(), "conjugate set is empty");
  const Tensor& first = set.records.front().x0;
  check<ConfigError>(first.rank() == 3 && first.dim(1) == first.dim(2),
                     "generator needs square image features (C, H, W), got ", first.shape_str());
  double scale = set.epsilon * static_cast<double>(set.steps);
  if (scale <= 0.0) scale = 1.0;

  const int64_t n = static_cast<int64_t>(set.records.size());
  const int64_t feat = first.size();
  Tensor inputs({n, first.dim(0), first.dim(1), first.dim(2)});
  Tensor targets({n, first.dim(0), first.dim(1), first.dim(2)});
  for (int64_t i = 0; i < n; ++i) {
    const auto& r = set.records[static_cast<size_t>(i)];
    check<DataError>(r.x0.size() == feat && r.delta.size() == feat,
                     "conjugate record ", i, " has inconsistent shapes");
    std::memcpy(inputs.data() + i * feat, r.x0.data(), sizeof(double) * (size_t)feat);
    for (int64_t j = 0; j < feat; ++j) targets.data()[i * feat + j] = r.delta[j] / scale;
  }

  UnetSpec spec;
  spec.in_channels = first.dim(0);
  spec.hw = first.dim(1);
  spec.base_channels = cfg.generator.base_channels;
  spec.depth = static_cast<int>(cfg.generator.depth);
  TrainedGenerator out{build_model(spec, cfg.seed + 1), scale, {}};

  TrainConfig tc;
  tc.epochs = static_cast<int>(cfg.generator.epochs);
  tc.batch_size = cfg.generator.batch_size;
  tc.lr = cfg.generator.lr;
  tc.seed = cfg.seed + 1;
  const std::vector<EpochStats> history = train_regression(out.model, inputs, targets, tc);

  const fs::path path = fs::path(cfg.out_dir) / "checkpoints" / "generator.npck";
  fs::create_directories(path.parent_path());
  save_checkpoint(out.model, path);
  out.hash = file_hash(path);

  ordered_json rows = ordered_json::array();
  std::vector<std::pair<double, double>> loss_pts;
  for (size_t i = 0; i < history.size(); ++i) {
    rows.push_back(ordered_json::array({i + 1, history[i].loss}));
    loss_pts.emplace_back(static_cast<double>(i + 1), history[i].loss);
  }
  add_table(rep, "generator_loss", {"epoch", "loss"}, std::move(rows));
  add_series(rep, "generator_loss", loss_pts);

  stage["records"] = n;
  stage["delta_scale"] = scale;
  stage["epochs"] = cfg.generator.epochs;
  stage["final_loss"] = history.empty() ? 0.0 : history.back().loss;
  stage["checkpoint"] = ordered_json{{"path", "checkpoints/generator.npck"}, {"hash", out.hash}};
  return out;
}

// ---------------------------------------------------------------------------
// Experiments

void do_train(const ExperimentConfig& cfg, MetricsReport& rep) {
  Splits s;
  run_stage(rep, "dataset", [&](ordered_json& st) { s = load_splits(cfg, st); });
  run_stage(rep, "train-classifier", [&](ordered_json& st) {
    TrainedClassifier tc = train_classifier_stage(cfg, cfg.train.checkpoint_epochs, s.train,
                                                  s.test, st, rep, false);
    ordered_json rows = ordered_json::array();
    rows.push_back(ordered_json::array(
        {"classifier", "train", "TA", st["train_accuracy"].get<double>()}));
    rows.push_back(
        ordered_json::array({"classifier", "test", "TA", st["test_accuracy"].get<double>()}));
    add_table(rep, "accuracy", {"model", "split", "metric", "value"}, std::move(rows));
  });
}

void do_attack(const ExperimentConfig& cfg, MetricsReport& rep) {
  Splits s;
  Model cls;
  run_stage(rep, "dataset", [&](ordered_json& st) { s = load_splits(cfg, st); });
  run_stage(rep, "load-classifier",
            [&](ordered_json& st) { cls = load_classifier_stage(cfg, st); });
  run_stage(rep, "attack", [&](ordered_json& st) {
    const AttackSpec spec = attack_spec_from(cfg.attack);
    const double ta = evaluate_accuracy(cls, s.test);
    const double ra = robust_accuracy(cls, s.test, spec);

    // Budget audit on a probe block: the l-inf contract is part of the
    // attack's definition, so every run re-measures it.
    const int64_t probe_n = std::min<int64_t>(s.test.size(), 256);
    Tensor x0 = rows_block(s.test.inputs, 0, probe_n);
    const std::vector<int> y(s.test.labels.begin(), s.test.labels.begin() + probe_n);
    AttackSpec probe_spec = spec;
    probe_spec.value_lo = s.test.value_lo;
    probe_spec.value_hi = s.test.value_hi;
    const Tensor xa = pgd(cls, x0, y, probe_spec);
    double max_dev = 0.0;
    int64_t violations = 0;
    for (int64_t i = 0; i < xa.size(); ++i) {
      const double dev = std::fabs(xa[i] - x0[i]);
      max_dev = std::max(max_dev, dev);
      if (dev > spec.epsilon) ++violations;
    }

    st["epsilon"] = spec.epsilon;
    st["alpha"] = spec.alpha;
    st["steps"] = spec.steps;
    st["test_accuracy"] = ta;
    st["robust_accuracy"] = ra;
    st["probe_rows"] = probe_n;
    st["max_linf"] = max_dev;
    st["budget_violations"] = violations;

    ordered_json rows = ordered_json::array();
    rows.push_back(ordered_json::array({"classifier", "test", "TA", ta}));
    rows.push_back(ordered_json::array({"classifier", "test", "RA", ra}));
    add_table(rep, "accuracy", {"model", "split", "metric", "value"}, std::move(rows));
  });
}

void do_augment(const ExperimentConfig& cfg, MetricsReport& rep) {
  Splits s;
  Model cls;
  run_stage(rep, "dataset", [&](ordered_json& st) { s = load_splits(cfg, st); });
  run_stage(rep, "load-classifier",
            [&](ordered_json& st) { cls = load_classifier_stage(cfg, st); });
  run_stage(rep, "augment", [&](ordered_json& st) {
    const AttackSpec spec = attack_spec_from(cfg.attack);
    ordered_json rows = ordered_json::array();
    st["epsilon"] = cfg.conjugate.epsilon;
    const std::pair<const char*, const Dataset*> splits[] = {{"train", &s.train},
                                                             {"test", &s.test}};
    for (const auto& [name, split] : splits) {
      std::vector<std::pair<double, double>> ta_pts, ra_pts;
      for (int64_t n : cfg.conjugate.record_steps) {
        const auto records =
            build_conjugate_dataset(cls, *split, cfg.conjugate.epsilon, static_cast<int>(n));
        const Dataset aug = conjugate_augmented(*split, records);
        const double ta = evaluate_accuracy(cls, aug);
        const double ra = robust_accuracy(cls, aug, spec);
        rows.push_back(ordered_json::array({name, n, ta, ra}));
        ta_pts.emplace_back(static_cast<double>(n), ta);
        ra_pts.emplace_back(static_cast<double>(n), ra);
      }
      add_series(rep, std::string("augment_ta_") + name, ta_pts);
      add_series(rep, std::string("augment_ra_") + name, ra_pts);
    }
    add_table(rep, "augment", {"split", "steps", "ta", "ra"}, std::move(rows));
  });
}

void do_gen_conjugates(const ExperimentConfig& cfg, MetricsReport& rep) {
  Splits s;
  Model cls;
  std::string cls_hash;
  run_stage(rep, "dataset", [&](ordered_json& st) { s = load_splits(cfg, st); });
  run_stage(rep, "load-classifier", [&](ordered_json& st) {
    cls = load_classifier_stage(cfg, st);
    cls_hash = st["hash"].get<std::string>();
  });
  run_stage(rep, "build-conjugates", [&](ordered_json& st) {
    build_conjugates_stage(cfg, cls, cls_hash, s.train, st);
  });
}

void do_train_generator(const ExperimentConfig& cfg, MetricsReport& rep) {
  ConjugateSet set;
  run_stage(rep, "load-conjugates", [&](ordered_json& st) {
    check<ConfigError>(!cfg.conjugates.empty(), "train-generator needs \"conjugates\": a path ",
                       "to a conjugate manifest (produce one with the gen-conjugates command)");
    set = load_conjugates(cfg.conjugates);
    st["manifest"] = cfg.conjugates;
    st["count"] = set.records.size();
    st["epsilon"] = set.epsilon;
    st["steps"] = set.steps;
    st["classifier_hash"] = set.model_hash;
  });
  run_stage(rep, "train-generator",
            [&](ordered_json& st) { train_generator_stage(cfg, set, st, rep); });
}

void do_ifa(const ExperimentConfig& cfg, MetricsReport& rep) {
  Splits s;
  TrainedClassifier tc;
  ConjugateSet set;
  TrainedGenerator gen;
  const AttackSpec spec = attack_spec_from(cfg.attack);
  double cl_ta = 0.0, cl_ra = 0.0;

  run_stage(rep, "dataset", [&](ordered_json& st) { s = load_splits(cfg, st); });
  run_stage(rep, "train-classifier", [&](ordered_json& st) {
    tc = train_classifier_stage(cfg, cfg.train.checkpoint_epochs, s.train, s.test, st, rep,
                                false);
    cl_ta = st["test_accuracy"].get<double>();
    cl_ra = robust_accuracy(tc.model, s.test, spec);
    st["test_robust_accuracy"] = cl_ra;
  });
  run_stage(rep, "build-conjugates", [&](ordered_json& st) {
    set = build_conjugates_stage(cfg, tc.model, tc.final_hash, s.train, st);
  });
  run_stage(rep, "train-generator", [&](ordered_json& st) {
    const std::string before = file_hash(tc.final_path);
    gen = train_generator_stage(cfg, set, st, rep);
    // The classifier must come through generator training untouched; compare
    // its re-serialized bytes against the checkpoint written before.
    const fs::path recheck = tc.final_path.parent_path() / "classifier-recheck.npck";
    save_checkpoint(tc.model, recheck);
    const std::string after = file_hash(recheck);
    fs::remove(recheck);
    st["classifier_hash_before"] = before;
    st["classifier_hash_after"] = after;
    check<InvariantError>(before == after && before == tc.final_hash,
                          "classifier parameters changed during generator training: ", before,
                          " -> ", after);
  });
  run_stage(rep, "evaluate-composed", [&](ordered_json& st) {
    const double acl_ta = clean_accuracy_composed(gen.model, tc.model, s.test, gen.delta_scale);
    const double acl_ra =
        robust_accuracy_composed(gen.model, tc.model, s.test, spec, gen.delta_scale);
    st["delta_scale"] = gen.delta_scale;
    st["composed_test_accuracy"] = acl_ta;
    st["composed_robust_accuracy"] = acl_ra;

    ordered_json rows = ordered_json::array();
    rows.push_back(ordered_json::array({"classifier", "test", "TA", cl_ta}));
    rows.push_back(ordered_json::array({"classifier", "test", "RA", cl_ra}));
    rows.push_back(ordered_json::array({"composed", "test", "TA", acl_ta}));
    rows.push_back(ordered_json::array({"composed", "test", "RA", acl_ra}));
    add_table(rep, "accuracy", {"model", "split", "metric", "value"}, std::move(rows));
  });
}

void do_uncertainty(const ExperimentConfig& cfg, MetricsReport& rep) {
  check<ConfigError>(
      cfg.dataset.kind == DatasetKind::blobs || cfg.dataset.kind == DatasetKind::two_moons,
      "uncertainty study needs dataset.kind blobs or two-moons (grid quadrature is only ",
      "affordable over low-dimensional features)");
  check<ConfigError>(cfg.model.kind == ModelKind::mlp,
                     "uncertainty study needs model.kind mlp over low-dimensional features");
  check<ConfigError>(cfg.train.epochs >= 1, "uncertainty study needs train.epochs >= 1");
  const std::vector<int64_t> marks = cfg.train.checkpoint_epochs.empty()
                                         ? std::vector<int64_t>{cfg.train.epochs}
                                         : cfg.train.checkpoint_epochs;

  Splits s;
  TrainedClassifier tc;
  run_stage(rep, "dataset", [&](ordered_json& st) { s = load_splits(cfg, st); });
  run_stage(rep, "train-classifier", [&](ordered_json& st) {
    tc = train_classifier_stage(cfg, marks, s.train, s.test, st, rep, true);
    check<InvariantError>(tc.snapshots.size() == marks.size(),
                          "expected ", marks.size(), " checkpoints, captured ",
                          tc.snapshots.size());
  });
  run_stage(rep, "packets", [&](ordered_json& st) {
    const int d = static_cast<int>(s.train.feature_size());
    GridDomain domain;
    domain.lo.assign(static_cast<size_t>(d), std::numeric_limits<double>::infinity());
    domain.hi.assign(static_cast<size_t>(d), -std::numeric_limits<double>::infinity());
    for (int64_t i = 0; i < s.train.inputs.size(); ++i) {
      const size_t axis = static_cast<size_t>(i % d);
      domain.lo[axis] = std::min(domain.lo[axis], s.train.inputs[i]);
      domain.hi[axis] = std::max(domain.hi[axis], s.train.inputs[i]);
    }
    ordered_json dom = ordered_json::array();
    for (size_t a = 0; a < domain.lo.size(); ++a) {
      domain.lo[a] -= cfg.packet.pad;
      domain.hi[a] += cfg.packet.pad;
      dom.push_back(ordered_json::array({domain.lo[a], domain.hi[a]}));
    }
    st["domain"] = std::move(dom);
    st["nodes_per_axis"] = cfg.packet.nodes;

    std::vector<int64_t> labels = cfg.packet.labels;
    if (labels.empty()) {
      labels.resize(static_cast<size_t>(s.train.class_count));
      std::iota(labels.begin(), labels.end(), 0);
    }
    for (int64_t l : labels)
      check<ConfigError>(l < s.train.class_count, "packet.labels entry ", l,
                         " is outside the dataset's ", s.train.class_count, " classes");

    const fs::path pdir = fs::path(cfg.out_dir) / "packets";
    if (cfg.packet.save_dumps) fs::create_directories(pdir);

    ordered_json u_rows = ordered_json::array();
    ordered_json c_rows = ordered_json::array();
    std::map<std::pair<int64_t, int>, std::vector<std::pair<double, double>>> product_series;
    std::map<std::pair<int64_t, int>, std::vector<std::pair<double, double>>> tradeoff_series;
    // (label, axis) -> (sigma_x, sigma_p) at the first and last gated marks
    std::map<std::pair<int64_t, int>, std::pair<OperatorStats, OperatorStats>> endpoints;
    std::map<int64_t, PacketGrid> last_packets;

    const auto run_model = [&](int64_t epoch, const Model& m, bool gated) {
      for (int64_t label : labels) {
        PacketGrid p = build_packet(m, static_cast<int>(label), domain, cfg.packet.nodes);
        if (cfg.packet.save_dumps) {
          const std::string name =
              "epoch-" + std::to_string(epoch) + "-label-" + std::to_string(label) + ".nppk";
          save_packet(p, pdir / name);
        }
        const CommutatorReport cr = commutator_check(p);
        c_rows.push_back(
            ordered_json::array({epoch, label, cr.max_residual, cr.bound, cr.pass}));
        if (gated)
          check<InvariantError>(cr.pass, "commutator residual ", cr.max_residual,
                                " exceeds bound ", cr.bound, " at epoch ", epoch, ", label ",
                                label);
        for (int axis = 0; axis < p.dimension(); ++axis) {
          const UncertaintyResult r = uncertainty_product(p, axis);
          u_rows.push_back(ordered_json::array({epoch, label, axis, r.stats.mean_x,
                                                r.stats.sigma_x, r.stats.mean_p, r.stats.sigma_p,
                                                r.stats.product, r.tol, p.boundary_ok, gated,
                                                r.pass}));
          if (gated)
            check<InvariantError>(r.pass, "uncertainty product ", r.stats.product,
                                  " fell below ", 0.5 - r.tol, " at epoch ", epoch, ", label ",
                                  label, ", axis ", axis);
          const auto key = std::make_pair(label, axis);
          product_series[key].emplace_back(static_cast<double>(epoch), r.stats.product);
          tradeoff_series[key].emplace_back(r.stats.sigma_x, r.stats.sigma_p);
          if (gated) {
            auto it = endpoints.find(key);
            if (it == endpoints.end())
              endpoints.emplace(key, std::make_pair(r.stats, r.stats));
            else
              it->second.second = r.stats;
          }
        }
        if (gated) last_packets.insert_or_assign(label, std::move(p));
      }
    };

    // Epoch 0 = the untrained initialization (same seed, so bit-identical to
    // the state training started from).  Its near-uniform packets sit against
    // the domain boundary, where the discrete inequality has no force, so the
    // row is reported but never gated.
    run_model(0, make_classifier_model(cfg, s.train), false);
    for (const auto& [epoch, m] : tc.snapshots) run_model(epoch, m, true);

    add_table(rep, "uncertainty",
              {"epoch", "label", "axis", "mean_x", "sigma_x", "mean_p", "sigma_p", "product",
               "tol", "boundary_ok", "gated", "pass"},
              std::move(u_rows));
    add_table(rep, "commutator", {"epoch", "label", "max_residual", "bound", "pass"},
              std::move(c_rows));
    for (const auto& [key, pts] : product_series)
      add_series(rep,
                 "product_label" + std::to_string(key.first) + "_axis" +
                     std::to_string(key.second),
                 pts);
    for (const auto& [key, pts] : tradeoff_series)
      add_series(rep,
                 "tradeoff_label" + std::to_string(key.first) + "_axis" +
                     std::to_string(key.second),
                 pts);

    // Localization trend between the first and last gated checkpoints:
    // sigma_x shrinking while sigma_p grows.  Recorded, not gated -- the
    // model, not the operators, decides how it spends the bound.
    int64_t migrating = 0;
    for (const auto& [key, ends] : endpoints)
      if (ends.second.sigma_x < ends.first.sigma_x && ends.second.sigma_p > ends.first.sigma_p)
        ++migrating;
    st["tradeoff"] = ordered_json{{"pairs", endpoints.size()}, {"migrating", migrating}};

    // Gradient alignment at the last checkpoint: grad l and grad psi are
    // parallel by construction, and the norm ratio recovers sqrt(beta).
    ordered_json a_rows = ordered_json::array();
    const Model& last_model = tc.snapshots.back().second;
    for (int64_t label : labels) {
      const PacketGrid& p = last_packets.at(label);
      Tensor x0({static_cast<int64_t>(domain.lo.size())});
      for (int64_t a = 0; a < x0.size(); ++a)
        x0.data()[a] = 0.5 * (domain.lo[(size_t)a] + domain.hi[(size_t)a]);
      for (int64_t i = 0; i < s.train.size(); ++i) {
        if (s.train.labels[static_cast<size_t>(i)] == label) {
          x0 = rows_block(s.train.inputs, i, i + 1).reshaped({x0.size()});
          break;
        }
      }
      const AlignmentReport a = packet_gradient_alignment(last_model, p, x0);
      const double sqrt_beta = std::sqrt(p.beta);
      const double rel_err =
          a.defined ? std::fabs(a.scale_ratio - sqrt_beta) / sqrt_beta : 0.0;
      a_rows.push_back(
          ordered_json::array({label, a.defined, a.cosine, a.scale_ratio, sqrt_beta, rel_err}));
    }
    add_table(rep, "alignment", {"label", "defined", "cosine", "scale_ratio", "sqrt_beta",
                                 "rel_err"},
              std::move(a_rows));

    if (cfg.packet.mc_samples > 0) {
      ordered_json mc_rows = ordered_json::array();
      for (int64_t label : labels) {
        for (int axis = 0; axis < d; ++axis) {
          const McSigma est = mc_sigma_estimate(last_model, static_cast<int>(label), s.train,
                                                axis, cfg.packet.mc_samples, cfg.seed + 2);
          mc_rows.push_back(ordered_json::array({label, axis, est.stats.sigma_x,
                                                 est.stats.sigma_p, est.stats.product,
                                                 cfg.packet.mc_samples}));
        }
      }
      add_table(rep, "mc_sigma", {"label", "axis", "sigma_x", "sigma_p", "product", "samples"},
                std::move(mc_rows));
    }
  });
}

void do_spectra(const ExperimentConfig& cfg, MetricsReport& rep) {
  check<ConfigError>(cfg.train.checkpoint_epochs.size() >= 2,
                     "spectral study needs >= 2 checkpoint epochs (train.checkpoint_epochs), got ",
                     cfg.train.checkpoint_epochs.size());
  Splits s;
  TrainedClassifier tc;
  run_stage(rep, "dataset", [&](ordered_json& st) {
    s = load_splits(cfg, st);
    check<ConfigError>(s.train.feature_shape().size() == 3,
                       "spectral study needs image-shaped features (C, H, W), got ",
                       Tensor::shape_str(s.train.feature_shape()));
  });
  run_stage(rep, "train-classifier", [&](ordered_json& st) {
    tc = train_classifier_stage(cfg, cfg.train.checkpoint_epochs, s.train, s.test, st, rep,
                                true);
    check<InvariantError>(tc.snapshots.size() == cfg.train.checkpoint_epochs.size(),
                          "expected ", cfg.train.checkpoint_epochs.size(),
                          " checkpoints, captured ", tc.snapshots.size());
  });
  run_stage(rep, "spectra", [&](ordered_json& st) {
    const int64_t probe_n = std::min<int64_t>(cfg.spectral.probe_count, s.test.size());
    std::vector<int64_t> idx(static_cast<size_t>(probe_n));
    std::iota(idx.begin(), idx.end(), 0);
    const Dataset probe = take(s.test, idx);

    SpectralConfig window;
    window.r0 = cfg.spectral.r0;
    window.r1 = cfg.spectral.r1;
    window.c0 = cfg.spectral.c0;
    window.c1 = cfg.spectral.c1;
    window.grayscale = cfg.spectral.grayscale;

    std::vector<std::pair<const Model*, double>> checkpoints;
    checkpoints.reserve(tc.snapshots.size());
    for (const auto& [epoch, m] : tc.snapshots)
      checkpoints.emplace_back(&m, evaluate_accuracy(m, s.test));
    const std::vector<RatioPoint> points =
        hf_ratio_vs_accuracy(checkpoints, probe, cfg.spectral.epsilon, window);

    ordered_json rows = ordered_json::array();
    std::vector<std::pair<double, double>> vs_ta, vs_epoch;
    std::vector<double> ta_series, ratio_series;
    for (size_t i = 0; i < points.size(); ++i) {
      const int64_t epoch = cfg.train.checkpoint_epochs[i];
      rows.push_back(ordered_json::array(
          {epoch, points[i].accuracy, points[i].mean_ratio, points[i].samples}));
      vs_ta.emplace_back(points[i].accuracy, points[i].mean_ratio);
      vs_epoch.emplace_back(static_cast<double>(epoch), points[i].mean_ratio);
      ta_series.push_back(points[i].accuracy);
      ratio_series.push_back(points[i].mean_ratio);
    }
    add_table(rep, "ratio_vs_accuracy", {"epoch", "accuracy", "mean_hf_ratio", "samples"},
              std::move(rows));
    add_series(rep, "hf_ratio_vs_ta", vs_ta);
    add_series(rep, "hf_ratio_vs_epoch", vs_epoch);

    st["probe_rows"] = probe_n;
    st["epsilon"] = cfg.spectral.epsilon;
    const auto constant = [](const std::vector<double>& v) {
      return *std::min_element(v.begin(), v.end()) == *std::max_element(v.begin(), v.end());
    };
    ordered_json sp;
    if (constant(ta_series) || constant(ratio_series)) {
      // A constant series has no ranking; report the correlation as
      // undefined rather than failing the run.
      sp["defined"] = false;
      sp["value"] = nullptr;
      sp["reason"] = "constant series";
    } else {
      sp["defined"] = true;
      sp["value"] = spearman(ta_series, ratio_series);
    }
    st["spearman"] = std::move(sp);
  });
}

}  // namespace

MetricsReport run_experiment(const ExperimentConfig& cfg) {
  const std::string started = iso8601_utc_now();
  prepare_out_dir(cfg.out_dir);
  MetricsReport rep = make_report(cfg.experiment, cfg.seed, cfg.canonical);

  if (cfg.experiment == "train") {
    do_train(cfg, rep);
  } else if (cfg.experiment == "attack") {
    do_attack(cfg, rep);
  } else if (cfg.experiment == "augment") {
    do_augment(cfg, rep);
  } else if (cfg.experiment == "gen-conjugates") {
    do_gen_conjugates(cfg, rep);
  } else if (cfg.experiment == "train-generator") {
    do_train_generator(cfg, rep);
  } else if (cfg.experiment == "ifa") {
    do_ifa(cfg, rep);
  } else if (cfg.experiment == "uncertainty") {
    do_uncertainty(cfg, rep);
  } else if (cfg.experiment == "spectra") {
    do_spectra(cfg, rep);
  } else {
    throw ConfigError(format_msg("unknown experiment \"", cfg.experiment, "\""));
  }

  set_timestamps(rep, started, iso8601_utc_now());
  emit_report(rep, cfg.out_dir);
  return rep;
}

}  // namespace nplab
