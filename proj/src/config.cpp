#include "nplab/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "nplab/common.hpp"

namespace nplab {

namespace {

using ordered_json = nlohmann::ordered_json;

// Typed view over one JSON object level.  Every get_* marks its key as
// consumed; finish() then rejects whatever the document contained that the
// schema never asked about, so typos fail loudly at any nesting depth.
class Section {
 public:
  Section(const ordered_json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    check<ConfigError>(obj_.is_object(), path_, " must be a JSON object, got ", obj_.dump());
  }

  bool has(const char* key) {
    seen_.insert(key);
    return obj_.contains(key);
  }

  const ordered_json& raw(const char* key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  int64_t get_int(const char* key, int64_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    check<ConfigError>(v.is_number_integer(), where(key), " must be an integer, got ", v.dump());
    return v.get<int64_t>();
  }

  uint64_t get_seed(const char* key) {
    check<ConfigError>(has(key), path_, " needs \"", key,
                       "\" (set it in the config file or pass --seed)");
    const auto& v = obj_.at(key);
    const bool ok =
        v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0);
    check<ConfigError>(ok, where(key), " must be a non-negative integer, got ", v.dump());
    return v.get<uint64_t>();
  }

  double get_double(const char* key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    check<ConfigError>(v.is_number() && !v.is_boolean(), where(key), " must be a number, got ",
                       v.dump());
    return v.get<double>();
  }

  bool get_bool(const char* key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    check<ConfigError>(v.is_boolean(), where(key), " must be true or false, got ", v.dump());
    return v.get<bool>();
  }

  std::string get_string(const char* key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    check<ConfigError>(v.is_string(), where(key), " must be a string, got ", v.dump());
    return v.get<std::string>();
  }

  std::vector<int64_t> get_int_list(const char* key, std::vector<int64_t> fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    check<ConfigError>(v.is_array(), where(key), " must be an array of integers, got ", v.dump());
    std::vector<int64_t> out;
    for (const auto& item : v) {
      check<ConfigError>(item.is_number_integer(), where(key),
                         " must contain only integers, got ", item.dump());
      out.push_back(item.get<int64_t>());
    }
    return out;
  }

  std::string where(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& item : obj_.items()) {
      check<ConfigError>(seen_.count(item.key()) != 0, "unknown key \"", item.key(), "\" in ",
                         path_);
    }
  }

 private:
  const ordered_json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

const ordered_json kEmptyObject = ordered_json::object();

const ordered_json& subsection(Section& top, const char* key) {
  if (!top.has(key)) return kEmptyObject;
  return top.raw(key);
}

DatasetKind dataset_kind_from(const std::string& name, const std::string& where) {
  if (name == "digits") return DatasetKind::digits;
  if (name == "digits-striped") return DatasetKind::digits_striped;
  if (name == "blobs") return DatasetKind::blobs;
  if (name == "two-moons") return DatasetKind::two_moons;
  if (name == "idx") return DatasetKind::idx;
  if (name == "cifar10") return DatasetKind::cifar10;
  throw ConfigError(format_msg(where, " must be one of digits, digits-striped, blobs, ",
                               "two-moons, idx, cifar10; got \"", name, "\""));
}

void expect_positive(int64_t v, const std::string& where) {
  check<ConfigError>(v > 0, where, " must be positive, got ", v);
}

void expect_nonnegative(double v, const std::string& where) {
  check<ConfigError>(v >= 0.0, where, " must be non-negative, got ", v);
}

DatasetSection parse_dataset(const ordered_json& obj) {
  Section s(obj, "dataset");
  DatasetSection d;
  d.kind = dataset_kind_from(s.get_string("kind", "digits"), s.where("kind"));
  d.train_count = s.get_int("train_count", d.train_count);
  d.test_count = s.get_int("test_count", d.test_count);
  d.dimension = s.get_int("dimension", d.dimension);
  d.noise = s.get_double("noise", d.noise);
  d.pixel_noise = s.get_double("pixel_noise", d.pixel_noise);
  d.stripe_amplitude = s.get_double("stripe_amplitude", d.stripe_amplitude);
  d.stripe_frequency = s.get_double("stripe_frequency", d.stripe_frequency);
  d.via_idx = s.get_bool("via_idx", d.via_idx);
  d.train_images = s.get_string("train_images", "");
  d.train_labels = s.get_string("train_labels", "");
  d.test_images = s.get_string("test_images", "");
  d.test_labels = s.get_string("test_labels", "");
  d.train_bin = s.get_string("train_bin", "");
  d.test_bin = s.get_string("test_bin", "");
  s.finish();

  if (d.kind != DatasetKind::idx && d.kind != DatasetKind::cifar10) {
    expect_positive(d.train_count, "dataset.train_count");
    expect_positive(d.test_count, "dataset.test_count");
  }
  check<ConfigError>(d.dimension >= 1 && d.dimension <= 3,
                     "dataset.dimension must be 1..3, got ", d.dimension);
  expect_nonnegative(d.noise, "dataset.noise");
  expect_nonnegative(d.pixel_noise, "dataset.pixel_noise");
  expect_nonnegative(d.stripe_amplitude, "dataset.stripe_amplitude");
  check<ConfigError>(d.stripe_frequency > 0.0, "dataset.stripe_frequency must be positive, got ",
                     d.stripe_frequency);
  if (d.kind == DatasetKind::idx) {
    check<ConfigError>(!d.train_images.empty() && !d.train_labels.empty() &&
                           !d.test_images.empty() && !d.test_labels.empty(),
                       "dataset.kind idx needs train_images, train_labels, test_images, ",
                       "test_labels paths");
  }
  if (d.kind == DatasetKind::cifar10) {
    check<ConfigError>(!d.train_bin.empty() && !d.test_bin.empty(),
                       "dataset.kind cifar10 needs train_bin and test_bin paths");
  }
  return d;
}

ModelSection parse_model(const ordered_json& obj) {
  Section s(obj, "model");
  ModelSection m;
  const std::string kind = s.get_string("kind", "convnet");
  if (kind == "mlp") {
    m.kind = ModelKind::mlp;
  } else if (kind == "convnet") {
    m.kind = ModelKind::convnet;
  } else {
    throw ConfigError(format_msg("model.kind must be mlp or convnet, got \"", kind, "\""));
  }
  m.hidden = s.get_int_list("hidden", m.hidden);
  m.activation = s.get_string("activation", m.activation);
  m.c1 = s.get_int("c1", m.c1);
  m.c2 = s.get_int("c2", m.c2);
  s.finish();

  check<ConfigError>(m.activation == "relu" || m.activation == "tanh",
                     "model.activation must be relu or tanh, got \"", m.activation, "\"");
  for (int64_t w : m.hidden) expect_positive(w, "model.hidden entries");
  expect_positive(m.c1, "model.c1");
  expect_positive(m.c2, "model.c2");
  return m;
}

TrainSection parse_train(const ordered_json& obj, const char* path) {
  Section s(obj, path);
  TrainSection t;
  t.epochs = s.get_int("epochs", t.epochs);
  t.batch_size = s.get_int("batch_size", t.batch_size);
  t.lr = s.get_double("lr", t.lr);
  t.optimizer = s.get_string("optimizer", t.optimizer);
  t.beta1 = s.get_double("beta1", t.beta1);
  t.beta2 = s.get_double("beta2", t.beta2);
  t.adam_eps = s.get_double("adam_eps", t.adam_eps);
  t.checkpoint_epochs = s.get_int_list("checkpoint_epochs", t.checkpoint_epochs);
  s.finish();

  check<ConfigError>(t.epochs >= 0, std::string(path) + ".epochs must be >= 0, got ", t.epochs);
  expect_positive(t.batch_size, std::string(path) + ".batch_size");
  check<ConfigError>(t.lr > 0.0, std::string(path) + ".lr must be positive, got ", t.lr);
  check<ConfigError>(t.optimizer == "adam" || t.optimizer == "sgd",
                     std::string(path) + ".optimizer must be adam or sgd, got \"", t.optimizer,
                     "\"");
  int64_t prev = 0;
  for (int64_t e : t.checkpoint_epochs) {
    check<ConfigError>(e >= 1 && e <= t.epochs, std::string(path),
                       ".checkpoint_epochs entries must lie in [1, epochs]; got ", e,
                       " with epochs ", t.epochs);
    check<ConfigError>(e > prev, std::string(path),
                       ".checkpoint_epochs must be strictly increasing");
    prev = e;
  }
  return t;
}

AttackSection parse_attack(const ordered_json& obj) {
  Section s(obj, "attack");
  AttackSection a;
  a.epsilon = s.get_double("epsilon", a.epsilon);
  a.alpha = s.get_double("alpha", a.alpha);
  a.steps = s.get_int("steps", a.steps);
  a.target = s.get_string("target", a.target);
  a.target_class = s.get_int("target_class", a.target_class);
  s.finish();

  expect_nonnegative(a.epsilon, "attack.epsilon");
  check<ConfigError>(a.alpha > 0.0, "attack.alpha must be positive, got ", a.alpha);
  expect_positive(a.steps, "attack.steps");
  check<ConfigError>(
      a.target == "true-label" || a.target == "fixed-class" || a.target == "least-likely",
      "attack.target must be true-label, fixed-class, or least-likely; got \"", a.target, "\"");
  check<ConfigError>(a.target_class >= 0, "attack.target_class must be >= 0, got ", a.target_class);
  return a;
}

ConjugateSection parse_conjugate(const ordered_json& obj) {
  Section s(obj, "conjugate");
  ConjugateSection c;
  c.epsilon = s.get_double("epsilon", c.epsilon);
  c.steps = s.get_int("steps", c.steps);
  c.record_steps = s.get_int_list("record_steps", c.record_steps);
  s.finish();

  expect_nonnegative(c.epsilon, "conjugate.epsilon");
  check<ConfigError>(c.steps >= 0, "conjugate.steps must be >= 0, got ", c.steps);
  check<ConfigError>(!c.record_steps.empty(), "conjugate.record_steps must not be empty");
  int64_t prev = -1;
  for (int64_t n : c.record_steps) {
    check<ConfigError>(n >= 0, "conjugate.record_steps entries must be >= 0, got ", n);
    check<ConfigError>(n > prev, "conjugate.record_steps must be strictly increasing");
    prev = n;
  }
  return c;
}

GeneratorSection parse_generator(const ordered_json& obj) {
  Section s(obj, "generator");
  GeneratorSection g;
  g.base_channels = s.get_int("base_channels", g.base_channels);
  g.depth = s.get_int("depth", g.depth);
  g.epochs = s.get_int("epochs", g.epochs);
  g.batch_size = s.get_int("batch_size", g.batch_size);
  g.lr = s.get_double("lr", g.lr);
  s.finish();

  expect_positive(g.base_channels, "generator.base_channels");
  expect_positive(g.depth, "generator.depth");
  check<ConfigError>(g.epochs >= 0, "generator.epochs must be >= 0, got ", g.epochs);
  expect_positive(g.batch_size, "generator.batch_size");
  check<ConfigError>(g.lr > 0.0, "generator.lr must be positive, got ", g.lr);
  return g;
}

PacketSection parse_packet(const ordered_json& obj) {
  Section s(obj, "packet");
  PacketSection p;
  p.pad = s.get_double("pad", p.pad);
  p.nodes = s.get_int("nodes", p.nodes);
  p.labels = s.get_int_list("labels", p.labels);
  p.save_dumps = s.get_bool("save_dumps", p.save_dumps);
  p.mc_samples = s.get_int("mc_samples", p.mc_samples);
  s.finish();

  expect_nonnegative(p.pad, "packet.pad");
  check<ConfigError>(p.nodes >= 64, "packet.nodes must be >= 64, got ", p.nodes);
  for (int64_t l : p.labels)
    check<ConfigError>(l >= 0, "packet.labels entries must be >= 0, got ", l);
  check<ConfigError>(p.mc_samples >= 0, "packet.mc_samples must be >= 0, got ", p.mc_samples);
  return p;
}

SpectralSection parse_spectral(const ordered_json& obj) {
  Section s(obj, "spectral");
  SpectralSection sp;
  sp.r0 = s.get_int("r0", sp.r0);
  sp.r1 = s.get_int("r1", sp.r1);
  sp.c0 = s.get_int("c0", sp.c0);
  sp.c1 = s.get_int("c1", sp.c1);
  sp.grayscale = s.get_bool("grayscale", sp.grayscale);
  sp.epsilon = s.get_double("epsilon", sp.epsilon);
  sp.probe_count = s.get_int("probe_count", sp.probe_count);
  s.finish();

  check<ConfigError>(sp.r0 >= 0 && sp.c0 >= 0 && sp.r1 > sp.r0 && sp.c1 > sp.c0,
                     "spectral window must satisfy 0 <= r0 < r1 and 0 <= c0 < c1");
  check<ConfigError>(sp.epsilon > 0.0, "spectral.epsilon must be positive, got ", sp.epsilon);
  expect_positive(sp.probe_count, "spectral.probe_count");
  return sp;
}

const std::set<std::string>& experiment_names() {
  static const std::set<std::string> names = {"train",           "attack", "augment",
                                              "gen-conjugates",  "train-generator",
                                              "ifa",             "uncertainty",
                                              "spectra"};
  return names;
}

// out_dir is deliberately absent: it names a run location, not an experiment
// parameter, and reports must not depend on where they are written.
ordered_json canonical_form(const ExperimentConfig& c) {
  ordered_json doc;
  doc["experiment"] = c.experiment;
  doc["seed"] = c.seed;
  ordered_json ds;
  ds["kind"] = dataset_kind_name(c.dataset.kind);
  ds["train_count"] = c.dataset.train_count;
  ds["test_count"] = c.dataset.test_count;
  ds["dimension"] = c.dataset.dimension;
  ds["noise"] = c.dataset.noise;
  ds["pixel_noise"] = c.dataset.pixel_noise;
  ds["stripe_amplitude"] = c.dataset.stripe_amplitude;
  ds["stripe_frequency"] = c.dataset.stripe_frequency;
  ds["via_idx"] = c.dataset.via_idx;
  ds["train_images"] = c.dataset.train_images;
  ds["train_labels"] = c.dataset.train_labels;
  ds["test_images"] = c.dataset.test_images;
  ds["test_labels"] = c.dataset.test_labels;
  ds["train_bin"] = c.dataset.train_bin;
  ds["test_bin"] = c.dataset.test_bin;
  doc["dataset"] = std::move(ds);
  ordered_json mo;
  mo["kind"] = c.model.kind == ModelKind::mlp ? "mlp" : "convnet";
  mo["hidden"] = c.model.hidden;
  mo["activation"] = c.model.activation;
  mo["c1"] = c.model.c1;
  mo["c2"] = c.model.c2;
  doc["model"] = std::move(mo);
  ordered_json tr;
  tr["epochs"] = c.train.epochs;
  tr["batch_size"] = c.train.batch_size;
  tr["lr"] = c.train.lr;
  tr["optimizer"] = c.train.optimizer;
  tr["beta1"] = c.train.beta1;
  tr["beta2"] = c.train.beta2;
  tr["adam_eps"] = c.train.adam_eps;
  tr["checkpoint_epochs"] = c.train.checkpoint_epochs;
  doc["train"] = std::move(tr);
  ordered_json at;
  at["epsilon"] = c.attack.epsilon;
  at["alpha"] = c.attack.alpha;
  at["steps"] = c.attack.steps;
  at["target"] = c.attack.target;
  at["target_class"] = c.attack.target_class;
  doc["attack"] = std::move(at);
  ordered_json cj;
  cj["epsilon"] = c.conjugate.epsilon;
  cj["steps"] = c.conjugate.steps;
  cj["record_steps"] = c.conjugate.record_steps;
  doc["conjugate"] = std::move(cj);
  ordered_json ge;
  ge["base_channels"] = c.generator.base_channels;
  ge["depth"] = c.generator.depth;
  ge["epochs"] = c.generator.epochs;
  ge["batch_size"] = c.generator.batch_size;
  ge["lr"] = c.generator.lr;
  doc["generator"] = std::move(ge);
  ordered_json pk;
  pk["pad"] = c.packet.pad;
  pk["nodes"] = c.packet.nodes;
  pk["labels"] = c.packet.labels;
  pk["save_dumps"] = c.packet.save_dumps;
  pk["mc_samples"] = c.packet.mc_samples;
  doc["packet"] = std::move(pk);
  ordered_json sp;
  sp["r0"] = c.spectral.r0;
  sp["r1"] = c.spectral.r1;
  sp["c0"] = c.spectral.c0;
  sp["c1"] = c.spectral.c1;
  sp["grayscale"] = c.spectral.grayscale;
  sp["epsilon"] = c.spectral.epsilon;
  sp["probe_count"] = c.spectral.probe_count;
  doc["spectral"] = std::move(sp);
  doc["checkpoint"] = c.checkpoint;
  doc["conjugates"] = c.conjugates;
  return doc;
}

}  // namespace

const char* dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::digits: return "digits";
    case DatasetKind::digits_striped: return "digits-striped";
    case DatasetKind::blobs: return "blobs";
    case DatasetKind::two_moons: return "two-moons";
    case DatasetKind::idx: return "idx";
    case DatasetKind::cifar10: return "cifar10";
  }
  throw InvariantError("unreachable dataset kind");
}

ExperimentConfig parse_config(const nlohmann::ordered_json& doc,
                              const std::string& experiment_name) {
  check<ConfigError>(experiment_names().count(experiment_name) != 0,
                     "unknown experiment \"", experiment_name, "\"");
  Section top(doc, "config");
  ExperimentConfig cfg;
  cfg.experiment = experiment_name;
  const std::string declared = top.get_string("experiment", experiment_name);
  check<ConfigError>(declared == experiment_name, "config declares experiment \"", declared,
                     "\" but the ", experiment_name, " command was invoked");
  cfg.seed = top.get_seed("seed");
  cfg.out_dir = top.get_string("out_dir", cfg.out_dir);
  check<ConfigError>(!cfg.out_dir.empty(), "out_dir must not be empty");
  cfg.dataset = parse_dataset(subsection(top, "dataset"));
  cfg.model = parse_model(subsection(top, "model"));
  cfg.train = parse_train(subsection(top, "train"), "train");
  cfg.attack = parse_attack(subsection(top, "attack"));
  cfg.conjugate = parse_conjugate(subsection(top, "conjugate"));
  cfg.generator = parse_generator(subsection(top, "generator"));
  cfg.packet = parse_packet(subsection(top, "packet"));
  cfg.spectral = parse_spectral(subsection(top, "spectral"));
  cfg.checkpoint = top.get_string("checkpoint", "");
  cfg.conjugates = top.get_string("conjugates", "");
  top.finish();

  cfg.canonical = canonical_form(cfg);
  return cfg;
}

nlohmann::ordered_json load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check<ConfigError>(in.good(), "cannot read config file ", path);
  std::ostringstream buf;
  buf << in.rdbuf();
  ordered_json doc = ordered_json::parse(buf.str(), nullptr, false);
  check<ConfigError>(!doc.is_discarded(), "config file ", path, " is not valid JSON");
  check<ConfigError>(doc.is_object(), "config file ", path, " must hold a JSON object");
  return doc;
}

void apply_override(nlohmann::ordered_json& doc, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  check<ConfigError>(eq != std::string::npos && eq > 0, "override must look like key=value, got \"",
                     assignment, "\"");
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    check<ConfigError>(!part.empty(), "override key \"", key, "\" has an empty path segment");
    parts.push_back(part);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }

  ordered_json parsed = ordered_json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;  // bare words stay strings

  ordered_json* node = &doc;
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    ordered_json& next = (*node)[parts[i]];
    if (next.is_null()) next = ordered_json::object();
    check<ConfigError>(next.is_object(), "override path \"", key, "\" walks through \"", parts[i],
                       "\", which is not an object");
    node = &next;
  }
  (*node)[parts.back()] = std::move(parsed);
}

}  // namespace nplab
