#include "nplab/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nplab/common.hpp"
#include "nplab/config.hpp"
#include "nplab/harness.hpp"
#include "nplab/report.hpp"

namespace nplab {

namespace fs = std::filesystem;

namespace {

using ordered_json = nlohmann::ordered_json;

struct CommonOpts {
  std::string config_path;
  uint64_t seed = 0;
  std::string out;
  std::vector<std::string> overrides;
};

void attach_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON experiment config file");
  cmd->add_option("--seed", o.seed, "RNG seed (overrides the config's \"seed\")");
  cmd->add_option("--out", o.out, "output directory (overrides the config's \"out_dir\")");
  cmd->add_option("--override", o.overrides,
                  "dotted key=value config override, e.g. train.lr=0.01 (repeatable)");
}

int do_experiment(const std::string& name, const CLI::App& cmd, const CommonOpts& o) {
  ordered_json doc =
      o.config_path.empty() ? ordered_json::object() : load_config_file(o.config_path);
  for (const auto& assignment : o.overrides) apply_override(doc, assignment);
  if (cmd.count("--seed") > 0) doc["seed"] = o.seed;
  if (cmd.count("--out") > 0) doc["out_dir"] = o.out;

  const ExperimentConfig cfg = parse_config(doc, name);
  const MetricsReport rep = run_experiment(cfg);
  std::printf("%s: seed %llu, config %s, report written to %s\n", name.c_str(),
              static_cast<unsigned long long>(cfg.seed),
              rep.root.at("config_hash").get<std::string>().c_str(),
              (fs::path(cfg.out_dir) / "report.json").string().c_str());
  return 0;
}

int do_report(const std::string& out) {
  const fs::path dir = out;
  const fs::path path = dir / "report.json";
  std::ifstream in(path, std::ios::binary);
  check<DataError>(in.good(), "cannot read ", path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const ordered_json root = ordered_json::parse(buf.str(), nullptr, false);
  check<DataError>(!root.is_discarded(), path.string(), " is not valid JSON");
  emit_derived_files(root, dir);
  std::printf("report: re-derived tables and series under %s\n", dir.string().c_str());
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Desk-scale laboratory for gradient attacks, conjugate augmentation, "
               "loss-surface packets, and spectral diagnostics"};
  app.require_subcommand(1);

  CommonOpts o;
  const std::pair<const char*, const char*> experiments[] = {
      {"train", "Train a classifier and checkpoint it"},
      {"attack", "Evaluate PGD robustness of a classifier checkpoint"},
      {"augment", "Accuracy across conjugate augmentation budgets"},
      {"gen-conjugates", "Build and persist a conjugate displacement set"},
      {"train-generator", "Fit the conjugate generator on a saved displacement set"},
      {"ifa", "Iterative augmentation pipeline: classifier, conjugates, generator, composed eval"},
      {"uncertainty", "Packet sigma_x * sigma_p study over training checkpoints"},
      {"spectra", "High-frequency ratio vs accuracy over training checkpoints"},
  };
  std::map<std::string, CLI::App*> cmds;
  for (const auto& [name, desc] : experiments) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    attach_common(cmd, o);
    cmds[name] = cmd;
  }
  std::string report_out;
  CLI::App* report_cmd =
      app.add_subcommand("report", "Re-derive CSV tables and series from an existing report.json");
  report_cmd->add_option("--out", report_out, "run directory holding report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse error
    return code == 0 ? 0 : 1;      // flag mistakes are config errors
  }

  try {
    if (report_cmd->parsed()) return do_report(report_out);
    for (const auto& [name, cmd] : cmds)
      if (cmd->parsed()) return do_experiment(name, *cmd, o);
    throw ConfigError("no subcommand selected");
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const InvariantError& e) {
    std::fprintf(stderr, "invariant violation: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
}

}  // namespace nplab
