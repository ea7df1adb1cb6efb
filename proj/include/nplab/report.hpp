#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace nplab {

// Experiment output document.  The JSON root carries, in fixed insertion
// order: schema, experiment, seed, config_hash, config (the fully defaulted
// form actually used), timestamps, stages (array, one object per stage),
// tables (named column/row sets), series (named x,y point lists).  Every
// emitted file is a pure function of this root, so re-emission is
// byte-identical and two same-seed runs differ only in "timestamps".
struct MetricsReport {
  nlohmann::ordered_json root;
};

MetricsReport make_report(const std::string& experiment, uint64_t seed,
                          const nlohmann::ordered_json& canonical_config);

// Appends {"stage": name} and returns it for the caller to fill.
nlohmann::ordered_json& add_stage(MetricsReport& rep, const std::string& name);

// rows: array of arrays, one inner array per row, cells scalar.
void add_table(MetricsReport& rep, const std::string& name,
               const std::vector<std::string>& columns, nlohmann::ordered_json rows);

void add_series(MetricsReport& rep, const std::string& name,
                const std::vector<std::pair<double, double>>& points);

void set_timestamps(MetricsReport& rep, const std::string& started,
                    const std::string& finished);

// Copy with the timestamps object removed; the determinism contract compares
// these views.
nlohmann::ordered_json determinism_view(const nlohmann::ordered_json& root);

// report.json + tables/<name>.csv + series/<name>.csv under dir.
void emit_report(const MetricsReport& rep, const std::filesystem::path& dir);

// The CSV/series half of emit_report, usable on a reloaded report.json.
void emit_derived_files(const nlohmann::ordered_json& root, const std::filesystem::path& dir);

std::string iso8601_utc_now();

}  // namespace nplab
