#include "nplab/report.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "nplab/common.hpp"
#include "nplab/hash.hpp"

namespace nplab {

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  check<DataError>(out.good(), "cannot open ", path.string(), " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  check<DataError>(out.good(), "failed writing ", path.string());
}

// Scalar JSON value -> CSV cell.  Strings are written raw (the vocabulary
// used in tables has no commas/quotes/newlines); everything else uses the
// JSON serialization, which for doubles is shortest-round-trip and therefore
// stable across runs.
std::string csv_cell(const nlohmann::ordered_json& v) {
  check<InvariantError>(!v.is_structured(), "table cell must be scalar, got ", v.dump());
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    check<InvariantError>(s.find_first_of(",\"\n\r") == std::string::npos,
                          "table cell contains CSV delimiter: ", s);
    return s;
  }
  return v.dump();
}

}  // namespace

MetricsReport make_report(const std::string& experiment, uint64_t seed,
                          const nlohmann::ordered_json& canonical_config) {
  MetricsReport rep;
  rep.root["schema"] = "nplab-report-v1";
  rep.root["experiment"] = experiment;
  rep.root["seed"] = seed;
  rep.root["config_hash"] = "fnv1a:" + hash_hex(fnv1a64(canonical_config.dump()));
  rep.root["config"] = canonical_config;
  rep.root["timestamps"] = {{"started", ""}, {"finished", ""}};
  rep.root["stages"] = nlohmann::ordered_json::array();
  rep.root["tables"] = nlohmann::ordered_json::object();
  rep.root["series"] = nlohmann::ordered_json::object();
  return rep;
}

nlohmann::ordered_json& add_stage(MetricsReport& rep, const std::string& name) {
  auto& stages = rep.root["stages"];
  stages.push_back(nlohmann::ordered_json{{"stage", name}});
  return stages.back();
}

void add_table(MetricsReport& rep, const std::string& name,
               const std::vector<std::string>& columns, nlohmann::ordered_json rows) {
  check<InvariantError>(!columns.empty(), "table ", name, " needs at least one column");
  check<InvariantError>(rows.is_array(), "table ", name, " rows must be an array");
  for (const auto& row : rows) {
    check<InvariantError>(row.is_array() && row.size() == columns.size(), "table ", name,
                          " row width must be ", columns.size(), ", got ", row.dump());
  }
  check<InvariantError>(!rep.root["tables"].contains(name), "duplicate table ", name);
  rep.root["tables"][name] = {{"columns", columns}, {"rows", std::move(rows)}};
}

void add_series(MetricsReport& rep, const std::string& name,
                const std::vector<std::pair<double, double>>& points) {
  check<InvariantError>(!rep.root["series"].contains(name), "duplicate series ", name);
  auto arr = nlohmann::ordered_json::array();
  for (const auto& [x, y] : points) arr.push_back(nlohmann::ordered_json::array({x, y}));
  rep.root["series"][name] = std::move(arr);
}

void set_timestamps(MetricsReport& rep, const std::string& started,
                    const std::string& finished) {
  rep.root["timestamps"] = {{"started", started}, {"finished", finished}};
}

nlohmann::ordered_json determinism_view(const nlohmann::ordered_json& root) {
  nlohmann::ordered_json view = root;
  view.erase("timestamps");
  return view;
}

void emit_derived_files(const nlohmann::ordered_json& root, const std::filesystem::path& dir) {
  check<DataError>(root.contains("tables") && root.contains("series"),
                   "report document lacks tables/series sections");
  std::filesystem::create_directories(dir / "tables");
  std::filesystem::create_directories(dir / "series");
  for (const auto& [name, table] : root.at("tables").items()) {
    std::string text;
    const auto& columns = table.at("columns");
    for (size_t i = 0; i < columns.size(); ++i) {
      if (i) text += ',';
      text += columns[i].get<std::string>();
    }
    text += '\n';
    for (const auto& row : table.at("rows")) {
      for (size_t i = 0; i < row.size(); ++i) {
        if (i) text += ',';
        text += csv_cell(row[i]);
      }
      text += '\n';
    }
    write_text_file(dir / "tables" / (name + ".csv"), text);
  }
  for (const auto& [name, points] : root.at("series").items()) {
    std::string text = "x,y\n";
    for (const auto& point : points) {
      check<DataError>(point.is_array() && point.size() == 2, "series ", name,
                       " point must be [x, y], got ", point.dump());
      text += point[0].dump();
      text += ',';
      text += point[1].dump();
      text += '\n';
    }
    write_text_file(dir / "series" / (name + ".csv"), text);
  }
}

void emit_report(const MetricsReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "report.json", rep.root.dump(2) + "\n");
  emit_derived_files(rep.root, dir);
}

std::string iso8601_utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm_utc.tm_year + 1900,
                tm_utc.tm_mon + 1, tm_utc.tm_mday, tm_utc.tm_hour, tm_utc.tm_min, tm_utc.tm_sec);
  return std::string(buf);
}

}  // namespace nplab
