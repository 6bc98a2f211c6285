#pragma once

// Run output: records.jsonl (one RoundRecord per line), summary.json and
// curves.csv. Files are written to a temporary name and renamed into place.

#include "fedcond/config.hpp"
#include "fedcond/errors.hpp"
#include "fedcond/metrics.hpp"
#include "fedcond/records.hpp"
#include "fedcond/simulation.hpp"
#include "fedcond/text.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

namespace fedcond {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError(path.parent_path().string() + ": " + ec.message());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string() + ": cannot open for writing");
    out << content;
    out.flush();
    if (!out) throw IoError(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string() + ": " + ec.message());
}

inline std::string records_jsonl(std::span<const RoundRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += ordered_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<RoundRecord> parse_records_jsonl(const std::string& text, const std::string& source = "records.jsonl") {
  std::vector<RoundRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(ordered_json::parse(line).get<RoundRecord>());
    } catch (const std::exception& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return out;
}

inline std::vector<RoundRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_records_jsonl(ss.str(), path.string());
}

inline std::string curves_csv(std::span<const RoundRecord> records) {
  std::string out = "time,mode,mean_score,variance,uplink_bytes,downlink_bytes\n";
  for (const auto& r : records) {
    out += detail::format_double(r.simulated_time) + ',' + std::string(to_string(r.mode)) + ',' + detail::format_double(r.mean_score) + ',' +
           detail::format_double(r.variance) + ',' + std::to_string(r.uplink_bytes) + ',' + std::to_string(r.downlink_bytes) + '\n';
  }
  return out;
}

inline ordered_json optional_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

inline ordered_json fairness_json(const FairnessSummary& f) {
  return ordered_json{{"top20_avg", optional_json(f.top20_avg)},       {"top20_var", optional_json(f.top20_var)},
                      {"bottom20_avg", optional_json(f.bottom20_avg)}, {"bottom20_var", optional_json(f.bottom20_var)},
                      {"all_avg", f.all_avg},                          {"all_var", f.all_var},
                      {"drift_devices_var", optional_json(f.drift_devices_var)}};
}

inline ordered_json run_summary(const RunResult& r, const std::optional<double>& target_score) {
  const FairnessSummary fair = fairness_summary(r.records, r.drift_devices);
  ordered_json j;
  j["mode"] = std::string(to_string(r.mode));
  j["metric"] = std::string(to_string(r.metric));
  j["orientation"] = "larger-is-worse";
  j["records"] = r.records.size();
  j["aggregations"] = r.aggregations;
  j["rejected_updates"] = r.rejected_updates;
  j["dispatches"] = r.dispatches;
  j["end_time"] = r.end_time;
  j["initial_mean_score"] = r.initial_mean_score;
  j["final_mean_score"] = r.records.empty() ? ordered_json(nullptr) : ordered_json(r.records.back().mean_score);
  j["final_variance"] = r.records.empty() ? ordered_json(nullptr) : ordered_json(r.records.back().variance);
  j["uplink_bytes"] = r.uplink_bytes;
  j["downlink_bytes"] = r.downlink_bytes;
  j["model_bytes"] = r.model_bytes;
  j["final_ledger"] = r.final_ledger;
  j["drift_devices"] = r.drift_devices;
  j["drift_onset_time"] = optional_json(r.drift_onset_time);
  j["fairness"] = fairness_json(fair);

  ordered_json natural;
  natural["metric"] = std::string(natural_name(r.metric));
  const auto nat = [&](const std::optional<double>& v) {
    return v ? ordered_json(natural_value(r.metric, *v)) : ordered_json(nullptr);
  };
  natural["all_avg"] = r.records.empty() ? ordered_json(nullptr) : ordered_json(natural_value(r.metric, fair.all_avg));
  natural["top20_avg"] = nat(fair.top20_avg);
  natural["bottom20_avg"] = nat(fair.bottom20_avg);
  j["natural"] = natural;

  if (target_score) {
    const auto reached = bytes_to_target(r.records, *target_score);
    ordered_json t{{"target", *target_score}};
    if (reached) {
      t["reached"] = true;
      t["uplink_bytes"] = reached->uplink;
      t["downlink_bytes"] = reached->downlink;
      t["record_index"] = reached->record_index;
    } else {
      t["reached"] = false;
    }
    j["bytes_to_target"] = t;
  }
  return j;
}

inline std::string summary_json(std::span<const RunResult> runs, const RunConfig& cfg) {
  ordered_json j;
  ordered_json config = ordered_json::object();
  const std::string text = emit_config(cfg);
  for (const auto& line : detail::split(text, '\n')) {
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) continue;
    config[std::string(detail::trim(line.substr(0, eq)))] = std::string(detail::trim(line.substr(eq + 1)));
  }
  j["config"] = config;
  ordered_json arr = ordered_json::array();
  for (const auto& r : runs) arr.push_back(run_summary(r, cfg.target_score));
  j["runs"] = arr;
  return j.dump(2) + "\n";
}

/// Writes records.jsonl, summary.json and curves.csv for one or more runs.
inline void emit(std::span<const RunResult> runs, const RunConfig& cfg, const std::filesystem::path& dir) {
  std::vector<RoundRecord> all;
  for (const auto& r : runs) all.insert(all.end(), r.records.begin(), r.records.end());
  write_atomic(dir / "records.jsonl", records_jsonl(all));
  write_atomic(dir / "summary.json", summary_json(runs, cfg));
  write_atomic(dir / "curves.csv", curves_csv(all));
}

}  // namespace fedcond
