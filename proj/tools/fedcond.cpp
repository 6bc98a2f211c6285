// fedcond: run, compare, sweep and calibrate from the command line.

#include "fedcond/fedcond.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace {

using fedcond::RunConfig;
using Overrides = std::vector<std::pair<std::string, std::string>>;

// Leftover `--key value` / `--key=value` tokens become config overrides.
Overrides collect_overrides(const std::vector<std::string>& extras) {
  Overrides out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string tok = extras[i];
    if (tok.rfind("--", 0) != 0) throw fedcond::ConfigError("unexpected argument '" + tok + "'");
    tok = tok.substr(2);
    std::string value;
    if (auto eq = tok.find('='); eq != std::string::npos) {
      value = tok.substr(eq + 1);
      tok = tok.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw fedcond::ConfigError("flag --" + tok + " needs a value");
      value = extras[++i];
    }
    for (char& c : tok)
      if (c == '-') c = '_';
    out.emplace_back(tok, value);
  }
  return out;
}

struct Common {
  std::optional<std::string> config;
  std::optional<std::string> seed;
  std::optional<std::string> mode;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c, bool with_mode) {
  cmd->add_option("--config", c.config, "flat key = value config file");
  cmd->add_option("--seed", c.seed, "master seed");
  if (with_mode) cmd->add_option("--mode", c.mode, "fedcond | async-broadcast | fedavg | fedprox");
  cmd->add_option("--out", c.out, "output directory");
  cmd->allow_extras();
}

RunConfig resolve(const Common& c, const std::vector<std::string>& extras) {
  Overrides ov;
  if (c.seed) ov.emplace_back("seed", *c.seed);
  if (c.mode) ov.emplace_back("mode", *c.mode);
  for (auto& kv : collect_overrides(extras)) ov.push_back(std::move(kv));
  return fedcond::load_config(c.config, ov);
}

void print_brief(const fedcond::RunResult& r) {
  std::cout << fedcond::to_string(r.mode) << ": aggregations=" << r.aggregations << " end_time=" << r.end_time;
  if (!r.records.empty()) {
    const auto& last = r.records.back();
    std::cout << " final_mean=" << last.mean_score << " var=" << last.variance << " uplink=" << last.uplink_bytes
              << " downlink=" << last.downlink_bytes;
  }
  std::cout << '\n';
}

int calibrate(std::size_t evaluations, double mean, std::size_t trials, double before, double after, std::size_t batch,
              std::uint64_t seed, const std::optional<std::string>& out) {
  fedcond::DetectorSettings settings;
  const auto fp = fedcond::false_positive_study(evaluations, mean, batch, 20, settings, seed);
  const auto pw = fedcond::power_study(trials, before, after, batch, 20, 2, settings, seed);
  fedcond::ordered_json j;
  j["false_positive"] = {{"evaluations", evaluations}, {"mean", mean}, {"batch", batch}, {"tests", fp.tests}, {"fires", fp.fires}, {"rate", fp.rate()}};
  j["power"] = {{"trials", trials}, {"before", before}, {"after", after}, {"within", 2}, {"detected", pw.detected}, {"rate", pw.rate()}};
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (out) fedcond::write_atomic(std::filesystem::path(*out) / "calibration.json", text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asynchronous federated learning simulator with drift-aware local regularization"};
  app.require_subcommand(1);

  Common run_opts, cmp_opts, sweep_opts;
  auto* run_cmd = app.add_subcommand("run", "single experiment");
  add_common(run_cmd, run_opts, true);
  auto* cmp_cmd = app.add_subcommand("compare", "all four modes on one scenario");
  add_common(cmp_cmd, cmp_opts, false);
  auto* sweep_cmd = app.add_subcommand("sweep", "gamma or drift_fraction grid");
  add_common(sweep_cmd, sweep_opts, true);
  std::string sweep_param;
  std::vector<std::string> sweep_values;
  sweep_cmd->add_option("--param", sweep_param)->required()->check(CLI::IsMember({"gamma", "drift_fraction"}));
  sweep_cmd->add_option("--values", sweep_values)->required()->delimiter(',');

  auto* cal_cmd = app.add_subcommand("calibrate", "detector false-positive / power study");
  std::size_t cal_evals = 10000, cal_trials = 200, cal_batch = 20;
  double cal_mean = 0.3, cal_before = 0.1, cal_after = 0.6;
  std::uint64_t cal_seed = 1;
  std::optional<std::string> cal_out;
  cal_cmd->add_option("--evaluations", cal_evals);
  cal_cmd->add_option("--mean", cal_mean);
  cal_cmd->add_option("--trials", cal_trials);
  cal_cmd->add_option("--before", cal_before);
  cal_cmd->add_option("--after", cal_after);
  cal_cmd->add_option("--batch", cal_batch, "predictions per evaluation");
  cal_cmd->add_option("--seed", cal_seed);
  cal_cmd->add_option("--out", cal_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run_cmd) {
      const RunConfig cfg = resolve(run_opts, run_cmd->remaining());
      const std::vector<fedcond::RunResult> runs{fedcond::run(cfg)};
      fedcond::emit(runs, cfg, run_opts.out);
      print_brief(runs.front());
    } else if (*cmp_cmd) {
      const RunConfig cfg = resolve(cmp_opts, cmp_cmd->remaining());
      const auto runs = fedcond::run_compare(cfg);
      fedcond::emit(runs, cfg, cmp_opts.out);
      for (const auto& r : runs) print_brief(r);
    } else if (*sweep_cmd) {
      const RunConfig cfg = resolve(sweep_opts, sweep_cmd->remaining());
      for (auto& p : fedcond::run_sweep(cfg, sweep_param, sweep_values)) {
        const std::vector<fedcond::RunResult> runs{std::move(p.result)};
        fedcond::emit(runs, p.config, std::filesystem::path(sweep_opts.out) / (p.key + "_" + p.value));
        std::cout << p.key << '=' << p.value << "  ";
        print_brief(runs.front());
      }
    } else if (*cal_cmd) {
      return calibrate(cal_evals, cal_mean, cal_trials, cal_before, cal_after, cal_batch, cal_seed, cal_out);
    }
  } catch (const fedcond::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fedcond::ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
