#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fspo/config.hpp"
#include "fspo/io.hpp"
#include "fspo/theory.hpp"
#include "fspo/verify.hpp"

namespace fs = std::filesystem;
using namespace fspo;

namespace {

constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  return out;
}

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> bin_size;
  std::optional<int> min_length;
  std::string log;
  std::string suite = "all";
  int seeds = 100;
  double sigma = 0.0304;
  double xi_rloo = std::log(1.667);
  double xi_gspo = std::log1p(4e-4);
  double z = 1.0;
  std::string lengths = "1:512";
  double display_alpha = 0.1;
};

RunConfig resolve_config(const Options& o, bool required) {
  RunConfig cfg;
  if (!o.config.empty())
    cfg = load_run_config(o.config);
  else if (required)
    throw UsageError("--config is required");
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.bin_size) cfg.bin_size = *o.bin_size;
  if (o.min_length) cfg.min_length = *o.min_length;
  if (cfg.bin_size < 1) throw ConfigError("bin size must be >= 1");
  if (cfg.min_length < 0) throw ConfigError("min length must be >= 0");
  return cfg;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve_config(o, true);
  const auto hash = config_hash(cfg);
  const TrainHistory history = train(cfg.train);

  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  {
    auto out = open_output(dir / "metrics.csv");
    write_metrics_csv(out, history.metrics, hash);
  }
  {
    auto out = open_output(dir / "records.jsonl");
    write_records(out, history.records, hash);
  }
  save_policy((dir / "policy.txt").string(), history.final_policy, hash);

  // Smoothed reward for display only.
  double smoothed = history.metrics.front().mean_reward;
  for (const auto& m : history.metrics) smoothed = (1 - o.display_alpha) * smoothed + o.display_alpha * m.mean_reward;
  const auto& last = history.metrics.back();
  std::cout << "method=" << method_name(cfg.train.clip.method) << " steps=" << history.metrics.size()
            << " final_mean_reward=" << format_double(history.final_mean_reward())
            << " smoothed_reward=" << format_double(smoothed) << " clip_fraction=" << format_double(last.clip_fraction)
            << " sigma_hat=" << format_double(last.sigma_hat) << " out=" << cfg.out_dir << '\n';
  return 0;
}

int cmd_diagnose(const Options& o) {
  const RunConfig cfg = resolve_config(o, false);
  std::ifstream in(o.log);
  if (!in) throw ConfigError("cannot open log '" + o.log + "'");
  const auto records = read_records(in);
  if (records.empty()) throw ConfigError("log '" + o.log + "' has no records");

  std::ostringstream hash_src;
  hash_src << o.log << '\n' << cfg.bin_size << '\n' << cfg.min_length;
  const auto hash = fnv1a64(hash_src.str());
  const FairnessReport report = fairness_report(records, cfg.bin_size, cfg.min_length);
  const std::string json = fairness_report_json(report, hash);

  const fs::path dir(o.out.empty() ? cfg.out_dir : o.out);
  fs::create_directories(dir);
  {
    auto out = open_output(dir / "fairness.json");
    out << json << '\n';
  }
  {
    auto out = open_output(dir / "fairness.csv");
    write_fairness_csv(out, report, hash);
  }
  std::cout << json << '\n';
  return 0;
}

std::vector<int> parse_lengths(const std::string& text) {
  std::vector<int> out;
  const auto colon = text.find(':');
  try {
    if (colon != std::string::npos) {
      const int lo = std::stoi(text.substr(0, colon)), hi = std::stoi(text.substr(colon + 1));
      for (int L = lo; L <= hi; ++L) out.push_back(L);
    } else {
      std::stringstream ss(text);
      for (std::string cell; std::getline(ss, cell, ',');) out.push_back(std::stoi(cell));
    }
  } catch (const std::exception&) {
    throw ConfigError("bad length grid '" + text + "'");
  }
  if (out.empty()) throw ConfigError("length grid is empty");
  for (int L : out)
    if (L < 1) throw ConfigError("lengths must be >= 1");
  return out;
}

int cmd_theory(const Options& o) {
  if (!(o.sigma > 0.0) || !std::isfinite(o.sigma)) throw ConfigError("sigma must be positive");
  if (!(o.z > 0.0)) throw ConfigError("z must be positive");
  GaussianModel model;
  model.sigma = o.sigma;
  const auto grid = parse_lengths(o.lengths);

  std::ostringstream hash_src;
  hash_src << "sigma=" << format_double(o.sigma) << " xi_rloo=" << format_double(o.xi_rloo)
           << " xi_gspo=" << format_double(o.xi_gspo) << " z=" << format_double(o.z) << " L=" << o.lengths;
  TheoryTable table;
  table.header = header_line(fnv1a64(hash_src.str()));
  const double c_fspo = clip_prob_fspo(o.z);
  for (int L : grid)
    table.rows.push_back({L, clip_prob_rloo(L, o.xi_rloo, model), clip_prob_gspo(L, o.xi_gspo, model), c_fspo});
  const std::string csv = theory_csv(table);
  if (o.out.empty()) {
    std::cout << csv;
  } else {
    fs::create_directories(o.out);
    auto out = open_output(fs::path(o.out) / "theory.csv");
    out << csv;
  }
  return 0;
}

int cmd_verify(const Options& o) {
  std::vector<std::string> suites;
  if (o.suite == "all") {
    suites = suite_names();
  } else {
    const auto& names = suite_names();
    if (std::find(names.begin(), names.end(), o.suite) == names.end())
      throw UsageError("unknown suite '" + o.suite + "'");
    suites = {o.suite};
  }
  if (o.seeds < 1) throw UsageError("--seeds must be >= 1");
  const std::uint64_t base = o.seed.value_or(42);
  long failures = 0;
  for (const auto& name : suites) {
    const auto r = run_suite(name, o.seeds, base);
    failures += r.failures;
    std::cout << r.to_json() << '\n';
  }
  return failures == 0 ? 0 : kExitDomain;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FSPO length-fairness laboratory", "fspo-lab"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  Options o;

  auto* train_cmd = app.add_subcommand("train", "Run the toy trainer and write metrics, records and the final policy");
  train_cmd->add_option("--config", o.config, "Run config file")->required();
  train_cmd->add_option("--out", o.out, "Output directory (overrides out_dir)");
  train_cmd->add_option("--seed", o.seed, "Top-level seed (overrides config)");

  auto* diag_cmd = app.add_subcommand("diagnose", "Clip fraction by length bin and LRE from a record log");
  diag_cmd->add_option("log", o.log, "Record log (one JSON object per line)")->required();
  diag_cmd->add_option("--config", o.config, "Run config supplying bin_size and min_length defaults");
  diag_cmd->add_option("--out", o.out, "Output directory");
  diag_cmd->add_option("--bin-size", o.bin_size, "Length bin width");
  diag_cmd->add_option("--min-length", o.min_length, "Exclude records shorter than this");

  auto* theory_cmd = app.add_subcommand("theory", "Gaussian-model clip probability curves as CSV");
  theory_cmd->add_option("--sigma", o.sigma, "Per-token log-ratio scale")->capture_default_str();
  theory_cmd->add_option("--xi-rloo", o.xi_rloo, "RLOO log threshold")->capture_default_str();
  theory_cmd->add_option("--xi-gspo", o.xi_gspo, "GSPO per-token log threshold")->capture_default_str();
  theory_cmd->add_option("--z", o.z, "FSPO band width in standard deviations")->capture_default_str();
  theory_cmd->add_option("--lengths", o.lengths, "Grid as LO:HI or a comma list")->capture_default_str();
  theory_cmd->add_option("--out", o.out, "Write theory.csv here instead of stdout");

  auto* verify_cmd = app.add_subcommand("verify", "Randomized property suites");
  verify_cmd->add_option("--suite", o.suite, "gradients, theorem1, cosine_lemma, kl_drift, prefix_demo or all")
      ->capture_default_str();
  verify_cmd->add_option("--seeds", o.seeds, "Instances per suite")->capture_default_str();
  verify_cmd->add_option("--seed", o.seed, "Base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(o);
    if (diag_cmd->parsed()) return cmd_diagnose(o);
    if (theory_cmd->parsed()) return cmd_theory(o);
    if (verify_cmd->parsed()) return cmd_verify(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged at step " << e.step << ": " << e.what() << '\n';
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitUsage;
}
