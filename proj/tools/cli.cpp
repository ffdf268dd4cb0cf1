#include "cli.hpp"

#include <chrono>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "bfl/config.hpp"
#include "bfl/data.hpp"
#include "bfl/experiments.hpp"
#include "bfl/federation.hpp"
#include "bfl/gaussian_io.hpp"
#include "bfl/report.hpp"

namespace bfl::cli {

namespace {

struct Common {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* sub, Common& c, bool needs_config) {
  auto* opt = sub->add_option("-c,--config", c.config_path, "experiment config (JSON)");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  sub->add_option("-o,--out-dir", c.out_dir, "output directory (default: config output_dir)");
  sub->add_option("--seed", c.seed, "master seed; replaces the config's seed list");
  sub->add_option("--threads", c.threads, "client worker threads")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  if (c.seed) cfg.seeds = {*c.seed};
  if (c.threads) {
    cfg.federation.threads = *c.threads;
    cfg.federation.parallel = *c.threads > 1;
  }
  if (!c.out_dir.empty()) cfg.output_dir = c.out_dir;
  cfg.validate();
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_posteriors(OutputDir& dir, const ExperimentReport& r, const std::string& tag) {
  if (r.global_posterior) {
    dir.write_raw(fmt::format("posteriors/{}_seed{}_global.bflg", tag, r.seed),
                  to_bytes(*r.global_posterior));
  }
  for (std::size_t k = 0; k < r.local_posteriors.size(); ++k) {
    dir.write_raw(fmt::format("posteriors/{}_seed{}_client{}.bflg", tag, r.seed, k),
                  to_bytes(r.local_posteriors[k]));
  }
}

int cmd_run(const ExperimentConfig& cfg, std::ostream& out) {
  OutputDir dir(cfg.output_dir, make_provenance(cfg), "run");
  std::vector<MetricRow> rows, per_round;
  std::vector<ExperimentReport> reports;
  nlohmann::json timing = nlohmann::json::array();
  for (std::uint64_t seed : cfg.seeds) {
    auto t0 = std::chrono::steady_clock::now();
    reports.push_back(run_experiment(cfg, seed));
    timing.push_back({{"seed", seed}, {"run", "bayesian"}, {"seconds", seconds_since(t0)}});
    if (cfg.fedavg.enabled) {
      t0 = std::chrono::steady_clock::now();
      reports.push_back(fedavg_baseline(cfg, seed));
      timing.push_back({{"seed", seed}, {"run", "fedavg"}, {"seconds", seconds_since(t0)}});
    }
  }
  CsvTable rounds;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : reports) {
    rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    per_round.insert(per_round.end(), r.per_round_rows.begin(), r.per_round_rows.end());
    const CsvTable t = rounds_table(r);
    rounds.header = t.header;
    rounds.rows.insert(rounds.rows.end(), t.rows.begin(), t.rows.end());
    runs.push_back(report_json(r));
    write_posteriors(dir, r, r.method);
  }
  dir.write_csv("metrics.csv", metrics_table(rows));
  dir.write_csv("summary.csv", summary_table(summarize(rows)));
  dir.write_csv("rounds.csv", rounds);
  if (!per_round.empty()) dir.write_csv("metrics_per_round.csv", metrics_table(per_round));
  dir.write_json("report.json", {{"runs", runs}, {"timing", timing}});
  dir.finish();

  for (const auto& s : summarize(rows)) {
    if (s.lambda != "NA" && s.lambda != cfg.personalization.report_lambda.str()) continue;
    out << fmt::format("seed {:>3} {:<6} {:<5} lambda={:<4} acc {:6.2f} +- {:5.2f}  ece {:.4f}  nll {:.4f}\n",
                       s.seed, s.method, s.setting, s.lambda, s.acc_mean, s.acc_std, s.ece_mean,
                       s.nll_mean);
  }
  out << "wrote " << dir.root().string() << "\n";
  return kOk;
}

int cmd_sweep(ExperimentConfig cfg, const std::string& lambdas, std::ostream& out) {
  if (!lambdas.empty()) {
    std::vector<Lambda> grid;
    std::size_t pos = 0;
    while (pos <= lambdas.size()) {
      const std::size_t next = std::min(lambdas.find(',', pos), lambdas.size());
      const std::string tok = lambdas.substr(pos, next - pos);
      try {
        grid.push_back(Lambda::parse(tok));
      } catch (const std::exception& e) {
        throw ConfigError("--lambdas", e.what());
      }
      pos = next + 1;
    }
    cfg.personalization.lambdas = grid;
    cfg.validate();
  }
  OutputDir dir(cfg.output_dir, make_provenance(cfg), "sweep-lambda");
  CsvTable sweep;
  std::vector<MetricRow> rows;
  for (std::uint64_t seed : cfg.seeds) {
    const ExperimentReport r = run_experiment(cfg, seed);
    const auto curve = lambda_curve(r, cfg.personalization.lambdas);
    const CsvTable t = lambda_sweep_table(seed, r.method, curve);
    sweep.header = t.header;
    sweep.rows.insert(sweep.rows.end(), t.rows.begin(), t.rows.end());
    rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    out << fmt::format("seed {} ({})\n{:>6} {:>9} {:>9}\n", seed, r.method, "lambda", "acc_local",
                       "acc_global");
    for (const auto& p : curve) {
      out << fmt::format("{:>6} {:9.2f} {:9.2f}\n", p.lambda, p.local_acc, p.global_acc);
    }
  }
  dir.write_csv("lambda_sweep.csv", sweep);
  dir.write_csv("metrics.csv", metrics_table(rows));
  dir.finish({{"lambda_grid", [&] {
                 std::vector<std::string> g;
                 for (const auto& l : cfg.personalization.lambdas) g.push_back(l.str());
                 return g;
               }()}});
  return kOk;
}

int cmd_compare(const ExperimentConfig& cfg, std::ostream& out) {
  if (cfg.compare.methods.size() < 2) {
    throw ConfigError("compare.methods", "at least two methods are required");
  }
  if (cfg.seeds.size() < 5) throw ConfigError("seeds", "compare-agg needs at least 5 seeds");
  OutputDir dir(cfg.output_dir, make_provenance(cfg), "compare-agg");
  const CompareResult result = run_compare(cfg);
  dir.write_csv("compare_scores.csv", compare_scores_table(result));
  dir.write_csv("pvalues.csv", pvalue_table(result));
  dir.finish();
  for (const auto& row : pvalue_table(result).rows) {
    out << fmt::format("{:<8} vs {:<8} {:<4} p = {}\n", row[0], row[1], row[2], row[3]);
  }
  return kOk;
}

int cmd_incremental(const ExperimentConfig& cfg, std::ostream& out) {
  OutputDir dir(cfg.output_dir, make_provenance(cfg), "incremental");
  std::vector<IncrementalResult> results;
  for (std::uint64_t seed : cfg.seeds) {
    results.push_back(run_incremental(cfg, seed));
    const auto& r = results.back();
    out << fmt::format("seed {} ({}): trade-off point {}\n", seed, r.method,
                       has_tradeoff_point(r) ? "found" : "not found");
    for (const auto& p : r.points) {
      out << fmt::format("  w={:.2f}  acc_a {:6.2f}  acc_b {:6.2f}\n", p.weight,
                         p.task_a.accuracy, p.task_b.accuracy);
    }
  }
  dir.write_csv("incremental.csv", incremental_table(results));
  dir.finish();
  return kOk;
}

int cmd_partition(const ExperimentConfig& cfg, std::ostream& out) {
  OutputDir dir(cfg.output_dir, make_provenance(cfg), "partition");
  for (std::uint64_t seed : cfg.seeds) {
    const auto [train, test] = load_dataset(cfg, seed);
    const FederatedData data = prepare_federated_data(cfg, seed);
    nlohmann::json doc;
    doc["seed"] = seed;
    doc["attempts"] = data.partition.attempts;
    doc["train"] = shard_manifest(train, data.partition.shards);
    std::vector<std::size_t> test_sizes;
    for (const auto& t : data.test_shards) test_sizes.push_back(t.size());
    doc["test_shard_sizes"] = test_sizes;
    dir.write_json(fmt::format("shards_seed{}.json", seed), doc);
    out << fmt::format("seed {}: {} shards, sizes", seed, data.partition.shards.size());
    for (const auto& s : data.partition.shards) out << ' ' << s.size();
    out << "\n";
  }
  dir.finish();
  return kOk;
}

int cmd_validate(const Common& c, int instances, bool fault, std::ostream& out, std::ostream& err) {
  ValidationOptions opt;
  opt.instances = instances;
  opt.seed = c.seed.value_or(0);
  opt.inject_w2b_fault = fault;
  const GeometryValidation v = validate_geometry(opt);
  const nlohmann::json settings = {{"instances", instances},
                                   {"seed", opt.seed},
                                   {"inject_w2b_fault", fault}};
  OutputDir dir(c.out_dir.empty() ? "out" : c.out_dir, make_provenance(settings),
                "validate-geometry");
  dir.write_csv("validation.csv", validation_table(v));
  dir.finish();
  out << fmt::format("{:<34} {:>6} {:>8} {:>12}\n", "property", "result", "checked", "worst");
  for (const auto& r : v.results) {
    out << fmt::format("{:<34} {:>6} {:>8} {:>12.3e}\n", r.name, r.passed ? "PASS" : "FAIL",
                       r.checked, r.worst);
  }
  for (const auto& r : v.results) {
    if (!r.passed) err << "counterexample for " << r.name << ": " << r.counterexample << "\n";
  }
  return v.all_passed() ? kOk : kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated Bayesian learning simulator", "bflsim"};
  app.require_subcommand(1);
  std::string level = "warn";
  app.add_option("--log-level", level, "trace|debug|info|warn|error|off");

  Common run_c, sweep_c, compare_c, inc_c, part_c, val_c;
  auto* run_cmd = app.add_subcommand("run", "train, personalize and evaluate");
  add_common(run_cmd, run_c, true);
  auto* sweep_cmd = app.add_subcommand("sweep-lambda", "local/global trade-off over a lambda grid");
  add_common(sweep_cmd, sweep_c, true);
  std::string lambdas;
  sweep_cmd->add_option("--lambdas", lambdas, "comma-separated grid, e.g. 0,0.5,1,inf");
  auto* compare_cmd = app.add_subcommand("compare-agg", "pairwise Wilcoxon tests across methods");
  add_common(compare_cmd, compare_c, true);
  auto* inc_cmd = app.add_subcommand("incremental", "two-task barycenter sweep");
  add_common(inc_cmd, inc_c, true);
  auto* part_cmd = app.add_subcommand("partition", "dry run: write shard manifests");
  add_common(part_cmd, part_c, true);
  auto* val_cmd = app.add_subcommand("validate-geometry", "closed forms vs brute-force oracles");
  add_common(val_cmd, val_c, false);
  int instances = 100;
  bool fault = false;
  val_cmd->add_option("--instances", instances, "random 1-D instances")->check(CLI::PositiveNumber);
  val_cmd->add_flag("--inject-fault", fault, "test hook: use the EAA variance rule for W2B");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }
  spdlog::set_level(spdlog::level::from_str(level));

  try {
    if (*run_cmd) return cmd_run(resolve(run_c), out);
    if (*sweep_cmd) return cmd_sweep(resolve(sweep_c), lambdas, out);
    if (*compare_cmd) return cmd_compare(resolve(compare_c), out);
    if (*inc_cmd) return cmd_incremental(resolve(inc_c), out);
    if (*part_cmd) return cmd_partition(resolve(part_c), out);
    if (*val_cmd) return cmd_validate(val_c, instances, fault, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ExperimentError& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace bfl::cli
