#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dagode/errors.hpp"
#include "experiment.hpp"

namespace fs = std::filesystem;
using namespace dagode;
using namespace dagode::cli;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kData = 3, kOptimization = 4, kPartial = 5 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  std::optional<std::string> threshold;
  std::optional<std::string> algorithm;
};

void add_common(CLI::App* app, Common& c, bool learner_flags) {
  app->add_option("--config", c.config, "Experiment config file (INI)");
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--out", c.out, "Output directory");
  if (learner_flags) {
    app->add_option("--threads", c.threads, "Worker threads");
    app->add_option("--threshold", c.threshold, "Edge cutoff, or 'auto'");
    app->add_option("--algorithm", c.algorithm, "notears or dagode")->check(CLI::IsMember({"notears", "dagode"}));
  }
}

ExperimentConfig base_config(const Common& c, Task task) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config);
  } else if (c.algorithm) {
    cfg.algorithm = parse_algorithm(*c.algorithm);
    cfg.learner = cfg.algorithm == Algorithm::Notears ? LearnerConfig::notears_defaults()
                                                      : LearnerConfig::dag_ode_defaults();
  }
  if (c.algorithm && parse_algorithm(*c.algorithm) != cfg.algorithm) {
    // switching algorithms on the command line resets learner defaults
    cfg.algorithm = parse_algorithm(*c.algorithm);
    cfg.learner = cfg.algorithm == Algorithm::Notears ? LearnerConfig::notears_defaults()
                                                      : LearnerConfig::dag_ode_defaults();
  }
  cfg.task = task;
  if (c.seed) {
    cfg.generator.seed = *c.seed;
    cfg.learner.seed = *c.seed;
  }
  if (!c.out.empty()) cfg.paths.out = c.out;
  if (c.threshold) {
    if (*c.threshold == "auto") cfg.learner.threshold.reset();
    else {
      try {
        cfg.learner.threshold = std::stod(*c.threshold);
      } catch (const std::exception&) {
        throw ConfigError("--threshold: expected a number or 'auto'");
      }
    }
  }
  if (cfg.source_hash.empty()) {
    // no file: hash the effective configuration instead
    cfg.source_text = config_json(cfg).dump();
    cfg.source_hash = config_hash(cfg.source_text);
  }
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string(), 0);
  out << j.dump(2) << '\n';
}

int cmd_generate(const Common& c, const std::optional<std::string>& type, const std::optional<std::size_t>& d,
                 const std::optional<std::size_t>& n, const std::optional<double>& k) {
  ExperimentConfig cfg = base_config(c, Task::Generate);
  if (type) cfg.generator.type = *type;
  if (d) cfg.generator.d = *d;
  if (n) cfg.generator.n = *n;
  if (k) cfg.generator.k = *k;
  cfg.validate();
  const Dataset data = generate(cfg.generator);
  fs::create_directories(cfg.paths.out);
  const fs::path path = cfg.paths.out / "data.csv";
  write_dataset(path, data);
  std::cout << "wrote " << path.string() << " (" << data.n() << " x " << data.d() << ", "
            << data.truth->num_edges() << " true edges)\n";
  return kOk;
}

int cmd_fit(const Common& c, const std::string& data_flag, const std::string& truth_flag) {
  ExperimentConfig cfg = base_config(c, Task::Fit);
  if (!data_flag.empty()) cfg.paths.data = data_flag;
  if (!truth_flag.empty()) cfg.paths.truth = truth_flag;
  if (c.threads) cfg.learner.threads = *c.threads;
  if (cfg.paths.data.empty()) throw ConfigError("fit needs --data or [paths] data");
  cfg.validate();
  const Dataset data = load_dataset(cfg.paths.data);

  const auto start = std::chrono::steady_clock::now();
  const FitResult fit = run_fit(data, cfg.algorithm, cfg.learner);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  write_fit_artifacts(cfg.paths.out, fit, data.names, cfg.learner.seed, cfg.source_hash);
  nlohmann::json report = {{"version", DAGODE_VERSION},
                           {"config", {{"text", cfg.source_text}, {"hash", cfg.source_hash}, {"effective", config_json(cfg)}}},
                           {"data", {{"path", cfg.paths.data.string()}, {"n", data.n()}, {"d", data.d()}, {"meta", data.meta}}},
                           {"threshold", fit.threshold},
                           {"h_final", fit.h_final},
                           {"converged", fit.converged},
                           {"edges", fit.dag.num_edges()},
                           {"wall_clock_seconds", seconds}};

  std::optional<NamedDag> truth;
  if (!cfg.paths.truth.empty()) truth = read_edge_list(cfg.paths.truth);
  else if (data.truth) truth = NamedDag{data.names, *data.truth, true};
  if (truth) {
    write_edge_list(cfg.paths.out / "truth.tsv", truth->dag, truth->names);
    const Metrics m = evaluate(NamedDag{data.names, fit.dag, true}, *truth);
    report["metrics"] = metrics_json(m);
    std::vector<std::size_t> perm;
    for (const auto& name : truth->names) {
      const auto it = std::find(data.names.begin(), data.names.end(), name);
      if (it == data.names.end()) throw ContractViolation("truth node '" + name + "' is not a data column");
      perm.push_back(static_cast<std::size_t>(it - data.names.begin()));
    }
    Matrix aligned(perm.size(), perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t j = 0; j < perm.size(); ++j) aligned(i, j) = fit.adjacency(perm[i], perm[j]);
    report["threshold_sweep"] = threshold_sweep(aligned, truth->dag);
    std::cout << metrics_table(m);
  }
  write_json(cfg.paths.out / "report.json", report);
  std::cout << "h_final " << fit.h_final << (fit.converged ? " (converged)" : " (not converged)") << ", "
            << fit.dag.num_edges() << " edges at threshold " << fit.threshold << "\nwrote "
            << cfg.paths.out.string() << '\n';
  return kOk;
}

int cmd_evaluate(const std::string& pred, const std::string& truth, const std::string& json_out) {
  for (const auto& p : {pred, truth})
    if (p.empty() || !fs::exists(p)) throw ConfigError("evaluate: missing file '" + p + "'");
  const Metrics m = evaluate_files(pred, truth);
  std::cout << metrics_table(m) << metrics_json(m).dump() << '\n';
  if (!json_out.empty()) write_json(json_out, metrics_json(m));
  return kOk;
}

int cmd_benchmark(const Common& c, const std::optional<std::size_t>& repeats) {
  ExperimentConfig cfg = base_config(c, Task::Benchmark);
  if (c.threads) cfg.workers = *c.threads;
  if (repeats) cfg.repeats = *repeats;
  const RunReport report = run_benchmark(cfg, &std::cerr);
  std::cout << report.metrics_block()["aggregate"].dump(2) << '\n'
            << "wrote " << (cfg.paths.out / "report.json").string() << '\n';
  if (report.failures() == 0) return kOk;
  return report.failures() == report.runs.size() ? kOptimization : kPartial;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal structure learning with neural ODE flows and continuous acyclicity constraints"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DAGODE_VERSION);

  Common gen_c, fit_c, bench_c;
  std::optional<std::string> gen_type;
  std::optional<std::size_t> gen_d, gen_n, repeats;
  std::optional<double> gen_k;
  std::string fit_data, fit_truth, eval_pred, eval_truth, eval_json;
  std::string defaults_algo = "dagode";

  auto* gen = app.add_subcommand("generate", "Sample an ER graph and a synthetic dataset");
  add_common(gen, gen_c, false);
  gen->add_option("--type", gen_type, "gp_anm or linear_sem");
  gen->add_option("--d", gen_d, "Number of variables");
  gen->add_option("--n", gen_n, "Number of rows");
  gen->add_option("--k", gen_k, "Expected edges per node");

  auto* fit = app.add_subcommand("fit", "Fit a learner to a CSV dataset");
  add_common(fit, fit_c, true);
  fit->add_option("--data", fit_data, "Dataset CSV");
  fit->add_option("--truth", fit_truth, "Ground-truth edge list (optional)");

  auto* eval = app.add_subcommand("evaluate", "Compare a predicted edge list with a ground truth");
  eval->add_option("--pred", eval_pred, "Predicted edge list")->required();
  eval->add_option("--truth", eval_truth, "Ground-truth edge list")->required();
  eval->add_option("--json", eval_json, "Also write the metrics JSON here");

  auto* bench = app.add_subcommand("benchmark", "Repeat generate/fit/evaluate over seeds");
  add_common(bench, bench_c, true);
  bench->add_option("--repeats", repeats, "Number of seeds");

  auto* defaults = app.add_subcommand("defaults", "Print every config key with its default");
  defaults->add_option("--algorithm", defaults_algo, "notears or dagode")->check(CLI::IsMember({"notears", "dagode"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_generate(gen_c, gen_type, gen_d, gen_n, gen_k);
    if (*fit) return cmd_fit(fit_c, fit_data, fit_truth);
    if (*eval) return cmd_evaluate(eval_pred, eval_truth, eval_json);
    if (*bench) return cmd_benchmark(bench_c, repeats);
    if (*defaults) {
      std::cout << format_defaults(parse_algorithm(defaults_algo));
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ContractViolation& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const OptimizationError& e) {
    std::cerr << "optimization failed: " << e.what() << '\n';
    return kOptimization;
  } catch (const NumericError& e) {
    std::cerr << "optimization failed: " << e.what() << '\n';
    return kOptimization;
  } catch (const DecompositionError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
