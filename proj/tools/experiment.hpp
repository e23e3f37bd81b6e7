#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dagode/dataset.hpp"
#include "dagode/graphs.hpp"
#include "dagode/learners.hpp"
#include "dagode/scm_datagen.hpp"

namespace dagode::cli {

/// Bad or inconsistent configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { Generate, Fit, Evaluate, Benchmark };
enum class Algorithm { Notears, DagOde };

std::string to_string(Task t);
std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& s);

struct GeneratorSpec {
  std::string type = "gp_anm";  // gp_anm | linear_sem
  std::size_t d = 10;
  double k = 1.0;
  std::size_t n = 1000;
  NoiseKind noise = NoiseKind::GaussianEqualVariance;
  std::uint64_t seed = 0;
};

struct PathSpec {
  std::filesystem::path data;
  std::filesystem::path truth;
  std::filesystem::path pred;
  std::filesystem::path out = "runs";
};

struct ExperimentConfig {
  Task task = Task::Benchmark;
  std::size_t repeats = 1;
  std::size_t workers = 1;
  GeneratorSpec generator;
  Algorithm algorithm = Algorithm::DagOde;
  LearnerConfig learner = LearnerConfig::dag_ode_defaults();
  PathSpec paths;
  /// Config file text as read, and its FNV-1a 64-bit hash in hex.
  std::string source_text;
  std::string source_hash;

  /// Throws ConfigError. validate_values skips the filesystem checks.
  void validate() const;
  void validate_values() const;
};

std::string config_hash(const std::string& text);

/// INI-style text: top-level `task`, `repeats`, `workers`, then `[generator]`,
/// `[learner]` and `[paths]` sections. `[learner] algorithm` selects the
/// default set the remaining learner keys override. Unknown keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every key with its default value, in the format parse_config reads.
std::string format_defaults(Algorithm algorithm);
/// The effective configuration as JSON (for report echoes).
nlohmann::json config_json(const ExperimentConfig& cfg);

/// Reads a dataset with sidecars. A file whose header is exactly the 11
/// bundled protein names must hold 7466 rows.
Dataset load_dataset(const std::filesystem::path& path);

Dataset generate(const GeneratorSpec& spec);

FitResult run_fit(const Dataset& data, Algorithm algorithm, const LearnerConfig& cfg);

/// Writes adjacency.csv, pred.tsv, trace.csv and, for the flow learner,
/// model.json into `dir`.
void write_fit_artifacts(const std::filesystem::path& dir, const FitResult& fit, const std::vector<std::string>& names,
                         std::uint64_t seed, const std::string& hash);

/// Scores `pred` against `truth` after aligning node names. Throws
/// ContractViolation listing the names that differ.
Metrics evaluate(const NamedDag& pred, const NamedDag& truth);
Metrics evaluate_files(const std::filesystem::path& pred, const std::filesystem::path& truth);

nlohmann::json metrics_json(const Metrics& m);
std::string metrics_table(const Metrics& m);

/// (ω, metrics) for every distinct cutoff between consecutive entries.
nlohmann::json threshold_sweep(const Matrix& adjacency, const Dag& truth);

struct SeedRun {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Metrics metrics;
  double h_final = 0.0;
  bool converged = false;
  double seconds = 0.0;
};

struct RunReport {
  std::vector<SeedRun> runs;
  ExperimentConfig config;

  std::size_t failures() const;
  /// Per-seed metrics and median/IQR aggregates; no timings, so reruns with
  /// identical configs compare byte for byte.
  nlohmann::json metrics_block() const;
  nlohmann::json to_json() const;
};

/// One sample/generate/fit/score cycle per seed (generator.seed + r for
/// r < repeats), dispatched to `workers` threads. Per-seed artifacts go to
/// out/seed_<s>/ and the aggregate to out/report.json.
RunReport run_benchmark(const ExperimentConfig& cfg, std::ostream* log = nullptr);

}  // namespace dagode::cli
