#include "experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dagode/errors.hpp"

namespace dagode::cli {

namespace fs = std::filesystem;

std::string to_string(Task t) {
  switch (t) {
    case Task::Generate:
      return "generate";
    case Task::Fit:
      return "fit";
    case Task::Evaluate:
      return "evaluate";
    case Task::Benchmark:
      return "benchmark";
  }
  return "benchmark";
}

std::string to_string(Algorithm a) { return a == Algorithm::Notears ? "notears" : "dagode"; }

Algorithm parse_algorithm(const std::string& s) {
  if (s == "notears") return Algorithm::Notears;
  if (s == "dagode") return Algorithm::DagOde;
  throw ConfigError("unknown algorithm '" + s + "' (expected notears or dagode)");
}

namespace {

Task parse_task(const std::string& s) {
  for (Task t : {Task::Generate, Task::Fit, Task::Evaluate, Task::Benchmark})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown task '" + s + "'");
}

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ContractViolation& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream in(v);
  std::string part;
  while (std::getline(in, part, ',')) {
    part.erase(0, part.find_first_not_of(" \t"));
    part.erase(part.find_last_not_of(" \t") + 1);
    if (part.empty()) continue;
    out.push_back(static_cast<std::size_t>(to_u64(key, part)));
  }
  return out;
}

struct Field {
  std::string section;  // empty for top-level keys
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add = [&f](std::string section, std::string key, auto set, auto get) {
      f.push_back({std::move(section), std::move(key), set, get});
    };
    add("", "task", [](C& c, const std::string& v) { c.task = parse_task(v); },
        [](const C& c) { return to_string(c.task); });
    add("", "repeats", [](C& c, const std::string& v) { c.repeats = to_u64("repeats", v); },
        [](const C& c) { return std::to_string(c.repeats); });
    add("", "workers", [](C& c, const std::string& v) { c.workers = to_u64("workers", v); },
        [](const C& c) { return std::to_string(c.workers); });

    add("generator", "type", [](C& c, const std::string& v) { c.generator.type = v; },
        [](const C& c) { return c.generator.type; });
    add("generator", "d", [](C& c, const std::string& v) { c.generator.d = to_u64("d", v); },
        [](const C& c) { return std::to_string(c.generator.d); });
    add("generator", "k", [](C& c, const std::string& v) { c.generator.k = to_double("k", v); },
        [](const C& c) { return fmt_double(c.generator.k); });
    add("generator", "n", [](C& c, const std::string& v) { c.generator.n = to_u64("n", v); },
        [](const C& c) { return std::to_string(c.generator.n); });
    add("generator", "noise",
        [](C& c, const std::string& v) { c.generator.noise = wrap("noise", [&] { return parse_noise(v); }); },
        [](const C& c) { return to_string(c.generator.noise); });
    add("generator", "seed", [](C& c, const std::string& v) { c.generator.seed = to_u64("seed", v); },
        [](const C& c) { return std::to_string(c.generator.seed); });

    add("learner", "algorithm", [](C& c, const std::string& v) { c.algorithm = parse_algorithm(v); },
        [](const C& c) { return to_string(c.algorithm); });
    add("learner", "lambda1", [](C& c, const std::string& v) { c.learner.lambda1 = to_double("lambda1", v); },
        [](const C& c) { return fmt_double(c.learner.lambda1); });
    add("learner", "rho0", [](C& c, const std::string& v) { c.learner.rho0 = to_double("rho0", v); },
        [](const C& c) { return fmt_double(c.learner.rho0); });
    add("learner", "rho_mult", [](C& c, const std::string& v) { c.learner.rho_mult = to_double("rho_mult", v); },
        [](const C& c) { return fmt_double(c.learner.rho_mult); });
    add("learner", "rho_max", [](C& c, const std::string& v) { c.learner.rho_max = to_double("rho_max", v); },
        [](const C& c) { return fmt_double(c.learner.rho_max); });
    add("learner", "h_tol", [](C& c, const std::string& v) { c.learner.h_tol = to_double("h_tol", v); },
        [](const C& c) { return fmt_double(c.learner.h_tol); });
    add("learner", "max_outer", [](C& c, const std::string& v) { c.learner.max_outer = to_u64("max_outer", v); },
        [](const C& c) { return std::to_string(c.learner.max_outer); });
    add("learner", "solver",
        [](C& c, const std::string& v) { c.learner.solver = wrap("solver", [&] { return parse_inner_solver(v); }); },
        [](const C& c) { return to_string(c.learner.solver); });
    add("learner", "inner_steps", [](C& c, const std::string& v) { c.learner.inner_steps = to_u64("inner_steps", v); },
        [](const C& c) { return std::to_string(c.learner.inner_steps); });
    add("learner", "lr", [](C& c, const std::string& v) { c.learner.lr = to_double("lr", v); },
        [](const C& c) { return fmt_double(c.learner.lr); });
    add("learner", "threshold",
        [](C& c, const std::string& v) {
          if (v == "auto") c.learner.threshold.reset();
          else c.learner.threshold = to_double("threshold", v);
        },
        [](const C& c) { return c.learner.threshold ? fmt_double(*c.learner.threshold) : std::string("auto"); });
    add("learner", "standardize", [](C& c, const std::string& v) { c.learner.standardize = to_bool("standardize", v); },
        [](const C& c) { return std::string(c.learner.standardize ? "true" : "false"); });
    add("learner", "constraint",
        [](C& c, const std::string& v) {
          if (v == "exp") c.learner.constraint = ConstraintForm::Exp;
          else if (v == "poly") c.learner.constraint = ConstraintForm::Poly;
          else throw ConfigError("constraint: expected exp or poly, got '" + v + "'");
        },
        [](const C& c) { return std::string(c.learner.constraint == ConstraintForm::Exp ? "exp" : "poly"); });
    add("learner", "hidden", [](C& c, const std::string& v) { c.learner.hidden = parse_sizes("hidden", v); },
        [](const C& c) { return join_sizes(c.learner.hidden); });
    add("learner", "activation",
        [](C& c, const std::string& v) {
          c.learner.activation = wrap("activation", [&] { return parse_activation(v); });
        },
        [](const C& c) { return to_string(c.learner.activation); });
    add("learner", "time_conditioned",
        [](C& c, const std::string& v) { c.learner.time_conditioned = to_bool("time_conditioned", v); },
        [](const C& c) { return std::string(c.learner.time_conditioned ? "true" : "false"); });
    add("learner", "init_scale", [](C& c, const std::string& v) { c.learner.init_scale = to_double("init_scale", v); },
        [](const C& c) { return fmt_double(c.learner.init_scale); });
    add("learner", "ode_steps", [](C& c, const std::string& v) { c.learner.ode_steps = to_u64("ode_steps", v); },
        [](const C& c) { return std::to_string(c.learner.ode_steps); });
    add("learner", "method",
        [](C& c, const std::string& v) { c.learner.method = wrap("method", [&] { return parse_method(v); }); },
        [](const C& c) { return to_string(c.learner.method); });
    add("learner", "t1", [](C& c, const std::string& v) { c.learner.t1 = to_double("t1", v); },
        [](const C& c) { return fmt_double(c.learner.t1); });
    add("learner", "batch_size", [](C& c, const std::string& v) { c.learner.batch_size = to_u64("batch_size", v); },
        [](const C& c) { return std::to_string(c.learner.batch_size); });
    add("learner", "chunk_size", [](C& c, const std::string& v) { c.learner.chunk_size = to_u64("chunk_size", v); },
        [](const C& c) { return std::to_string(c.learner.chunk_size); });
    add("learner", "threads", [](C& c, const std::string& v) { c.learner.threads = to_u64("threads", v); },
        [](const C& c) { return std::to_string(c.learner.threads); });
    add("learner", "gradient",
        [](C& c, const std::string& v) {
          c.learner.gradient = wrap("gradient", [&] { return parse_gradient_mode(v); });
        },
        [](const C& c) { return to_string(c.learner.gradient); });

    add("paths", "data", [](C& c, const std::string& v) { c.paths.data = v; },
        [](const C& c) { return c.paths.data.string(); });
    add("paths", "truth", [](C& c, const std::string& v) { c.paths.truth = v; },
        [](const C& c) { return c.paths.truth.string(); });
    add("paths", "pred", [](C& c, const std::string& v) { c.paths.pred = v; },
        [](const C& c) { return c.paths.pred.string(); });
    add("paths", "out", [](C& c, const std::string& v) { c.paths.out = v; },
        [](const C& c) { return c.paths.out.string(); });
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

LearnerConfig defaults_for(Algorithm a) {
  return a == Algorithm::Notears ? LearnerConfig::notears_defaults() : LearnerConfig::dag_ode_defaults();
}

const std::vector<std::string> kSachsNames{"Raf", "Mek", "Plcg", "PIP2", "PIP3", "Erk",
                                           "Akt", "PKA", "PKC",  "P38",  "Jnk"};
constexpr std::size_t kSachsRows = 7466;

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

nlohmann::json summary(const std::vector<double>& v) {
  return {{"median", quantile(v, 0.5)}, {"q1", quantile(v, 0.25)}, {"q3", quantile(v, 0.75)},
          {"iqr", quantile(v, 0.75) - quantile(v, 0.25)}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string(), 0);
  out << text;
}

}  // namespace

std::string config_hash(const std::string& text) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << Rng::fnv1a(text);
  return out.str();
}

void ExperimentConfig::validate_values() const {
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (generator.d < 1 || generator.n < 1) throw ConfigError("generator d and n must be at least 1");
  if (!(generator.k >= 0.0)) throw ConfigError("generator k must be nonnegative");
  if (generator.type != "gp_anm" && generator.type != "linear_sem")
    throw ConfigError("generator type must be gp_anm or linear_sem, got '" + generator.type + "'");
  try {
    learner.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
}

void ExperimentConfig::validate() const {
  validate_values();
  if (task == Task::Fit && !paths.data.empty() && !fs::exists(paths.data))
    throw ConfigError("data path does not exist: " + paths.data.string());
  if (task == Task::Evaluate) {
    for (const fs::path& p : {paths.pred, paths.truth})
      if (p.empty() || !fs::exists(p)) throw ConfigError("evaluate needs existing pred and truth paths, missing: " + p.string());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig cfg;
  if (auto learner = tree.get_child_optional("learner")) {
    if (auto algo = learner->get_optional<std::string>("algorithm")) cfg.algorithm = parse_algorithm(*algo);
  }
  cfg.learner = defaults_for(cfg.algorithm);
  for (const auto& [name, node] : tree) {
    const bool section = !node.empty();
    if (!section) {
      const Field* f = find_field("", name);
      if (!f) throw ConfigError("config: unknown key '" + name + "'");
      f->set(cfg, node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) {
      const Field* f = find_field(name, key);
      if (!f) throw ConfigError("config: unknown key '" + key + "' in [" + name + "]");
      f->set(cfg, leaf.data());
    }
  }
  cfg.validate_values();
  cfg.source_text = text;
  cfg.source_hash = config_hash(text);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string format_defaults(Algorithm algorithm) {
  ExperimentConfig cfg;
  cfg.algorithm = algorithm;
  cfg.learner = defaults_for(algorithm);
  std::ostringstream out;
  std::string current = "\x01";
  for (const Field& f : fields()) {
    if (f.section != current) {
      if (!f.section.empty()) out << "\n[" << f.section << "]\n";
      current = f.section;
    }
    out << f.key << " = " << f.get(cfg) << "\n";
  }
  return out.str();
}

nlohmann::json config_json(const ExperimentConfig& cfg) {
  nlohmann::json out = nlohmann::json::object();
  for (const Field& f : fields()) {
    if (f.section.empty()) out[f.key] = f.get(cfg);
    else out[f.section][f.key] = f.get(cfg);
  }
  return out;
}

Dataset load_dataset(const fs::path& path) {
  Dataset data = read_dataset(path);
  if (data.names == kSachsNames) {
    if (data.n() != kSachsRows)
      throw ParseError("protein dataset must have " + std::to_string(kSachsRows) + " rows, found " +
                           std::to_string(data.n()),
                       0);
    if (!data.meta.contains("pooled_interventions")) data.meta["pooled_interventions"] = true;
  }
  return data;
}

Dataset generate(const GeneratorSpec& spec) {
  const Rng root(spec.seed);
  Rng graph_rng = root.split("graph");
  const Dag g = sample_er(spec.d, spec.k, graph_rng);
  Rng data_rng = root.split("data");
  Dataset data = spec.type == "linear_sem" ? gen_linear_sem(g, spec.n, spec.noise, data_rng)
                                           : gen_gp_anm(g, spec.n, data_rng);
  data.meta["graph"] = {{"model", "er"}, {"k", spec.k}, {"seed", spec.seed}};
  data.meta["seed"] = spec.seed;
  return data;
}

FitResult run_fit(const Dataset& data, Algorithm algorithm, const LearnerConfig& cfg) {
  return algorithm == Algorithm::Notears ? fit_notears_linear(data, cfg) : fit_dag_ode(data, cfg);
}

void write_fit_artifacts(const fs::path& dir, const FitResult& fit, const std::vector<std::string>& names,
                         std::uint64_t seed, const std::string& hash) {
  fs::create_directories(dir);
  write_csv(dir / "adjacency.csv", fit.adjacency, names);
  write_edge_list(dir / "pred.tsv", fit.dag, names);
  std::ostringstream trace;
  trace << "outer_iter,loss,h,rho,lambda\n" << std::setprecision(17);
  for (const TraceEntry& e : fit.trace)
    trace << e.outer_iter << ',' << e.loss << ',' << e.h << ',' << e.rho << ',' << e.lambda << '\n';
  write_text(dir / "trace.csv", trace.str());
  if (fit.model) save_checkpoint(dir / "model.json", {*fit.model, seed, hash});
}

Metrics evaluate(const NamedDag& pred, const NamedDag& truth) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < truth.names.size(); ++i) index[truth.names[i]] = i;
  std::set<std::string> pred_only;
  for (const std::string& n : pred.names)
    if (!index.count(n)) pred_only.insert(n);
  std::set<std::string> truth_only;
  if (pred.declared_nodes && truth.declared_nodes) {
    const std::set<std::string> p(pred.names.begin(), pred.names.end());
    for (const std::string& n : truth.names)
      if (!p.count(n)) truth_only.insert(n);
  }
  if (!pred_only.empty() || !truth_only.empty()) {
    std::string msg = "node sets differ;";
    if (!pred_only.empty()) {
      msg += " only in prediction:";
      for (const auto& n : pred_only) msg += " " + n;
    }
    if (!truth_only.empty()) {
      msg += (pred_only.empty() ? "" : ";") + std::string(" only in truth:");
      for (const auto& n : truth_only) msg += " " + n;
    }
    throw ContractViolation(msg);
  }
  std::vector<Edge> edges;
  for (const Edge& e : pred.dag.edges()) edges.push_back({index[pred.names[e.parent]], index[pred.names[e.child]]});
  return shd(Dag(truth.names.size(), std::move(edges)), truth.dag);
}

Metrics evaluate_files(const fs::path& pred, const fs::path& truth) {
  const NamedDag t = read_edge_list(truth);
  return evaluate(read_edge_list(pred), t);
}

nlohmann::json metrics_json(const Metrics& m) {
  return {{"shd", m.shd},
          {"tpr", m.tpr},
          {"predicted_edges", m.predicted_edges},
          {"true_edges", m.true_edges},
          {"correct", m.correct},
          {"reversed", m.reversed},
          {"missing", m.missing},
          {"extra", m.extra}};
}

std::string metrics_table(const Metrics& m) {
  std::ostringstream out;
  auto row = [&out](const std::string& k, const std::string& v) { out << std::left << std::setw(18) << k << v << '\n'; };
  row("SHD", std::to_string(m.shd));
  row("TPR", std::to_string(m.correct) + "/" + std::to_string(m.true_edges) + " = " + fmt_double(m.tpr));
  row("predicted edges", std::to_string(m.predicted_edges));
  row("true edges", std::to_string(m.true_edges));
  row("correct", std::to_string(m.correct));
  row("reversed", std::to_string(m.reversed));
  row("missing", std::to_string(m.missing));
  row("extra", std::to_string(m.extra));
  return out.str();
}

nlohmann::json threshold_sweep(const Matrix& adjacency, const Dag& truth) {
  std::set<double> values;
  for (std::size_t i = 0; i < adjacency.rows(); ++i)
    for (std::size_t j = 0; j < adjacency.cols(); ++j)
      if (i != j && adjacency(i, j) > 0.0) values.insert(adjacency(i, j));
  nlohmann::json out = nlohmann::json::array();
  std::vector<double> cutoffs{0.0};
  cutoffs.insert(cutoffs.end(), values.begin(), values.end());
  for (double omega : cutoffs) {
    const Metrics m = shd(threshold(adjacency, omega), truth);
    out.push_back({{"omega", omega}, {"shd", m.shd}, {"tpr", m.tpr}, {"predicted_edges", m.predicted_edges}});
  }
  return out;
}

std::size_t RunReport::failures() const {
  return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const SeedRun& r) { return !r.ok; }));
}

nlohmann::json RunReport::metrics_block() const {
  nlohmann::json per_seed = nlohmann::json::array();
  std::vector<double> shds, tprs;
  for (const SeedRun& r : runs) {
    nlohmann::json row = {{"seed", r.seed}, {"ok", r.ok}};
    if (r.ok) {
      row["metrics"] = metrics_json(r.metrics);
      row["h_final"] = r.h_final;
      row["converged"] = r.converged;
      shds.push_back(static_cast<double>(r.metrics.shd));
      tprs.push_back(r.metrics.tpr);
    } else {
      row["error"] = r.error;
    }
    per_seed.push_back(std::move(row));
  }
  return {{"per_seed", per_seed},
          {"aggregate", {{"runs", runs.size()}, {"ok", shds.size()}, {"shd", summary(shds)}, {"tpr", summary(tprs)}}}};
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json timing = nlohmann::json::array();
  for (const SeedRun& r : runs) timing.push_back({{"seed", r.seed}, {"seconds", r.seconds}});
  return {{"version", DAGODE_VERSION},
          {"config", {{"text", config.source_text}, {"hash", config.source_hash}, {"effective", config_json(config)}}},
          {"metrics", metrics_block()},
          {"wall_clock", timing},
          {"failures", failures()}};
}

RunReport run_benchmark(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  RunReport report;
  report.config = cfg;
  report.runs.resize(cfg.repeats);
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t r = next++; r < cfg.repeats; r = next++) {
      SeedRun& run = report.runs[r];
      run.seed = cfg.generator.seed + r;
      const auto start = std::chrono::steady_clock::now();
      try {
        GeneratorSpec spec = cfg.generator;
        spec.seed = run.seed;
        const Dataset data = generate(spec);
        LearnerConfig lc = cfg.learner;
        lc.seed = run.seed;
        const FitResult fit = run_fit(data, cfg.algorithm, lc);
        run.metrics = shd(fit.dag, *data.truth);
        run.h_final = fit.h_final;
        run.converged = fit.converged;
        run.ok = true;
        const fs::path dir = cfg.paths.out / ("seed_" + std::to_string(run.seed));
        fs::create_directories(dir);
        write_dataset(dir / "data.csv", data);
        write_edge_list(dir / "truth.tsv", *data.truth, data.names);
        write_fit_artifacts(dir, fit, data.names, run.seed, cfg.source_hash);
      } catch (const std::exception& e) {
        run.ok = false;
        run.error = e.what();
      }
      run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << "seed " << run.seed << ": "
             << (run.ok ? "SHD " + std::to_string(run.metrics.shd) + " TPR " + fmt_double(run.metrics.tpr)
                        : "failed: " + run.error)
             << " (" << std::fixed << std::setprecision(1) << run.seconds << " s)" << std::defaultfloat << '\n';
      }
    }
  };
  const std::size_t workers = std::min(cfg.workers, cfg.repeats);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  fs::create_directories(cfg.paths.out);
  write_text(cfg.paths.out / "report.json", report.to_json().dump(2) + "\n");
  return report;
}

}  // namespace dagode::cli
