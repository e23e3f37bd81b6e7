#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "dagode/errors.hpp"
#include "dagode/learners.hpp"

namespace dagode {

namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }

bool finite(const Vec& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct Bounds {
  Vec lower, upper;

  Bounds(const AlProblem& problem, std::size_t p)
      : lower(problem.lower.empty() ? Vec(p, -std::numeric_limits<double>::infinity()) : problem.lower),
        upper(problem.upper.empty() ? Vec(p, std::numeric_limits<double>::infinity()) : problem.upper) {}

  void project(Vec& theta) const {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = std::clamp(theta[i], lower[i], upper[i]);
  }

  // Coordinates held at a bound because the descent direction −g points out.
  bool pinned(const Vec& theta, const Vec& g, std::size_t i) const {
    if (lower[i] == upper[i]) return true;
    return (theta[i] <= lower[i] && g[i] > 0.0) || (theta[i] >= upper[i] && g[i] < 0.0);
  }
};

// objective + (ρ/2)h² + λh
struct Penalized {
  const AlProblem& problem;
  double rho;
  double lambda;
  const std::vector<TraceEntry>& trace;
  Vec* objective_log = nullptr;

  ValueGrad operator()(const Vec& theta, std::optional<std::size_t> step) const {
    const ValueGrad obj = problem.objective(theta, step);
    if (objective_log) objective_log->push_back(obj.value);
    const ValueGrad con = problem.constraint(theta, step);
    if (!std::isfinite(obj.value) || !std::isfinite(con.value) || !finite(obj.grad) || !finite(con.grad))
      throw OptimizationError("augmented_lagrangian: objective or constraint became non-finite", trace);
    ValueGrad out{obj.value + 0.5 * rho * con.value * con.value + lambda * con.value, obj.grad};
    const double coeff = rho * con.value + lambda;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += coeff * con.grad[i];
    return out;
  }
};

Vec adam(const Penalized& f, const Bounds& bounds, Vec theta, const LearnerConfig& cfg, std::size_t& global_step) {
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  const std::size_t p = theta.size();
  Vec m(p, 0.0), v(p, 0.0);
  for (std::size_t s = 1; s <= cfg.inner_steps; ++s) {
    const Vec g = f(theta, global_step++).grad;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s));
    const double frac = static_cast<double>(s - 1) / static_cast<double>(cfg.inner_steps);
    const double lr = cfg.lr * std::pow(0.01, frac);
    for (std::size_t i = 0; i < p; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
    bounds.project(theta);
  }
  return theta;
}

// Limited-memory BFGS on the free coordinates, with projection onto the box
// and backtracking along the projected path. Full-data evaluations only.
Vec lbfgs(const Penalized& f, const Bounds& bounds, Vec theta, const LearnerConfig& cfg) {
  constexpr std::size_t memory = 10;
  constexpr double armijo = 1e-4;
  constexpr double gtol = 1e-7;
  constexpr double ftol = 1e-13;
  const std::size_t p = theta.size();
  std::deque<std::pair<Vec, Vec>> pairs;  // (s, y)
  ValueGrad cur = f(theta, std::nullopt);

  for (std::size_t it = 0; it < cfg.inner_steps; ++it) {
    std::vector<bool> pinned(p);
    double pg = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      pinned[i] = bounds.pinned(theta, cur.grad, i);
      if (!pinned[i]) pg = std::max(pg, std::abs(cur.grad[i]));
    }
    if (pg <= gtol) break;

    Vec q(p, 0.0);
    for (std::size_t i = 0; i < p; ++i)
      if (!pinned[i]) q[i] = cur.grad[i];
    std::vector<double> alpha(pairs.size());
    for (std::size_t k = pairs.size(); k-- > 0;) {
      const auto& [s, y] = pairs[k];
      alpha[k] = dot(s, q) / dot(y, s);
      for (std::size_t i = 0; i < p; ++i) q[i] -= alpha[k] * y[i];
    }
    const double gamma = pairs.empty() ? 1.0 / std::max(1.0, pg)
                                       : dot(pairs.back().first, pairs.back().second) /
                                             dot(pairs.back().second, pairs.back().second);
    for (double& v : q) v *= gamma;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto& [s, y] = pairs[k];
      const double beta = dot(y, q) / dot(y, s);
      for (std::size_t i = 0; i < p; ++i) q[i] += (alpha[k] - beta) * s[i];
    }
    Vec dir(p, 0.0);
    for (std::size_t i = 0; i < p; ++i)
      if (!pinned[i]) dir[i] = -q[i];
    if (dot(dir, cur.grad) >= 0.0) {
      pairs.clear();
      for (std::size_t i = 0; i < p; ++i) dir[i] = pinned[i] ? 0.0 : -cur.grad[i] / std::max(1.0, pg);
    }

    double step = 1.0;
    Vec next;
    ValueGrad trial;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls, step *= 0.5) {
      next = theta;
      for (std::size_t i = 0; i < p; ++i) next[i] += step * dir[i];
      bounds.project(next);
      double decrease = 0.0;
      for (std::size_t i = 0; i < p; ++i) decrease += cur.grad[i] * (next[i] - theta[i]);
      trial = f(next, std::nullopt);
      if (trial.value <= cur.value + armijo * decrease) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;

    Vec s(p), y(p);
    for (std::size_t i = 0; i < p; ++i) {
      s[i] = next[i] - theta[i];
      y[i] = trial.grad[i] - cur.grad[i];
    }
    if (dot(s, y) > 1e-12 * dot(y, y)) {
      pairs.emplace_back(std::move(s), std::move(y));
      if (pairs.size() > memory) pairs.pop_front();
    }
    const double drop = cur.value - trial.value;
    theta = std::move(next);
    cur = std::move(trial);
    if (drop <= ftol * std::max(1.0, std::abs(cur.value))) break;
  }
  return theta;
}

}  // namespace

AlResult augmented_lagrangian(const AlProblem& problem, const LearnerConfig& cfg) {
  cfg.validate();
  const std::size_t p = problem.theta0.size();
  if ((!problem.lower.empty() && problem.lower.size() != p) || (!problem.upper.empty() && problem.upper.size() != p))
    throw ContractViolation("augmented_lagrangian: bound vectors must match the parameter count");
  const Bounds bounds(problem, p);

  AlResult result;
  result.theta = problem.theta0;
  bounds.project(result.theta);
  double rho = cfg.rho0;
  double lambda = 0.0;
  double h_prev = std::numeric_limits<double>::infinity();
  std::size_t global_step = 0;

  while (result.outer_iterations < cfg.max_outer) {
    const Penalized f{problem, rho, lambda, result.trace, result.outer_iterations == 0 ? &result.first_solve_objective : nullptr};
    result.theta = cfg.solver == InnerSolver::Adam ? adam(f, bounds, result.theta, cfg, global_step)
                                                   : lbfgs(f, bounds, result.theta, cfg);
    ++result.outer_iterations;
    const double h_signed = problem.constraint(result.theta, std::nullopt).value;
    const double h_new = std::abs(h_signed);
    result.objective = problem.objective(result.theta, std::nullopt).value;
    if (!std::isfinite(h_new) || !std::isfinite(result.objective))
      throw OptimizationError("augmented_lagrangian: objective or constraint became non-finite", result.trace);
    result.h = h_signed;
    lambda += rho * h_signed;
    result.trace.push_back({result.outer_iterations, result.objective, h_new, rho, lambda});
    if (h_new <= cfg.h_tol) {
      result.converged = true;
      break;
    }
    if (h_new > 0.25 * h_prev) rho *= cfg.rho_mult;
    h_prev = h_new;
    if (rho > cfg.rho_max) break;
  }
  result.rho = rho;
  result.lambda = lambda;
  return result;
}

}  // namespace dagode
