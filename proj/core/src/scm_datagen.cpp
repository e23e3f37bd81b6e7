#include "dagode/scm_datagen.hpp"

#include <cmath>

#include "dagode/errors.hpp"

namespace dagode {

namespace {

double draw_noise(NoiseKind kind, Rng& rng) {
  switch (kind) {
    case NoiseKind::GaussianEqualVariance:
      return rng.normal();
    case NoiseKind::Uniform:
      return rng.uniform(-std::sqrt(3.0), std::sqrt(3.0));
    case NoiseKind::Laplace: {
      // inverse CDF with scale b = 1/√2 (unit variance)
      const double u = rng.uniform(-0.5, 0.5);
      const double b = 1.0 / std::sqrt(2.0);
      return -b * (u < 0 ? -1.0 : 1.0) * std::log1p(-2.0 * std::abs(u));
    }
  }
  return 0.0;
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

}  // namespace

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::GaussianEqualVariance:
      return "gaussian";
    case NoiseKind::Uniform:
      return "uniform";
    case NoiseKind::Laplace:
      return "laplace";
  }
  return "gaussian";
}

NoiseKind parse_noise(const std::string& s) {
  if (s == "gaussian") return NoiseKind::GaussianEqualVariance;
  if (s == "uniform") return NoiseKind::Uniform;
  if (s == "laplace") return NoiseKind::Laplace;
  throw ContractViolation("unknown noise kind: " + s);
}

Matrix sample_linear_weights(const Dag& g, Rng& rng) {
  Matrix w(g.num_nodes(), g.num_nodes());
  for (const Edge& e : g.edges()) {
    const double magnitude = rng.uniform(0.5, 2.0);
    w(e.parent, e.child) = rng.bernoulli(0.5) ? magnitude : -magnitude;
  }
  return w;
}

Dataset gen_linear_sem(const Dag& g, std::size_t n, NoiseKind noise, Rng& rng) {
  Rng weight_rng = rng.split("weights");
  const Matrix w = sample_linear_weights(g, weight_rng);
  return gen_linear_sem(g, w, n, noise, rng);
}

Dataset gen_linear_sem(const Dag& g, const Matrix& weights, std::size_t n, NoiseKind noise, Rng& rng) {
  const std::size_t d = g.num_nodes();
  if (n < 1) throw ContractViolation("gen_linear_sem: n must be at least 1");
  if (weights.rows() != d || weights.cols() != d) throw ContractViolation("gen_linear_sem: weight shape mismatch");
  Dataset out;
  out.x = Matrix(n, d);
  out.names = default_names(d);
  for (std::size_t j : g.order()) {
    Rng noise_rng = rng.split("noise:" + std::to_string(j));
    const auto parents = g.parents(j);
    for (std::size_t i = 0; i < n; ++i) {
      double v = draw_noise(noise, noise_rng);
      for (std::size_t k : parents) v += weights(k, j) * out.x(i, k);
      out.x(i, j) = v;
    }
  }
  out.truth = g;
  out.meta = {{"generator", "linear_sem"},
              {"seed", rng.seed()},
              {"n", n},
              {"d", d},
              {"noise", to_string(noise)},
              {"weights", matrix_json(weights)}};
  return out;
}

std::vector<double> sample_gp(const Matrix& inputs, Rng& rng) {
  const std::size_t n = inputs.rows();
  const std::size_t p = inputs.cols();
  Matrix k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    const double* ui = inputs.row(i).data();
    for (std::size_t j = 0; j < i; ++j) {
      const double* uj = inputs.row(j).data();
      double sq = 0.0;
      for (std::size_t c = 0; c < p; ++c) sq += (ui[c] - uj[c]) * (ui[c] - uj[c]);
      k(i, j) = k(j, i) = std::exp(-0.5 * sq);
    }
  }
  Matrix l;
  try {
    l = cholesky(k).lower;
  } catch (const DecompositionError& e) {
    throw DecompositionError(std::string("sample_gp: ") + e.what());
  }
  std::vector<double> z(n);
  for (double& v : z) v = rng.normal();
  std::vector<double> f(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* li = l.row(i).data();
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) s += li[j] * z[j];
    f[i] = s;
  }
  return f;
}

Dataset gen_gp_anm(const Dag& g, std::size_t n, Rng& rng) {
  const std::size_t d = g.num_nodes();
  if (n < 1) throw ContractViolation("gen_gp_anm: n must be at least 1");
  if (n > kMaxGpRows) throw ContractViolation("gen_gp_anm: n exceeds the exact GP limit");
  Dataset out;
  out.x = Matrix(n, d);
  out.names = default_names(d);
  for (std::size_t j : g.order()) {
    Rng noise_rng = rng.split("noise:" + std::to_string(j));
    const auto parents = g.parents(j);
    std::vector<double> f(n, 0.0);
    if (!parents.empty()) {
      Matrix inputs(n, parents.size());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < parents.size(); ++c) inputs(i, c) = out.x(i, parents[c]);
      Rng gp_rng = rng.split("gp:" + std::to_string(j));
      f = sample_gp(inputs, gp_rng);
    }
    for (std::size_t i = 0; i < n; ++i) out.x(i, j) = f[i] + noise_rng.normal();
  }
  out.truth = g;
  out.meta = {{"generator", "gp_anm"}, {"seed", rng.seed()}, {"n", n}, {"d", d}, {"kernel", "rbf"}, {"bandwidth", 1.0}};
  return out;
}

void EpidemicParams::validate() const {
  for (double v : {immigration, death, transmission, disease_death, recovery, immunity_loss})
    if (!std::isfinite(v) || v < 0.0) throw ContractViolation("EpidemicParams: rates must be finite and nonnegative");
}

std::array<double, 3> epidemic_rhs(const EpidemicParams& p, std::span<const double> s) {
  const double x = s[0], y = s[1], z = s[2];
  return {p.immigration - p.death * x - p.transmission * x * y + p.immunity_loss * z,
          p.transmission * x * y - (p.recovery + p.disease_death + p.death) * y,
          p.recovery * y - (p.immunity_loss + p.death) * z};
}

Matrix simulate_epidemic(const EpidemicParams& p, std::array<double, 3> x0, double t_end, std::size_t steps) {
  p.validate();
  if (steps < 1) throw ContractViolation("simulate_epidemic: steps must be at least 1");
  for (double v : x0)
    if (!(v >= 0.0)) throw ContractViolation("simulate_epidemic: initial state must be nonnegative");
  VectorField f = [&p](double, std::span<const double> h) {
    const auto r = epidemic_rhs(p, h);
    return std::vector<double>(r.begin(), r.end());
  };
  return integrate_trajectory(f, std::vector<double>(x0.begin(), x0.end()), 0.0, t_end, steps, Method::Rk4);
}

TapeField EpidemicDrift::bind(Var) const {
  const EpidemicParams p = p_;
  return [p](Var s, double) {
    Var x = column(s, 0);
    Var y = column(s, 1);
    Var z = column(s, 2);
    Var xy = x * y;
    Var dx = (-p.death * x + -p.transmission * xy + p.immunity_loss * z) + p.immigration;
    Var dy = p.transmission * xy + -(p.recovery + p.disease_death + p.death) * y;
    Var dz = p.recovery * y + -(p.immunity_loss + p.death) * z;
    const std::array<Var, 3> parts{dx, dy, dz};
    return hconcat(parts);
  };
}

}  // namespace dagode
