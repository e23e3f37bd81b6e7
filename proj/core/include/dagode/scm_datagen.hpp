#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "dagode/dataset.hpp"
#include "dagode/graphs.hpp"
#include "dagode/odeflow.hpp"
#include "dagode/rng.hpp"

namespace dagode {

enum class NoiseKind { GaussianEqualVariance, Uniform, Laplace };

std::string to_string(NoiseKind k);
NoiseKind parse_noise(const std::string& s);

/// Edge weights for a linear SEM: magnitude uniform in [0.5, 2.0], sign
/// uniform. Indexed (parent, child).
Matrix sample_linear_weights(const Dag& g, Rng& rng);

/// X_j := Σ_k W[k,j] X_k + N_j in topological order. All noise kinds have
/// zero mean and unit variance: gaussian N(0,1), uniform on [−√3, √3],
/// laplace with scale 1/√2. The weights are recorded in meta["weights"].
Dataset gen_linear_sem(const Dag& g, std::size_t n, NoiseKind noise, Rng& rng);
Dataset gen_linear_sem(const Dag& g, const Matrix& weights, std::size_t n, NoiseKind noise, Rng& rng);

/// One joint draw f ~ N(0, K) at the rows of `inputs` (n×p) with the unit
/// bandwidth RBF kernel k(u,v) = exp(−‖u−v‖²/2).
std::vector<double> sample_gp(const Matrix& inputs, Rng& rng);

inline constexpr std::size_t kMaxGpRows = 20000;

/// Nonlinear Gaussian ANM: roots are N(0,1); every other node is a GP draw
/// over its realized parent values plus N(0,1) noise. n ≤ kMaxGpRows.
Dataset gen_gp_anm(const Dag& g, std::size_t n, Rng& rng);

/// Susceptible / infected / removed dynamics with immigration, natural
/// death, transmission, disease death, recovery and immunity loss.
struct EpidemicParams {
  double immigration = 0.5;   // A
  double death = 0.05;        // d
  double transmission = 0.01; // β
  double disease_death = 0.1; // α
  double recovery = 0.05;     // γ
  double immunity_loss = 0.02;// σ

  void validate() const;
};

inline constexpr std::array<double, 3> kEpidemicDefaultState{500.0, 10.0, 0.0};

std::array<double, 3> epidemic_rhs(const EpidemicParams& p, std::span<const double> state);

/// RK4 trajectory with fixed step t_end/steps, (steps+1)×3.
Matrix simulate_epidemic(const EpidemicParams& p, std::array<double, 3> x0, double t_end, std::size_t steps);

/// The epidemic right-hand side as a parameter-free drift, for Jacobian
/// readout.
class EpidemicDrift : public Drift {
 public:
  explicit EpidemicDrift(EpidemicParams p) : p_(p) { p_.validate(); }
  std::size_t dim() const override { return 3; }
  std::size_t num_params() const override { return 0; }
  std::vector<double> params() const override { return {}; }
  TapeField bind(Var theta) const override;

 private:
  EpidemicParams p_;
};

}  // namespace dagode
