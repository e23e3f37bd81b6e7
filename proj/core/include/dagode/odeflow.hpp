#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dagode/matrix.hpp"
#include "dagode/rng.hpp"
#include "dagode/tape.hpp"

namespace dagode {

enum class Method { Euler, Rk4 };
enum class Activation { Tanh, Elu };

std::string to_string(Method m);
std::string to_string(Activation a);
Method parse_method(const std::string& s);
Activation parse_activation(const std::string& s);

/// Plain vector field dh/dt = f(t, h).
using VectorField = std::function<std::vector<double>(double t, std::span<const double> h)>;

/// A drift already placed on a tape: maps a batch of states (B×d) at time t
/// to their derivatives (B×d).
using TapeField = std::function<Var(Var state, double t)>;

/// Parameterized drift f(t, h; θ).
class Drift {
 public:
  virtual ~Drift() = default;
  virtual std::size_t dim() const = 0;
  virtual std::size_t num_params() const = 0;
  virtual std::vector<double> params() const = 0;
  /// Instantiates the drift on `theta`'s tape. `theta` is 1×num_params().
  virtual TapeField bind(Var theta) const = 0;
};

/// Fixed-step explicit integration from t0 to t1. Throws NumericError with
/// the step index on NaN or overflow.
std::vector<double> integrate(const VectorField& f, std::vector<double> h0, double t0, double t1, std::size_t steps,
                              Method method);
std::vector<double> integrate(const Drift& f, std::vector<double> h0, double t0, double t1, std::size_t steps,
                              Method method);
/// All states, (steps+1)×d.
Matrix integrate_trajectory(const VectorField& f, std::vector<double> h0, double t0, double t1, std::size_t steps,
                            Method method);

/// Evaluates a drift on a single state without keeping the tape.
std::vector<double> evaluate(const Drift& f, std::span<const double> h, double t = 0.0);
VectorField as_vector_field(const Drift& f);

/// The same fixed-step scheme recorded on a tape; steps may run backward
/// (t1 < t0).
Var integrate_on_tape(const TapeField& f, Var h0, double t0, double t1, std::size_t steps, Method method);

/// Multilayer perceptron drift. Layer sizes run input → hidden… → output,
/// where input is d (or d+1 when time-conditioned, time appended last) and
/// output is d. Hidden layers use the smooth activation; the output layer is
/// linear. θ stores, per layer, the weight matrix (out×in, row-major)
/// followed by the bias.
class OdeModel : public Drift {
 public:
  OdeModel(std::vector<std::size_t> layer_sizes, Activation activation, bool time_conditioned,
           std::vector<double> theta);

  /// Weights ~ N(0, scale²), biases 0. Input-side weights of variable k and
  /// output-side weights of variable j come from streams keyed by the
  /// variable names, so permuting the names permutes the model.
  static OdeModel initialize(std::size_t d, const std::vector<std::size_t>& hidden, Activation activation,
                             bool time_conditioned, double scale, const Rng& rng,
                             const std::vector<std::string>& names = {});

  /// Linear drift f(h) = A h.
  static OdeModel linear(const Matrix& a);
  /// f ≡ 0 on d variables.
  static OdeModel zero(std::size_t d);

  std::size_t dim() const override { return layer_sizes_.back(); }
  std::size_t num_params() const override { return theta_.size(); }
  std::vector<double> params() const override { return theta_; }
  TapeField bind(Var theta) const override;

  const std::vector<std::size_t>& layer_sizes() const noexcept { return layer_sizes_; }
  Activation activation() const noexcept { return activation_; }
  bool time_conditioned() const noexcept { return time_conditioned_; }
  const std::vector<double>& theta() const noexcept { return theta_; }
  void set_theta(std::vector<double> theta);

  friend bool operator==(const OdeModel& a, const OdeModel& b) {
    return a.layer_sizes_ == b.layer_sizes_ && a.activation_ == b.activation_ &&
           a.time_conditioned_ == b.time_conditioned_ && a.theta_ == b.theta_;
  }

 private:
  std::vector<std::size_t> layer_sizes_;
  Activation activation_;
  bool time_conditioned_;
  std::vector<double> theta_;
};

/// Model parameters placed on a tape, with the forward-mode Jacobian
/// machinery needed by the flow likelihood and the Jacobian constraint. All
/// results stay differentiable with respect to θ.
class BoundMlp {
 public:
  BoundMlp(const OdeModel& model, Var theta);

  struct Forward {
    Var output;
    std::vector<Var> slopes;  // activation derivative per hidden layer, B×width
  };

  Forward forward(Var state, double t) const;
  /// Column k of the per-sample Jacobian: row i holds ∂f(x_i)/∂x_k, B×d.
  Var jacobian_column(const Forward& fw, std::size_t k) const;
  /// Tr(∂f/∂x) per sample, B×1. Exact.
  Var jacobian_trace(const Forward& fw) const;
  /// J̄[j,k] = mean_i |∂f_j/∂x_k (x_i)|, d×d.
  Var mean_abs_jacobian(Var state, double t = 0.0) const;

  std::size_t dim() const noexcept { return d_; }

 private:
  const OdeModel* model_;
  std::size_t d_;
  std::vector<Var> weights_t_;  // in×out
  std::vector<Var> biases_;     // 1×out
  Var trace_coeff_;             // one-hidden-layer shortcut, width×1
};

struct AdjointResult {
  std::vector<double> dl_dh0;
  std::vector<double> dl_dtheta;
};

/// Gradients of a loss L(h(t1)) given ∂L/∂h(t1), by integrating the adjoint
/// system (state, adjoint, parameter integral) backward from t1 to t0 with
/// the same method and step count as the forward pass.
AdjointResult adjoint_grad(const Drift& f, std::vector<double> h0, double t0, double t1, std::size_t steps,
                           std::span<const double> loss_grad, Method method = Method::Rk4);

/// Same gradients by reverse-mode differentiation through the unrolled
/// discrete solver.
AdjointResult unrolled_grad(const Drift& f, std::vector<double> h0, double t0, double t1, std::size_t steps,
                            std::span<const double> loss_grad, Method method = Method::Rk4);

struct FlowResult {
  std::vector<double> z;  // base-space point at t0
  double logdet = 0.0;    // −∫ Tr(∂f/∂z) dt
  Matrix trace;           // (steps+1)×d states from t1 down to t0, when kept
};

/// Maps a data point x (living at t1) back to the base distribution at t0
/// while integrating the exact Jacobian trace alongside.
FlowResult cnf_flow(const OdeModel& f, std::span<const double> x, double t0, double t1, std::size_t steps,
                    Method method = Method::Rk4, bool keep_trace = false);

/// log p(x) = log N(z(t0); 0, I) − ∫_{t0}^{t1} Tr(∂f/∂z) dt.
double cnf_logp(const OdeModel& f, std::span<const double> x, double t0, double t1, std::size_t steps,
                Method method = Method::Rk4);

/// Per-row log-densities of a batch (B×d) recorded on `theta`'s tape, B×1.
Var cnf_logp_on_tape(const BoundMlp& mlp, Var x, double t0, double t1, std::size_t steps, Method method);

struct Checkpoint {
  OdeModel model;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline constexpr int kCheckpointVersion = 1;

/// JSON text: format tag, version, layer sizes, activation, time flag, θ
/// (round-trip decimal), seed and config hash.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dagode
