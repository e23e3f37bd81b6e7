#include "dagode/odeflow.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>

#include <nlohmann/json.hpp>

#include "dagode/errors.hpp"

namespace dagode {

namespace {

using Vec = std::vector<double>;

bool finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void axpy(Vec& y, double a, const Vec& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

Vec step(const VectorField& f, double t, const Vec& h, double dt, Method method) {
  if (method == Method::Euler) {
    Vec out = h;
    axpy(out, dt, f(t, h));
    return out;
  }
  const Vec k1 = f(t, h);
  Vec y = h;
  axpy(y, 0.5 * dt, k1);
  const Vec k2 = f(t + 0.5 * dt, y);
  y = h;
  axpy(y, 0.5 * dt, k2);
  const Vec k3 = f(t + 0.5 * dt, y);
  y = h;
  axpy(y, dt, k3);
  const Vec k4 = f(t + dt, y);
  Vec out = h;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

void validate_interval(double t0, double t1, std::size_t steps) {
  if (steps == 0) throw ContractViolation("integrate: steps must be at least 1");
  if (!(t1 > t0)) throw ContractViolation("integrate: t1 must exceed t0");
}

Var ones_column(Tape& tape, std::size_t rows, double value) { return tape.constant(Matrix(rows, 1, value)); }

Var activate(Var a, Activation act) { return act == Activation::Tanh ? tanh(a) : elu(a); }
Var activate_prime(Var a, Activation act) { return act == Activation::Tanh ? tanh_prime(a) : elu_prime(a); }

std::size_t param_count(const std::vector<std::size_t>& sizes) {
  std::size_t p = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) p += sizes[l + 1] * sizes[l] + sizes[l + 1];
  return p;
}

struct CnfState {
  Var z;
  Var logdet;
};

// Integrates (z, ℓ) from t1 back to t0 with dz/dt = f(z), dℓ/dt = Tr ∂f/∂z.
CnfState cnf_integrate(const BoundMlp& mlp, Var x, double t0, double t1, std::size_t steps, Method method,
                       std::vector<Matrix>* states) {
  Tape& tape = *x.tape();
  const double dt = (t0 - t1) / static_cast<double>(steps);
  Var z = x;
  Var logdet = ones_column(tape, x.rows(), 0.0);
  if (states) states->push_back(z.value());
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = t1 + static_cast<double>(s) * dt;
    if (method == Method::Euler) {
      auto fw = mlp.forward(z, t);
      Var tr = mlp.jacobian_trace(fw);
      z = z + dt * fw.output;
      logdet = logdet + dt * tr;
    } else {
      auto f1 = mlp.forward(z, t);
      Var tr1 = mlp.jacobian_trace(f1);
      auto f2 = mlp.forward(z + (0.5 * dt) * f1.output, t + 0.5 * dt);
      Var tr2 = mlp.jacobian_trace(f2);
      auto f3 = mlp.forward(z + (0.5 * dt) * f2.output, t + 0.5 * dt);
      Var tr3 = mlp.jacobian_trace(f3);
      auto f4 = mlp.forward(z + dt * f3.output, t + dt);
      Var tr4 = mlp.jacobian_trace(f4);
      z = z + (dt / 6.0) * (f1.output + 2.0 * (f2.output + f3.output) + f4.output);
      logdet = logdet + (dt / 6.0) * (tr1 + 2.0 * (tr2 + tr3) + tr4);
    }
    if (!z.value().all_finite() || !logdet.value().all_finite()) throw NumericError("cnf: non-finite state", s);
    if (states) states->push_back(z.value());
  }
  return {z, logdet};
}

}  // namespace

std::string to_string(Method m) { return m == Method::Euler ? "euler" : "rk4"; }
std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "elu"; }

Method parse_method(const std::string& s) {
  if (s == "euler") return Method::Euler;
  if (s == "rk4") return Method::Rk4;
  throw ContractViolation("unknown integration method: " + s);
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "elu") return Activation::Elu;
  throw ContractViolation("unknown activation: " + s);
}

std::vector<double> integrate(const VectorField& f, std::vector<double> h0, double t0, double t1, std::size_t steps,
                              Method method) {
  validate_interval(t0, t1, steps);
  const double dt = (t1 - t0) / static_cast<double>(steps);
  Vec h = std::move(h0);
  for (std::size_t s = 0; s < steps; ++s) {
    h = step(f, t0 + static_cast<double>(s) * dt, h, dt, method);
    if (!finite(h)) throw NumericError("integrate: non-finite state", s);
  }
  return h;
}

std::vector<double> integrate(const Drift& f, std::vector<double> h0, double t0, double t1, std::size_t steps,
                              Method method) {
  return integrate(as_vector_field(f), std::move(h0), t0, t1, steps, method);
}

Matrix integrate_trajectory(const VectorField& f, std::vector<double> h0, double t0, double t1, std::size_t steps,
                            Method method) {
  validate_interval(t0, t1, steps);
  const double dt = (t1 - t0) / static_cast<double>(steps);
  Matrix out(steps + 1, h0.size());
  Vec h = std::move(h0);
  std::copy(h.begin(), h.end(), out.row(0).begin());
  for (std::size_t s = 0; s < steps; ++s) {
    h = step(f, t0 + static_cast<double>(s) * dt, h, dt, method);
    if (!finite(h)) throw NumericError("integrate: non-finite state", s);
    std::copy(h.begin(), h.end(), out.row(s + 1).begin());
  }
  return out;
}

std::vector<double> evaluate(const Drift& f, std::span<const double> h, double t) {
  Tape tape;
  const Vec theta = f.params();
  Var th = tape.constant(Matrix::row_vector(theta));
  Var out = f.bind(th)(tape.constant(Matrix::row_vector(h)), t);
  return Vec(out.value().data().begin(), out.value().data().end());
}

VectorField as_vector_field(const Drift& f) {
  return [&f](double t, std::span<const double> h) { return evaluate(f, h, t); };
}

Var integrate_on_tape(const TapeField& f, Var h0, double t0, double t1, std::size_t steps, Method method) {
  if (steps == 0) throw ContractViolation("integrate_on_tape: steps must be at least 1");
  const double dt = (t1 - t0) / static_cast<double>(steps);
  Var h = h0;
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = t0 + static_cast<double>(s) * dt;
    if (method == Method::Euler) {
      h = h + dt * f(h, t);
    } else {
      Var k1 = f(h, t);
      Var k2 = f(h + (0.5 * dt) * k1, t + 0.5 * dt);
      Var k3 = f(h + (0.5 * dt) * k2, t + 0.5 * dt);
      Var k4 = f(h + dt * k3, t + dt);
      h = h + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4);
    }
    if (!h.value().all_finite()) throw NumericError("integrate_on_tape: non-finite state", s);
  }
  return h;
}

OdeModel::OdeModel(std::vector<std::size_t> layer_sizes, Activation activation, bool time_conditioned,
                   std::vector<double> theta)
    : layer_sizes_(std::move(layer_sizes)),
      activation_(activation),
      time_conditioned_(time_conditioned),
      theta_(std::move(theta)) {
  if (layer_sizes_.size() < 2) throw ContractViolation("OdeModel: need at least input and output sizes");
  for (std::size_t s : layer_sizes_)
    if (s == 0) throw ContractViolation("OdeModel: zero-width layer");
  if (layer_sizes_.front() != layer_sizes_.back() + (time_conditioned_ ? 1 : 0))
    throw ContractViolation("OdeModel: input width must equal output width (plus one for time)");
  if (theta_.size() != param_count(layer_sizes_)) throw ContractViolation("OdeModel: parameter count mismatch");
}

OdeModel OdeModel::initialize(std::size_t d, const std::vector<std::size_t>& hidden, Activation activation,
                              bool time_conditioned, double scale, const Rng& rng,
                              const std::vector<std::string>& names) {
  std::vector<std::string> keys = names;
  if (keys.empty())
    for (std::size_t i = 0; i < d; ++i) keys.push_back("x" + std::to_string(i));
  if (keys.size() != d) throw ContractViolation("OdeModel::initialize: name count differs from d");

  std::vector<std::size_t> sizes{d + (time_conditioned ? 1 : 0)};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(d);
  const std::size_t layers = sizes.size() - 1;
  std::vector<double> theta;
  theta.reserve(param_count(sizes));
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = sizes[l];
    const std::size_t out = sizes[l + 1];
    Matrix w(out, in);
    auto input_key = [&](std::size_t c) { return c < d ? keys[c] : std::string("__time__"); };
    if (layers == 1) {
      for (std::size_t r = 0; r < out; ++r)
        for (std::size_t c = 0; c < in; ++c) {
          Rng g = rng.split("lin:" + keys[r] + "|" + input_key(c));
          w(r, c) = g.normal(0.0, scale);
        }
    } else if (l == 0) {
      for (std::size_t c = 0; c < in; ++c) {
        Rng g = rng.split("in:" + input_key(c));
        for (std::size_t r = 0; r < out; ++r) w(r, c) = g.normal(0.0, scale);
      }
    } else if (l == layers - 1) {
      for (std::size_t r = 0; r < out; ++r) {
        Rng g = rng.split("out:" + keys[r]);
        for (std::size_t c = 0; c < in; ++c) w(r, c) = g.normal(0.0, scale);
      }
    } else {
      Rng g = rng.split("layer:" + std::to_string(l));
      for (double& v : w.data()) v = g.normal(0.0, scale);
    }
    theta.insert(theta.end(), w.data().begin(), w.data().end());
    theta.insert(theta.end(), out, 0.0);
  }
  return OdeModel(std::move(sizes), activation, time_conditioned, std::move(theta));
}

OdeModel OdeModel::linear(const Matrix& a) {
  if (!a.square()) throw ContractViolation("OdeModel::linear: matrix is not square");
  std::vector<double> theta(a.data().begin(), a.data().end());
  theta.insert(theta.end(), a.rows(), 0.0);
  return OdeModel({a.rows(), a.rows()}, Activation::Tanh, false, std::move(theta));
}

OdeModel OdeModel::zero(std::size_t d) { return linear(Matrix(d, d)); }

void OdeModel::set_theta(std::vector<double> theta) {
  if (theta.size() != theta_.size()) throw ContractViolation("OdeModel::set_theta: parameter count mismatch");
  theta_ = std::move(theta);
}

TapeField OdeModel::bind(Var theta) const {
  auto mlp = std::make_shared<BoundMlp>(*this, theta);
  return [mlp](Var state, double t) { return mlp->forward(state, t).output; };
}

BoundMlp::BoundMlp(const OdeModel& model, Var theta) : model_(&model), d_(model.dim()) {
  if (theta.value().size() != model.num_params()) throw ContractViolation("BoundMlp: parameter count mismatch");
  const auto& sizes = model.layer_sizes();
  std::size_t offset = 0;
  std::vector<Var> raw;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l];
    const std::size_t out = sizes[l + 1];
    Var w = slice(theta, offset, out, in);
    offset += out * in;
    raw.push_back(w);
    weights_t_.push_back(transpose(w));
    biases_.push_back(slice(theta, offset, 1, out));
    offset += out;
  }
  if (sizes.size() == 3) {
    // Tr(W2 diag(s) W1) = Σ_h s_h Σ_{i<d} W1[h,i] W2[i,h]
    const std::size_t width = sizes[1];
    Var w1t_state = slice(weights_t_[0], 0, d_, width);
    trace_coeff_ = col_means(w1t_state * raw[1]) * static_cast<double>(d_);
  }
}

BoundMlp::Forward BoundMlp::forward(Var state, double t) const {
  if (state.cols() != d_) throw ContractViolation("BoundMlp: state width mismatch");
  Forward fw;
  Var x = state;
  if (model_->time_conditioned()) {
    const std::array<Var, 2> parts{state, ones_column(*state.tape(), state.rows(), t)};
    x = hconcat(parts);
  }
  const std::size_t layers = weights_t_.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Var a = add_row(matmul(x, weights_t_[l]), biases_[l]);
    if (l + 1 == layers) {
      fw.output = a;
    } else {
      fw.slopes.push_back(activate_prime(a, model_->activation()));
      x = activate(a, model_->activation());
    }
  }
  return fw;
}

Var BoundMlp::jacobian_column(const Forward& fw, std::size_t k) const {
  if (k >= d_) throw ContractViolation("jacobian_column: index out of range");
  const std::size_t layers = weights_t_.size();
  const std::size_t width0 = model_->layer_sizes()[1];
  Var first = slice(weights_t_[0], k * width0, 1, width0);
  Tape& tape = *first.tape();
  if (layers == 1) return add_row(tape.constant(Matrix(fw.output.rows(), d_)), first);
  Var v = mul_row(fw.slopes[0], first);
  for (std::size_t l = 1; l < layers; ++l) {
    Var p = matmul(v, weights_t_[l]);
    if (l + 1 == layers) return p;
    v = p * fw.slopes[l];
  }
  return v;
}

Var BoundMlp::jacobian_trace(const Forward& fw) const {
  if (weights_t_.size() == 2) return row_sums(mul_row(fw.slopes[0], trace_coeff_));
  Var tr = column(jacobian_column(fw, 0), 0);
  for (std::size_t k = 1; k < d_; ++k) tr = tr + column(jacobian_column(fw, k), k);
  return tr;
}

Var BoundMlp::mean_abs_jacobian(Var state, double t) const {
  const Forward fw = forward(state, t);
  std::vector<Var> cols;
  cols.reserve(d_);
  for (std::size_t k = 0; k < d_; ++k) cols.push_back(transpose(col_means(abs(jacobian_column(fw, k)))));
  return hconcat(cols);
}

namespace {

struct VjpResult {
  Vec f;
  Vec dh;
  Vec dtheta;
};

VjpResult vjp(const Drift& field, const Vec& theta, std::span<const double> h, std::span<const double> a, double t) {
  Tape tape;
  Var th = tape.variable(Matrix::row_vector(theta));
  Var state = tape.variable(Matrix::row_vector(h));
  Var out = field.bind(th)(state, t);
  Var s = sum(out * tape.constant(Matrix::row_vector(a)));
  const std::array<Var, 2> wrt{state, th};
  auto g = tape.grad(s, wrt);
  return {Vec(out.value().data().begin(), out.value().data().end()), Vec(g[0].data().begin(), g[0].data().end()),
          Vec(g[1].data().begin(), g[1].data().end())};
}

}  // namespace

AdjointResult adjoint_grad(const Drift& f, std::vector<double> h0, double t0, double t1, std::size_t steps,
                           std::span<const double> loss_grad, Method method) {
  const std::size_t d = f.dim();
  const std::size_t p = f.num_params();
  if (h0.size() != d || loss_grad.size() != d) throw ContractViolation("adjoint_grad: dimension mismatch");
  if (t1 == t0) return {Vec(loss_grad.begin(), loss_grad.end()), Vec(p, 0.0)};
  const Vec h1 = integrate(f, std::move(h0), t0, t1, steps, method);
  const Vec theta = f.params();

  // augmented state [h, a, g]: dh/dt = f, da/dt = -aᵀ∂f/∂h, dg/dt = -aᵀ∂f/∂θ
  VectorField augmented = [&](double t, std::span<const double> y) {
    auto r = vjp(f, theta, y.subspan(0, d), y.subspan(d, d), t);
    Vec dy(2 * d + p);
    for (std::size_t i = 0; i < d; ++i) {
      dy[i] = r.f[i];
      dy[d + i] = -r.dh[i];
    }
    for (std::size_t i = 0; i < p; ++i) dy[2 * d + i] = -r.dtheta[i];
    return dy;
  };
  Vec y(2 * d + p, 0.0);
  std::copy(h1.begin(), h1.end(), y.begin());
  std::copy(loss_grad.begin(), loss_grad.end(), y.begin() + static_cast<std::ptrdiff_t>(d));
  const double dt = (t0 - t1) / static_cast<double>(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    y = step(augmented, t1 + static_cast<double>(s) * dt, y, dt, method);
    if (!finite(y)) throw NumericError("adjoint_grad: non-finite state", s);
  }
  return {Vec(y.begin() + static_cast<std::ptrdiff_t>(d), y.begin() + static_cast<std::ptrdiff_t>(2 * d)),
          Vec(y.begin() + static_cast<std::ptrdiff_t>(2 * d), y.end())};
}

AdjointResult unrolled_grad(const Drift& f, std::vector<double> h0, double t0, double t1, std::size_t steps,
                            std::span<const double> loss_grad, Method method) {
  if (h0.size() != f.dim() || loss_grad.size() != f.dim()) throw ContractViolation("unrolled_grad: dimension mismatch");
  Tape tape;
  Var th = tape.variable(Matrix::row_vector(f.params()));
  Var start = tape.variable(Matrix::row_vector(h0));
  Var end = integrate_on_tape(f.bind(th), start, t0, t1, steps, method);
  Var s = sum(end * tape.constant(Matrix::row_vector(loss_grad)));
  const std::array<Var, 2> wrt{start, th};
  auto g = tape.grad(s, wrt);
  return {Vec(g[0].data().begin(), g[0].data().end()), Vec(g[1].data().begin(), g[1].data().end())};
}

FlowResult cnf_flow(const OdeModel& f, std::span<const double> x, double t0, double t1, std::size_t steps,
                    Method method, bool keep_trace) {
  if (x.size() != f.dim()) throw ContractViolation("cnf_flow: dimension mismatch");
  if (steps == 0 || !(t1 > t0)) throw ContractViolation("cnf_flow: need steps >= 1 and t1 > t0");
  Tape tape;
  BoundMlp mlp(f, tape.constant(Matrix::row_vector(f.theta())));
  std::vector<Matrix> states;
  auto st = cnf_integrate(mlp, tape.constant(Matrix::row_vector(x)), t0, t1, steps, method,
                          keep_trace ? &states : nullptr);
  FlowResult out;
  out.z.assign(st.z.value().data().begin(), st.z.value().data().end());
  out.logdet = st.logdet.value().item();
  if (keep_trace) {
    out.trace = Matrix(states.size(), f.dim());
    for (std::size_t s = 0; s < states.size(); ++s) std::copy(states[s].data().begin(), states[s].data().end(), out.trace.row(s).begin());
  }
  return out;
}

double cnf_logp(const OdeModel& f, std::span<const double> x, double t0, double t1, std::size_t steps,
                Method method) {
  const FlowResult r = cnf_flow(f, x, t0, t1, steps, method, false);
  double sq = 0.0;
  for (double z : r.z) sq += z * z;
  const double base = -0.5 * sq - 0.5 * static_cast<double>(r.z.size()) * std::log(2.0 * std::numbers::pi);
  return base + r.logdet;
}

Var cnf_logp_on_tape(const BoundMlp& mlp, Var x, double t0, double t1, std::size_t steps, Method method) {
  if (steps == 0 || !(t1 > t0)) throw ContractViolation("cnf_logp_on_tape: need steps >= 1 and t1 > t0");
  auto st = cnf_integrate(mlp, x, t0, t1, steps, method, nullptr);
  const double log_norm = -0.5 * static_cast<double>(mlp.dim()) * std::log(2.0 * std::numbers::pi);
  return (-0.5 * row_sums(square(st.z)) + log_norm) + st.logdet;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["format"] = "dagode-checkpoint";
  j["version"] = kCheckpointVersion;
  j["layer_sizes"] = ckpt.model.layer_sizes();
  j["activation"] = to_string(ckpt.model.activation());
  j["time_conditioned"] = ckpt.model.time_conditioned();
  j["theta"] = ckpt.model.theta();
  j["seed"] = ckpt.seed;
  j["config_hash"] = ckpt.config_hash;
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write checkpoint " + path.string(), 0);
  out << j.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path.string(), 0);
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("format") != "dagode-checkpoint") throw ParseError("checkpoint: unknown format tag", 0);
    if (j.at("version").get<int>() != kCheckpointVersion) throw ParseError("checkpoint: unsupported version", 0);
    OdeModel model(j.at("layer_sizes").get<std::vector<std::size_t>>(),
                   parse_activation(j.at("activation").get<std::string>()), j.at("time_conditioned").get<bool>(),
                   j.at("theta").get<std::vector<double>>());
    return {std::move(model), j.at("seed").get<std::uint64_t>(), j.at("config_hash").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), 0);
  }
}

}  // namespace dagode
