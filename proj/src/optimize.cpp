#include "vibench/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "vibench/errors.hpp"
#include "vibench/seeding.hpp"

namespace vibench {

std::string to_string(OptimizerMethod method) {
  switch (method) {
    case OptimizerMethod::SGD: return "sgd";
    case OptimizerMethod::RMSProp: return "rmsprop";
    case OptimizerMethod::Adam: return "adam";
    case OptimizerMethod::DeterministicBFGSLike: return "bfgs";
  }
  return "unknown";
}

OptimizerMethod optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerMethod::SGD;
  if (name == "rmsprop") return OptimizerMethod::RMSProp;
  if (name == "adam") return OptimizerMethod::Adam;
  if (name == "bfgs") return OptimizerMethod::DeterministicBFGSLike;
  throw InvalidSpec("unknown optimizer: " + name);
}

std::string to_string(Termination reason) {
  switch (reason) {
    case Termination::Converged: return "converged";
    case Termination::MaxIters: return "max_iters";
    case Termination::Failed: return "failed";
  }
  return "unknown";
}

void OptimizerConfig::validate() const {
  if (!(step_size > 0.0)) throw InvalidSpec("optimizer: step size must be > 0");
  if (max_iters < 1) throw InvalidSpec("optimizer: max_iters must be >= 1");
  if (window < 2) throw InvalidSpec("optimizer: window must be >= 2");
  if (!(tolerance > 0.0)) throw InvalidSpec("optimizer: tolerance must be > 0");
  if (!(rho >= 0.0 && rho < 1.0)) throw InvalidSpec("optimizer: rho in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidSpec("optimizer: beta parameters in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw InvalidSpec("optimizer: epsilon must be > 0");
  if (!(loss_smoothing >= 0.0 && loss_smoothing < 1.0)) {
    throw InvalidSpec("optimizer: loss smoothing in [0, 1)");
  }
  if (snapshot_interval < 1) throw InvalidSpec("optimizer: snapshot interval >= 1");
  if (draws_per_step < 0) throw InvalidSpec("optimizer: draws per step >= 0");
}

int default_draws_per_step(const DivergenceSpec& spec) {
  return spec.kind == DivergenceKind::ExclusiveKL ? 10 : 200;
}

Vector step(const OptimizerConfig& config, OptimizerState& state,
            const Vector& grad, const Vector& lambda) {
  if (grad.size() != lambda.size()) {
    throw std::invalid_argument("step: gradient and parameter sizes differ");
  }
  if (!grad.allFinite()) {
    ++state.failed_steps;
    return lambda;
  }
  const Eigen::Index k = lambda.size();
  if (state.second.size() != k) state.second = Vector::Zero(k);
  if (state.first.size() != k) state.first = Vector::Zero(k);
  ++state.t;
  const double eta = config.step_size;
  switch (config.method) {
    case OptimizerMethod::SGD:
      return lambda - eta * grad;
    case OptimizerMethod::RMSProp: {
      state.second = config.rho * state.second +
                     (1.0 - config.rho) * grad.array().square().matrix();
      return lambda - eta * (grad.array() /
                             (state.second.array() + config.epsilon).sqrt())
                                .matrix();
    }
    case OptimizerMethod::Adam: {
      state.first = config.beta1 * state.first + (1.0 - config.beta1) * grad;
      state.second = config.beta2 * state.second +
                     (1.0 - config.beta2) * grad.array().square().matrix();
      const double t = static_cast<double>(state.t);
      const double c1 = 1.0 - std::pow(config.beta1, t);
      const double c2 = 1.0 - std::pow(config.beta2, t);
      const Vector m_hat = state.first / c1;
      const Vector v_hat = state.second / c2;
      return lambda -
             eta * (m_hat.array() / (v_hat.array().sqrt() + config.epsilon)).matrix();
    }
    case OptimizerMethod::DeterministicBFGSLike:
      break;
  }
  throw InvalidSpec("step: BFGS has no stochastic update; use deterministic_minimize");
}

bool check_convergence(const std::vector<double>& smoothed_loss,
                       const Vector& lambda_now, const Vector& lambda_prev,
                       int window, double tol) {
  const std::size_t w = static_cast<std::size_t>(window);
  if (window < 2 || smoothed_loss.size() < 2 * w) return false;
  const std::size_t n = smoothed_loss.size();
  double recent = 0.0;
  double previous = 0.0;
  for (std::size_t i = n - w; i < n; ++i) recent += smoothed_loss[i];
  for (std::size_t i = n - 2 * w; i < n - w; ++i) previous += smoothed_loss[i];
  recent /= static_cast<double>(w);
  previous /= static_cast<double>(w);
  if (!std::isfinite(recent) || !std::isfinite(previous)) return false;
  const double rel = std::abs(recent - previous) / std::max(std::abs(previous), 1.0);
  const double move =
      (lambda_now - lambda_prev).norm() / (1.0 + lambda_now.norm());
  return rel < tol && move < tol;
}

FitResult fit(const TargetModel& target, const Family& family,
              const DivergenceSpec& spec, EstimatorKind estimator,
              const OptimizerConfig& config, const std::optional<Vector>& init) {
  config.validate();
  if (config.method == OptimizerMethod::DeterministicBFGSLike) {
    throw InvalidSpec("fit: stochastic optimiser required");
  }
  validate_combination(spec, family, estimator);
  Vector lambda = init ? *init : family.initial_params(config.seed);
  family.check_params(lambda);
  const int draws =
      config.draws_per_step > 0 ? config.draws_per_step : default_draws_per_step(spec);

  FitResult result;
  result.estimator = estimator;
  result.state.method = config.method;
  OptTrace& trace = result.trace;
  std::vector<double> smoothed;
  smoothed.reserve(static_cast<std::size_t>(config.max_iters));
  double ema = 0.0;
  double ema_norm = 0.0;
  Vector best = lambda;
  double best_loss = std::numeric_limits<double>::infinity();
  Vector window_mark = lambda;
  // early smoothed values average only a handful of noisy losses
  const int burn_in = std::min(config.window, std::max(1, config.max_iters / 2));
  int iterations = 0;
  int failed = 0;
  trace.termination = Termination::MaxIters;

  for (int t = 1; t <= config.max_iters; ++t) {
    iterations = t;
    const BaseDraws base =
        family.draw_base(draws, derive_seed(config.seed, static_cast<std::uint64_t>(t)));
    TraceRecord rec;
    rec.iter = t;
    GradientEstimate est;
    bool ok = true;
    try {
      est = estimate_gradient(spec, estimator, family, lambda, target, base);
      ok = !est.failed && est.grad.allFinite() && std::isfinite(est.loss.value);
    } catch (const NumericalError& e) {
      ok = false;
      trace.failure = e.what();
    }
    if (ok) {
      rec.loss = est.loss.value;
      rec.grad_norm = est.grad.norm();
      ema = config.loss_smoothing * ema + (1.0 - config.loss_smoothing) * rec.loss;
      ema_norm = config.loss_smoothing * ema_norm + (1.0 - config.loss_smoothing);
      rec.smoothed_loss = ema / ema_norm;
      smoothed.push_back(rec.smoothed_loss);
      if (t >= burn_in && rec.smoothed_loss < best_loss) {
        best_loss = rec.smoothed_loss;
        best = lambda;
        trace.best_iter = t;
      }
      lambda = step(config, result.state, est.grad, lambda);
    } else {
      ++failed;
      ++result.state.failed_steps;
      rec.failed = true;
      rec.loss = std::numeric_limits<double>::quiet_NaN();
      rec.smoothed_loss = smoothed.empty() ? rec.loss : smoothed.back();
      rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
      if (trace.failure.empty() && !est.failure.empty()) trace.failure = est.failure;
    }
    trace.records.push_back(rec);
    if (t % config.snapshot_interval == 0) trace.snapshots.push_back({t, lambda});

    if (t >= config.window && 2 * failed > t) {
      trace.termination = Termination::Failed;
      break;
    }
    if (t % config.window == 0) {
      if (check_convergence(smoothed, lambda, window_mark, config.window,
                            config.tolerance)) {
        trace.termination = Termination::Converged;
        break;
      }
      window_mark = lambda;
    }
  }
  if (2 * failed > iterations) trace.termination = Termination::Failed;
  if (trace.termination == Termination::Failed && trace.failure.empty()) {
    trace.failure = "more than half of the gradient steps failed";
  }
  trace.failed_steps = failed;
  trace.best_smoothed_loss = best_loss;
  if (trace.snapshots.empty() || trace.snapshots.back().iter != iterations) {
    trace.snapshots.push_back({iterations, lambda});
  }
  result.final_lambda = lambda;
  result.params = FamilyParams{family.kind(), family.dim(), best};
  return result;
}

MinimizeResult deterministic_minimize(const Objective& objective,
                                      const Vector& lambda0,
                                      const MinimizeOptions& options) {
  const Eigen::Index k = lambda0.size();
  MinimizeResult res;
  Vector x = lambda0;
  Vector g(k);
  double f = objective(x, &g);
  if (!std::isfinite(f) || !g.allFinite()) {
    throw NumericalError("deterministic_minimize: infeasible starting point", -1);
  }
  Matrix h = Matrix::Identity(k, k);
  bool identity = true;
  Vector g_new(k);
  for (int it = 0; it < options.max_iters; ++it) {
    res.iterations = it;
    if (g.norm() < options.grad_tol) {
      res.converged = true;
      break;
    }
    Vector p = -h * g;
    if (g.dot(p) >= 0.0) {
      h.setIdentity();
      identity = true;
      p = -g;
    }
    const double slope = g.dot(p);
    double alpha = 1.0;
    bool accepted = false;
    double f_new = 0.0;
    Vector x_new;
    for (int bt = 0; bt < 80; ++bt) {
      x_new = x + alpha * p;
      f_new = objective(x_new, &g_new);
      if (std::isfinite(f_new) && g_new.allFinite()) {
        const bool armijo = f_new <= f + 1e-4 * alpha * slope;
        // near the optimum f stalls at rounding level; accept on gradient decrease
        const bool flat = std::abs(f_new - f) <= 1e-13 * (1.0 + std::abs(f)) &&
                          g_new.norm() < g.norm();
        if (armijo || flat) {
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!identity) {
        h.setIdentity();
        identity = true;
        continue;
      }
      res.lambda = x;
      res.value = f;
      res.grad_norm = g.norm();
      throw NumericalError("deterministic_minimize: line search failed at |g| = " +
                               std::to_string(res.grad_norm),
                           it);
    }
    const Vector s = x_new - x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-300) {
      if (identity) h *= sy / y.dot(y);
      const double r = 1.0 / sy;
      const Vector hy = h * y;
      // (I - r s y^T) H (I - r y s^T) + r s s^T
      h += (r * r * y.dot(hy) + r) * (s * s.transpose()) -
           r * (hy * s.transpose() + s * hy.transpose());
      identity = false;
    }
    x = x_new;
    f = f_new;
    g = g_new;
  }
  res.lambda = x;
  res.value = f;
  res.grad_norm = g.norm();
  if (!res.converged && res.grad_norm < options.grad_tol) res.converged = true;
  return res;
}

namespace {

nlohmann::json vec_to_json(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vec_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  nlohmann::json j;
  j["iter"] = checkpoint.iter;
  j["family"] = to_string(checkpoint.params.family);
  j["dim"] = checkpoint.params.dim;
  j["lambda"] = vec_to_json(checkpoint.params.values);
  j["optimizer"] = {{"method", to_string(checkpoint.state.method)},
                    {"t", checkpoint.state.t},
                    {"failed_steps", checkpoint.state.failed_steps},
                    {"first", vec_to_json(checkpoint.state.first)},
                    {"second", vec_to_json(checkpoint.state.second)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
    Checkpoint c;
    c.iter = j.at("iter").get<int>();
    c.params.family = family_from_string(j.at("family").get<std::string>());
    c.params.dim = j.at("dim").get<int>();
    c.params.values = vec_from_json(j.at("lambda"));
    const auto& o = j.at("optimizer");
    c.state.method = optimizer_from_string(o.at("method").get<std::string>());
    c.state.t = o.at("t").get<long long>();
    c.state.failed_steps = o.at("failed_steps").get<int>();
    c.state.first = vec_from_json(o.at("first"));
    c.state.second = vec_from_json(o.at("second"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec("malformed checkpoint " + path + ": " + e.what());
  }
}

}  // namespace vibench
