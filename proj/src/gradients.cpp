#include "vibench/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "vibench/errors.hpp"

namespace vibench {
namespace {

constexpr double kMaxLog = 709.0;

/// theta_s, log q, log p, grad log p and log w for every base draw.
struct DrawEval {
  Matrix thetas;
  Matrix grad_logp;  // filled only when requested
  Vector logp;
  Vector logq;
  Vector log_w;
};

DrawEval evaluate_draws(const Family& family, const Vector& lambda,
                        const TargetModel& target, const BaseDraws& draws,
                        bool need_grad) {
  family.check_params(lambda);
  if (target.dim() != family.dim()) {
    throw std::invalid_argument("target and family dimensions differ");
  }
  const int count = draws.size();
  if (count < 1) throw std::invalid_argument("gradient: need at least one draw");
  const SampleBatch batch = sample_transform(family, lambda, draws);
  DrawEval ev{batch.thetas, Matrix(), Vector(count), batch.logq, Vector(count)};
  if (need_grad) ev.grad_logp.resize(count, family.dim());
  Vector g;
  for (int s = 0; s < count; ++s) {
    const Vector theta = batch.thetas.row(s).transpose();
    if (need_grad) {
      ev.logp[s] = target.log_joint_grad(theta, g);
      ev.grad_logp.row(s) = g.transpose();
    } else {
      ev.logp[s] = target.log_joint(theta);
    }
    ev.log_w[s] = ev.logp[s] - ev.logq[s];
    if (std::isnan(ev.log_w[s]) || ev.log_w[s] == std::numeric_limits<double>::infinity()) {
      throw NumericalError("non-finite log density ratio", s);
    }
  }
  return ev;
}

/// Finalises mean and per-coordinate variance of the per-draw terms (rows).
GradientEstimate reduce(const Matrix& terms, EstimatorKind kind) {
  GradientEstimate est;
  est.estimator = kind;
  est.draws = static_cast<int>(terms.rows());
  const Eigen::Index k = terms.cols();
  est.grad = Vector::Zero(k);
  for (Eigen::Index s = 0; s < terms.rows(); ++s) est.grad += terms.row(s).transpose();
  est.grad /= static_cast<double>(terms.rows());
  est.per_coordinate_variance = Vector::Zero(k);
  if (terms.rows() > 1) {
    for (Eigen::Index s = 0; s < terms.rows(); ++s) {
      est.per_coordinate_variance +=
          (terms.row(s).transpose() - est.grad).array().square().matrix();
    }
    est.per_coordinate_variance /= static_cast<double>(terms.rows() - 1);
  }
  if (!est.grad.allFinite()) {
    est.failed = true;
    est.failure = "non-finite gradient";
  }
  return est;
}

void attach_loss(GradientEstimate& est, const DivergenceSpec& spec,
                 const Vector& log_w) {
  est.weights.log_w = log_w;
  const DivergenceSpec monitor = spec.kind == DivergenceKind::TailAdaptive
                                     ? DivergenceSpec::exclusive_kl()
                                     : spec;
  est.loss = mc_loss(monitor, est.weights);
}

/// log of the weights entering power terms: self-normalised so that their
/// mean is one when the divergence requires it, raw otherwise.
Vector power_log_weights(const DivergenceSpec& spec, const Vector& log_w) {
  if (!spec.self_normalized()) return log_w;
  const double shift =
      log_sum_exp(log_w) - std::log(static_cast<double>(log_w.size()));
  return (log_w.array() - shift).matrix();
}

GradientEstimate failed_estimate(EstimatorKind kind, int overflow,
                                 std::string why, int k, int draws) {
  GradientEstimate est;
  est.estimator = kind;
  est.failed = true;
  est.overflow_count = overflow;
  est.failure = std::move(why);
  est.grad = Vector::Constant(k, std::numeric_limits<double>::quiet_NaN());
  est.per_coordinate_variance = Vector::Zero(k);
  est.draws = draws;
  return est;
}

}  // namespace

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Score: return "score";
    case EstimatorKind::EntropyScore: return "entropy_score";
    case EstimatorKind::Reparameterized: return "rp";
    case EstimatorKind::EntropyRP: return "entropy_rp";
    case EstimatorKind::TailAdaptive: return "tail_adaptive";
  }
  return "unknown";
}

EstimatorKind estimator_from_string(const std::string& name) {
  if (name == "score") return EstimatorKind::Score;
  if (name == "entropy_score") return EstimatorKind::EntropyScore;
  if (name == "rp") return EstimatorKind::Reparameterized;
  if (name == "entropy_rp") return EstimatorKind::EntropyRP;
  if (name == "tail_adaptive") return EstimatorKind::TailAdaptive;
  throw InvalidSpec("unknown estimator: " + name);
}

EstimatorKind default_estimator(const DivergenceSpec& spec) {
  switch (spec.kind) {
    case DivergenceKind::InclusiveKL: return EstimatorKind::Score;
    case DivergenceKind::Alpha:
      return spec.alpha > 1.0 ? EstimatorKind::Score
                              : EstimatorKind::Reparameterized;
    case DivergenceKind::TailAdaptive: return EstimatorKind::TailAdaptive;
    default: return EstimatorKind::Reparameterized;
  }
}

void validate_combination(const DivergenceSpec& spec, const Family& family,
                          EstimatorKind estimator) {
  const std::string what = to_string(family.kind()) + "/" + to_string(spec) +
                           "/" + to_string(estimator);
  const bool tail = spec.kind == DivergenceKind::TailAdaptive;
  if (tail != (estimator == EstimatorKind::TailAdaptive)) {
    throw InvalidSpec("unsupported combination " + what +
                      ": tail-adaptive divergence pairs only with its estimator");
  }
  if ((estimator == EstimatorKind::Score ||
       estimator == EstimatorKind::EntropyScore) &&
      !family.supports_score()) {
    throw InvalidSpec("unsupported combination " + what +
                      ": family has no tractable log q at arbitrary theta");
  }
  if (estimator == EstimatorKind::EntropyRP ||
      estimator == EstimatorKind::EntropyScore) {
    if (spec.kind != DivergenceKind::ExclusiveKL) {
      throw InvalidSpec("unsupported combination " + what +
                        ": entropy form exists for exclusive KL only");
    }
    if (!family.entropy(family.initial_params(0))) {
      throw InvalidSpec("unsupported combination " + what +
                        ": family has no closed-form entropy");
    }
  }
}

GradientEstimate score_gradient(const DivergenceSpec& spec,
                                const Family& family, const Vector& lambda,
                                const TargetModel& target,
                                const BaseDraws& draws) {
  if (!family.supports_score()) {
    throw UnsupportedOperation(to_string(family.kind()) +
                               ": score-function gradient unsupported");
  }
  if (spec.kind == DivergenceKind::TailAdaptive) {
    throw UnsupportedOperation("score_gradient: use tail_adaptive_gradient");
  }
  const DrawEval ev = evaluate_draws(family, lambda, target, draws, false);
  const int count = draws.size();
  const int k = family.num_params();
  Matrix terms(count, k);
  int overflow = 0;

  Vector lw = ev.log_w;
  if (spec.kind != DivergenceKind::ExclusiveKL) {
    WeightSet{ev.log_w}.validate();
    if (log_sum_exp(ev.log_w) == -std::numeric_limits<double>::infinity()) {
      throw std::invalid_argument("score_gradient: all weights are zero");
    }
    lw = power_log_weights(spec, ev.log_w);
  }

  for (int s = 0; s < count; ++s) {
    const Vector score =
        family.score_grad_logq(lambda, ev.thetas.row(s).transpose());
    double coef = 0.0;
    switch (spec.kind) {
      case DivergenceKind::ExclusiveKL:
        coef = -ev.log_w[s];
        break;
      case DivergenceKind::InclusiveKL:
        // f - w f' = -w, with w / mean(w) in place of w
        coef = -std::exp(lw[s]);
        break;
      case DivergenceKind::ChiSq:
      case DivergenceKind::Alpha: {
        const double a = spec.power();
        if (a * lw[s] > kMaxLog) {
          ++overflow;
          coef = std::numeric_limits<double>::infinity();
        } else {
          coef = -std::exp(a * lw[s]) / a;
        }
        break;
      }
      case DivergenceKind::TailAdaptive:
        break;
    }
    terms.row(s) = (coef * score).transpose();
  }
  if (overflow > 0) {
    GradientEstimate est = failed_estimate(EstimatorKind::Score, overflow,
                                           "weight power overflow", k, count);
    attach_loss(est, spec, ev.log_w);
    return est;
  }
  GradientEstimate est = reduce(terms, EstimatorKind::Score);
  attach_loss(est, spec, ev.log_w);
  return est;
}

GradientEstimate entropy_form_score_gradient(const Family& family,
                                             const Vector& lambda,
                                             const TargetModel& target,
                                             const BaseDraws& draws) {
  const auto h_grad = family.entropy_grad(lambda);
  if (!h_grad) {
    throw UnsupportedOperation(to_string(family.kind()) +
                               ": no closed-form entropy");
  }
  const DrawEval ev = evaluate_draws(family, lambda, target, draws, false);
  const int count = draws.size();
  Matrix terms(count, family.num_params());
  for (int s = 0; s < count; ++s) {
    const Vector score =
        family.score_grad_logq(lambda, ev.thetas.row(s).transpose());
    terms.row(s) = (-ev.logp[s] * score).transpose();
  }
  GradientEstimate est = reduce(terms, EstimatorKind::EntropyScore);
  est.grad -= *h_grad;
  attach_loss(est, DivergenceSpec::exclusive_kl(), ev.log_w);
  return est;
}

GradientEstimate rp_gradient(const DivergenceSpec& spec, const Family& family,
                             const Vector& lambda, const TargetModel& target,
                             const BaseDraws& draws) {
  if (spec.kind == DivergenceKind::TailAdaptive) {
    throw UnsupportedOperation("rp_gradient: use tail_adaptive_gradient");
  }
  const DrawEval ev = evaluate_draws(family, lambda, target, draws, true);
  const int count = draws.size();
  const int k = family.num_params();
  const Vector lw = power_log_weights(spec, ev.log_w);
  Matrix terms(count, k);
  int overflow = 0;
  for (int s = 0; s < count; ++s) {
    double coef = 0.0;  // d f(w) / d log w
    switch (spec.kind) {
      case DivergenceKind::ExclusiveKL:
        coef = -1.0;
        break;
      case DivergenceKind::ChiSq:
        // 2 w^2 grad log w with raw weights
        if (2.0 * ev.log_w[s] > kMaxLog) {
          ++overflow;
        } else {
          coef = 2.0 * std::exp(2.0 * ev.log_w[s]);
        }
        break;
      case DivergenceKind::InclusiveKL:
        coef = std::exp(lw[s]) * (lw[s] + 1.0);
        break;
      case DivergenceKind::Alpha: {
        const double a = spec.alpha;
        if (a * lw[s] > kMaxLog || lw[s] > kMaxLog) {
          ++overflow;
        } else {
          coef = (a * std::exp(a * lw[s]) - std::exp(lw[s])) / (a * (a - 1.0));
        }
        break;
      }
      case DivergenceKind::TailAdaptive:
        break;
    }
    if (coef == 0.0) {
      terms.row(s).setZero();
      continue;
    }
    const Vector eps = draws.eps.row(s).transpose();
    const Vector grad_log_w =
        family.backward(lambda, eps, ev.grad_logp.row(s).transpose(), 1.0);
    terms.row(s) = (coef * grad_log_w).transpose();
  }
  if (overflow > 0) {
    GradientEstimate est = failed_estimate(EstimatorKind::Reparameterized,
                                           overflow, "weight power overflow",
                                           k, count);
    attach_loss(est, spec, ev.log_w);
    return est;
  }
  GradientEstimate est = reduce(terms, EstimatorKind::Reparameterized);
  attach_loss(est, spec, ev.log_w);
  return est;
}

GradientEstimate entropy_form_rp_gradient(const Family& family,
                                          const Vector& lambda,
                                          const TargetModel& target,
                                          const BaseDraws& draws) {
  const auto h_grad = family.entropy_grad(lambda);
  if (!h_grad) {
    throw UnsupportedOperation(to_string(family.kind()) +
                               ": no closed-form entropy");
  }
  const DrawEval ev = evaluate_draws(family, lambda, target, draws, true);
  const int count = draws.size();
  Matrix terms(count, family.num_params());
  for (int s = 0; s < count; ++s) {
    const Vector eps = draws.eps.row(s).transpose();
    terms.row(s) = -param_jacobian_vec(family, lambda, eps,
                                       ev.grad_logp.row(s).transpose())
                        .transpose();
  }
  GradientEstimate est = reduce(terms, EstimatorKind::EntropyRP);
  est.grad -= *h_grad;
  attach_loss(est, DivergenceSpec::exclusive_kl(), ev.log_w);
  return est;
}

Vector rank_weights(const Vector& log_w) {
  const Eigen::Index n = log_w.size();
  if (n == 0) throw std::invalid_argument("rank_weights: empty input");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return log_w[a] < log_w[b]; });
  Vector rank(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && log_w[order[j + 1]] == log_w[order[i]]) ++j;
    // ranks are 1-based; ties share the average rank
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }
  const Vector normalized = rank / static_cast<double>(n);
  return normalized / normalized.sum();
}

GradientEstimate tail_adaptive_gradient(const Family& family,
                                        const Vector& lambda,
                                        const TargetModel& target,
                                        const BaseDraws& draws) {
  if (draws.size() < 2) {
    throw std::invalid_argument("tail_adaptive_gradient: need S >= 2");
  }
  const DrawEval ev = evaluate_draws(family, lambda, target, draws, true);
  const int count = draws.size();
  const Vector gamma = rank_weights(ev.log_w);
  Matrix terms(count, family.num_params());
  for (int s = 0; s < count; ++s) {
    const Vector eps = draws.eps.row(s).transpose();
    const Vector grad_log_w =
        family.backward(lambda, eps, ev.grad_logp.row(s).transpose(), 1.0);
    terms.row(s) = (-static_cast<double>(count) * gamma[s] * grad_log_w).transpose();
  }
  GradientEstimate est = reduce(terms, EstimatorKind::TailAdaptive);
  attach_loss(est, DivergenceSpec::tail_adaptive(), ev.log_w);
  return est;
}

GradientEstimate estimate_gradient(const DivergenceSpec& spec,
                                   EstimatorKind estimator,
                                   const Family& family, const Vector& lambda,
                                   const TargetModel& target,
                                   const BaseDraws& draws) {
  validate_combination(spec, family, estimator);
  switch (estimator) {
    case EstimatorKind::Score:
      return score_gradient(spec, family, lambda, target, draws);
    case EstimatorKind::EntropyScore:
      return entropy_form_score_gradient(family, lambda, target, draws);
    case EstimatorKind::Reparameterized:
      return rp_gradient(spec, family, lambda, target, draws);
    case EstimatorKind::EntropyRP:
      return entropy_form_rp_gradient(family, lambda, target, draws);
    case EstimatorKind::TailAdaptive:
      return tail_adaptive_gradient(family, lambda, target, draws);
  }
  throw InvalidSpec("unknown estimator");
}

}  // namespace vibench
