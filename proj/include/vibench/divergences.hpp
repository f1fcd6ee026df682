#ifndef VIBENCH_DIVERGENCES_HPP
#define VIBENCH_DIVERGENCES_HPP

#include <optional>
#include <string>

#include "vibench/numkit.hpp"

namespace vibench {

enum class DivergenceKind { ExclusiveKL, InclusiveKL, ChiSq, Alpha, TailAdaptive };

/// An f-divergence D_f(p || q) = E_q[f(p/q)], with f(1) = 0.
struct DivergenceSpec {
  DivergenceKind kind = DivergenceKind::ExclusiveKL;
  double alpha = 0.0;  // Alpha only

  static DivergenceSpec exclusive_kl() { return {DivergenceKind::ExclusiveKL, 0.0}; }
  static DivergenceSpec inclusive_kl() { return {DivergenceKind::InclusiveKL, 0.0}; }
  static DivergenceSpec chi_sq() { return {DivergenceKind::ChiSq, 0.0}; }
  static DivergenceSpec alpha_div(double a);
  static DivergenceSpec tail_adaptive() { return {DivergenceKind::TailAdaptive, 0.0}; }

  /// Mass-covering members are estimated with self-normalised weights.
  bool self_normalized() const;
  /// Power of w in f, used to normalise the loss scale (1 for KLs).
  double power() const;
};

std::string to_string(const DivergenceSpec& spec);
/// Parses exclusive_kl, inclusive_kl, chi2, alpha:<a>, tail_adaptive.
DivergenceSpec divergence_from_string(const std::string& name);

/// Finite-moment requirement on w; `plus_delta` marks "value + any delta > 0".
struct MomentRequirement {
  double value = 0.0;
  bool plus_delta = false;
};

/// Log density ratios log w_s = log p(theta_s, Y) - log q(theta_s).
struct WeightSet {
  Vector log_w;

  int size() const { return static_cast<int>(log_w.size()); }
  /// Self-normalised weights w_s / sum(w), computed in log space.
  Vector normalized() const;
  /// Throws std::invalid_argument on empty input, NaN, or +inf entries.
  void validate() const;
};

/// f(w) evaluated from log w. Overflow of exp(.) saturates to +inf.
/// Throws UnsupportedOperation for TailAdaptive, which has no pointwise f.
double f_eval(const DivergenceSpec& spec, double log_w);

/// f'(w) evaluated from log w.
double fprime_eval(const DivergenceSpec& spec, double log_w);

/// Monte Carlo loss estimate (1/S) sum f(w_s).
struct LossEstimate {
  double value = 0.0;
  /// Terms whose exp(.) overflowed; each was saturated instead of being
  /// allowed to poison the mean.
  int overflow_count = 0;
};

/// Mass-covering members use w / mean(w) unless `raw_weights` is set, which is
/// only meaningful when the target density is normalised.
LossEstimate mc_loss(const DivergenceSpec& spec, const WeightSet& ws,
                     bool raw_weights = false);

std::optional<MomentRequirement> moments_required(const DivergenceSpec& spec);

enum class KLDirection { Exclusive, Inclusive };

/// Exact KL(q || p) (Exclusive) or KL(p || q) (Inclusive) between Gaussians.
double gaussian_kl(const Vector& q_mean, const Matrix& q_cov,
                   const Vector& p_mean, const Matrix& p_cov,
                   KLDirection direction);

struct Gaussian {
  Vector mean;
  Matrix cov;
};

/// log of the integral of p^t q^(1-t). Returns +inf when the combined
/// precision t P_p + (1-t) P_q is not positive definite (the integral diverges).
double gaussian_power_integral(double t, const Gaussian& p, const Gaussian& q);

/// Closed-form D_f(p || q) between Gaussians for every pointwise member
/// (ExclusiveKL, InclusiveKL, ChiSq, Alpha). +inf when the divergence is
/// infinite.
double gaussian_divergence(const DivergenceSpec& spec, const Gaussian& p,
                           const Gaussian& q);

/// Closed-form divergence between a zero-or-general Gaussian target p and a
/// mean-field Gaussian q given as (mu, log sigma), with its gradient in
/// (mu, log sigma). Used by the deterministic best-case study.
double mean_field_gaussian_divergence(const DivergenceSpec& spec,
                                      const Gaussian& p, const Vector& lambda,
                                      Vector* grad);

/// log of the integral of p^t q^(1-t) for a mean-field Gaussian q = (mu,
/// log sigma), with its gradient. +inf when the integral diverges.
double mean_field_log_power_integral(double t, const Gaussian& p,
                                     const Vector& lambda, Vector* grad);

}  // namespace vibench

#endif
