#ifndef VIBENCH_GRADIENTS_HPP
#define VIBENCH_GRADIENTS_HPP

#include <string>

#include "vibench/divergences.hpp"
#include "vibench/families.hpp"
#include "vibench/targets.hpp"

namespace vibench {

enum class EstimatorKind {
  Score,            // score function; self-normalised for mass-covering f
  EntropyScore,     // exclusive KL: score term for E_q[-log p] + exact entropy
  Reparameterized,  // total derivative through T_lambda (no STL)
  EntropyRP,        // exclusive KL: RP term for E_q[-log p] + exact entropy
  TailAdaptive,     // rank-weighted RP gradients of log w
};

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_from_string(const std::string& name);

/// Estimator used when none is requested: score for the mass-covering
/// InclusiveKL/Alpha(>1), rank weighting for TailAdaptive, RP otherwise.
EstimatorKind default_estimator(const DivergenceSpec& spec);

/// Throws InvalidSpec when the family/divergence/estimator triple is not
/// supported (e.g. score estimators with a planar flow).
void validate_combination(const DivergenceSpec& spec, const Family& family,
                          EstimatorKind estimator);

/// Loss-gradient estimate G(lambda) = (1/S) sum g_s. The sign convention is
/// that of a gradient of the loss: optimisers subtract it.
struct GradientEstimate {
  Vector grad;
  /// Empirical variance of the per-draw terms g_s, per coordinate.
  Vector per_coordinate_variance;
  int draws = 0;
  EstimatorKind estimator = EstimatorKind::Reparameterized;
  bool failed = false;
  int overflow_count = 0;
  std::string failure;
  /// Loss estimate on the same draws (exclusive KL for TailAdaptive).
  LossEstimate loss;
  WeightSet weights;
};

GradientEstimate score_gradient(const DivergenceSpec& spec,
                                const Family& family, const Vector& lambda,
                                const TargetModel& target,
                                const BaseDraws& draws);

/// Exclusive-KL score estimator using the exact entropy:
/// per-draw terms -log p(theta_s) grad log q(theta_s), minus grad H.
GradientEstimate entropy_form_score_gradient(const Family& family,
                                             const Vector& lambda,
                                             const TargetModel& target,
                                             const BaseDraws& draws);

GradientEstimate rp_gradient(const DivergenceSpec& spec, const Family& family,
                             const Vector& lambda, const TargetModel& target,
                             const BaseDraws& draws);

GradientEstimate entropy_form_rp_gradient(const Family& family,
                                          const Vector& lambda,
                                          const TargetModel& target,
                                          const BaseDraws& draws);

GradientEstimate tail_adaptive_gradient(const Family& family,
                                        const Vector& lambda,
                                        const TargetModel& target,
                                        const BaseDraws& draws);

/// Dispatches on `estimator`.
GradientEstimate estimate_gradient(const DivergenceSpec& spec,
                                   EstimatorKind estimator,
                                   const Family& family, const Vector& lambda,
                                   const TargetModel& target,
                                   const BaseDraws& draws);

/// Normalised empirical-rank weights r_s / S (ties share their average rank),
/// rescaled to sum to one. Depends on the ordering of log_w only.
Vector rank_weights(const Vector& log_w);

}  // namespace vibench

#endif
