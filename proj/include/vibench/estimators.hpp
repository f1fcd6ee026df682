#ifndef VIBENCH_ESTIMATORS_HPP
#define VIBENCH_ESTIMATORS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vibench/diagnostics.hpp"
#include "vibench/families.hpp"
#include "vibench/targets.hpp"

namespace vibench {

enum class MomentMethod { PlainQ, SNIS, PSIS };

std::string to_string(MomentMethod method);

struct MomentEstimate {
  Vector mean;
  Matrix covariance;
  MomentMethod method = MomentMethod::PlainQ;
  std::optional<double> khat;
  std::vector<std::string> warnings;
};

/// sum_s (w_s / sum w) phi(theta_s) for each column of phi (S x m).
Vector snis_expectation(const WeightSet& ws, const Matrix& phi_values);

/// Weighted mean and covariance of the rows of `thetas`; normalised weights
/// must sum to one.
MomentEstimate weighted_moments(const Matrix& thetas, const Vector& weights,
                                MomentMethod method);

inline constexpr int kDefaultEstimateDraws = 4000;

/// Draws S points from q_lambda (seeded) and estimates the target moments.
MomentEstimate estimate_moments(const Family& family, const Vector& lambda,
                                const TargetModel& target, int draws,
                                MomentMethod method, std::uint64_t seed);

/// All three estimates from one shared set of draws.
struct MomentSuite {
  MomentEstimate plain;
  MomentEstimate snis;
  MomentEstimate psis;
  WeightSet weights;
  ParetoFit fit;
};

MomentSuite estimate_all_moments(const Family& family, const Vector& lambda,
                                 const TargetModel& target, int draws,
                                 std::uint64_t seed);

struct RelativeError {
  double mean_err = 0.0;
  double cov_err = 0.0;
};

/// ||mu_hat - mu|| / max(||mu||, 1) and ||Sigma_hat - Sigma||_F / ||Sigma||_F.
RelativeError relative_error(const MomentEstimate& est, const GroundTruth& truth);

}  // namespace vibench

#endif
