#ifndef VIBENCH_REFERENCE_HPP
#define VIBENCH_REFERENCE_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "vibench/targets.hpp"

namespace vibench {

/// Static-path Hamiltonian Monte Carlo with a diagonal metric.
struct HmcConfig {
  int chains = 4;
  int warmup = 2000;
  int draws = 5000;  // kept draws per chain
  double path_length = 2.0;
  double target_accept = 0.7;
  /// Per-iteration step-size jitter, uniform in (1 - j, 1 + j).
  double jitter = 0.2;
  int max_leapfrog = 512;
  double init_radius = 2.0;
  std::uint64_t seed = 1;
  bool parallel = true;
};

struct ReferenceMoments {
  Vector mean;
  Matrix covariance;
  /// Split-chain potential scale reduction per coordinate.
  Vector rhat;
  std::vector<double> acceptance;  // post-warmup, per chain
  std::vector<double> step_size;   // adapted, per chain
  int kept_draws = 0;
  int divergences = 0;
  bool reliable = true;

  GroundTruth as_truth() const { return GroundTruth{mean, covariance, 0.0}; }
};

inline constexpr double kRhatLimit = 1.05;

/// Optional map applied to every kept draw before moments are pooled, e.g.
/// to report non-centered draws in centered coordinates.
using DrawMap = std::function<Vector(const Vector&)>;

ReferenceMoments reference_sampler(const TargetModel& target,
                                   const HmcConfig& config = {},
                                   const DrawMap& map = nullptr);

/// Split-R-hat for one coordinate; each chain contributes two halves.
double split_rhat(const std::vector<std::vector<double>>& chains);

}  // namespace vibench

#endif
