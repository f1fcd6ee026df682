#ifndef VIBENCH_DIAGNOSTICS_HPP
#define VIBENCH_DIAGNOSTICS_HPP

#include <optional>
#include <string>
#include <utility>

#include "vibench/divergences.hpp"

namespace vibench {

/// Practical reliability threshold on the Pareto tail index.
inline constexpr double kKhatThreshold = 0.7;

/// Fitted generalised Pareto tail. khat > 0 means a heavy tail; the tail has
/// finite moments of order < 1/khat.
struct ParetoFit {
  double khat = 0.0;
  double sigma = 0.0;
  int tail_count = 0;
  double threshold = 0.0;
  bool reliable = true;
  std::string note;

  bool exceeds_threshold() const { return khat > kKhatThreshold; }
};

/// Zhang-Stephens profile-likelihood fit with weak regularisation of k
/// toward 0.5. Requires at least 5 strictly positive exceedances; an all-equal
/// sample is returned with khat = -inf and reliable = false.
ParetoFit fit_gpd(const Vector& exceedances);

/// Quantile function of GPD(k, sigma) at probability p in [0, 1].
double gpd_quantile(double p, double khat, double sigma);

enum class WeightFunction { W, WSquared, SqrtW, LogW, WLogW };

std::string to_string(WeightFunction fn);
WeightFunction weight_function_from_string(const std::string& name);

/// Tail size M = min(ceil(0.2 S), ceil(3 sqrt(S))).
int pareto_tail_size(int count);

/// Pareto-k of fn(w). Powers of w are handled in log space; w log w is
/// evaluated up to a positive factor, which k is invariant to.
ParetoFit khat_of(WeightFunction fn, const WeightSet& ws);

struct SmoothedWeights {
  WeightSet weights;
  ParetoFit fit;
};

/// Pareto-smoothed importance weights. Draw order is preserved and entries
/// outside the tail are copied unchanged.
SmoothedWeights psis_smooth(const WeightSet& ws);

/// exp(k / (1 - k)^2); +inf for k >= 1.
double min_sample_size(double khat);

}  // namespace vibench

#endif
