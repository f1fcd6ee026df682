#include "vibench/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "vibench/errors.hpp"

namespace vibench {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Indices of the tail (values strictly above the (S-M)-th order statistic),
/// ordered by value, plus the threshold.
struct Tail {
  std::vector<Eigen::Index> index;
  double threshold = 0.0;
};

Tail select_tail(const Vector& values) {
  const Eigen::Index n = values.size();
  const int m = pareto_tail_size(static_cast<int>(n));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return values[a] < values[b]; });
  Tail tail;
  tail.threshold = values[order[static_cast<std::size_t>(n - m - 1)]];
  for (Eigen::Index i = n - m; i < n; ++i) {
    const Eigen::Index idx = order[static_cast<std::size_t>(i)];
    if (values[idx] > tail.threshold) tail.index.push_back(idx);
  }
  return tail;
}

ParetoFit unreliable(double threshold, int count, std::string why) {
  ParetoFit fit;
  fit.khat = -kInf;
  fit.sigma = std::numeric_limits<double>::quiet_NaN();
  fit.tail_count = count;
  fit.threshold = threshold;
  fit.reliable = false;
  fit.note = std::move(why);
  return fit;
}

}  // namespace

ParetoFit fit_gpd(const Vector& exceedances) {
  const Eigen::Index n = exceedances.size();
  if (n < 5) throw std::invalid_argument("fit_gpd: need at least 5 exceedances");
  if (!exceedances.allFinite() || exceedances.minCoeff() <= 0.0) {
    throw std::invalid_argument("fit_gpd: exceedances must be finite and > 0");
  }
  std::vector<double> x(exceedances.data(), exceedances.data() + n);
  std::sort(x.begin(), x.end());
  if (x.front() == x.back()) {
    return unreliable(0.0, static_cast<int>(n), "degenerate tail: all exceedances equal");
  }

  const double nd = static_cast<double>(n);
  const int m = 30 + static_cast<int>(std::sqrt(nd));
  const double quartile = x[static_cast<std::size_t>(nd / 4.0 + 0.5) - 1];
  constexpr double kPriorBs = 3.0;
  constexpr double kPriorK = 10.0;

  std::vector<double> b(static_cast<std::size_t>(m));
  std::vector<double> log_lik(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    const double bj =
        1.0 / x.back() +
        (1.0 - std::sqrt(m / (j + 1.0 - 0.5))) / (kPriorBs * quartile);
    double k = 0.0;
    for (double xi : x) k += std::log1p(-bj * xi);
    k /= nd;
    b[j] = bj;
    log_lik[j] = nd * (std::log(-bj / k) - k - 1.0);
  }
  // posterior weights w_j = 1 / sum_i exp(L_i - L_j)
  std::vector<double> weight(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += std::exp(log_lik[i] - log_lik[j]);
    weight[j] = 1.0 / s;
  }
  double wsum = 0.0;
  double b_post = 0.0;
  for (int j = 0; j < m; ++j) {
    if (!(weight[j] >= 10.0 * std::numeric_limits<double>::epsilon())) continue;
    wsum += weight[j];
    b_post += weight[j] * b[j];
  }
  b_post /= wsum;

  double k_post = 0.0;
  for (double xi : x) k_post += std::log1p(-b_post * xi);
  k_post /= nd;
  ParetoFit fit;
  fit.sigma = -k_post / b_post;
  fit.khat = (nd * k_post + kPriorK * 0.5) / (nd + kPriorK);
  fit.tail_count = static_cast<int>(n);
  if (!std::isfinite(fit.khat) || !(fit.sigma > 0.0)) {
    fit.reliable = false;
    fit.note = "gpd fit did not produce a valid scale";
  }
  return fit;
}

double gpd_quantile(double p, double khat, double sigma) {
  if (!(sigma > 0.0) || !(p >= 0.0 && p <= 1.0)) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  if (p == 0.0) return 0.0;
  if (p == 1.0) return khat >= 0.0 ? kInf : -sigma / khat;
  if (std::abs(khat) < std::numeric_limits<double>::epsilon()) {
    return -sigma * std::log1p(-p);
  }
  return sigma * std::expm1(-khat * std::log1p(-p)) / khat;
}

std::string to_string(WeightFunction fn) {
  switch (fn) {
    case WeightFunction::W: return "w";
    case WeightFunction::WSquared: return "w2";
    case WeightFunction::SqrtW: return "sqrt_w";
    case WeightFunction::LogW: return "log_w";
    case WeightFunction::WLogW: return "w_log_w";
  }
  return "unknown";
}

WeightFunction weight_function_from_string(const std::string& name) {
  if (name == "w") return WeightFunction::W;
  if (name == "w2") return WeightFunction::WSquared;
  if (name == "sqrt_w") return WeightFunction::SqrtW;
  if (name == "log_w") return WeightFunction::LogW;
  if (name == "w_log_w") return WeightFunction::WLogW;
  throw InvalidSpec("unknown weight function: " + name);
}

int pareto_tail_size(int count) {
  const double s = static_cast<double>(count);
  return static_cast<int>(std::min(std::ceil(0.2 * s), std::ceil(3.0 * std::sqrt(s))));
}

ParetoFit khat_of(WeightFunction fn, const WeightSet& ws) {
  ws.validate();
  const Eigen::Index n = ws.log_w.size();
  if (n < 25) throw std::invalid_argument("khat_of: need at least 25 weights");
  const double top = ws.log_w.maxCoeff();
  Vector values(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double l = ws.log_w[s];
    switch (fn) {
      case WeightFunction::W: values[s] = std::exp(l - top); break;
      case WeightFunction::WSquared: values[s] = std::exp(2.0 * (l - top)); break;
      case WeightFunction::SqrtW: values[s] = std::exp(0.5 * (l - top)); break;
      case WeightFunction::LogW: values[s] = l; break;
      case WeightFunction::WLogW: values[s] = l * std::exp(l - top); break;
    }
  }
  const Tail tail = select_tail(values);
  const int count = static_cast<int>(tail.index.size());
  if (count < 5) {
    return unreliable(tail.threshold, count, "fewer than 5 tail values above threshold");
  }
  Vector exceed(count);
  for (int i = 0; i < count; ++i) exceed[i] = values[tail.index[i]] - tail.threshold;
  if (exceed.minCoeff() <= 0.0) {
    return unreliable(tail.threshold, count, "non-positive exceedances");
  }
  ParetoFit fit = fit_gpd(exceed);
  fit.threshold = tail.threshold;
  return fit;
}

SmoothedWeights psis_smooth(const WeightSet& ws) {
  ws.validate();
  const Eigen::Index n = ws.log_w.size();
  if (n < 25) throw std::invalid_argument("psis_smooth: need at least 25 weights");
  const double top = ws.log_w.maxCoeff();
  const Vector scaled = (ws.log_w.array() - top).exp().matrix();
  const Tail tail = select_tail(scaled);
  const int count = static_cast<int>(tail.index.size());
  SmoothedWeights out{ws, ParetoFit{}};
  if (count < 5) {
    out.fit = unreliable(tail.threshold, count, "tail too small; weights not smoothed");
    return out;
  }
  Vector exceed(count);
  for (int i = 0; i < count; ++i) exceed[i] = scaled[tail.index[i]] - tail.threshold;
  out.fit = fit_gpd(exceed);
  out.fit.threshold = tail.threshold;
  if (!out.fit.reliable) {
    out.fit.note += "; weights not smoothed";
    return out;
  }
  // tail.index is sorted by value: the z-th smallest gets the (z - 1/2)/M quantile
  for (int z = 0; z < count; ++z) {
    const double p = (z + 0.5) / count;
    const double v = tail.threshold + gpd_quantile(p, out.fit.khat, out.fit.sigma);
    const double lv = std::min(std::log(v), 0.0);
    out.weights.log_w[tail.index[z]] = lv + top;
  }
  return out;
}

double min_sample_size(double khat) {
  if (std::isnan(khat)) return khat;
  if (khat >= 1.0) return kInf;
  if (khat == -kInf) return 1.0;
  return std::exp(khat / ((1.0 - khat) * (1.0 - khat)));
}

}  // namespace vibench
