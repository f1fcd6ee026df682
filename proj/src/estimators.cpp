#include "vibench/estimators.hpp"

#include <cmath>

#include "vibench/errors.hpp"

namespace vibench {

std::string to_string(MomentMethod method) {
  switch (method) {
    case MomentMethod::PlainQ: return "plain_q";
    case MomentMethod::SNIS: return "snis";
    case MomentMethod::PSIS: return "psis";
  }
  return "unknown";
}

Vector snis_expectation(const WeightSet& ws, const Matrix& phi_values) {
  if (phi_values.rows() != ws.log_w.size()) {
    throw std::invalid_argument("snis_expectation: phi rows must equal S");
  }
  const Vector w = ws.normalized();
  return phi_values.transpose() * w;
}

MomentEstimate weighted_moments(const Matrix& thetas, const Vector& weights,
                                MomentMethod method) {
  MomentEstimate est;
  est.method = method;
  est.mean = thetas.transpose() * weights;
  const Matrix centered = thetas.rowwise() - est.mean.transpose();
  est.covariance = centered.transpose() * weights.asDiagonal() * centered;
  est.covariance = (0.5 * (est.covariance + est.covariance.transpose())).eval();
  return est;
}

namespace {

MomentEstimate plain_moments(const Matrix& thetas) {
  const Eigen::Index n = thetas.rows();
  MomentEstimate est;
  est.method = MomentMethod::PlainQ;
  est.mean = thetas.colwise().mean().transpose();
  const Matrix centered = thetas.rowwise() - est.mean.transpose();
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  est.covariance = centered.transpose() * centered / denom;
  return est;
}

void attach_diagnostics(MomentEstimate& est, const ParetoFit& fit) {
  est.khat = fit.khat;
  if (!fit.reliable) est.warnings.push_back("pareto fit unreliable: " + fit.note);
  if (fit.exceeds_threshold()) {
    est.warnings.push_back("khat above 0.7: importance weights unreliable");
  }
}

}  // namespace

MomentSuite estimate_all_moments(const Family& family, const Vector& lambda,
                                 const TargetModel& target, int draws,
                                 std::uint64_t seed) {
  if (draws < 25) throw std::invalid_argument("estimate_moments: need S >= 25");
  const BaseDraws base = family.draw_base(draws, seed);
  const SampleBatch batch = sample_transform(family, lambda, base);
  MomentSuite suite;
  suite.weights.log_w.resize(draws);
  for (int s = 0; s < draws; ++s) {
    suite.weights.log_w[s] =
        target.log_joint(batch.thetas.row(s).transpose()) - batch.logq[s];
  }
  suite.plain = plain_moments(batch.thetas);
  suite.snis = weighted_moments(batch.thetas, suite.weights.normalized(),
                                MomentMethod::SNIS);
  const SmoothedWeights smoothed = psis_smooth(suite.weights);
  suite.fit = smoothed.fit;
  suite.psis = weighted_moments(batch.thetas, smoothed.weights.normalized(),
                                MomentMethod::PSIS);
  attach_diagnostics(suite.snis, suite.fit);
  attach_diagnostics(suite.psis, suite.fit);
  return suite;
}

MomentEstimate estimate_moments(const Family& family, const Vector& lambda,
                                const TargetModel& target, int draws,
                                MomentMethod method, std::uint64_t seed) {
  if (method == MomentMethod::PlainQ) {
    if (draws < 2) throw std::invalid_argument("estimate_moments: need S >= 2");
    const BaseDraws base = family.draw_base(draws, seed);
    return plain_moments(sample_transform(family, lambda, base).thetas);
  }
  MomentSuite suite = estimate_all_moments(family, lambda, target, draws, seed);
  return method == MomentMethod::SNIS ? suite.snis : suite.psis;
}

RelativeError relative_error(const MomentEstimate& est, const GroundTruth& truth) {
  if (est.mean.size() != truth.mean.size() ||
      est.covariance.rows() != truth.covariance.rows()) {
    throw std::invalid_argument("relative_error: dimension mismatch");
  }
  RelativeError err;
  err.mean_err = (est.mean - truth.mean).norm() / std::max(truth.mean.norm(), 1.0);
  err.cov_err = (est.covariance - truth.covariance).norm() / truth.covariance.norm();
  return err;
}

}  // namespace vibench
