#ifndef VIBENCH_TARGETS_HPP
#define VIBENCH_TARGETS_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vibench/numkit.hpp"

namespace vibench {

/// Analytic posterior summaries, available for Gaussian targets only.
struct GroundTruth {
  Vector mean;
  Matrix covariance;
  /// log Z such that exp(log_joint - log Z) integrates to one.
  double log_normalizer = 0.0;
};

/// Unnormalized log joint density log p(theta, Y) on R^D.
///
/// Implementations are immutable after construction, so a single instance
/// can be shared between worker threads.
class TargetModel {
 public:
  virtual ~TargetModel() = default;

  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual double log_joint(const Vector& theta) const = 0;
  /// Returns log_joint(theta) and writes its gradient into `grad`.
  virtual double log_joint_grad(const Vector& theta, Vector& grad) const = 0;

  Vector grad_log_joint(const Vector& theta) const {
    Vector g;
    log_joint_grad(theta, g);
    return g;
  }

  const std::optional<GroundTruth>& truth() const { return truth_; }

 protected:
  std::optional<GroundTruth> truth_;
};

using TargetPtr = std::shared_ptr<const TargetModel>;

/// Zero-mean Gaussian with structured covariance. When `normalized` is false
/// the log normalizer is dropped from log_joint and reported in the truth.
TargetPtr make_correlated_gaussian(const CovarianceSpec& spec,
                                   bool normalized = true);

/// Covariates, responses and the coefficients used to simulate them.
struct RegressionDataset {
  Matrix x;  // N x D
  Vector y;
  Vector beta;
};

RegressionDataset simulate_regression_data(int dim, int n, double rho,
                                           std::uint64_t seed);

/// beta_d ~ N(0, sd=10), y_n ~ t_10(beta' x_n, 1).
TargetPtr make_robust_regression(RegressionDataset data);

std::pair<TargetPtr, RegressionDataset> make_robust_regression(
    int dim, int n, double rho, std::uint64_t seed);

enum class SchoolsParameterization { Centered, NonCentered };

struct SchoolsData {
  std::vector<std::string> school;
  Vector y;
  Vector sigma;
};

/// Reads the `school,y,sigma` CSV fixture.
SchoolsData load_schools_data(const std::string& path);
/// The bundled fixture under the data directory.
SchoolsData bundled_schools_data();

/// Hierarchical eight-schools model on (theta or eta, mu, log tau) with
/// mu ~ N(0, 5) and tau ~ half-Cauchy(0, 5).
TargetPtr make_eight_schools(SchoolsParameterization parameterization,
                             const SchoolsData& data = bundled_schools_data());

/// Maps a non-centered draw (eta, mu, log tau) to centered coordinates
/// (theta, mu, log tau).
Vector schools_noncentered_to_centered(const Vector& ncp);

/// Wraps arbitrary callables; used for synthetic cost functions in tests and
/// gradient-variance studies.
TargetPtr make_function_target(
    std::string name, int dim, std::function<double(const Vector&)> log_joint,
    std::function<Vector(const Vector&)> grad);

/// Looks a target up by CLI name: gaussian, gaussian_banded,
/// robust_regression, eight_schools_cp, eight_schools_ncp.
TargetPtr make_named_target(const std::string& model, int dim, double rho,
                            std::uint64_t seed, int n_data = 100);

}  // namespace vibench

#endif
