#ifndef VIBENCH_NUMKIT_HPP
#define VIBENCH_NUMKIT_HPP

#include <Eigen/Dense>
#include <numbers>

namespace vibench {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

enum class CovarianceKind { Uniform, Banded };

/// Structured correlation matrix: unit diagonal with either a constant
/// off-diagonal value (Uniform) or rho^|i-j| decay (Banded).
struct CovarianceSpec {
  CovarianceKind kind = CovarianceKind::Uniform;
  double rho = 0.5;
  int dim = 1;
};

/// Lower Cholesky factor with cached log-determinant of the factored matrix.
class CholeskyFactor {
 public:
  /// Throws InvalidSpec when the matrix is not symmetric positive definite.
  explicit CholeskyFactor(const Matrix& sigma);

  int dim() const { return static_cast<int>(lower_.rows()); }
  const Matrix& lower() const { return lower_; }
  double log_det() const { return log_det_; }

  /// Solves Sigma x = b.
  Vector solve(const Vector& b) const;
  Matrix solve(const Matrix& b) const;
  /// Solves L x = b.
  Vector solve_lower(const Vector& b) const;
  Matrix inverse() const;
  Matrix reconstruct() const { return lower_ * lower_.transpose(); }

 private:
  Matrix lower_;
  double log_det_ = 0.0;
};

/// Builds the correlation matrix described by `spec`. Throws InvalidSpec when
/// |rho| >= 1, dim < 1, or the matrix is not positive definite.
Matrix build_covariance(const CovarianceSpec& spec);

double mvn_logpdf(const Vector& theta, const Vector& mean,
                  const CholeskyFactor& chol);

double normal_logpdf(double x, double mean, double sd);

double student_t_logpdf(double x, double nu, double loc, double scale);

/// d/dx of student_t_logpdf.
double student_t_dlogpdf(double x, double nu, double loc, double scale);

/// Stable log(sum(exp(v))). Entries may be -inf; the result is -inf only when
/// all entries are.
double log_sum_exp(const Vector& v);

/// log(1 + exp(x)) without overflow.
double softplus(double x);
double sigmoid(double x);

}  // namespace vibench

#endif
