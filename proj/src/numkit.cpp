#include "vibench/numkit.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "vibench/errors.hpp"

namespace vibench {

CholeskyFactor::CholeskyFactor(const Matrix& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    throw InvalidSpec("Cholesky: matrix must be square and non-empty");
  }
  if (!sigma.isApprox(sigma.transpose(), 1e-12)) {
    throw InvalidSpec("Cholesky: matrix is not symmetric");
  }
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw InvalidSpec("Cholesky: matrix is not positive definite");
  }
  lower_ = llt.matrixL();
  const auto diag = lower_.diagonal();
  if ((diag.array() <= 0.0).any() || !diag.allFinite()) {
    throw InvalidSpec("Cholesky: non-positive pivot");
  }
  log_det_ = 2.0 * diag.array().log().sum();
}

Vector CholeskyFactor::solve(const Vector& b) const {
  Vector y = lower_.triangularView<Eigen::Lower>().solve(b);
  return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Matrix CholeskyFactor::solve(const Matrix& b) const {
  Matrix y = lower_.triangularView<Eigen::Lower>().solve(b);
  return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Vector CholeskyFactor::solve_lower(const Vector& b) const {
  return lower_.triangularView<Eigen::Lower>().solve(b);
}

Matrix CholeskyFactor::inverse() const {
  return solve(Matrix(Matrix::Identity(dim(), dim())));
}

Matrix build_covariance(const CovarianceSpec& spec) {
  if (spec.dim < 1) throw InvalidSpec("covariance: dim must be >= 1");
  if (!(std::abs(spec.rho) < 1.0)) {
    throw InvalidSpec("covariance: |rho| must be < 1");
  }
  const int d = spec.dim;
  Matrix k(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (i == j) {
        k(i, j) = 1.0;
      } else if (spec.kind == CovarianceKind::Uniform) {
        k(i, j) = spec.rho;
      } else {
        k(i, j) = std::pow(spec.rho, std::abs(i - j));
      }
    }
  }
  // Uniform with negative rho loses definiteness once rho <= -1/(D-1).
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) {
    throw InvalidSpec("covariance: not positive definite for rho=" +
                      std::to_string(spec.rho) +
                      ", dim=" + std::to_string(d));
  }
  return k;
}

double mvn_logpdf(const Vector& theta, const Vector& mean,
                  const CholeskyFactor& chol) {
  if (theta.size() != mean.size() || theta.size() != chol.dim()) {
    throw std::invalid_argument("mvn_logpdf: dimension mismatch");
  }
  const Vector z = chol.solve_lower(theta - mean);
  return -0.5 * (static_cast<double>(theta.size()) * kLogTwoPi +
                 chol.log_det() + z.squaredNorm());
}

double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * (kLogTwoPi + z * z) - std::log(sd);
}

double student_t_logpdf(double x, double nu, double loc, double scale) {
  if (!(nu > 0.0) || !(scale > 0.0)) {
    throw std::invalid_argument("student_t_logpdf: nu and scale must be > 0");
  }
  const double z = (x - loc) / scale;
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * std::numbers::pi) - std::log(scale) -
         0.5 * (nu + 1.0) * std::log1p(z * z / nu);
}

double student_t_dlogpdf(double x, double nu, double loc, double scale) {
  const double r = x - loc;
  return -(nu + 1.0) * r / (nu * scale * scale + r * r);
}

double log_sum_exp(const Vector& v) {
  if (v.size() == 0) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = v.maxCoeff();
  if (m == -std::numeric_limits<double>::infinity()) return m;
  if (m == std::numeric_limits<double>::infinity()) return m;
  return m + std::log((v.array() - m).exp().sum());
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace vibench
