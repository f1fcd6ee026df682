#include "vibench/targets.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "vibench/errors.hpp"

namespace vibench {
namespace {

class GaussianTarget final : public TargetModel {
 public:
  GaussianTarget(const CovarianceSpec& spec, bool normalized)
      : spec_(spec),
        chol_(build_covariance(spec)),
        precision_(chol_.inverse()),
        normalized_(normalized) {
    const int d = spec.dim;
    const double log_z = 0.5 * (d * kLogTwoPi + chol_.log_det());
    truth_ = GroundTruth{Vector::Zero(d), chol_.reconstruct(),
                         normalized ? 0.0 : log_z};
    offset_ = normalized ? -log_z : 0.0;
  }

  std::string name() const override {
    std::ostringstream os;
    os << "gaussian_" << (spec_.kind == CovarianceKind::Uniform ? "u" : "b")
       << "_rho" << spec_.rho << "_d" << spec_.dim;
    return os.str();
  }
  int dim() const override { return spec_.dim; }

  double log_joint(const Vector& theta) const override {
    check(theta);
    return offset_ - 0.5 * chol_.solve_lower(theta).squaredNorm();
  }

  double log_joint_grad(const Vector& theta, Vector& grad) const override {
    check(theta);
    grad = -(precision_ * theta);
    return log_joint(theta);
  }

 private:
  void check(const Vector& theta) const {
    if (theta.size() != spec_.dim) {
      throw std::invalid_argument("gaussian target: dimension mismatch");
    }
  }

  CovarianceSpec spec_;
  CholeskyFactor chol_;
  Matrix precision_;
  bool normalized_;
  double offset_ = 0.0;
};

constexpr double kRegressionNu = 10.0;
constexpr double kRegressionPriorSd = 10.0;

class RobustRegressionTarget final : public TargetModel {
 public:
  explicit RobustRegressionTarget(RegressionDataset data)
      : data_(std::move(data)) {
    if (data_.x.rows() != data_.y.size()) {
      throw InvalidSpec("robust regression: X rows and y length differ");
    }
  }

  std::string name() const override {
    return "robust_regression_d" + std::to_string(dim());
  }
  int dim() const override { return static_cast<int>(data_.x.cols()); }

  double log_joint(const Vector& beta) const override {
    return evaluate(beta, nullptr);
  }

  double log_joint_grad(const Vector& beta, Vector& grad) const override {
    grad.resize(dim());
    return evaluate(beta, &grad);
  }

 private:
  double evaluate(const Vector& beta, Vector* grad) const {
    if (beta.size() != dim()) {
      throw std::invalid_argument("robust regression: dimension mismatch");
    }
    const Vector mean = data_.x * beta;
    double lp = 0.0;
    Vector resid_score(mean.size());
    for (Eigen::Index n = 0; n < mean.size(); ++n) {
      lp += student_t_logpdf(data_.y[n], kRegressionNu, mean[n], 1.0);
      // d/dmean of log t(y; mean, 1)
      resid_score[n] = -student_t_dlogpdf(data_.y[n], kRegressionNu, mean[n], 1.0);
    }
    for (Eigen::Index d = 0; d < beta.size(); ++d) {
      lp += normal_logpdf(beta[d], 0.0, kRegressionPriorSd);
    }
    if (grad) {
      *grad = data_.x.transpose() * resid_score -
              beta / (kRegressionPriorSd * kRegressionPriorSd);
    }
    return lp;
  }

  RegressionDataset data_;
};

constexpr double kSchoolsMuSd = 5.0;
constexpr double kSchoolsTauScale = 5.0;

double half_cauchy_log_tau(double log_tau, double* dlog_tau) {
  // log half-Cauchy(tau; 0, s) + log tau (Jacobian of the log transform)
  const double tau = std::exp(log_tau);
  const double r = tau / kSchoolsTauScale;
  if (dlog_tau) *dlog_tau = 1.0 - 2.0 * r * r / (1.0 + r * r);
  return std::log(2.0) - std::log(kSchoolsTauScale * std::numbers::pi) -
         std::log1p(r * r) + log_tau;
}

class EightSchoolsTarget final : public TargetModel {
 public:
  EightSchoolsTarget(SchoolsParameterization p, SchoolsData data)
      : param_(p), data_(std::move(data)) {
    if (data_.y.size() != data_.sigma.size() || data_.y.size() == 0) {
      throw InvalidSpec("eight schools: malformed data");
    }
  }

  std::string name() const override {
    return param_ == SchoolsParameterization::Centered ? "eight_schools_cp"
                                                       : "eight_schools_ncp";
  }
  int dim() const override { return static_cast<int>(data_.y.size()) + 2; }

  double log_joint(const Vector& v) const override {
    return evaluate(v, nullptr);
  }
  double log_joint_grad(const Vector& v, Vector& grad) const override {
    grad.resize(dim());
    return evaluate(v, &grad);
  }

 private:
  double evaluate(const Vector& v, Vector* grad) const {
    if (v.size() != dim()) {
      throw std::invalid_argument("eight schools: dimension mismatch");
    }
    const Eigen::Index j_count = data_.y.size();
    const double mu = v[j_count];
    const double log_tau = v[j_count + 1];
    const double tau = std::exp(log_tau);
    double d_log_tau = 0.0;
    double lp = half_cauchy_log_tau(log_tau, &d_log_tau);
    lp += normal_logpdf(mu, 0.0, kSchoolsMuSd);
    double d_mu = -mu / (kSchoolsMuSd * kSchoolsMuSd);

    if (param_ == SchoolsParameterization::Centered) {
      const double inv_tau2 = 1.0 / (tau * tau);
      for (Eigen::Index j = 0; j < j_count; ++j) {
        const double theta = v[j];
        const double s = data_.sigma[j];
        const double dev = theta - mu;
        lp += normal_logpdf(data_.y[j], theta, s);
        lp += -0.5 * kLogTwoPi - log_tau - 0.5 * dev * dev * inv_tau2;
        if (grad) (*grad)[j] = (data_.y[j] - theta) / (s * s) - dev * inv_tau2;
        d_mu += dev * inv_tau2;
        d_log_tau += -1.0 + dev * dev * inv_tau2;
      }
    } else {
      for (Eigen::Index j = 0; j < j_count; ++j) {
        const double eta = v[j];
        const double s = data_.sigma[j];
        const double theta = mu + tau * eta;
        const double r = (data_.y[j] - theta) / (s * s);
        lp += normal_logpdf(data_.y[j], theta, s);
        lp += -0.5 * (kLogTwoPi + eta * eta);
        if (grad) (*grad)[j] = r * tau - eta;
        d_mu += r;
        d_log_tau += r * tau * eta;
      }
    }
    if (grad) {
      (*grad)[j_count] = d_mu;
      (*grad)[j_count + 1] = d_log_tau;
    }
    return lp;
  }

  SchoolsParameterization param_;
  SchoolsData data_;
};

class FunctionTarget final : public TargetModel {
 public:
  FunctionTarget(std::string name, int dim,
                 std::function<double(const Vector&)> f,
                 std::function<Vector(const Vector&)> g)
      : name_(std::move(name)), dim_(dim), f_(std::move(f)), g_(std::move(g)) {}

  std::string name() const override { return name_; }
  int dim() const override { return dim_; }
  double log_joint(const Vector& theta) const override { return f_(theta); }
  double log_joint_grad(const Vector& theta, Vector& grad) const override {
    grad = g_(theta);
    return f_(theta);
  }

 private:
  std::string name_;
  int dim_;
  std::function<double(const Vector&)> f_;
  std::function<Vector(const Vector&)> g_;
};

}  // namespace

TargetPtr make_correlated_gaussian(const CovarianceSpec& spec,
                                   bool normalized) {
  return std::make_shared<GaussianTarget>(spec, normalized);
}

RegressionDataset simulate_regression_data(int dim, int n, double rho,
                                           std::uint64_t seed) {
  if (dim < 1 || n < 0) throw InvalidSpec("robust regression: bad sizes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::student_t_distribution<double> noise(kRegressionNu);

  const CholeskyFactor chol(
      build_covariance({CovarianceKind::Uniform, rho, dim}));
  RegressionDataset data;
  data.beta.resize(dim);
  for (int d = 0; d < dim; ++d) data.beta[d] = kRegressionPriorSd * normal(rng);
  data.x.resize(n, dim);
  for (int i = 0; i < n; ++i) {
    Vector z(dim);
    for (int d = 0; d < dim; ++d) z[d] = normal(rng);
    data.x.row(i) = (chol.lower() * z).transpose();
  }
  data.y = data.x * data.beta;
  for (int i = 0; i < n; ++i) data.y[i] += noise(rng);
  return data;
}

TargetPtr make_robust_regression(RegressionDataset data) {
  return std::make_shared<RobustRegressionTarget>(std::move(data));
}

std::pair<TargetPtr, RegressionDataset> make_robust_regression(
    int dim, int n, double rho, std::uint64_t seed) {
  RegressionDataset data = simulate_regression_data(dim, n, rho, seed);
  return {make_robust_regression(data), data};
}

SchoolsData load_schools_data(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidSpec("cannot open schools data: " + path);
  std::string line;
  std::getline(in, line);  // header
  SchoolsData data;
  std::vector<double> ys, sigmas;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string name, y, s;
    if (!std::getline(ss, name, ',') || !std::getline(ss, y, ',') ||
        !std::getline(ss, s, ',')) {
      throw InvalidSpec("malformed schools row: " + line);
    }
    data.school.push_back(name);
    ys.push_back(std::stod(y));
    sigmas.push_back(std::stod(s));
  }
  data.y = Eigen::Map<Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  data.sigma = Eigen::Map<Vector>(sigmas.data(),
                                  static_cast<Eigen::Index>(sigmas.size()));
  return data;
}

SchoolsData bundled_schools_data() {
  return load_schools_data(std::string(VIBENCH_DATA_DIR) + "/eight_schools.csv");
}

TargetPtr make_eight_schools(SchoolsParameterization parameterization,
                             const SchoolsData& data) {
  return std::make_shared<EightSchoolsTarget>(parameterization, data);
}

Vector schools_noncentered_to_centered(const Vector& ncp) {
  const Eigen::Index j_count = ncp.size() - 2;
  Vector cp = ncp;
  const double mu = ncp[j_count];
  const double tau = std::exp(ncp[j_count + 1]);
  for (Eigen::Index j = 0; j < j_count; ++j) cp[j] = mu + tau * ncp[j];
  return cp;
}

TargetPtr make_function_target(
    std::string name, int dim, std::function<double(const Vector&)> log_joint,
    std::function<Vector(const Vector&)> grad) {
  return std::make_shared<FunctionTarget>(std::move(name), dim,
                                          std::move(log_joint), std::move(grad));
}

TargetPtr make_named_target(const std::string& model, int dim, double rho,
                            std::uint64_t seed, int n_data) {
  if (model == "gaussian") {
    return make_correlated_gaussian({CovarianceKind::Uniform, rho, dim});
  }
  if (model == "gaussian_banded") {
    return make_correlated_gaussian({CovarianceKind::Banded, rho, dim});
  }
  if (model == "robust_regression") {
    return make_robust_regression(dim, n_data, rho, seed).first;
  }
  if (model == "eight_schools_cp") {
    return make_eight_schools(SchoolsParameterization::Centered);
  }
  if (model == "eight_schools_ncp") {
    return make_eight_schools(SchoolsParameterization::NonCentered);
  }
  throw InvalidSpec("unknown model: " + model);
}

}  // namespace vibench
