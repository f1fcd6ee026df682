#include "vibench/families.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <numbers>
#include <random>

#include "vibench/errors.hpp"
#include "vibench/flows.hpp"

namespace vibench {

std::string to_string(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::MFGaussian: return "mf_gaussian";
    case FamilyKind::MFStudentT: return "mf_student_t";
    case FamilyKind::PlanarFlow: return "planar";
    case FamilyKind::NVPFlow: return "nvp";
  }
  return "unknown";
}

FamilyKind family_from_string(const std::string& name) {
  if (name == "mf_gaussian") return FamilyKind::MFGaussian;
  if (name == "mf_student_t") return FamilyKind::MFStudentT;
  if (name == "planar") return FamilyKind::PlanarFlow;
  if (name == "nvp") return FamilyKind::NVPFlow;
  throw InvalidSpec("unknown family: " + name);
}

BaseDraws Family::draw_base(int count, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  BaseDraws draws{Matrix(count, dim()), seed};
  for (int s = 0; s < count; ++s) {
    for (int d = 0; d < dim(); ++d) draws.eps(s, d) = normal(rng);
  }
  return draws;
}

double Family::base_logpdf(const Vector& eps) const {
  return -0.5 * (static_cast<double>(eps.size()) * kLogTwoPi +
                 eps.squaredNorm());
}

Vector Family::base_dlogpdf(const Vector& eps) const { return -eps; }

Vector Family::inverse(const Vector&, const Vector&) const {
  throw UnsupportedOperation(to_string(kind()) + ": inverse transform unavailable");
}

double Family::log_density(const Vector& lambda, const Vector& theta) const {
  const Vector eps = inverse(lambda, theta);
  Vector unused;
  const double logdet = forward(lambda, eps, unused);
  return base_logpdf(eps) - logdet;
}

void Family::check_params(const Vector& lambda) const {
  if (lambda.size() != num_params()) {
    throw std::invalid_argument(to_string(kind()) + ": expected " +
                                std::to_string(num_params()) +
                                " parameters, got " +
                                std::to_string(lambda.size()));
  }
}

namespace {

/// theta = mu + exp(log_sigma) * eps over a factorised base density.
class LocationScaleFamily : public Family {
 public:
  using Family::Family;

  int num_params() const override { return 2 * dim(); }

  Vector initial_params(std::uint64_t) const override {
    return Vector::Zero(num_params());
  }

  double forward(const Vector& lambda, const Vector& eps,
                 Vector& theta) const override {
    const int d = dim();
    const auto mu = lambda.head(d);
    const auto log_sigma = lambda.tail(d);
    theta = mu + (log_sigma.array().exp() * eps.array()).matrix();
    return log_sigma.sum();
  }

  Vector backward(const Vector& lambda, const Vector& eps,
                  const Vector& cot_theta, double cot_logdet) const override {
    const int d = dim();
    Vector g(2 * d);
    g.head(d) = cot_theta;
    g.tail(d) = (cot_theta.array() * lambda.tail(d).array().exp() *
                 eps.array() + cot_logdet).matrix();
    return g;
  }

  bool has_inverse() const override { return true; }
  Vector inverse(const Vector& lambda, const Vector& theta) const override {
    const int d = dim();
    return ((theta - lambda.head(d)).array() *
            (-lambda.tail(d)).array().exp()).matrix();
  }

  Vector score_grad_logq(const Vector& lambda,
                         const Vector& theta) const override {
    const int d = dim();
    const Vector z = inverse(lambda, theta);
    const Vector dz = base_dlogpdf(z);
    Vector g(2 * d);
    g.head(d) = (-dz.array() * (-lambda.tail(d)).array().exp()).matrix();
    g.tail(d) = (-dz.array() * z.array() - 1.0).matrix();
    return g;
  }

  std::optional<double> entropy(const Vector& lambda) const override {
    return dim() * unit_entropy() + lambda.tail(dim()).sum();
  }

  std::optional<Vector> entropy_grad(const Vector&) const override {
    Vector g = Vector::Zero(num_params());
    g.tail(dim()).setOnes();
    return g;
  }

 protected:
  virtual double unit_entropy() const = 0;
};

class MeanFieldGaussian final : public LocationScaleFamily {
 public:
  using LocationScaleFamily::LocationScaleFamily;

  FamilyKind kind() const override { return FamilyKind::MFGaussian; }

  std::optional<std::pair<Vector, Vector>> moments(
      const Vector& lambda) const override {
    return std::make_pair(Vector(lambda.head(dim())),
                          Vector((2.0 * lambda.tail(dim()).array()).exp()));
  }

 protected:
  double unit_entropy() const override {
    return 0.5 * (kLogTwoPi + 1.0);
  }
};

/// Base draws are standard t_nu variates z / sqrt(chi2_nu / nu); the chi-square
/// component is part of eps and is not differentiated.
class MeanFieldStudentT final : public LocationScaleFamily {
 public:
  MeanFieldStudentT(int dim, double nu) : LocationScaleFamily(dim), nu_(nu) {
    if (!(nu > 0.0)) throw InvalidSpec("student-t family: nu must be > 0");
  }

  FamilyKind kind() const override { return FamilyKind::MFStudentT; }

  BaseDraws draw_base(int count, std::uint64_t seed) const override {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::chi_squared_distribution<double> chi2(nu_);
    BaseDraws draws{Matrix(count, dim()), seed};
    for (int s = 0; s < count; ++s) {
      for (int d = 0; d < dim(); ++d) {
        const double z = normal(rng);
        draws.eps(s, d) = z / std::sqrt(chi2(rng) / nu_);
      }
    }
    return draws;
  }

  double base_logpdf(const Vector& eps) const override {
    double lp = 0.0;
    for (Eigen::Index i = 0; i < eps.size(); ++i) {
      lp += student_t_logpdf(eps[i], nu_, 0.0, 1.0);
    }
    return lp;
  }

  Vector base_dlogpdf(const Vector& eps) const override {
    return (-(nu_ + 1.0) * eps.array() / (nu_ + eps.array().square())).matrix();
  }

  std::optional<std::pair<Vector, Vector>> moments(
      const Vector& lambda) const override {
    if (nu_ <= 2.0) return std::nullopt;
    return std::make_pair(
        Vector(lambda.head(dim())),
        Vector((2.0 * lambda.tail(dim()).array()).exp() * nu_ / (nu_ - 2.0)));
  }

 protected:
  double unit_entropy() const override {
    using boost::math::digamma;
    const double h = 0.5 * (nu_ + 1.0);
    return h * (digamma(h) - digamma(0.5 * nu_)) + 0.5 * std::log(nu_) +
           std::lgamma(0.5 * nu_) + std::lgamma(0.5) - std::lgamma(h);
  }

 private:
  double nu_;
};

}  // namespace

FamilyPtr make_family(FamilyKind kind, int dim, const FamilyOptions& options) {
  if (dim < 1) throw InvalidSpec("family: dim must be >= 1");
  switch (kind) {
    case FamilyKind::MFGaussian:
      return std::make_shared<MeanFieldGaussian>(dim);
    case FamilyKind::MFStudentT:
      return std::make_shared<MeanFieldStudentT>(dim, options.student_nu);
    case FamilyKind::PlanarFlow:
      return std::make_shared<PlanarFlow>(dim, options.planar_layers);
    case FamilyKind::NVPFlow:
      return std::make_shared<NvpFlow>(dim, options.nvp_layers,
                                       options.nvp_hidden, options.nvp_init_sd);
  }
  throw InvalidSpec("family: unknown kind");
}

SampleBatch sample_transform(const Family& family, const Vector& lambda,
                             const BaseDraws& draws) {
  family.check_params(lambda);
  if (draws.eps.cols() != family.dim()) {
    throw std::invalid_argument("sample_transform: base draw dimension mismatch");
  }
  const int count = draws.size();
  SampleBatch batch{Matrix(count, family.dim()), Vector(count)};
  Vector theta;
  for (int s = 0; s < count; ++s) {
    const Vector eps = draws.eps.row(s).transpose();
    const double logdet = family.forward(lambda, eps, theta);
    const double logq = family.base_logpdf(eps) - logdet;
    if (!theta.allFinite() || !std::isfinite(logq)) {
      throw NumericalError("sample_transform: non-finite draw", s);
    }
    batch.thetas.row(s) = theta.transpose();
    batch.logq[s] = logq;
  }
  return batch;
}

Vector param_jacobian_vec(const Family& family, const Vector& lambda,
                          const Vector& eps, const Vector& cotangent) {
  family.check_params(lambda);
  Vector g = family.backward(lambda, eps, cotangent, 0.0);
  if (!g.allFinite()) throw NumericalError("param_jacobian_vec: non-finite");
  return g;
}

std::optional<double> entropy(const Family& family, const Vector& lambda) {
  return family.entropy(lambda);
}

Vector mean_field_params(const Vector& mu, const Vector& log_sigma) {
  Vector lambda(mu.size() + log_sigma.size());
  lambda << mu, log_sigma;
  return lambda;
}

}  // namespace vibench
