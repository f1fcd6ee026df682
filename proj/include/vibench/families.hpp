#ifndef VIBENCH_FAMILIES_HPP
#define VIBENCH_FAMILIES_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "vibench/numkit.hpp"

namespace vibench {

enum class FamilyKind { MFGaussian, MFStudentT, PlanarFlow, NVPFlow };

std::string to_string(FamilyKind kind);
FamilyKind family_from_string(const std::string& name);

/// Flat variational parameter vector together with its family and dimension.
/// Scale entries are stored as logs, so every vector in R^K is valid.
struct FamilyParams {
  FamilyKind family = FamilyKind::MFGaussian;
  int dim = 0;
  Vector values;
};

/// Standard base draws, one row per Monte Carlo draw.
struct BaseDraws {
  Matrix eps;  // S x D
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(eps.rows()); }
};

/// Draws pushed through T_lambda together with log q at each draw.
struct SampleBatch {
  Matrix thetas;  // S x D
  Vector logq;
};

struct FamilyOptions {
  double student_nu = 7.0;
  int planar_layers = 6;
  int nvp_layers = 6;
  int nvp_hidden = 10;
  /// Standard deviation of the hidden-layer weight initialisation.
  double nvp_init_sd = 0.1;
};

/// A reparameterisable variational family q_lambda = T_lambda # r.
///
/// Every family is described by a forward map theta = T_lambda(eps) that also
/// returns log|det dT/deps|, and by a reverse-mode product `backward` giving
/// the lambda-gradient of  <cot_theta, T_lambda(eps)> + cot_logdet * logdet.
/// Both reparameterisation gradients (cot_logdet = 0 or 1) and the total
/// derivative of log q_lambda(T_lambda(eps)) are built from that one hook.
class Family {
 public:
  explicit Family(int dim) : dim_(dim) {}
  virtual ~Family() = default;

  virtual FamilyKind kind() const = 0;
  int dim() const { return dim_; }
  virtual int num_params() const = 0;

  virtual Vector initial_params(std::uint64_t seed) const = 0;

  virtual BaseDraws draw_base(int count, std::uint64_t seed) const;
  virtual double base_logpdf(const Vector& eps) const;
  /// Gradient of base_logpdf with respect to eps.
  virtual Vector base_dlogpdf(const Vector& eps) const;

  /// Writes T_lambda(eps) into theta; returns log|det dT/deps|.
  virtual double forward(const Vector& lambda, const Vector& eps,
                         Vector& theta) const = 0;

  virtual Vector backward(const Vector& lambda, const Vector& eps,
                          const Vector& cot_theta, double cot_logdet) const = 0;

  virtual bool has_inverse() const { return false; }
  /// eps = T_lambda^{-1}(theta). Throws UnsupportedOperation without inverse.
  virtual Vector inverse(const Vector& lambda, const Vector& theta) const;

  /// log q_lambda(theta) at an arbitrary point; requires an inverse.
  double log_density(const Vector& lambda, const Vector& theta) const;

  /// grad_lambda log q_lambda(theta) at fixed theta.
  virtual Vector score_grad_logq(const Vector& lambda,
                                 const Vector& theta) const = 0;
  virtual bool supports_score() const { return true; }

  virtual std::optional<double> entropy(const Vector&) const {
    return std::nullopt;
  }
  virtual std::optional<Vector> entropy_grad(const Vector&) const {
    return std::nullopt;
  }
  /// Analytic mean and marginal variances (mean-field families only).
  virtual std::optional<std::pair<Vector, Vector>> moments(
      const Vector&) const {
    return std::nullopt;
  }

  void check_params(const Vector& lambda) const;

 private:
  int dim_;
};

using FamilyPtr = std::shared_ptr<const Family>;

FamilyPtr make_family(FamilyKind kind, int dim,
                      const FamilyOptions& options = {});

/// Applies T_lambda row-wise and accumulates log q via change of variables.
/// Throws NumericalError carrying the offending draw index on non-finite
/// output.
SampleBatch sample_transform(const Family& family, const Vector& lambda,
                             const BaseDraws& draws);

/// (dT_lambda(eps)/dlambda)^T cotangent.
Vector param_jacobian_vec(const Family& family, const Vector& lambda,
                          const Vector& eps, const Vector& cotangent);

std::optional<double> entropy(const Family& family, const Vector& lambda);

/// Mean-field helpers for the location/log-scale layout (mu, log sigma).
Vector mean_field_params(const Vector& mu, const Vector& log_sigma);

}  // namespace vibench

#endif
