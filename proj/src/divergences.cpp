#include "vibench/divergences.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "vibench/errors.hpp"

namespace vibench {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// exp(x) that reports overflow as +inf rather than a huge finite value.
double checked_exp(double x) {
  return x > std::log(std::numeric_limits<double>::max()) ? kInf : std::exp(x);
}

}  // namespace

DivergenceSpec DivergenceSpec::alpha_div(double a) {
  if (!(a > 0.0) || a == 1.0) {
    throw InvalidSpec("alpha divergence requires alpha > 0 and alpha != 1");
  }
  return {DivergenceKind::Alpha, a};
}

bool DivergenceSpec::self_normalized() const {
  switch (kind) {
    case DivergenceKind::InclusiveKL:
    case DivergenceKind::ChiSq:
      return true;
    case DivergenceKind::Alpha:
      return alpha > 1.0;
    default:
      return false;
  }
}

double DivergenceSpec::power() const {
  switch (kind) {
    case DivergenceKind::ChiSq: return 2.0;
    case DivergenceKind::Alpha: return alpha;
    default: return 1.0;
  }
}

std::string to_string(const DivergenceSpec& spec) {
  switch (spec.kind) {
    case DivergenceKind::ExclusiveKL: return "exclusive_kl";
    case DivergenceKind::InclusiveKL: return "inclusive_kl";
    case DivergenceKind::ChiSq: return "chi2";
    case DivergenceKind::TailAdaptive: return "tail_adaptive";
    case DivergenceKind::Alpha: {
      std::ostringstream os;
      os << "alpha:" << spec.alpha;
      return os.str();
    }
  }
  return "unknown";
}

DivergenceSpec divergence_from_string(const std::string& name) {
  if (name == "exclusive_kl") return DivergenceSpec::exclusive_kl();
  if (name == "inclusive_kl") return DivergenceSpec::inclusive_kl();
  if (name == "chi2") return DivergenceSpec::chi_sq();
  if (name == "tail_adaptive") return DivergenceSpec::tail_adaptive();
  if (name.rfind("alpha:", 0) == 0) {
    const std::string text = name.substr(6);
    double alpha = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), alpha);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
      throw InvalidSpec("alpha divergence needs a numeric order: " + name);
    }
    return DivergenceSpec::alpha_div(alpha);
  }
  throw InvalidSpec("unknown divergence: " + name);
}

Vector WeightSet::normalized() const {
  validate();
  const double lse = log_sum_exp(log_w);
  if (lse == -kInf) throw std::invalid_argument("weights are all zero");
  return (log_w.array() - lse).exp().matrix();
}

void WeightSet::validate() const {
  if (log_w.size() == 0) throw std::invalid_argument("empty weight set");
  for (Eigen::Index i = 0; i < log_w.size(); ++i) {
    if (std::isnan(log_w[i]) || log_w[i] == kInf) {
      throw std::invalid_argument("log weight " + std::to_string(i) +
                                  " is NaN or +inf");
    }
  }
}

double f_eval(const DivergenceSpec& spec, double log_w) {
  switch (spec.kind) {
    case DivergenceKind::ExclusiveKL:
      return -log_w;
    case DivergenceKind::InclusiveKL: {
      if (log_w == -kInf) return 0.0;
      const double w = checked_exp(log_w);
      return w == kInf ? kInf : w * log_w;
    }
    case DivergenceKind::ChiSq: {
      const double w2 = checked_exp(2.0 * log_w);
      if (w2 == kInf) return kInf;
      return 0.5 * (w2 - std::exp(log_w));
    }
    case DivergenceKind::Alpha: {
      const double a = spec.alpha;
      const double wa = checked_exp(a * log_w);
      const double w = checked_exp(log_w);
      if (wa == kInf || w == kInf) return kInf;
      return (wa - w) / (a * (a - 1.0));
    }
    case DivergenceKind::TailAdaptive:
      break;
  }
  throw UnsupportedOperation("tail-adaptive divergence has no pointwise f");
}

double fprime_eval(const DivergenceSpec& spec, double log_w) {
  switch (spec.kind) {
    case DivergenceKind::ExclusiveKL:
      return -checked_exp(-log_w);
    case DivergenceKind::InclusiveKL:
      return log_w + 1.0;
    case DivergenceKind::ChiSq:
      return checked_exp(log_w) - 0.5;
    case DivergenceKind::Alpha: {
      const double a = spec.alpha;
      return (a * checked_exp((a - 1.0) * log_w) - 1.0) / (a * (a - 1.0));
    }
    case DivergenceKind::TailAdaptive:
      break;
  }
  throw UnsupportedOperation("tail-adaptive divergence has no pointwise f");
}

LossEstimate mc_loss(const DivergenceSpec& spec, const WeightSet& ws,
                     bool raw_weights) {
  ws.validate();
  const int count = ws.size();
  Vector log_w = ws.log_w;
  if (spec.self_normalized() && !raw_weights) {
    // w_s / mean(w): the ratio against the normalised target.
    log_w.array() -= log_sum_exp(ws.log_w) - std::log(static_cast<double>(count));
  }
  const double cap = std::numeric_limits<double>::max() / count;
  LossEstimate est;
  double sum = 0.0;
  for (int s = 0; s < count; ++s) {
    double term = f_eval(spec, log_w[s]);
    if (std::isinf(term)) {
      ++est.overflow_count;
      term = term > 0 ? cap : -cap;
    }
    sum += term;
  }
  est.value = sum / count;
  return est;
}

std::optional<MomentRequirement> moments_required(const DivergenceSpec& spec) {
  switch (spec.kind) {
    case DivergenceKind::ExclusiveKL: return MomentRequirement{0.0, true};
    case DivergenceKind::InclusiveKL: return MomentRequirement{2.0, true};
    case DivergenceKind::ChiSq: return MomentRequirement{4.0, false};
    case DivergenceKind::Alpha: return MomentRequirement{2.0 * spec.alpha, false};
    case DivergenceKind::TailAdaptive: return std::nullopt;
  }
  return std::nullopt;
}

double gaussian_kl(const Vector& q_mean, const Matrix& q_cov,
                   const Vector& p_mean, const Matrix& p_cov,
                   KLDirection direction) {
  const bool exclusive = direction == KLDirection::Exclusive;
  // KL(a || b)
  const Vector& a_mean = exclusive ? q_mean : p_mean;
  const Matrix& a_cov = exclusive ? q_cov : p_cov;
  const Vector& b_mean = exclusive ? p_mean : q_mean;
  const Matrix& b_cov = exclusive ? p_cov : q_cov;
  if (a_mean.size() != b_mean.size() || a_cov.rows() != b_cov.rows() ||
      a_cov.rows() != a_mean.size()) {
    throw std::invalid_argument("gaussian_kl: dimension mismatch");
  }
  const CholeskyFactor ca(a_cov);
  const CholeskyFactor cb(b_cov);
  const double d = static_cast<double>(a_mean.size());
  const double trace = cb.solve(a_cov).trace();
  const Vector diff = b_mean - a_mean;
  const double maha = cb.solve_lower(diff).squaredNorm();
  return 0.5 * (trace + maha - d + cb.log_det() - ca.log_det());
}

double gaussian_power_integral(double t, const Gaussian& p, const Gaussian& q) {
  const CholeskyFactor cp(p.cov);
  const CholeskyFactor cq(q.cov);
  const Matrix pp = cp.inverse();
  const Matrix pq = cq.inverse();
  const Matrix a = t * pp + (1.0 - t) * pq;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return kInf;
  const Matrix la = llt.matrixL();
  if ((la.diagonal().array() <= 0.0).any()) return kInf;
  const double logdet_a = 2.0 * la.diagonal().array().log().sum();
  const Vector b = t * (pp * p.mean) + (1.0 - t) * (pq * q.mean);
  const double quad = t * p.mean.dot(pp * p.mean) +
                      (1.0 - t) * q.mean.dot(pq * q.mean) -
                      b.dot(llt.solve(b));
  return -0.5 * t * cp.log_det() - 0.5 * (1.0 - t) * cq.log_det() -
         0.5 * logdet_a - 0.5 * quad;
}

double gaussian_divergence(const DivergenceSpec& spec, const Gaussian& p,
                           const Gaussian& q) {
  switch (spec.kind) {
    case DivergenceKind::ExclusiveKL:
      return gaussian_kl(q.mean, q.cov, p.mean, p.cov, KLDirection::Exclusive);
    case DivergenceKind::InclusiveKL:
      return gaussian_kl(q.mean, q.cov, p.mean, p.cov, KLDirection::Inclusive);
    case DivergenceKind::ChiSq: {
      const double li = gaussian_power_integral(2.0, p, q);
      return li == kInf ? kInf : 0.5 * std::expm1(li);
    }
    case DivergenceKind::Alpha: {
      const double a = spec.alpha;
      const double li = gaussian_power_integral(a, p, q);
      return li == kInf ? kInf : std::expm1(li) / (a * (a - 1.0));
    }
    case DivergenceKind::TailAdaptive:
      break;
  }
  throw UnsupportedOperation("tail-adaptive divergence has no closed form");
}

double mean_field_gaussian_divergence(const DivergenceSpec& spec,
                                      const Gaussian& p, const Vector& lambda,
                                      Vector* grad) {
  const Eigen::Index d = p.mean.size();
  if (lambda.size() != 2 * d) {
    throw std::invalid_argument("mean-field divergence: expected 2D parameters");
  }
  const Vector m = lambda.head(d);
  const Vector s = lambda.tail(d);
  const Vector var = (2.0 * s.array()).exp();
  const CholeskyFactor cp(p.cov);
  if (grad) grad->resize(2 * d);

  switch (spec.kind) {
    case DivergenceKind::ExclusiveKL: {
      const Matrix prec = cp.inverse();
      const Vector diff = m - p.mean;
      const Vector pd = prec * diff;
      if (grad) {
        grad->head(d) = pd;
        grad->tail(d) = (prec.diagonal().array() * var.array() - 1.0).matrix();
      }
      return 0.5 * (prec.diagonal().dot(var) + diff.dot(pd) -
                    static_cast<double>(d) + cp.log_det() - 2.0 * s.sum());
    }
    case DivergenceKind::InclusiveKL: {
      const Vector diff = m - p.mean;
      const Vector spread =
          p.cov.diagonal().array() + diff.array().square();
      if (grad) {
        grad->head(d) = (diff.array() / var.array()).matrix();
        grad->tail(d) = (1.0 - spread.array() / var.array()).matrix();
      }
      return 0.5 * ((spread.array() / var.array()).sum() -
                    static_cast<double>(d) + 2.0 * s.sum() - cp.log_det());
    }
    case DivergenceKind::ChiSq:
    case DivergenceKind::Alpha: {
      const double t = spec.kind == DivergenceKind::ChiSq ? 2.0 : spec.alpha;
      const double scale = spec.kind == DivergenceKind::ChiSq
                               ? 0.5
                               : 1.0 / (t * (t - 1.0));
      const double log_i = mean_field_log_power_integral(t, p, lambda, grad);
      if (!std::isfinite(log_i)) return kInf;
      if (grad) *grad *= scale * std::exp(log_i);
      return scale * std::expm1(log_i);
    }
    case DivergenceKind::TailAdaptive:
      break;
  }
  throw UnsupportedOperation("tail-adaptive divergence has no closed form");
}

double mean_field_log_power_integral(double t, const Gaussian& p,
                                     const Vector& lambda, Vector* grad) {
  const Eigen::Index d = p.mean.size();
  if (lambda.size() != 2 * d) {
    throw std::invalid_argument("mean-field power integral: expected 2D parameters");
  }
  const Vector m = lambda.head(d);
  const Vector s = lambda.tail(d);
  const CholeskyFactor cp(p.cov);
  if (grad) grad->resize(2 * d);
  const Matrix pp = cp.inverse();
  const Vector qprec = (-2.0 * s.array()).exp().matrix();
  Matrix a = t * pp;
  a.diagonal() += (1.0 - t) * qprec;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success ||
      (Matrix(llt.matrixL()).diagonal().array() <= 0.0).any()) {
    if (grad) grad->setConstant(std::numeric_limits<double>::quiet_NaN());
    return kInf;
  }
  const Matrix la = llt.matrixL();
  const double logdet_a = 2.0 * la.diagonal().array().log().sum();
  const Vector b = t * (pp * p.mean) +
                   (1.0 - t) * (qprec.array() * m.array()).matrix();
  const Vector x = llt.solve(b);
  const double quad = t * p.mean.dot(pp * p.mean) +
                      (1.0 - t) * (qprec.array() * m.array().square()).sum() -
                      b.dot(x);
  if (grad) {
    const Vector a_inv_diag = llt.solve(Matrix::Identity(d, d)).diagonal();
    grad->head(d) = (1.0 - t) * (qprec.array() * (x - m).array()).matrix();
    grad->tail(d) =
        (1.0 - t) *
        (qprec.array() * (a_inv_diag.array() + (x - m).array().square()) - 1.0)
            .matrix();
  }
  return -0.5 * t * cp.log_det() - (1.0 - t) * s.sum() - 0.5 * logdet_a -
         0.5 * quad;
}

}  // namespace vibench
