#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "vibench/errors.hpp"
#include "vibench/flows.hpp"

namespace vibench {
namespace {

// softplus(c0) == 1, so u = 0 stays at u_hat = 0.
const double kShift = std::log(std::numbers::e - 1.0);

struct PlanarCache {
  Vector z_in;
  Vector u_hat;
  double m = 0.0;     // u'w
  double n = 0.0;     // |w|^2
  double beta = 0.0;  // coefficient of w in u_hat - u
  double c = 0.0;     // u_hat'w
  double h = 0.0;
  double hp = 0.0;    // 1 - h^2
};

struct LayerView {
  Eigen::Map<const Vector> u;
  Eigen::Map<const Vector> w;
  double b;
};

LayerView layer_view(const Vector& lambda, int l, int d) {
  const double* p = lambda.data() + static_cast<std::ptrdiff_t>(l) * (2 * d + 1);
  return {Eigen::Map<const Vector>(p, d), Eigen::Map<const Vector>(p + d, d),
          p[2 * d]};
}

void constrain(const LayerView& v, PlanarCache& c) {
  c.m = v.u.dot(v.w);
  c.n = v.w.squaredNorm();
  if (c.n > 0.0) {
    c.c = softplus(c.m + kShift) - 1.0;
    c.beta = c.c - c.m;
    c.u_hat = v.u + (c.beta / c.n) * v.w;
  } else {
    c.c = c.m;
    c.beta = 0.0;
    c.u_hat = v.u;
  }
}

double run_forward(const PlanarFlow& flow, const Vector& lambda,
                   const Vector& eps, Vector& theta,
                   std::vector<PlanarCache>* caches) {
  const int d = flow.dim();
  Vector z = eps;
  double logdet = 0.0;
  if (caches) caches->resize(flow.layers());
  for (int l = 0; l < flow.layers(); ++l) {
    const LayerView v = layer_view(lambda, l, d);
    PlanarCache c;
    constrain(v, c);
    const double a = v.w.dot(z) + v.b;
    c.h = std::tanh(a);
    c.hp = 1.0 - c.h * c.h;
    logdet += std::log1p(c.hp * c.c);
    if (caches) {
      c.z_in = z;
      (*caches)[l] = c;
    }
    z += c.u_hat * c.h;
  }
  theta = std::move(z);
  return logdet;
}

}  // namespace

PlanarFlow::PlanarFlow(int dim, int layers) : Family(dim), layers_(layers) {
  if (layers < 1) throw InvalidSpec("planar flow: layers must be >= 1");
}

Vector PlanarFlow::constrained_u(const Vector& lambda, int l) const {
  check_params(lambda);
  PlanarCache c;
  constrain(layer_view(lambda, l, dim()), c);
  return c.u_hat;
}

Vector PlanarFlow::initial_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(dim()));
  Vector lambda = Vector::Zero(num_params());
  const int d = dim();
  for (int l = 0; l < layers_; ++l) {
    for (int i = 0; i < d; ++i) lambda[l * (2 * d + 1) + d + i] = normal(rng);
  }
  return lambda;
}

double PlanarFlow::forward(const Vector& lambda, const Vector& eps,
                           Vector& theta) const {
  return run_forward(*this, lambda, eps, theta, nullptr);
}

Vector PlanarFlow::backward(const Vector& lambda, const Vector& eps,
                            const Vector& cot_theta, double cot_logdet) const {
  const int d = dim();
  std::vector<PlanarCache> caches;
  Vector theta;
  run_forward(*this, lambda, eps, theta, &caches);

  Vector grad = Vector::Zero(num_params());
  Vector g_z = cot_theta;
  for (int l = layers_ - 1; l >= 0; --l) {
    const PlanarCache& c = caches[l];
    const LayerView v = layer_view(lambda, l, d);
    const int off = l * (2 * d + 1);
    auto g_u = grad.segment(off, d);
    auto g_w = grad.segment(off + d, d);

    const double denom = 1.0 + c.hp * c.c;
    const double g_a = c.hp * c.u_hat.dot(g_z) +
                       cot_logdet * (c.c / denom) * (-2.0 * c.h * c.hp);
    const Vector g_uhat = g_z * c.h;
    const double g_c = cot_logdet * c.hp / denom;

    g_w += c.z_in * g_a;
    grad[off + 2 * d] += g_a;

    double g_m = 0.0;
    g_u += g_uhat;
    if (c.n > 0.0) {
      const double sig = sigmoid(c.m + kShift);
      const double gw_dot = g_uhat.dot(v.w);
      g_m += g_c * sig;
      g_w += (c.beta / c.n) * g_uhat -
             (2.0 * c.beta * gw_dot / (c.n * c.n)) * v.w;
      g_m += (gw_dot / c.n) * (sig - 1.0);
    } else {
      g_m += g_c;
    }
    g_u += g_m * v.w;
    g_w += g_m * v.u;

    g_z += v.w * g_a;
  }
  return grad;
}

Vector PlanarFlow::score_grad_logq(const Vector&, const Vector&) const {
  throw UnsupportedOperation(
      "planar flow: log q at arbitrary theta needs an inverse; score-function "
      "estimators are unsupported");
}

}  // namespace vibench
