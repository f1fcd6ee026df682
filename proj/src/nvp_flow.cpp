#include <cmath>
#include <random>
#include <vector>

#include "vibench/errors.hpp"
#include "vibench/flows.hpp"

namespace vibench {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;
using MatMap = Eigen::Map<RowMajor>;

struct NetCache {
  Vector input;
  Vector h1;
  Vector h2;
  Vector out;
};

struct NetView {
  ConstMatMap w1;
  Eigen::Map<const Vector> b1;
  ConstMatMap w2;
  Eigen::Map<const Vector> b2;
  ConstMatMap w3;
  Eigen::Map<const Vector> b3;
};

NetView net_view(const CouplingNet& net, const double* base) {
  const double* p = base + net.offset;
  const int h = net.hidden;
  ConstMatMap w1(p, h, net.in);
  p += h * net.in;
  Eigen::Map<const Vector> b1(p, h);
  p += h;
  ConstMatMap w2(p, h, h);
  p += h * h;
  Eigen::Map<const Vector> b2(p, h);
  p += h;
  ConstMatMap w3(p, net.out, h);
  p += net.out * h;
  Eigen::Map<const Vector> b3(p, net.out);
  return {w1, b1, w2, b2, w3, b3};
}

void net_forward(const CouplingNet& net, const Vector& lambda,
                 const Vector& input, NetCache& cache) {
  const NetView v = net_view(net, lambda.data());
  cache.input = input;
  if (net.in > 0) {
    cache.h1 = (v.w1 * input + v.b1).array().tanh().matrix();
  } else {
    cache.h1 = v.b1.array().tanh().matrix();
  }
  cache.h2 = (v.w2 * cache.h1 + v.b2).array().tanh().matrix();
  cache.out = v.w3 * cache.h2 + v.b3;
}

/// Accumulates parameter gradients into grad and returns d/d input.
Vector net_backward(const CouplingNet& net, const Vector& lambda,
                    const NetCache& cache, const Vector& g_out, Vector& grad) {
  const NetView v = net_view(net, lambda.data());
  const int h = net.hidden;
  double* p = grad.data() + net.offset;
  MatMap gw1(p, h, net.in);
  p += h * net.in;
  Eigen::Map<Vector> gb1(p, h);
  p += h;
  MatMap gw2(p, h, h);
  p += h * h;
  Eigen::Map<Vector> gb2(p, h);
  p += h;
  MatMap gw3(p, net.out, h);
  p += net.out * h;
  Eigen::Map<Vector> gb3(p, net.out);

  gw3.noalias() += g_out * cache.h2.transpose();
  gb3 += g_out;
  const Vector g_a2 =
      ((v.w3.transpose() * g_out).array() * (1.0 - cache.h2.array().square()))
          .matrix();
  gw2.noalias() += g_a2 * cache.h1.transpose();
  gb2 += g_a2;
  const Vector g_a1 =
      ((v.w2.transpose() * g_a2).array() * (1.0 - cache.h1.array().square()))
          .matrix();
  gb1 += g_a1;
  if (net.in == 0) return Vector();
  gw1.noalias() += g_a1 * cache.input.transpose();
  return v.w1.transpose() * g_a1;
}

Vector gather(const Vector& x, const std::vector<int>& idx) {
  Vector out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
  return out;
}

struct CouplingCache {
  Vector x_in;    // layer input (forward) or layer output y (inverse)
  NetCache scale;
  NetCache shift;
  Vector s;       // tanh(net_s)
  Vector result;  // transformed block after the step
};

}  // namespace

NvpFlow::NvpFlow(int dim, int layers, int hidden, double init_sd)
    : Family(dim), init_sd_(init_sd) {
  if (layers < 1 || hidden < 1) {
    throw InvalidSpec("nvp flow: layers and hidden width must be >= 1");
  }
  const int block = (dim + 1) / 2;
  int offset = 0;
  for (int l = 0; l < layers; ++l) {
    Layer layer;
    const bool leading = (l % 2 == 0);
    const int first = leading ? 0 : dim - block;
    for (int i = 0; i < dim; ++i) {
      if (i >= first && i < first + block) {
        layer.transformed.push_back(i);
      } else {
        layer.conditioner.push_back(i);
      }
    }
    const int in = static_cast<int>(layer.conditioner.size());
    const int out = static_cast<int>(layer.transformed.size());
    layer.scale = CouplingNet{in, hidden, out, offset};
    offset += layer.scale.size();
    layer.shift = CouplingNet{in, hidden, out, offset};
    offset += layer.shift.size();
    layers_.push_back(std::move(layer));
  }
  num_params_ = offset;
}

Vector NvpFlow::initial_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_sd_);
  Vector lambda = Vector::Zero(num_params_);
  for (const Layer& layer : layers_) {
    for (const CouplingNet* net : {&layer.scale, &layer.shift}) {
      // hidden weights random, biases and the output layer zero
      const int h = net->hidden;
      int p = net->offset;
      for (int i = 0; i < h * net->in; ++i) lambda[p + i] = normal(rng);
      p += h * net->in + h;
      for (int i = 0; i < h * h; ++i) lambda[p + i] = normal(rng);
    }
  }
  return lambda;
}

namespace {

double coupling_forward(const NvpFlow::Layer& layer, const Vector& lambda,
                        Vector& x, CouplingCache* cache) {
  CouplingCache local;
  CouplingCache& c = cache ? *cache : local;
  c.x_in = x;
  const Vector cond = gather(x, layer.conditioner);
  net_forward(layer.scale, lambda, cond, c.scale);
  net_forward(layer.shift, lambda, cond, c.shift);
  c.s = c.scale.out.array().tanh().matrix();
  for (std::size_t i = 0; i < layer.transformed.size(); ++i) {
    const int k = layer.transformed[i];
    x[k] = x[k] * std::exp(c.s[i]) + c.shift.out[i];
  }
  return c.s.sum();
}

}  // namespace

double NvpFlow::forward(const Vector& lambda, const Vector& eps,
                        Vector& theta) const {
  theta = eps;
  double logdet = 0.0;
  for (const Layer& layer : layers_) {
    logdet += coupling_forward(layer, lambda, theta, nullptr);
  }
  return logdet;
}

Vector NvpFlow::backward(const Vector& lambda, const Vector& eps,
                         const Vector& cot_theta, double cot_logdet) const {
  std::vector<CouplingCache> caches(layers_.size());
  Vector x = eps;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    coupling_forward(layers_[l], lambda, x, &caches[l]);
  }

  Vector grad = Vector::Zero(num_params_);
  Vector g = cot_theta;
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const Layer& layer = layers_[l];
    const CouplingCache& c = caches[l];
    const auto nt = static_cast<Eigen::Index>(layer.transformed.size());
    Vector g_s(nt), g_t(nt);
    for (Eigen::Index i = 0; i < nt; ++i) {
      const int k = layer.transformed[i];
      const double e = std::exp(c.s[i]);
      g_t[i] = g[k];
      g_s[i] = g[k] * c.x_in[k] * e + cot_logdet;
      g[k] *= e;
    }
    const Vector g_out_s =
        (g_s.array() * (1.0 - c.s.array().square())).matrix();
    const Vector gc_s = net_backward(layer.scale, lambda, c.scale, g_out_s, grad);
    const Vector gc_t = net_backward(layer.shift, lambda, c.shift, g_t, grad);
    for (std::size_t i = 0; i < layer.conditioner.size(); ++i) {
      g[layer.conditioner[i]] += gc_s[i] + gc_t[i];
    }
  }
  return grad;
}

namespace {

/// One inverse coupling step: y -> x. Returns sum(s).
double coupling_inverse(const NvpFlow::Layer& layer, const Vector& lambda,
                        Vector& y, CouplingCache* cache) {
  CouplingCache local;
  CouplingCache& c = cache ? *cache : local;
  c.x_in = y;
  const Vector cond = gather(y, layer.conditioner);
  net_forward(layer.scale, lambda, cond, c.scale);
  net_forward(layer.shift, lambda, cond, c.shift);
  c.s = c.scale.out.array().tanh().matrix();
  c.result.resize(static_cast<Eigen::Index>(layer.transformed.size()));
  for (std::size_t i = 0; i < layer.transformed.size(); ++i) {
    const int k = layer.transformed[i];
    y[k] = (y[k] - c.shift.out[i]) * std::exp(-c.s[i]);
    c.result[i] = y[k];
  }
  return c.s.sum();
}

}  // namespace

Vector NvpFlow::inverse(const Vector& lambda, const Vector& theta) const {
  check_params(lambda);
  Vector x = theta;
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    coupling_inverse(layers_[l], lambda, x, nullptr);
  }
  return x;
}

// log q(theta) = log r(eps) - sum_l sum(s_l), eps = T^{-1}(theta); reverse
// accumulation through the inverse pass at fixed theta.
Vector NvpFlow::score_grad_logq(const Vector& lambda,
                                const Vector& theta) const {
  check_params(lambda);
  const int count = static_cast<int>(layers_.size());
  std::vector<CouplingCache> caches(count);
  Vector x = theta;
  for (int l = count - 1; l >= 0; --l) {
    coupling_inverse(layers_[l], lambda, x, &caches[l]);
  }

  Vector grad = Vector::Zero(num_params_);
  Vector g = base_dlogpdf(x);
  for (int l = 0; l < count; ++l) {
    const Layer& layer = layers_[l];
    const CouplingCache& c = caches[l];
    const auto nt = static_cast<Eigen::Index>(layer.transformed.size());
    Vector g_s(nt), g_t(nt);
    for (Eigen::Index i = 0; i < nt; ++i) {
      const int k = layer.transformed[i];
      const double inv_e = std::exp(-c.s[i]);
      g_t[i] = -g[k] * inv_e;
      g_s[i] = -g[k] * c.result[i] - 1.0;
      g[k] *= inv_e;
    }
    const Vector g_out_s =
        (g_s.array() * (1.0 - c.s.array().square())).matrix();
    const Vector gc_s = net_backward(layer.scale, lambda, c.scale, g_out_s, grad);
    const Vector gc_t = net_backward(layer.shift, lambda, c.shift, g_t, grad);
    for (std::size_t i = 0; i < layer.conditioner.size(); ++i) {
      g[layer.conditioner[i]] += gc_s[i] + gc_t[i];
    }
  }
  return grad;
}

}  // namespace vibench
