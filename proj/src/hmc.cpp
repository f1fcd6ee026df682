#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <thread>

#include "vibench/errors.hpp"
#include "vibench/reference.hpp"
#include "vibench/seeding.hpp"

namespace vibench {
namespace {

struct ChainResult {
  Matrix draws;  // kept x D
  double acceptance = 0.0;
  double step_size = 0.0;
  int divergences = 0;
};

class DualAveraging {
 public:
  DualAveraging(double step, double target) : target_(target) { restart(step); }

  void restart(double step) {
    mu_ = std::log(10.0 * step);
    h_bar_ = 0.0;
    log_bar_ = 0.0;
    count_ = 0;
  }

  double update(double accept_prob) {
    ++count_;
    const double t = static_cast<double>(count_);
    const double eta = 1.0 / (t + kT0);
    h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept_prob);
    const double log_step = mu_ - std::sqrt(t) / kGamma * h_bar_;
    const double w = std::pow(t, -kKappa);
    log_bar_ = w * log_step + (1.0 - w) * log_bar_;
    return std::exp(log_step);
  }

  double final_step() const { return std::exp(log_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double target_;
  double mu_ = 0.0;
  double h_bar_ = 0.0;
  double log_bar_ = 0.0;
  long count_ = 0;
};

class Chain {
 public:
  Chain(const TargetModel& target, const HmcConfig& config, std::uint64_t seed)
      : target_(target), config_(config), rng_(seed), inv_metric_(Vector::Ones(target.dim())) {}

  ChainResult run() {
    const int d = target_.dim();
    std::uniform_real_distribution<double> init(-config_.init_radius, config_.init_radius);
    theta_.resize(d);
    for (int i = 0; i < d; ++i) theta_[i] = init(rng_);
    logp_ = target_.log_joint_grad(theta_, grad_);
    if (!std::isfinite(logp_)) {
      throw NumericalError("hmc: non-finite log density at initial point", 0);
    }
    double step = initial_step();
    DualAveraging adapt(step, config_.target_accept);

    // Warmup: fast initial buffer, doubling slow windows for the metric, fast
    // terminal buffer.
    const int warmup = config_.warmup;
    const int init_buffer = std::max(1, static_cast<int>(0.15 * warmup));
    const int term_buffer = std::max(1, static_cast<int>(0.1 * warmup));
    const int slow_end = warmup - term_buffer;
    int window_start = init_buffer;
    int window_size = 25;
    std::vector<Vector> window;
    for (int it = 0; it < warmup; ++it) {
      const double accept = transition(step);
      step = adapt.update(accept);
      if (it >= init_buffer && it < slow_end) {
        window.push_back(theta_);
        const int next_end = window_start + window_size;
        const bool last = next_end + 2 * window_size > slow_end;
        const int end = last ? slow_end : next_end;
        if (it + 1 == end) {
          update_metric(window);
          window.clear();
          step = initial_step();
          adapt.restart(step);
          window_start = end;
          window_size *= 2;
        }
      }
    }
    step = adapt.final_step();

    ChainResult out;
    out.draws.resize(config_.draws, d);
    double accept_sum = 0.0;
    divergences_ = 0;
    for (int it = 0; it < config_.draws; ++it) {
      accept_sum += transition(step);
      out.draws.row(it) = theta_.transpose();
    }
    out.acceptance = accept_sum / std::max(1, config_.draws);
    out.step_size = step;
    out.divergences = divergences_;
    return out;
  }

 private:
  double kinetic(const Vector& p) const {
    return 0.5 * (p.array().square() * inv_metric_.array()).sum();
  }

  Vector draw_momentum() {
    Vector p(theta_.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      p[i] = normal_(rng_) / std::sqrt(inv_metric_[i]);
    }
    return p;
  }

  /// Leapfrog trajectory from the current state; returns H(end) - H(start)
  /// and writes the proposal.
  double trajectory(double step, int steps, Vector& theta, Vector& grad, double& logp) {
    Vector p = draw_momentum();
    const double h0 = -logp + kinetic(p);
    for (int l = 0; l < steps; ++l) {
      p += 0.5 * step * grad;
      theta += step * (inv_metric_.array() * p.array()).matrix();
      logp = target_.log_joint_grad(theta, grad);
      if (!std::isfinite(logp)) return std::numeric_limits<double>::infinity();
      p += 0.5 * step * grad;
    }
    return -logp + kinetic(p) - h0;
  }

  double transition(double step) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const int steps = std::clamp(static_cast<int>(std::ceil(config_.path_length / step)), 1,
                                 config_.max_leapfrog);
    const double jittered = step * (1.0 + config_.jitter * unit(rng_));
    Vector theta = theta_;
    Vector grad = grad_;
    double logp = logp_;
    const double dh = trajectory(jittered, steps, theta, grad, logp);
    double accept = 0.0;
    if (std::isfinite(dh)) accept = std::min(1.0, std::exp(-dh));
    if (!std::isfinite(dh) || dh > 1000.0) ++divergences_;
    if (uniform_(rng_) < accept) {
      theta_ = theta;
      grad_ = grad;
      logp_ = logp;
    }
    return accept;
  }

  /// Single-step heuristic: double or halve until the acceptance of one
  /// leapfrog step crosses 0.5.
  double initial_step() {
    double step = 1.0;
    auto accept_of = [&](double e) {
      Vector theta = theta_;
      Vector grad = grad_;
      double logp = logp_;
      const double dh = trajectory(e, 1, theta, grad, logp);
      return std::isfinite(dh) ? std::min(1.0, std::exp(-dh)) : 0.0;
    };
    const bool up = accept_of(step) > 0.5;
    for (int i = 0; i < 50; ++i) {
      const double next = up ? 2.0 * step : 0.5 * step;
      const double a = accept_of(next);
      if (up ? a < 0.5 : a > 0.5) return up ? step : next;
      step = next;
    }
    return step;
  }

  void update_metric(const std::vector<Vector>& window) {
    const double n = static_cast<double>(window.size());
    if (n < 3) return;
    Vector mean = Vector::Zero(theta_.size());
    for (const Vector& x : window) mean += x;
    mean /= n;
    Vector var = Vector::Zero(theta_.size());
    for (const Vector& x : window) var += (x - mean).array().square().matrix();
    var /= (n - 1.0);
    // shrink toward a small constant like the usual regularised estimator
    inv_metric_ = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
  }

  const TargetModel& target_;
  const HmcConfig& config_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  Vector inv_metric_;
  Vector theta_;
  Vector grad_;
  double logp_ = 0.0;
  int divergences_ = 0;
};

}  // namespace

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    if (h < 2) throw std::invalid_argument("split_rhat: chains too short");
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(h));
    halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(h), c.end());
  }
  const double m = static_cast<double>(halves.size());
  const double n = static_cast<double>(halves.front().size());
  std::vector<double> means;
  double w = 0.0;
  for (const auto& seq : halves) {
    double mean = 0.0;
    for (double v : seq) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : seq) var += (v - mean) * (v - mean);
    w += var / (n - 1.0);
    means.push_back(mean);
  }
  w /= m;
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= n / (m - 1.0);
  if (w == 0.0) return b == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

ReferenceMoments reference_sampler(const TargetModel& target,
                                   const HmcConfig& config, const DrawMap& map) {
  if (config.chains < 2 || config.draws < 4 || config.warmup < 10) {
    throw InvalidSpec("hmc: need >= 2 chains, >= 4 draws and >= 10 warmup iterations");
  }
  if (!(config.path_length > 0.0) || config.jitter < 0.0 || config.jitter >= 1.0) {
    throw InvalidSpec("hmc: invalid path length or jitter");
  }
  std::vector<ChainResult> results(static_cast<std::size_t>(config.chains));
  std::vector<std::exception_ptr> errors(results.size());
  auto run_chain = [&](int c) {
    try {
      Chain chain(target, config, derive_seed(config.seed, static_cast<std::uint64_t>(c)));
      results[static_cast<std::size_t>(c)] = chain.run();
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  };
  if (config.parallel) {
    std::vector<std::thread> workers;
    for (int c = 0; c < config.chains; ++c) workers.emplace_back(run_chain, c);
    for (auto& t : workers) t.join();
  } else {
    for (int c = 0; c < config.chains; ++c) run_chain(c);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (map) {
    for (auto& r : results) {
      Matrix mapped;
      for (Eigen::Index s = 0; s < r.draws.rows(); ++s) {
        const Vector y = map(r.draws.row(s).transpose());
        if (mapped.size() == 0) mapped.resize(r.draws.rows(), y.size());
        mapped.row(s) = y.transpose();
      }
      r.draws = std::move(mapped);
    }
  }

  const int d = static_cast<int>(results.front().draws.cols());
  const int total = config.chains * config.draws;
  Matrix pooled(total, d);
  ReferenceMoments out;
  for (int c = 0; c < config.chains; ++c) {
    pooled.middleRows(static_cast<Eigen::Index>(c) * config.draws, config.draws) =
        results[static_cast<std::size_t>(c)].draws;
    out.acceptance.push_back(results[static_cast<std::size_t>(c)].acceptance);
    out.step_size.push_back(results[static_cast<std::size_t>(c)].step_size);
    out.divergences += results[static_cast<std::size_t>(c)].divergences;
  }
  out.kept_draws = total;
  out.mean = pooled.colwise().mean().transpose();
  const Matrix centered = pooled.rowwise() - out.mean.transpose();
  out.covariance = centered.transpose() * centered / static_cast<double>(total - 1);
  out.rhat.resize(d);
  for (int i = 0; i < d; ++i) {
    std::vector<std::vector<double>> per_chain;
    for (const auto& r : results) {
      per_chain.emplace_back(r.draws.col(i).data(), r.draws.col(i).data() + r.draws.rows());
    }
    out.rhat[i] = split_rhat(per_chain);
    if (!(out.rhat[i] <= kRhatLimit)) out.reliable = false;
  }
  return out;
}

}  // namespace vibench
