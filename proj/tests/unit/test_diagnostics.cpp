#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "vibench/diagnostics.hpp"
#include "vibench/errors.hpp"

using namespace vibench;

namespace {

// Inverse-CDF draws from GPD(k, sigma), written out independently of the
// library's quantile function.
Vector gpd_sample(int n, double k, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector x(n);
  for (int i = 0; i < n; ++i) {
    const double v = u(rng);
    x[i] = k == 0.0 ? -sigma * std::log1p(-v) : sigma / k * (std::pow(1.0 - v, -k) - 1.0);
  }
  return x;
}

WeightSet lognormal_weights(int n, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  WeightSet ws{Vector(n)};
  for (int i = 0; i < n; ++i) ws.log_w[i] = g(rng);
  return ws;
}

}  // namespace

TEST_CASE("gpd recovery on synthetic exceedances") {
  CHECK(std::abs(fit_gpd(gpd_sample(4000, 0.5, 1.0, 1)).khat - 0.5) < 0.1);
  std::mt19937_64 rng(2);
  std::exponential_distribution<double> ex(1.0);
  Vector e(4000);
  for (int i = 0; i < 4000; ++i) e[i] = ex(rng);
  CHECK(std::abs(fit_gpd(e).khat) < 0.08);
  std::uniform_real_distribution<double> un(0.0, 1.0);
  Vector u(4000);
  for (int i = 0; i < 4000; ++i) u[i] = un(rng);
  CHECK(std::abs(fit_gpd(u).khat + 1.0) < 0.1);
}

TEST_CASE("gpd fit preconditions") {
  CHECK_THROWS(fit_gpd(Vector::Ones(4)));
  Vector neg = Vector::Ones(10);
  neg[3] = -1.0;
  CHECK_THROWS(fit_gpd(neg));
  const ParetoFit flat = fit_gpd(Vector::Constant(20, 2.0));
  CHECK_FALSE(flat.reliable);
}

TEST_CASE("gpd fit is scale equivariant") {
  const Vector x = gpd_sample(1000, 0.3, 1.0, 3);
  const ParetoFit a = fit_gpd(x);
  const ParetoFit b = fit_gpd(7.5 * x);
  CHECK(b.khat == doctest::Approx(a.khat).epsilon(1e-10));
  CHECK(b.sigma == doctest::Approx(7.5 * a.sigma).epsilon(1e-10));
}

TEST_CASE("gpd quantile inverts the cdf") {
  for (double k : {-0.5, 0.0, 0.4}) {
    for (double p : {0.1, 0.5, 0.9}) {
      const double x = gpd_quantile(p, k, 2.0);
      const double cdf = k == 0.0 ? 1 - std::exp(-x / 2.0) : 1 - std::pow(1 + k * x / 2.0, -1 / k);
      CHECK(cdf == doctest::Approx(p).epsilon(1e-12));
    }
  }
}

TEST_CASE("tail size rule") {
  CHECK(pareto_tail_size(4000) == 190);
  CHECK(pareto_tail_size(100) == 20);
  CHECK(pareto_tail_size(25) == 5);
  CHECK(pareto_tail_size(10000) == 300);
}

TEST_CASE("weight function names") {
  for (auto fn : {WeightFunction::W, WeightFunction::WSquared, WeightFunction::SqrtW,
                  WeightFunction::LogW, WeightFunction::WLogW}) {
    CHECK(weight_function_from_string(to_string(fn)) == fn);
  }
  CHECK_THROWS_AS(weight_function_from_string("w3"), InvalidSpec);
}

TEST_CASE("constant weights have no heavy tail") {
  const WeightSet ws{Vector::Constant(100, 0.7)};
  for (auto fn : {WeightFunction::W, WeightFunction::WSquared, WeightFunction::LogW}) {
    const ParetoFit f = khat_of(fn, ws);
    CHECK(f.khat <= 0.0);
    CHECK_FALSE(f.exceeds_threshold());
  }
  CHECK(min_sample_size(khat_of(WeightFunction::W, ws).khat) == 1.0);
  CHECK_THROWS(khat_of(WeightFunction::W, WeightSet{Vector::Zero(24)}));
}

TEST_CASE("squaring doubles the tail index") {
  // w = 1 + GPD(k, k) is exactly Pareto, so w^2 is exactly Pareto with index 2k
  std::vector<double> ks;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Vector w = (gpd_sample(4000, 0.3, 0.3, 100 + seed).array() + 1.0).matrix();
    ks.push_back(khat_of(WeightFunction::WSquared, WeightSet{w.array().log().matrix()}).khat);
  }
  double total = 0.0;
  for (double k : ks) total += k;
  std::sort(ks.begin(), ks.end());
  CHECK(std::abs(total / 20 - 0.6) < 0.06);
  CHECK(std::abs(0.5 * (ks[9] + ks[10]) - 0.6) < 0.06);
}

TEST_CASE("log compression lightens tails") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const WeightSet ws = lognormal_weights(2000, 2.0, seed);
    CHECK(khat_of(WeightFunction::LogW, ws).khat <= khat_of(WeightFunction::W, ws).khat);
  }
}

TEST_CASE("psis leaves equal weights alone") {
  const WeightSet ws{Vector::Constant(200, -1.5)};
  const SmoothedWeights s = psis_smooth(ws);
  CHECK(s.weights.log_w == ws.log_w);
}

TEST_CASE("psis smoothing properties") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const WeightSet ws = lognormal_weights(4000, 3.0, seed);
    const SmoothedWeights s = psis_smooth(ws);
    CHECK(s.weights.log_w.maxCoeff() <= ws.log_w.maxCoeff());
    // the untouched body is exactly the raw weights, in the original order
    const int m = pareto_tail_size(4000);
    std::vector<double> sorted(ws.log_w.data(), ws.log_w.data() + 4000);
    std::sort(sorted.begin(), sorted.end());
    const double cut = sorted[4000 - m - 1];
    std::vector<std::pair<double, double>> tail;
    for (int i = 0; i < 4000; ++i) {
      if (ws.log_w[i] <= cut) {
        CHECK(s.weights.log_w[i] == ws.log_w[i]);
      } else {
        tail.emplace_back(ws.log_w[i], s.weights.log_w[i]);
      }
    }
    CHECK(static_cast<int>(tail.size()) == m);
    std::sort(tail.begin(), tail.end());
    for (std::size_t i = 1; i < tail.size(); ++i) CHECK(tail[i].second >= tail[i - 1].second);
    CHECK(s.weights.normalized().sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("minimal sample size") {
  CHECK(min_sample_size(0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(min_sample_size(0.5) == doctest::Approx(std::exp(2.0)).epsilon(1e-12));
  CHECK(min_sample_size(0.7) == doctest::Approx(std::exp(0.7 / 0.09)).epsilon(1e-12));
  CHECK(std::isinf(min_sample_size(1.0)));
  CHECK(std::isinf(min_sample_size(2.5)));
  CHECK(min_sample_size(-std::numeric_limits<double>::infinity()) == 1.0);
}

TEST_CASE("threshold") {
  ParetoFit f;
  f.khat = 0.71;
  CHECK(f.exceeds_threshold());
  f.khat = 0.7;
  CHECK_FALSE(f.exceeds_threshold());
}
