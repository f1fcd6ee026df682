#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "finite_diff.hpp"
#include "vibench/divergences.hpp"
#include "vibench/errors.hpp"
#include "vibench/families.hpp"
#include "vibench/targets.hpp"

using namespace vibench;

namespace {

std::vector<DivergenceSpec> pointwise_specs() {
  return {DivergenceSpec::exclusive_kl(), DivergenceSpec::inclusive_kl(),
          DivergenceSpec::chi_sq(), DivergenceSpec::alpha_div(0.5),
          DivergenceSpec::alpha_div(1.5)};
}

Gaussian gauss1(double m, double var) {
  return {Vector::Constant(1, m), Matrix::Constant(1, 1, var)};
}

double npdf(double x, double m, double var) {
  return std::exp(-0.5 * (x - m) * (x - m) / var) / std::sqrt(2 * M_PI * var);
}

// Trapezoid rule over a wide grid; the integrands are smooth and decay fast.
double integrate(const std::function<double(double)>& f, double lo, double hi, int n = 200000) {
  const double h = (hi - lo) / n;
  double sum = 0.5 * (f(lo) + f(hi));
  for (int i = 1; i < n; ++i) sum += f(lo + i * h);
  return sum * h;
}

}  // namespace

TEST_CASE("divergence names") {
  for (const auto& spec : pointwise_specs()) {
    const DivergenceSpec back = divergence_from_string(to_string(spec));
    CHECK(back.kind == spec.kind);
    CHECK(back.alpha == spec.alpha);
  }
  CHECK(divergence_from_string("tail_adaptive").kind == DivergenceKind::TailAdaptive);
  CHECK(divergence_from_string("alpha:0.25").alpha == 0.25);
  CHECK_THROWS_AS(divergence_from_string("hellinger"), InvalidSpec);
  CHECK_THROWS_AS(divergence_from_string("alpha:1"), InvalidSpec);
  CHECK_THROWS_AS(divergence_from_string("alpha:x"), InvalidSpec);
}

TEST_CASE("pointwise f values") {
  for (const auto& spec : pointwise_specs()) CHECK(f_eval(spec, 0.0) == doctest::Approx(0.0));
  CHECK(f_eval(DivergenceSpec::chi_sq(), std::log(2.0)) == doctest::Approx(1.0));
  CHECK(f_eval(DivergenceSpec::alpha_div(0.5), std::log(4.0)) == doctest::Approx(8.0));
  CHECK(f_eval(DivergenceSpec::exclusive_kl(), 1.5) == doctest::Approx(-1.5));
  CHECK(f_eval(DivergenceSpec::inclusive_kl(), std::log(3.0)) ==
        doctest::Approx(3.0 * std::log(3.0)));
  CHECK_THROWS_AS(f_eval(DivergenceSpec::tail_adaptive(), 0.0), UnsupportedOperation);
}

TEST_CASE("f prime matches a numerical derivative in w") {
  for (const auto& spec : pointwise_specs()) {
    for (double w : {0.3, 1.0, 2.5}) {
      const double h = 1e-6;
      const double fd =
          (f_eval(spec, std::log(w + h)) - f_eval(spec, std::log(w - h))) / (2 * h);
      CHECK(fprime_eval(spec, std::log(w)) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("overflow saturates") {
  const double v = f_eval(DivergenceSpec::chi_sq(), 800.0);
  CHECK(std::isinf(v));
  CHECK(v > 0);
  WeightSet ws{Vector::Constant(3, 0.0)};
  ws.log_w[1] = 800.0;
  const LossEstimate l = mc_loss(DivergenceSpec::chi_sq(), ws, true);
  CHECK(l.overflow_count == 1);
}

TEST_CASE("monte carlo loss arithmetic") {
  WeightSet zeros{Vector::Zero(5)};
  for (const auto& spec : pointwise_specs()) CHECK(mc_loss(spec, zeros).value == doctest::Approx(0.0));

  WeightSet pm{Vector(2)};
  pm.log_w << -1.0, 1.0;
  CHECK(mc_loss(DivergenceSpec::exclusive_kl(), pm).value == doctest::Approx(0.0));

  WeightSet one{Vector::Constant(1, std::log(2.0))};
  CHECK(mc_loss(DivergenceSpec::chi_sq(), one, true).value == doctest::Approx(1.0));
  CHECK(mc_loss(DivergenceSpec::exclusive_kl(), one).value == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("self-normalized loss ignores the normalizer") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  WeightSet a{Vector(50)};
  for (int i = 0; i < 50; ++i) a.log_w[i] = n(rng);
  WeightSet b{(a.log_w.array() + 7.0).matrix()};
  for (const auto& spec : pointwise_specs()) {
    if (!spec.self_normalized()) continue;
    CHECK(mc_loss(spec, a).value == doctest::Approx(mc_loss(spec, b).value).epsilon(1e-10));
  }
}

TEST_CASE("arithmetic-geometric mean bound on the sample") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int rep = 0; rep < 20; ++rep) {
    WeightSet ws{Vector(40)};
    for (int i = 0; i < 40; ++i) ws.log_w[i] = n(rng);
    const double lhs = std::exp(-mc_loss(DivergenceSpec::exclusive_kl(), ws).value);
    const double rhs = ws.log_w.array().exp().mean();
    CHECK(lhs <= rhs * (1 + 1e-12));
  }
}

TEST_CASE("weight set validation and normalization") {
  WeightSet empty{Vector(0)};
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
  WeightSet bad{Vector::Zero(3)};
  bad.log_w[1] = std::nan("");
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.log_w[1] = INFINITY;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  WeightSet big{Vector(2)};
  big.log_w << 1000.0, 1000.0 + std::log(3.0);
  const Vector w = big.normalized();
  CHECK(w[0] == doctest::Approx(0.25));
  CHECK(w[1] == doctest::Approx(0.75));
}

TEST_CASE("finite moment requirements") {
  const auto ex = moments_required(DivergenceSpec::exclusive_kl());
  REQUIRE(ex);
  CHECK(ex->value == 0.0);
  CHECK(ex->plus_delta);
  const auto in = moments_required(DivergenceSpec::inclusive_kl());
  REQUIRE(in);
  CHECK(in->value == 2.0);
  CHECK(in->plus_delta);
  CHECK(moments_required(DivergenceSpec::chi_sq())->value == 4.0);
  CHECK_FALSE(moments_required(DivergenceSpec::chi_sq())->plus_delta);
  CHECK(moments_required(DivergenceSpec::alpha_div(1.5))->value == 3.0);
  CHECK_FALSE(moments_required(DivergenceSpec::tail_adaptive()).has_value());
}

TEST_CASE("gaussian kl closed forms") {
  const Vector z1 = Vector::Zero(1);
  CHECK(gaussian_kl(z1, Matrix::Identity(1, 1), z1, Matrix::Identity(1, 1),
                    KLDirection::Exclusive) == doctest::Approx(0.0));
  CHECK(gaussian_kl(z1, Matrix::Identity(1, 1), z1, Matrix::Constant(1, 1, 4.0),
                    KLDirection::Exclusive) ==
        doctest::Approx(0.318147).epsilon(1e-6));
  const Matrix s = build_covariance({CovarianceKind::Uniform, 0.5, 2});
  const Vector z2 = Vector::Zero(2);
  CHECK(gaussian_kl(z2, Matrix::Identity(2, 2), z2, s, KLDirection::Exclusive) ==
        doctest::Approx(0.189492).epsilon(1e-6));
  // inclusive swaps the roles
  CHECK(gaussian_kl(z2, s, z2, Matrix::Identity(2, 2), KLDirection::Inclusive) ==
        doctest::Approx(0.189492).epsilon(1e-6));
}

TEST_CASE("gaussian power integral") {
  const Gaussian p = gauss1(0.0, 1.0);
  const Gaussian q = gauss1(0.0, 4.0);
  CHECK(gaussian_power_integral(0.0, p, q) == doctest::Approx(0.0).scale(1.0));
  CHECK(gaussian_power_integral(1.0, p, q) == doctest::Approx(0.0).scale(1.0));
  CHECK(std::exp(gaussian_power_integral(2.0, p, q)) ==
        doctest::Approx(4.0 / std::sqrt(7.0)).epsilon(1e-12));
  const double quad = integrate(
      [](double x) { return npdf(x, 0, 1) * npdf(x, 0, 1) / npdf(x, 0, 4); }, -40, 40);
  CHECK(std::exp(gaussian_power_integral(2.0, p, q)) == doctest::Approx(quad).epsilon(1e-9));
  // q narrower than p/2 in precision terms: the chi-square integral diverges
  CHECK(std::isinf(gaussian_power_integral(2.0, gauss1(0, 4.0), gauss1(0, 1.0))));
}

TEST_CASE("power integral is log-convex in t") {
  const Matrix s = build_covariance({CovarianceKind::Uniform, 0.5, 3});
  const Gaussian p{Vector::Zero(3), s};
  Vector m(3);
  m << 0.2, -0.1, 0.3;
  const Gaussian q{m, 1.3 * Matrix::Identity(3, 3)};
  const double h = 0.05;
  for (double t = -0.5; t <= 2.5; t += h) {
    const double a = gaussian_power_integral(t - h, p, q);
    const double b = gaussian_power_integral(t, p, q);
    const double c = gaussian_power_integral(t + h, p, q);
    if (!std::isfinite(a) || !std::isfinite(c)) continue;
    CHECK(a - 2 * b + c >= -1e-8);
  }
}

TEST_CASE("closed-form divergences against quadrature") {
  const Gaussian p = gauss1(0.3, 1.0);
  const Gaussian q = gauss1(0.0, 1.6);
  for (const auto& spec : pointwise_specs()) {
    CAPTURE(to_string(spec));
    const double quad = integrate(
        [&](double x) {
          const double log_q = -0.5 * x * x / 1.6 - 0.5 * std::log(2 * M_PI * 1.6);
          const double log_p = -0.5 * (x - 0.3) * (x - 0.3) - 0.5 * std::log(2 * M_PI);
          return std::exp(log_q) * f_eval(spec, log_p - log_q);
        },
        -40, 40);
    CHECK(gaussian_divergence(spec, p, q) == doctest::Approx(quad).epsilon(1e-8));
  }
}

TEST_CASE("divergences vanish when q equals p") {
  const Matrix s = build_covariance({CovarianceKind::Banded, 0.4, 3});
  const Gaussian p{Vector::Zero(3), s};
  for (const auto& spec : pointwise_specs()) {
    CHECK(gaussian_divergence(spec, p, p) == doctest::Approx(0.0).scale(1.0));
  }
  const TargetPtr target = make_correlated_gaussian({CovarianceKind::Uniform, 0.0, 3});
  const FamilyPtr fam = make_family(FamilyKind::MFGaussian, 3);
  const Vector lambda = Vector::Zero(6);
  const SampleBatch b = sample_transform(*fam, lambda, fam->draw_base(1000, 1));
  WeightSet ws{Vector(1000)};
  for (int i = 0; i < 1000; ++i) ws.log_w[i] = target->log_joint(b.thetas.row(i).transpose()) - b.logq[i];
  for (const auto& spec : pointwise_specs()) {
    CHECK(std::abs(mc_loss(spec, ws, true).value) < 1e-10);
  }
}

TEST_CASE("mean-field closed forms match the general expressions") {
  const Matrix s = build_covariance({CovarianceKind::Uniform, 0.5, 4});
  const Gaussian p{Vector::Zero(4), s};
  Vector lambda(8);
  lambda << 0.1, -0.2, 0.05, 0.0, 0.7, 0.6, 0.65, 0.8;
  const Gaussian q{lambda.head(4), lambda.tail(4).array().exp().square().matrix().asDiagonal()};
  for (const auto& spec : pointwise_specs()) {
    CAPTURE(to_string(spec));
    CHECK(mean_field_gaussian_divergence(spec, p, lambda, nullptr) ==
          doctest::Approx(gaussian_divergence(spec, p, q)).epsilon(1e-10));
  }
  for (double t : {0.5, 1.5, 2.0, 3.0}) {
    CHECK(mean_field_log_power_integral(t, p, lambda, nullptr) ==
          doctest::Approx(gaussian_power_integral(t, p, q)).epsilon(1e-10));
  }
}

TEST_CASE("mean-field divergence gradients match central differences") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  const Matrix s = build_covariance({CovarianceKind::Uniform, 0.5, 4});
  Vector mean(4);
  mean << 0.5, -0.3, 0.0, 0.2;
  const Gaussian p{mean, s};
  for (const auto& spec : pointwise_specs()) {
    CAPTURE(to_string(spec));
    for (int rep = 0; rep < 20; ++rep) {
      Vector lambda(8);
      for (int i = 0; i < 4; ++i) lambda[i] = 0.5 * n(rng);
      for (int i = 4; i < 8; ++i) lambda[i] = 0.65 + 0.1 * n(rng);
      Vector g;
      const double v = mean_field_gaussian_divergence(spec, p, lambda, &g);
      REQUIRE(std::isfinite(v));
      const Vector fd = testing::central_difference(
          [&](const Vector& l) { return mean_field_gaussian_divergence(spec, p, l, nullptr); },
          lambda);
      CHECK(testing::relative_gradient_error(g, fd) < 1e-4);
    }
  }
  for (double t : {0.5, 1.5, 2.0, 3.0}) {
    for (int rep = 0; rep < 20; ++rep) {
      Vector lambda(8);
      for (int i = 0; i < 4; ++i) lambda[i] = 0.5 * n(rng);
      for (int i = 4; i < 8; ++i) lambda[i] = 0.65 + 0.1 * n(rng);
      Vector g;
      mean_field_log_power_integral(t, p, lambda, &g);
      const Vector fd = testing::central_difference(
          [&](const Vector& l) { return mean_field_log_power_integral(t, p, l, nullptr); },
          lambda);
      CHECK(testing::relative_gradient_error(g, fd) < 1e-4);
    }
  }
}

TEST_CASE("self-normalization flags") {
  CHECK_FALSE(DivergenceSpec::exclusive_kl().self_normalized());
  CHECK(DivergenceSpec::inclusive_kl().self_normalized());
  CHECK(DivergenceSpec::alpha_div(1.5).self_normalized());
  CHECK_FALSE(DivergenceSpec::alpha_div(0.5).self_normalized());
}
