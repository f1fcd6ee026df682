#include <doctest.h>

#include <cmath>
#include <random>

#include "finite_diff.hpp"
#include "vibench/targets.hpp"

using namespace vibench;

namespace {

Vector random_point(int dim, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = n(rng);
  return v;
}

void check_gradients(const TargetModel& target, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  for (int rep = 0; rep < 20; ++rep) {
    const Vector x = random_point(target.dim(), rng, sd);
    Vector g;
    const double value = target.log_joint_grad(x, g);
    CHECK(value == doctest::Approx(target.log_joint(x)).epsilon(1e-12));
    const Vector fd = testing::central_difference(
        [&](const Vector& v) { return target.log_joint(v); }, x);
    CHECK(testing::relative_gradient_error(g, fd) < 1e-4);
  }
}

}  // namespace

TEST_CASE("correlated gaussian target") {
  const TargetPtr t1 = make_correlated_gaussian({CovarianceKind::Uniform, 0.5, 1});
  CHECK(t1->log_joint(Vector::Zero(1)) == doctest::Approx(-0.9189385).epsilon(1e-7));

  const TargetPtr t2 = make_correlated_gaussian({CovarianceKind::Uniform, 0.5, 2});
  REQUIRE(t2->truth());
  Matrix expected(2, 2);
  expected << 1, 0.5, 0.5, 1;
  CHECK((t2->truth()->covariance - expected).norm() < 1e-15);
  for (int d : {1, 3, 7}) {
    const TargetPtr t = make_correlated_gaussian({CovarianceKind::Banded, 0.3, d});
    CHECK(t->truth()->mean.isZero());
    CHECK(t->dim() == d);
  }
}

TEST_CASE("unnormalized gaussian drops the normalizer") {
  const CovarianceSpec spec{CovarianceKind::Uniform, 0.5, 3};
  const TargetPtr norm = make_correlated_gaussian(spec, true);
  const TargetPtr raw = make_correlated_gaussian(spec, false);
  Vector x(3);
  x << 0.2, -0.4, 1.1;
  const double log_z = raw->truth()->log_normalizer;
  CHECK(raw->log_joint(x) - log_z == doctest::Approx(norm->log_joint(x)).epsilon(1e-12));
  CHECK(norm->truth()->log_normalizer == doctest::Approx(0.0));
}

TEST_CASE("robust regression single datapoint") {
  RegressionDataset data;
  data.x = Matrix::Ones(1, 1);
  data.y = Vector::Zero(1);
  data.beta = Vector::Zero(1);
  const TargetPtr t = make_robust_regression(data);
  const double log_t10 = std::lgamma(5.5) - std::lgamma(5.0) - 0.5 * std::log(10.0 * M_PI);
  const double expected = log_t10 - std::log(10.0) - 0.5 * std::log(2 * M_PI);
  CHECK(t->log_joint(Vector::Zero(1)) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(-4.1654213).epsilon(1e-7));
}

TEST_CASE("robust regression without data is the prior") {
  RegressionDataset data;
  data.x = Matrix::Zero(0, 3);
  data.y = Vector::Zero(0);
  data.beta = Vector::Zero(3);
  const TargetPtr t = make_robust_regression(data);
  const Vector g = t->grad_log_joint(Vector::Zero(3));
  CHECK(g.isZero());
  Vector off = Vector::Constant(3, 0.5);
  CHECK(t->log_joint(off) < t->log_joint(Vector::Zero(3)));
}

TEST_CASE("robust regression simulation is seeded") {
  const auto a = simulate_regression_data(4, 50, 0.4, 11);
  const auto b = simulate_regression_data(4, 50, 0.4, 11);
  const auto c = simulate_regression_data(4, 50, 0.4, 12);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK(a.y != c.y);
  CHECK(a.x.rows() == 50);
  CHECK(a.x.cols() == 4);
}

TEST_CASE("eight schools dimensions and non-centered value") {
  const SchoolsData data = bundled_schools_data();
  REQUIRE(data.y.size() == 8);
  const TargetPtr cp = make_eight_schools(SchoolsParameterization::Centered, data);
  const TargetPtr ncp = make_eight_schools(SchoolsParameterization::NonCentered, data);
  CHECK(cp->dim() == 10);
  CHECK(ncp->dim() == 10);

  // eta = 0, mu = 0, log tau = 0
  double expected = 0.0;
  for (int j = 0; j < 8; ++j) expected += normal_logpdf(data.y[j], 0.0, data.sigma[j]);
  expected += 8 * normal_logpdf(0.0, 0.0, 1.0);
  expected += normal_logpdf(0.0, 0.0, 5.0);
  expected += std::log(2.0 / (M_PI * 5.0 * (1.0 + 1.0 / 25.0)));  // half-Cauchy at tau = 1
  CHECK(ncp->log_joint(Vector::Zero(10)) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("centered funnel pulls theta toward mu when tau is small") {
  const TargetPtr cp = make_eight_schools(SchoolsParameterization::Centered);
  Vector x = Vector::Zero(10);
  x[8] = 1.0;    // mu
  x[9] = -5.0;   // log tau
  for (int j = 0; j < 8; ++j) x[j] = 1.0 + (j % 2 == 0 ? 0.3 : -0.3);
  const Vector g = cp->grad_log_joint(x);
  for (int j = 0; j < 8; ++j) {
    CHECK(g[j] * (x[8] - x[j]) > 0.0);
  }
}

TEST_CASE("noncentered to centered map") {
  Vector ncp(4);
  ncp << 1.0, -2.0, 0.5, std::log(3.0);
  const Vector cp = schools_noncentered_to_centered(ncp);
  CHECK(cp[0] == doctest::Approx(0.5 + 3.0));
  CHECK(cp[1] == doctest::Approx(0.5 - 6.0));
  CHECK(cp[2] == 0.5);
  CHECK(cp[3] == ncp[3]);
}

TEST_CASE("target gradients match central differences") {
  check_gradients(*make_correlated_gaussian({CovarianceKind::Uniform, 0.5, 5}), 1);
  check_gradients(*make_correlated_gaussian({CovarianceKind::Banded, 0.7, 6}), 2);
  check_gradients(*make_robust_regression(5, 100, 0.4, 3).first, 3);
  check_gradients(*make_eight_schools(SchoolsParameterization::Centered), 4);
  check_gradients(*make_eight_schools(SchoolsParameterization::NonCentered), 5);
}

TEST_CASE("named targets") {
  CHECK(make_named_target("gaussian", 4, 0.5, 1)->dim() == 4);
  CHECK(make_named_target("gaussian_banded", 3, 0.5, 1)->dim() == 3);
  CHECK(make_named_target("robust_regression", 2, 0.5, 1)->dim() == 2);
  CHECK(make_named_target("eight_schools_cp", 99, 0.5, 1)->dim() == 10);
  CHECK(make_named_target("eight_schools_ncp", 99, 0.5, 1)->dim() == 10);
  CHECK_THROWS(make_named_target("banana", 2, 0.5, 1));
}
