#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "vibench/errors.hpp"
#include "vibench/optimize.hpp"

using namespace vibench;

namespace {

Vector one(double v) { return Vector::Constant(1, v); }

MinimizeResult mean_field_optimum(const DivergenceSpec& spec, const Gaussian& p) {
  const int d = static_cast<int>(p.mean.size());
  return deterministic_minimize(
      [&](const Vector& l, Vector* g) { return mean_field_gaussian_divergence(spec, p, l, g); },
      Vector::Zero(2 * d));
}

}  // namespace

TEST_CASE("optimizer names") {
  for (auto m : {OptimizerMethod::SGD, OptimizerMethod::RMSProp, OptimizerMethod::Adam,
                 OptimizerMethod::DeterministicBFGSLike}) {
    CHECK(optimizer_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(optimizer_from_string("lbfgs"), InvalidSpec);
  CHECK(to_string(Termination::Converged) != to_string(Termination::Failed));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  for (auto m : {OptimizerMethod::SGD, OptimizerMethod::RMSProp, OptimizerMethod::Adam}) {
    OptimizerConfig cfg;
    cfg.method = m;
    OptimizerState state;
    state.method = m;
    Vector lambda(3);
    lambda << 1.0, -2.0, 0.5;
    CHECK(step(cfg, state, Vector::Zero(3), lambda) == lambda);
  }
}

TEST_CASE("sgd descends") {
  OptimizerConfig cfg;
  cfg.method = OptimizerMethod::SGD;
  cfg.step_size = 0.1;
  OptimizerState state;
  state.method = cfg.method;
  CHECK(step(cfg, state, one(1.0), one(0.0))[0] == doctest::Approx(-0.1));
}

TEST_CASE("rmsprop first step") {
  OptimizerConfig cfg;
  cfg.method = OptimizerMethod::RMSProp;
  OptimizerState state;
  const Vector next = step(cfg, state, one(1.0), one(2.0));
  CHECK(next[0] == doctest::Approx(2.0 - 1e-3 / std::sqrt(0.1 + 1e-8)).epsilon(1e-14));
  CHECK(2.0 - next[0] == doctest::Approx(3.1623e-3).epsilon(1e-4));
  CHECK(state.second[0] == doctest::Approx(0.1));
  CHECK(state.t == 1);
}

TEST_CASE("adam first step is the step size") {
  OptimizerConfig cfg;
  cfg.method = OptimizerMethod::Adam;
  cfg.step_size = 0.01;
  OptimizerState state;
  state.method = cfg.method;
  Vector g(2);
  g << 4.0, -0.5;
  const Vector next = step(cfg, state, g, Vector::Zero(2));
  CHECK(next[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(next[1] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("non-finite gradients are counted and skipped") {
  for (auto m : {OptimizerMethod::SGD, OptimizerMethod::RMSProp, OptimizerMethod::Adam}) {
    OptimizerConfig cfg;
    cfg.method = m;
    OptimizerState state;
    state.method = m;
    const Vector lambda = step(cfg, state, one(0.3), one(1.0));
    const OptimizerState before = state;
    const Vector again = step(cfg, state, one(std::numeric_limits<double>::quiet_NaN()), lambda);
    CHECK(again == lambda);
    CHECK(state.failed_steps == before.failed_steps + 1);
    CHECK(state.t == before.t);
    CHECK(state.second == before.second);
  }
}

TEST_CASE("stochastic step rejects the deterministic method") {
  OptimizerConfig cfg;
  cfg.method = OptimizerMethod::DeterministicBFGSLike;
  OptimizerState state;
  CHECK_THROWS(step(cfg, state, one(1.0), one(0.0)));
}

TEST_CASE("config validation") {
  OptimizerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.step_size = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidSpec);
  cfg = OptimizerConfig{};
  cfg.rho = 1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidSpec);
  cfg = OptimizerConfig{};
  cfg.window = 1;
  CHECK_THROWS_AS(cfg.validate(), InvalidSpec);
  CHECK(default_draws_per_step(DivergenceSpec::exclusive_kl()) == 10);
  CHECK(default_draws_per_step(DivergenceSpec::inclusive_kl()) == 200);
  CHECK(default_draws_per_step(DivergenceSpec::chi_sq()) == 200);
}

TEST_CASE("convergence rule") {
  const int w = 500;
  const Vector lam = Vector::Ones(3);
  CHECK(check_convergence(std::vector<double>(2 * w, 3.0), lam, lam, w, 1e-4));

  std::vector<double> falling(2 * w);
  for (int i = 0; i < 2 * w; ++i) falling[i] = 100.0 - 0.1 * i;
  CHECK_FALSE(check_convergence(falling, lam, lam, w, 1e-4));

  // parameters still moving
  Vector moved = lam;
  moved[0] += 0.5;
  CHECK_FALSE(check_convergence(std::vector<double>(2 * w, 3.0), moved, lam, w, 1e-4));

  // too short a history
  CHECK_FALSE(check_convergence(std::vector<double>(w, 3.0), lam, lam, w, 1e-4));

  int hits = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(10.0, 0.05);
    std::vector<double> noisy(2 * w);
    for (double& v : noisy) v = n(rng);
    hits += check_convergence(noisy, lam, lam, w, 1e-3);
  }
  CHECK(hits > 90);
}

TEST_CASE("deterministic minimize closed-form optima") {
  const Matrix s = build_covariance({CovarianceKind::Uniform, 0.5, 2});
  const Gaussian p{Vector::Zero(2), s};
  const MinimizeResult ex = mean_field_optimum(DivergenceSpec::exclusive_kl(), p);
  CHECK(ex.converged);
  CHECK(ex.grad_norm < 1e-8);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(std::exp(2 * ex.lambda[2 + i]) - 0.75) < 1e-6);
    CHECK(std::abs(ex.lambda[i]) < 1e-6);
  }
  const MinimizeResult in = mean_field_optimum(DivergenceSpec::inclusive_kl(), p);
  CHECK(in.converged);
  for (int i = 0; i < 2; ++i) CHECK(std::abs(std::exp(2 * in.lambda[2 + i]) - 1.0) < 1e-6);

  const Gaussian iso{Vector::Constant(3, 0.7), Matrix::Identity(3, 3) * 2.0};
  for (const auto& spec : {DivergenceSpec::exclusive_kl(), DivergenceSpec::inclusive_kl()}) {
    const MinimizeResult r = mean_field_optimum(spec, iso);
    CHECK(std::abs(r.value) < 1e-10);
  }
}

TEST_CASE("deterministic minimize agrees with a grid search in one dimension") {
  const std::vector<Objective> objectives = {
      [](const Vector& x, Vector* g) {
        if (g) *g = one(2 * (x[0] - 1.3));
        return (x[0] - 1.3) * (x[0] - 1.3);
      },
      [](const Vector& x, Vector* g) {
        if (g) *g = one(std::exp(x[0]) - 2.0);
        return std::exp(x[0]) - 2.0 * x[0];
      },
      [](const Vector& x, Vector* g) {
        const double r = std::sqrt(1 + x[0] * x[0]);
        if (g) *g = one(x[0] / r + 0.25);
        return r + 0.25 * x[0];
      },
  };
  for (const Objective& f : objectives) {
    double best_x = 0.0, best_f = std::numeric_limits<double>::infinity();
    for (int i = -400000; i <= 400000; ++i) {
      const double x = i * 1e-5;
      const double v = f(one(x), nullptr);
      if (v < best_f) {
        best_f = v;
        best_x = x;
      }
    }
    const MinimizeResult r = deterministic_minimize(f, one(-2.0));
    CHECK(r.lambda[0] == doctest::Approx(best_x).epsilon(1e-5));
    CHECK(std::abs(r.lambda[0] - best_x) < 1e-5);
  }
}

TEST_CASE("fit recovers a standard normal") {
  const TargetPtr target = make_correlated_gaussian({CovarianceKind::Uniform, 0.0, 1});
  const FamilyPtr f = make_family(FamilyKind::MFGaussian, 1);
  OptimizerConfig cfg;
  cfg.max_iters = 5000;
  cfg.seed = 3;
  Vector init(2);
  init << 1.0, 0.5;
  const FitResult r = fit(*target, *f, DivergenceSpec::exclusive_kl(),
                          EstimatorKind::Reparameterized, cfg, init);
  CHECK(r.trace.termination != Termination::Failed);
  CHECK(r.trace.records.size() <= 5000);
  CHECK(std::abs(r.params.values[0]) < 0.05);
  CHECK(std::abs(r.params.values[1]) < 0.05);
}

TEST_CASE("fit reaches the precision-diagonal variances") {
  const TargetPtr target = make_correlated_gaussian({CovarianceKind::Uniform, 0.5, 2});
  const FamilyPtr f = make_family(FamilyKind::MFGaussian, 2);
  OptimizerConfig cfg;
  cfg.seed = 5;
  const FitResult r =
      fit(*target, *f, DivergenceSpec::exclusive_kl(), EstimatorKind::Reparameterized, cfg);
  CHECK(r.trace.termination != Termination::Failed);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(std::exp(2 * r.params.values[2 + i]) - 0.75) < 0.05);
  }

  // warm-started inclusive fit widens toward the marginal variances
  OptimizerConfig warm = cfg;
  warm.max_iters = 3000;
  const FitResult in = fit(*target, *f, DivergenceSpec::inclusive_kl(), EstimatorKind::Score,
                           warm, r.params.values);
  for (int i = 0; i < 2; ++i) {
    const double var = std::exp(2 * in.params.values[2 + i]);
    CHECK(var > 0.85);
    CHECK(var < 1.15);
  }
}

TEST_CASE("fit is deterministic and keeps the best smoothed iterate") {
  const TargetPtr target = make_correlated_gaussian({CovarianceKind::Banded, 0.5, 3});
  const FamilyPtr f = make_family(FamilyKind::MFGaussian, 3);
  OptimizerConfig cfg;
  cfg.max_iters = 1500;
  cfg.seed = 9;
  const auto a = fit(*target, *f, DivergenceSpec::exclusive_kl(), EstimatorKind::Reparameterized, cfg);
  const auto b = fit(*target, *f, DivergenceSpec::exclusive_kl(), EstimatorKind::Reparameterized, cfg);
  REQUIRE(a.trace.records.size() == b.trace.records.size());
  for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
    CHECK(a.trace.records[i].loss == b.trace.records[i].loss);
  }
  CHECK(a.params.values == b.params.values);
  CHECK(a.trace.best_smoothed_loss <= a.trace.records.back().smoothed_loss);
  CHECK_FALSE(a.trace.snapshots.empty());
}

TEST_CASE("mostly failing gradients terminate the fit") {
  const TargetPtr broken = make_function_target(
      "broken", 2, [](const Vector&) { return std::numeric_limits<double>::quiet_NaN(); },
      [](const Vector&) { return Vector::Constant(2, std::numeric_limits<double>::quiet_NaN()); });
  const FamilyPtr f = make_family(FamilyKind::MFGaussian, 2);
  OptimizerConfig cfg;
  cfg.max_iters = 2000;
  const auto r = fit(*broken, *f, DivergenceSpec::exclusive_kl(), EstimatorKind::Reparameterized, cfg);
  CHECK(r.trace.termination == Termination::Failed);
  CHECK_FALSE(r.trace.failure.empty());
  CHECK(r.trace.failed_steps > 0);
}

TEST_CASE("incompatible fits are rejected up front") {
  const TargetPtr target = make_correlated_gaussian({CovarianceKind::Uniform, 0.5, 2});
  const FamilyPtr planar = make_family(FamilyKind::PlanarFlow, 2);
  CHECK_THROWS_AS(fit(*target, *planar, DivergenceSpec::inclusive_kl(), EstimatorKind::Score,
                      OptimizerConfig{}),
                  InvalidSpec);
}

TEST_CASE("checkpoints round trip") {
  Checkpoint c;
  c.iter = 42;
  c.params = FamilyParams{FamilyKind::MFGaussian, 2, Vector::LinSpaced(4, -1.0, 1.0)};
  c.state.method = OptimizerMethod::Adam;
  c.state.first = Vector::Constant(4, 0.1);
  c.state.second = Vector::Constant(4, 0.01);
  c.state.t = 42;
  c.state.failed_steps = 2;
  const auto path = std::filesystem::temp_directory_path() / "vibench_checkpoint_test.json";
  save_checkpoint(path.string(), c);
  const Checkpoint back = load_checkpoint(path.string());
  std::filesystem::remove(path);
  CHECK(back.iter == 42);
  CHECK(back.params.family == FamilyKind::MFGaussian);
  CHECK(back.params.dim == 2);
  CHECK(back.params.values == c.params.values);
  CHECK(back.state.method == OptimizerMethod::Adam);
  CHECK(back.state.first == c.state.first);
  CHECK(back.state.second == c.state.second);
  CHECK(back.state.t == 42);
  CHECK(back.state.failed_steps == 2);
}
