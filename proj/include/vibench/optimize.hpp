#ifndef VIBENCH_OPTIMIZE_HPP
#define VIBENCH_OPTIMIZE_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vibench/gradients.hpp"

namespace vibench {

enum class OptimizerMethod { SGD, RMSProp, Adam, DeterministicBFGSLike };

std::string to_string(OptimizerMethod method);
OptimizerMethod optimizer_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::RMSProp;
  double step_size = 1e-3;
  int max_iters = 10000;
  double rho = 0.9;       // RMSProp decay
  double epsilon = 1e-8;  // added inside the square root
  double beta1 = 0.9;
  double beta2 = 0.999;
  int window = 500;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  int snapshot_interval = 500;
  double loss_smoothing = 0.98;
  /// Draws per gradient step; 0 selects 10 for exclusive KL and 200 otherwise.
  int draws_per_step = 0;

  void validate() const;
};

int default_draws_per_step(const DivergenceSpec& spec);

struct OptimizerState {
  OptimizerMethod method = OptimizerMethod::RMSProp;
  Vector first;   // Adam m
  Vector second;  // RMSProp accumulator / Adam v
  long long t = 0;
  int failed_steps = 0;
};

/// One optimiser update in the descent convention (lambda - eta * ...).
/// A non-finite gradient leaves lambda and the moment estimates untouched
/// and increments state.failed_steps.
Vector step(const OptimizerConfig& config, OptimizerState& state,
            const Vector& grad, const Vector& lambda);

enum class Termination { Converged, MaxIters, Failed };
std::string to_string(Termination reason);

struct TraceRecord {
  int iter = 0;
  double loss = 0.0;
  double smoothed_loss = 0.0;
  double grad_norm = 0.0;
  bool failed = false;
};

struct Snapshot {
  int iter = 0;
  Vector lambda;
};

struct OptTrace {
  std::vector<TraceRecord> records;
  std::vector<Snapshot> snapshots;
  Termination termination = Termination::MaxIters;
  int failed_steps = 0;
  int best_iter = 0;
  double best_smoothed_loss = 0.0;
  std::string failure;
};

struct FitResult {
  FamilyParams params;  // best-seen lambda by smoothed loss
  Vector final_lambda;
  OptimizerState state;
  OptTrace trace;
  EstimatorKind estimator = EstimatorKind::Reparameterized;
};

/// Stochastic optimisation of the divergence loss. Starts from `init` when
/// given (warm start), otherwise from family.initial_params(config.seed).
/// Iterates compete for best-seen only once the smoothed loss has had
/// min(window, max_iters / 2) iterations to settle.
FitResult fit(const TargetModel& target, const Family& family,
              const DivergenceSpec& spec, EstimatorKind estimator,
              const OptimizerConfig& config,
              const std::optional<Vector>& init = std::nullopt);

/// Window rule: relative change between the means of the last two disjoint
/// windows of smoothed loss below tol, and parameter movement
/// ||lambda_now - lambda_prev|| / (1 + ||lambda_now||) below tol.
bool check_convergence(const std::vector<double>& smoothed_loss,
                       const Vector& lambda_now, const Vector& lambda_prev,
                       int window, double tol);

/// Objective returning f(lambda) and, when grad is non-null, its gradient.
using Objective = std::function<double(const Vector&, Vector*)>;

struct MinimizeOptions {
  double grad_tol = 1e-8;
  int max_iters = 5000;
};

struct MinimizeResult {
  Vector lambda;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// BFGS with backtracking line search. Infinite objective values are treated
/// as infeasible and backtracked over. Throws NumericalError when the line
/// search fails before the gradient tolerance is met.
MinimizeResult deterministic_minimize(const Objective& objective,
                                      const Vector& lambda0,
                                      const MinimizeOptions& options = {});

struct Checkpoint {
  int iter = 0;
  FamilyParams params;
  OptimizerState state;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vibench

#endif
