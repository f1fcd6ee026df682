#ifndef VIBENCH_HARNESS_HPP
#define VIBENCH_HARNESS_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibench/diagnostics.hpp"
#include "vibench/estimators.hpp"
#include "vibench/optimize.hpp"
#include "vibench/reference.hpp"

namespace vibench {

enum class ExperimentKind { CaseStudy, RobustRegression, EightSchools, Custom };

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_from_string(const std::string& name);

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::CaseStudy;
  /// Named targets swept by run_bbvi_experiment; filled from `experiment`
  /// when empty (Custom requires it).
  std::vector<std::string> models;
  std::vector<int> dims;
  double rho = 0.5;
  std::vector<DivergenceSpec> divergences;
  std::vector<FamilyKind> families;
  /// Optional per-divergence estimator override, keyed by divergence name.
  std::map<std::string, EstimatorKind> estimators;
  OptimizerConfig optimizer;
  /// Draws per gradient step keyed by divergence name (default 10 / 200).
  std::map<std::string, int> draws_per_gradient;
  int s_diag = 4000;
  int estimate_draws = kDefaultEstimateDraws;
  std::vector<std::uint64_t> seeds{7};
  std::uint64_t data_seed = 1;
  int n_data = 100;
  int threads = 0;  // 0: hardware concurrency
  bool profiles = true;
  FamilyOptions family_options;
  HmcConfig reference;
  std::string output;
};

/// Defaults per experiment: case study D = 1..50 with exclusive/inclusive KL
/// and chi-square; robust regression T_max 10000; eight schools T_max 15000.
ExperimentConfig default_config(ExperimentKind kind);

/// Reads a JSON object mirroring ExperimentConfig; absent keys keep the
/// defaults of the named experiment.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Throws InvalidSpec on unsupported family/divergence/estimator triples or
/// malformed values, before any work starts.
void validate(const ExperimentConfig& cfg);

EstimatorKind estimator_for(const ExperimentConfig& cfg, const DivergenceSpec& spec);

/// One flat output row. Missing values stay empty in CSV.
struct ResultRecord {
  std::string experiment;
  std::string model;
  int dim = 0;
  double rho = 0.0;
  std::string family;
  std::string divergence;
  std::string estimator;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::string failure;
  std::optional<double> khat_w;
  std::optional<double> khat_w2;
  std::optional<double> khat_sqrt_w;
  std::optional<double> khat_log_w;
  std::optional<double> khat_w_log_w;
  std::optional<double> divergence_estimate;
  std::optional<double> divergence_analytic;
  std::optional<double> min_sample_size;
  std::optional<double> grad_var_mean;
  std::optional<double> grad_var_max;
  std::optional<double> mean_err_plain;
  std::optional<double> cov_err_plain;
  std::optional<double> mean_err_snis;
  std::optional<double> cov_err_snis;
  std::optional<double> mean_err_psis;
  std::optional<double> cov_err_psis;
  std::optional<int> iterations;
  std::string termination;
  double wall_time_s = 0.0;
};

const std::vector<std::string>& result_columns();
std::vector<std::string> to_row(const ResultRecord& record);
void write_results_csv(std::ostream& out, const std::vector<ResultRecord>& records);

/// Histogram of ||theta - mode|| for draws from q (or from the target).
struct ProfileRecord {
  int dim = 0;
  std::string divergence;  // "target" for draws from p
  std::string source;      // "q" or "p"
  int bin = 0;
  double lower = 0.0;
  double upper = 0.0;
  double density = 0.0;
};

const std::vector<std::string>& profile_columns();
void write_profiles_csv(std::ostream& out, const std::vector<ProfileRecord>& profiles);

inline constexpr int kProfileBins = 50;

struct CaseStudyOutput {
  std::vector<ResultRecord> records;
  std::vector<ProfileRecord> profiles;
};

/// Optimal mean-field Gaussian (mu, log sigma) for `spec` against p, by exact
/// deterministic minimisation of the closed-form divergence.
MinimizeResult case_study_optimum(const DivergenceSpec& spec, const Gaussian& p);

/// The function of w whose expectation defines the divergence; its k-hat
/// drives the reported minimal sample size.
ParetoFit divergence_khat(const DivergenceSpec& spec, const WeightSet& ws);

CaseStudyOutput run_case_study(const ExperimentConfig& cfg);

std::vector<ResultRecord> run_bbvi_experiment(const ExperimentConfig& cfg);

/// Ground truth for a named target: analytic for Gaussians, HMC otherwise
/// (centered eight schools is sampled in non-centered coordinates).
struct TruthResult {
  GroundTruth truth;
  std::optional<ReferenceMoments> reference;
};

TruthResult ground_truth(const std::string& model, const TargetModel& target,
                         const HmcConfig& config);

/// Writes cfg.output (CSV), cfg.output + ".json" (sidecar) and, for the case
/// study, the profiles CSV next to it.
void write_outputs(const ExperimentConfig& cfg, const std::vector<ResultRecord>& records,
                   const std::vector<ProfileRecord>* profiles = nullptr);

std::string profiles_path(const std::string& output);

}  // namespace vibench

#endif
