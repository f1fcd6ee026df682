// vibench: command-line front end for the variational inference benchmark.

#include <cmath>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "vibench/errors.hpp"
#include "vibench/harness.hpp"
#include "vibench/io.hpp"

using namespace vibench;

namespace {

std::vector<int> parse_dim_range(const std::string& text) {
  return config_from_json({{"experiment", "case_study"}, {"dims", text}}).dims;
}

int run_casestudy(const std::string& dims, double rho, int draws, std::uint64_t seed,
                  const std::vector<std::string>& divergences, int threads,
                  const std::string& out) {
  ExperimentConfig cfg = default_config(ExperimentKind::CaseStudy);
  cfg.dims = parse_dim_range(dims);
  cfg.rho = rho;
  cfg.s_diag = draws;
  cfg.seeds = {seed};
  cfg.threads = threads;
  cfg.output = out;
  if (!divergences.empty()) {
    cfg.divergences.clear();
    for (const auto& d : divergences) cfg.divergences.push_back(divergence_from_string(d));
  }
  const CaseStudyOutput result = run_case_study(cfg);
  write_outputs(cfg, result.records, &result.profiles);
  std::cerr << "wrote " << result.records.size() << " rows to " << out << '\n';
  return 0;
}

struct FitArgs {
  std::string model = "gaussian";
  int dim = 2;
  double rho = 0.5;
  std::string family = "mf_gaussian";
  std::string divergence = "exclusive_kl";
  std::string estimator;
  std::string optimizer = "rmsprop";
  int iters = 10000;
  double step_size = 1e-3;
  int draws = 0;
  std::uint64_t seed = 7;
  std::uint64_t data_seed = 1;
  int estimate_draws = kDefaultEstimateDraws;
  std::string init;
  std::string checkpoint;
  std::string out = "fit.json";
};

int run_fit(const FitArgs& a) {
  const TargetPtr target = make_named_target(a.model, a.dim, a.rho, a.data_seed);
  const FamilyPtr family = make_family(family_from_string(a.family), target->dim());
  const DivergenceSpec spec = divergence_from_string(a.divergence);
  const EstimatorKind estimator =
      a.estimator.empty() ? default_estimator(spec) : estimator_from_string(a.estimator);
  OptimizerConfig oc;
  oc.method = optimizer_from_string(a.optimizer);
  oc.max_iters = a.iters;
  oc.step_size = a.step_size;
  oc.draws_per_step = a.draws;
  oc.seed = a.seed;
  std::optional<Vector> init;
  if (!a.init.empty()) {
    const Checkpoint c = load_checkpoint(a.init);
    if (c.params.family != family->kind() || c.params.dim != family->dim()) {
      throw InvalidSpec("warm start checkpoint does not match family/dimension");
    }
    init = c.params.values;
  }
  const FitResult result = fit(*target, *family, spec, estimator, oc, init);
  const MomentSuite suite = estimate_all_moments(*family, result.params.values, *target,
                                                 a.estimate_draws, a.seed + 1);
  nlohmann::json j;
  j["model"] = a.model;
  j["dim"] = target->dim();
  j["family"] = a.family;
  j["divergence"] = to_string(spec);
  j["estimator"] = to_string(estimator);
  j["lambda"] = vector_to_json(result.params.values);
  j["final_lambda"] = vector_to_json(result.final_lambda);
  j["iterations"] = result.trace.records.size();
  j["termination"] = to_string(result.trace.termination);
  j["failed_steps"] = result.trace.failed_steps;
  j["best_iter"] = result.trace.best_iter;
  j["best_smoothed_loss"] = number_or_null(result.trace.best_smoothed_loss);
  nlohmann::json khat;
  for (const auto fn : {WeightFunction::W, WeightFunction::WSquared, WeightFunction::SqrtW,
                        WeightFunction::LogW, WeightFunction::WLogW}) {
    khat[to_string(fn)] = number_or_null(khat_of(fn, suite.weights).khat);
  }
  j["khat"] = khat;
  j["min_sample_size"] = number_or_null(min_sample_size(suite.fit.khat));
  j["moments"] = {{"plain_q", {{"mean", vector_to_json(suite.plain.mean)},
                               {"covariance", matrix_to_json(suite.plain.covariance)}}},
                  {"psis", {{"mean", vector_to_json(suite.psis.mean)},
                            {"covariance", matrix_to_json(suite.psis.covariance)}}}};
  j["version"] = version_string();
  write_json(a.out, j);
  if (!a.checkpoint.empty()) {
    save_checkpoint(a.checkpoint, Checkpoint{static_cast<int>(result.trace.records.size()),
                                             result.params, result.state});
  }
  std::cerr << a.divergence << ": " << to_string(result.trace.termination) << " after "
            << result.trace.records.size() << " iterations, khat(w) = " << suite.fit.khat
            << '\n';
  return 0;
}

int run_experiment(const std::string& path, const std::string& out_override) {
  ExperimentConfig cfg = config_from_json(read_json(path));
  if (!out_override.empty()) cfg.output = out_override;
  if (cfg.output.empty()) throw InvalidSpec("experiment config needs an output path");
  if (cfg.experiment == ExperimentKind::CaseStudy) {
    const CaseStudyOutput result = run_case_study(cfg);
    write_outputs(cfg, result.records, cfg.profiles ? &result.profiles : nullptr);
    std::cerr << "wrote " << result.records.size() << " rows to " << cfg.output << '\n';
    return 0;
  }
  const auto records = run_bbvi_experiment(cfg);
  write_outputs(cfg, records);
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.status != "ok";
  std::cerr << "wrote " << records.size() << " rows (" << failed << " failed) to "
            << cfg.output << '\n';
  return 0;
}

int run_diagnose(const std::string& path, const std::string& fn_name) {
  const WeightSet ws{read_log_weights(path)};
  const ParetoFit fit = khat_of(weight_function_from_string(fn_name), ws);
  nlohmann::json j;
  j["khat"] = number_or_null(fit.khat);
  j["sigma"] = number_or_null(fit.sigma);
  j["M"] = fit.tail_count;
  j["min_sample_size"] = number_or_null(min_sample_size(fit.khat));
  j["reliable"] = fit.reliable;
  if (!fit.note.empty()) j["note"] = fit.note;
  std::cout << j.dump() << '\n';
  return 0;
}

int run_reference(const std::string& model, int dim, double rho, std::uint64_t data_seed,
                  const HmcConfig& hmc, const std::string& out) {
  const TargetPtr target = make_named_target(model, dim, rho, data_seed);
  const TruthResult truth = ground_truth(model, *target, hmc);
  nlohmann::json j;
  j["model"] = model;
  j["dim"] = target->dim();
  j["mean"] = vector_to_json(truth.truth.mean);
  j["covariance"] = matrix_to_json(truth.truth.covariance);
  if (truth.reference) {
    const ReferenceMoments& r = *truth.reference;
    j["rhat"] = vector_to_json(r.rhat);
    j["acceptance"] = r.acceptance;
    j["step_size"] = r.step_size;
    j["divergent_transitions"] = r.divergences;
    j["kept_draws"] = r.kept_draws;
    j["reliable"] = r.reliable;
  } else {
    j["analytic"] = true;
  }
  write_json(out, sidecar(j));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box variational inference benchmark with Pareto diagnostics"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  std::string cs_dims = "1:50", cs_out = "case.csv";
  double cs_rho = 0.5;
  int cs_draws = 4000, cs_threads = 0;
  std::uint64_t cs_seed = 7;
  std::vector<std::string> cs_divs;
  auto* cs = app.add_subcommand("casestudy", "Correlated-Gaussian case study");
  cs->add_option("--dims", cs_dims, "Dimension list or range lo:hi");
  cs->add_option("--rho", cs_rho, "Constant correlation");
  cs->add_option("--draws", cs_draws, "Diagnostic draws S_diag");
  cs->add_option("--seed", cs_seed, "Master seed");
  cs->add_option("--divergences", cs_divs, "Divergences (default exclusive_kl inclusive_kl chi2)");
  cs->add_option("--threads", cs_threads, "Worker threads (0: all cores)");
  cs->add_option("--out", cs_out, "Output CSV");

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "Fit one variational approximation");
  fit_cmd->add_option("--model", fa.model, "gaussian, gaussian_banded, robust_regression, "
                                           "eight_schools_cp, eight_schools_ncp");
  fit_cmd->add_option("--dim", fa.dim);
  fit_cmd->add_option("--rho", fa.rho);
  fit_cmd->add_option("--family", fa.family, "mf_gaussian, mf_student_t, planar, nvp");
  fit_cmd->add_option("--divergence", fa.divergence,
                      "exclusive_kl, inclusive_kl, chi2, alpha:<a>, tail_adaptive");
  fit_cmd->add_option("--estimator", fa.estimator, "score, rp, entropy_rp, entropy_score, "
                                                   "tail_adaptive");
  fit_cmd->add_option("--optimizer", fa.optimizer, "rmsprop, adam, sgd");
  fit_cmd->add_option("--iters", fa.iters, "Maximum iterations");
  fit_cmd->add_option("--step-size", fa.step_size);
  fit_cmd->add_option("--draws", fa.draws, "Draws per gradient (0: 10 or 200)");
  fit_cmd->add_option("--seed", fa.seed);
  fit_cmd->add_option("--data-seed", fa.data_seed);
  fit_cmd->add_option("--estimate-draws", fa.estimate_draws);
  fit_cmd->add_option("--init", fa.init, "Warm-start checkpoint JSON");
  fit_cmd->add_option("--checkpoint", fa.checkpoint, "Write a checkpoint JSON");
  fit_cmd->add_option("--out", fa.out);

  std::string ex_config, ex_out;
  auto* ex = app.add_subcommand("experiment", "Run a configured sweep");
  ex->add_option("--config", ex_config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  ex->add_option("--out", ex_out, "Override the output path");

  std::string dg_weights, dg_fn = "w";
  auto* dg = app.add_subcommand("diagnose", "Pareto k-hat of a log-weight file");
  dg->add_option("--weights", dg_weights, "Newline-delimited log weights")
      ->required()
      ->check(CLI::ExistingFile);
  dg->add_option("--fn", dg_fn, "w, w2, sqrt_w, log_w, w_log_w");

  std::string rf_model = "eight_schools_ncp", rf_out = "truth.json";
  int rf_dim = 10;
  double rf_rho = 0.5;
  std::uint64_t rf_data_seed = 1;
  HmcConfig hmc;
  auto* rf = app.add_subcommand("reference", "Reference moments by HMC");
  rf->add_option("--model", rf_model);
  rf->add_option("--dim", rf_dim);
  rf->add_option("--rho", rf_rho);
  rf->add_option("--data-seed", rf_data_seed);
  rf->add_option("--warmup", hmc.warmup);
  rf->add_option("--draws", hmc.draws, "Kept draws per chain");
  rf->add_option("--chains", hmc.chains);
  rf->add_option("--seed", hmc.seed);
  rf->add_option("--out", rf_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cs) return run_casestudy(cs_dims, cs_rho, cs_draws, cs_seed, cs_divs, cs_threads, cs_out);
    if (*fit_cmd) return run_fit(fa);
    if (*ex) return run_experiment(ex_config, ex_out);
    if (*dg) return run_diagnose(dg_weights, dg_fn);
    if (*rf) return run_reference(rf_model, rf_dim, rf_rho, rf_data_seed, hmc, rf_out);
  } catch (const InvalidSpec& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
