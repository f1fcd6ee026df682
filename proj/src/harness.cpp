#include "vibench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

#include "vibench/errors.hpp"
#include "vibench/io.hpp"
#include "vibench/seeding.hpp"

namespace vibench {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Runs job(i) for i in [0, count) on a small pool; job must not throw.
template <typename Job>
void parallel_for(std::size_t count, int threads, Job job) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<int> parse_dims(const nlohmann::json& j) {
  std::vector<int> dims;
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    const auto colon = s.find(':');
    if (colon == std::string::npos) return {std::stoi(s)};
    const int lo = std::stoi(s.substr(0, colon));
    const int hi = std::stoi(s.substr(colon + 1));
    for (int d = lo; d <= hi; ++d) dims.push_back(d);
    return dims;
  }
  return j.get<std::vector<int>>();
}

bool is_gaussian_model(const std::string& model) {
  return model == "gaussian" || model == "gaussian_banded";
}

std::vector<std::string> models_for(const ExperimentConfig& cfg) {
  if (!cfg.models.empty()) return cfg.models;
  switch (cfg.experiment) {
    case ExperimentKind::CaseStudy: return {"gaussian"};
    case ExperimentKind::RobustRegression: return {"robust_regression"};
    case ExperimentKind::EightSchools: return {"eight_schools_cp", "eight_schools_ncp"};
    case ExperimentKind::Custom: break;
  }
  throw InvalidSpec("custom experiments must list models");
}

std::vector<int> dims_for(const ExperimentConfig& cfg, const std::string& model) {
  if (model.rfind("eight_schools", 0) == 0) return {10};
  return cfg.dims;
}

Gaussian gaussian_of(const TargetModel& target) {
  const auto& truth = target.truth();
  if (!truth) throw InvalidSpec(target.name() + " has no analytic moments");
  return Gaussian{truth->mean, truth->covariance};
}

void fill_khats(ResultRecord& rec, const WeightSet& ws) {
  rec.khat_w = khat_of(WeightFunction::W, ws).khat;
  rec.khat_w2 = khat_of(WeightFunction::WSquared, ws).khat;
  rec.khat_sqrt_w = khat_of(WeightFunction::SqrtW, ws).khat;
  rec.khat_log_w = khat_of(WeightFunction::LogW, ws).khat;
  rec.khat_w_log_w = khat_of(WeightFunction::WLogW, ws).khat;
}

void fill_errors(ResultRecord& rec, const MomentEstimate& plain, const MomentEstimate& snis,
                 const MomentEstimate& psis, const GroundTruth& truth) {
  const RelativeError ep = relative_error(plain, truth);
  const RelativeError es = relative_error(snis, truth);
  const RelativeError eq = relative_error(psis, truth);
  rec.mean_err_plain = ep.mean_err;
  rec.cov_err_plain = ep.cov_err;
  rec.mean_err_snis = es.mean_err;
  rec.cov_err_snis = es.cov_err;
  rec.mean_err_psis = eq.mean_err;
  rec.cov_err_psis = eq.cov_err;
}

void fill_gradient_variance(ResultRecord& rec, const GradientEstimate& est) {
  if (est.failed) {
    rec.failure = "gradient variance: " + est.failure;
    return;
  }
  rec.grad_var_mean = est.per_coordinate_variance.mean();
  rec.grad_var_max = est.per_coordinate_variance.maxCoeff();
}

std::optional<double> round2(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return std::nullopt;
  return std::round(*v * 100.0) / 100.0;
}

std::vector<ProfileRecord> histogram(int dim, const std::string& divergence,
                                     const std::string& source, const std::vector<double>& dist,
                                     double lo, double hi) {
  std::vector<ProfileRecord> out;
  const double width = (hi - lo) / kProfileBins;
  std::vector<int> counts(kProfileBins, 0);
  for (double v : dist) {
    int b = width > 0.0 ? static_cast<int>((v - lo) / width) : 0;
    b = std::clamp(b, 0, kProfileBins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  for (int b = 0; b < kProfileBins; ++b) {
    ProfileRecord r;
    r.dim = dim;
    r.divergence = divergence;
    r.source = source;
    r.bin = b;
    r.lower = lo + b * width;
    r.upper = lo + (b + 1) * width;
    r.density = width > 0.0 ? counts[static_cast<std::size_t>(b)] /
                                  (static_cast<double>(dist.size()) * width)
                            : 0.0;
    out.push_back(r);
  }
  return out;
}

std::vector<double> distances(const Matrix& thetas, const Vector& mode) {
  std::vector<double> d(static_cast<std::size_t>(thetas.rows()));
  for (Eigen::Index s = 0; s < thetas.rows(); ++s) {
    d[static_cast<std::size_t>(s)] = (thetas.row(s).transpose() - mode).norm();
  }
  return d;
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::CaseStudy: return "case_study";
    case ExperimentKind::RobustRegression: return "robust_regression";
    case ExperimentKind::EightSchools: return "eight_schools";
    case ExperimentKind::Custom: return "custom";
  }
  return "unknown";
}

ExperimentKind experiment_from_string(const std::string& name) {
  if (name == "case_study") return ExperimentKind::CaseStudy;
  if (name == "robust_regression") return ExperimentKind::RobustRegression;
  if (name == "eight_schools") return ExperimentKind::EightSchools;
  if (name == "custom") return ExperimentKind::Custom;
  throw InvalidSpec("unknown experiment: " + name);
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig cfg;
  cfg.experiment = kind;
  cfg.divergences = {DivergenceSpec::exclusive_kl(), DivergenceSpec::inclusive_kl(),
                     DivergenceSpec::chi_sq()};
  cfg.families = {FamilyKind::MFGaussian};
  switch (kind) {
    case ExperimentKind::CaseStudy:
      for (int d = 1; d <= 50; ++d) cfg.dims.push_back(d);
      break;
    case ExperimentKind::RobustRegression:
      cfg.dims = {2, 5, 10, 20};
      cfg.optimizer.max_iters = 10000;
      break;
    case ExperimentKind::EightSchools:
      cfg.dims = {10};
      cfg.optimizer.max_iters = 15000;
      break;
    case ExperimentKind::Custom:
      cfg.dims = {2};
      break;
  }
  return cfg;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  try {
    const ExperimentKind kind =
        experiment_from_string(j.value("experiment", std::string("custom")));
    ExperimentConfig cfg = default_config(kind);
    if (j.contains("models")) cfg.models = j.at("models").get<std::vector<std::string>>();
    if (j.contains("dims")) cfg.dims = parse_dims(j.at("dims"));
    cfg.rho = j.value("rho", cfg.rho);
    if (j.contains("divergences")) {
      cfg.divergences.clear();
      for (const auto& d : j.at("divergences")) {
        cfg.divergences.push_back(divergence_from_string(d.get<std::string>()));
      }
    }
    if (j.contains("families")) {
      cfg.families.clear();
      for (const auto& f : j.at("families")) {
        cfg.families.push_back(family_from_string(f.get<std::string>()));
      }
    }
    if (j.contains("estimators")) {
      for (const auto& [k, v] : j.at("estimators").items()) {
        cfg.estimators[to_string(divergence_from_string(k))] =
            estimator_from_string(v.get<std::string>());
      }
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      OptimizerConfig& oc = cfg.optimizer;
      if (o.contains("method")) oc.method = optimizer_from_string(o.at("method").get<std::string>());
      oc.step_size = o.value("step_size", oc.step_size);
      oc.max_iters = o.value("max_iters", oc.max_iters);
      oc.rho = o.value("rho", oc.rho);
      oc.epsilon = o.value("epsilon", oc.epsilon);
      oc.beta1 = o.value("beta1", oc.beta1);
      oc.beta2 = o.value("beta2", oc.beta2);
      oc.window = o.value("window", oc.window);
      oc.tolerance = o.value("tolerance", oc.tolerance);
      oc.snapshot_interval = o.value("snapshot_interval", oc.snapshot_interval);
      oc.loss_smoothing = o.value("loss_smoothing", oc.loss_smoothing);
    }
    if (j.contains("draws_per_gradient")) {
      for (const auto& [k, v] : j.at("draws_per_gradient").items()) {
        cfg.draws_per_gradient[to_string(divergence_from_string(k))] = v.get<int>();
      }
    }
    cfg.s_diag = j.value("s_diag", cfg.s_diag);
    cfg.estimate_draws = j.value("estimate_draws", cfg.estimate_draws);
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    cfg.data_seed = j.value("data_seed", cfg.data_seed);
    cfg.n_data = j.value("n_data", cfg.n_data);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.profiles = j.value("profiles", cfg.profiles);
    if (j.contains("family_options")) {
      const auto& f = j.at("family_options");
      FamilyOptions& fo = cfg.family_options;
      fo.student_nu = f.value("student_nu", fo.student_nu);
      fo.planar_layers = f.value("planar_layers", fo.planar_layers);
      fo.nvp_layers = f.value("nvp_layers", fo.nvp_layers);
      fo.nvp_hidden = f.value("nvp_hidden", fo.nvp_hidden);
      fo.nvp_init_sd = f.value("nvp_init_sd", fo.nvp_init_sd);
    }
    if (j.contains("reference")) {
      const auto& r = j.at("reference");
      HmcConfig& h = cfg.reference;
      h.chains = r.value("chains", h.chains);
      h.warmup = r.value("warmup", h.warmup);
      h.draws = r.value("draws", h.draws);
      h.path_length = r.value("path_length", h.path_length);
      h.target_accept = r.value("target_accept", h.target_accept);
      h.seed = r.value("seed", h.seed);
    }
    cfg.output = j.value("output", cfg.output);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("malformed experiment config: ") + e.what());
  }
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["experiment"] = to_string(cfg.experiment);
  j["models"] = cfg.models;
  j["dims"] = cfg.dims;
  j["rho"] = cfg.rho;
  j["divergences"] = nlohmann::json::array();
  for (const auto& d : cfg.divergences) j["divergences"].push_back(to_string(d));
  j["families"] = nlohmann::json::array();
  for (const auto f : cfg.families) j["families"].push_back(to_string(f));
  j["estimators"] = nlohmann::json::object();
  for (const auto& d : cfg.divergences) {
    j["estimators"][to_string(d)] = to_string(estimator_for(cfg, d));
  }
  const OptimizerConfig& o = cfg.optimizer;
  j["optimizer"] = {{"method", to_string(o.method)}, {"step_size", o.step_size},
                    {"max_iters", o.max_iters},      {"rho", o.rho},
                    {"epsilon", o.epsilon},          {"beta1", o.beta1},
                    {"beta2", o.beta2},              {"window", o.window},
                    {"tolerance", o.tolerance},      {"snapshot_interval", o.snapshot_interval},
                    {"loss_smoothing", o.loss_smoothing}};
  j["draws_per_gradient"] = nlohmann::json::object();
  for (const auto& d : cfg.divergences) {
    const auto it = cfg.draws_per_gradient.find(to_string(d));
    j["draws_per_gradient"][to_string(d)] =
        it != cfg.draws_per_gradient.end() ? it->second : default_draws_per_step(d);
  }
  j["s_diag"] = cfg.s_diag;
  j["estimate_draws"] = cfg.estimate_draws;
  j["seeds"] = cfg.seeds;
  j["data_seed"] = cfg.data_seed;
  j["n_data"] = cfg.n_data;
  j["threads"] = cfg.threads;
  j["profiles"] = cfg.profiles;
  j["family_options"] = {{"student_nu", cfg.family_options.student_nu},
                         {"planar_layers", cfg.family_options.planar_layers},
                         {"nvp_layers", cfg.family_options.nvp_layers},
                         {"nvp_hidden", cfg.family_options.nvp_hidden},
                         {"nvp_init_sd", cfg.family_options.nvp_init_sd}};
  j["reference"] = {{"chains", cfg.reference.chains},
                    {"warmup", cfg.reference.warmup},
                    {"draws", cfg.reference.draws},
                    {"path_length", cfg.reference.path_length},
                    {"target_accept", cfg.reference.target_accept},
                    {"seed", cfg.reference.seed}};
  j["output"] = cfg.output;
  return j;
}

EstimatorKind estimator_for(const ExperimentConfig& cfg, const DivergenceSpec& spec) {
  const auto it = cfg.estimators.find(to_string(spec));
  return it != cfg.estimators.end() ? it->second : default_estimator(spec);
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.dims.empty()) throw InvalidSpec("config: dims must not be empty");
  for (int d : cfg.dims) {
    if (d < 1) throw InvalidSpec("config: dimensions must be >= 1");
  }
  if (cfg.divergences.empty()) throw InvalidSpec("config: no divergences");
  if (cfg.seeds.empty()) throw InvalidSpec("config: no seeds");
  if (cfg.s_diag < 25 || cfg.estimate_draws < 25) {
    throw InvalidSpec("config: s_diag and estimate_draws must be >= 25");
  }
  if (!(cfg.rho > -1.0 && cfg.rho < 1.0)) throw InvalidSpec("config: rho must lie in (-1, 1)");
  for (const auto& [name, draws] : cfg.draws_per_gradient) {
    if (draws < 1) throw InvalidSpec("config: draws per gradient for " + name + " must be >= 1");
  }
  if (cfg.experiment == ExperimentKind::CaseStudy) {
    for (const auto& d : cfg.divergences) {
      if (d.kind == DivergenceKind::TailAdaptive) {
        throw InvalidSpec("config: tail_adaptive has no closed form for the case study");
      }
      validate_combination(d, *make_family(FamilyKind::MFGaussian, 1), estimator_for(cfg, d));
    }
    return;
  }
  cfg.optimizer.validate();
  for (const auto& model : models_for(cfg)) {
    make_named_target(model, 1, cfg.rho, cfg.data_seed, 5);  // name check
  }
  if (cfg.families.empty()) throw InvalidSpec("config: no families");
  for (const FamilyKind f : cfg.families) {
    const FamilyPtr family = make_family(f, 2, cfg.family_options);
    for (const auto& d : cfg.divergences) {
      validate_combination(d, *family, estimator_for(cfg, d));
    }
  }
}

const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols = {
      "experiment",    "model",          "dim",           "rho",
      "family",        "divergence",     "estimator",     "seed",
      "status",        "failure",        "khat_w",        "khat_w2",
      "khat_sqrt_w",   "khat_log_w",     "khat_w_log_w",  "divergence_estimate",
      "divergence_analytic", "min_sample_size", "grad_var_mean", "grad_var_max",
      "mean_err_plain", "cov_err_plain", "mean_err_snis", "cov_err_snis",
      "mean_err_psis", "cov_err_psis",   "iterations",    "termination",
      "wall_time_s"};
  return cols;
}

std::vector<std::string> to_row(const ResultRecord& r) {
  return {r.experiment,
          r.model,
          std::to_string(r.dim),
          format_number(r.rho),
          r.family,
          r.divergence,
          r.estimator,
          std::to_string(r.seed),
          r.status,
          r.failure,
          format_number(round2(r.khat_w)),
          format_number(round2(r.khat_w2)),
          format_number(round2(r.khat_sqrt_w)),
          format_number(round2(r.khat_log_w)),
          format_number(round2(r.khat_w_log_w)),
          format_number(r.divergence_estimate),
          format_number(r.divergence_analytic),
          format_number(r.min_sample_size),
          format_number(r.grad_var_mean),
          format_number(r.grad_var_max),
          format_number(r.mean_err_plain),
          format_number(r.cov_err_plain),
          format_number(r.mean_err_snis),
          format_number(r.cov_err_snis),
          format_number(r.mean_err_psis),
          format_number(r.cov_err_psis),
          r.iterations ? std::to_string(*r.iterations) : std::string(),
          r.termination,
          format_number(r.wall_time_s)};
}

void write_results_csv(std::ostream& out, const std::vector<ResultRecord>& records) {
  CsvWriter writer(out, result_columns());
  for (const auto& r : records) writer.write_row(to_row(r));
}

const std::vector<std::string>& profile_columns() {
  static const std::vector<std::string> cols = {"dim",   "divergence", "source", "bin",
                                                "lower", "upper",      "density"};
  return cols;
}

void write_profiles_csv(std::ostream& out, const std::vector<ProfileRecord>& profiles) {
  CsvWriter writer(out, profile_columns());
  for (const auto& p : profiles) {
    writer.write_row({std::to_string(p.dim), p.divergence, p.source, std::to_string(p.bin),
                      format_number(p.lower), format_number(p.upper),
                      format_number(p.density)});
  }
}

MinimizeResult case_study_optimum(const DivergenceSpec& spec, const Gaussian& p) {
  const Eigen::Index d = p.mean.size();
  Vector init(2 * d);
  init.head(d) = p.mean;
  if (spec.kind == DivergenceKind::ExclusiveKL ||
      (spec.kind == DivergenceKind::Alpha && spec.alpha < 1.0)) {
    const Matrix prec = CholeskyFactor(p.cov).inverse();
    init.tail(d) = (-0.5 * prec.diagonal().array().log()).matrix();
  } else {
    // mass-covering objectives are finite only for a q wide enough in every
    // direction; start at the largest target eigenvalue
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(p.cov);
    init.tail(d).setConstant(0.5 * std::log(eig.eigenvalues().maxCoeff()));
  }
  if (spec.kind == DivergenceKind::ChiSq || spec.kind == DivergenceKind::Alpha) {
    // D = (I - 1) / (t (t - 1)) is monotone in log I, which stays well scaled
    const double t = spec.kind == DivergenceKind::ChiSq ? 2.0 : spec.alpha;
    const double sign = t > 1.0 ? 1.0 : -1.0;
    const Objective log_objective = [&](const Vector& lambda, Vector* grad) {
      const double v = mean_field_log_power_integral(t, p, lambda, grad);
      if (grad) *grad *= sign;
      return std::isfinite(v) ? sign * v : std::numeric_limits<double>::infinity();
    };
    MinimizeResult res = deterministic_minimize(log_objective, init);
    res.value = mean_field_gaussian_divergence(spec, p, res.lambda, nullptr);
    return res;
  }
  const Objective objective = [&](const Vector& lambda, Vector* grad) {
    return mean_field_gaussian_divergence(spec, p, lambda, grad);
  };
  return deterministic_minimize(objective, init);
}

ParetoFit divergence_khat(const DivergenceSpec& spec, const WeightSet& ws) {
  switch (spec.kind) {
    case DivergenceKind::ExclusiveKL: return khat_of(WeightFunction::LogW, ws);
    case DivergenceKind::InclusiveKL: return khat_of(WeightFunction::WLogW, ws);
    case DivergenceKind::ChiSq: return khat_of(WeightFunction::WSquared, ws);
    case DivergenceKind::Alpha:
      return khat_of(WeightFunction::W, WeightSet{(spec.alpha * ws.log_w.array()).matrix()});
    case DivergenceKind::TailAdaptive: return khat_of(WeightFunction::W, ws);
  }
  return khat_of(WeightFunction::W, ws);
}

CaseStudyOutput run_case_study(const ExperimentConfig& cfg) {
  validate(cfg);
  struct Cell {
    int dim;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::uint64_t seed : cfg.seeds) {
    for (int d : cfg.dims) cells.push_back({d, seed});
  }
  std::vector<std::vector<ResultRecord>> records(cells.size());
  std::vector<std::vector<ProfileRecord>> profiles(cells.size());

  parallel_for(cells.size(), cfg.threads, [&](std::size_t c) {
    const int dim = cells[c].dim;
    const std::uint64_t seed = cells[c].seed;
    const std::string base_id = "case_study/d" + std::to_string(dim);
    const TargetPtr target = make_correlated_gaussian({CovarianceKind::Uniform, cfg.rho, dim});
    const Gaussian p = gaussian_of(*target);
    const FamilyPtr family = make_family(FamilyKind::MFGaussian, dim);
    std::vector<double> q_dist_all;
    std::vector<std::pair<std::string, std::vector<double>>> q_dists;

    for (const DivergenceSpec& spec : cfg.divergences) {
      const auto start = Clock::now();
      ResultRecord rec;
      rec.experiment = to_string(ExperimentKind::CaseStudy);
      rec.model = "gaussian";
      rec.dim = dim;
      rec.rho = cfg.rho;
      rec.family = to_string(FamilyKind::MFGaussian);
      rec.divergence = to_string(spec);
      const EstimatorKind estimator = estimator_for(cfg, spec);
      rec.estimator = to_string(estimator);
      rec.seed = seed;
      try {
        const std::string id = base_id + "/" + rec.divergence;
        const MinimizeResult opt = case_study_optimum(spec, p);
        rec.divergence_analytic = opt.value;
        rec.iterations = opt.iterations;
        rec.termination = opt.converged ? "converged" : "max_iters";
        const Vector& lambda = opt.lambda;

        const BaseDraws draws = family->draw_base(cfg.s_diag, cell_seed(seed, id + "/diag"));
        const SampleBatch batch = sample_transform(*family, lambda, draws);
        WeightSet ws;
        ws.log_w.resize(cfg.s_diag);
        for (int s = 0; s < cfg.s_diag; ++s) {
          ws.log_w[s] = target->log_joint(batch.thetas.row(s).transpose()) - batch.logq[s];
        }
        fill_khats(rec, ws);
        rec.divergence_estimate = mc_loss(spec, ws, true).value;
        rec.min_sample_size = min_sample_size(divergence_khat(spec, ws).khat);

        MomentEstimate plain;
        plain.mean = batch.thetas.colwise().mean().transpose();
        const Matrix centered = batch.thetas.rowwise() - plain.mean.transpose();
        plain.covariance = centered.transpose() * centered / (cfg.s_diag - 1.0);
        const MomentEstimate snis =
            weighted_moments(batch.thetas, ws.normalized(), MomentMethod::SNIS);
        const MomentEstimate psis = weighted_moments(
            batch.thetas, psis_smooth(ws).weights.normalized(), MomentMethod::PSIS);
        fill_errors(rec, plain, snis, psis, *target->truth());

        const BaseDraws gdraws = family->draw_base(cfg.s_diag, cell_seed(seed, id + "/grad"));
        fill_gradient_variance(
            rec, estimate_gradient(spec, estimator, *family, lambda, *target, gdraws));

        if (cfg.profiles) {
          std::vector<double> dist = distances(batch.thetas, p.mean);
          q_dist_all.insert(q_dist_all.end(), dist.begin(), dist.end());
          q_dists.emplace_back(rec.divergence, std::move(dist));
        }
      } catch (const std::exception& e) {
        rec.status = "failed";
        rec.failure = e.what();
      }
      rec.wall_time_s = seconds_since(start);
      records[c].push_back(std::move(rec));
    }

    if (cfg.profiles && !q_dists.empty()) {
      // draws from the target itself, through its Cholesky factor
      const CholeskyFactor chol(p.cov);
      const BaseDraws pd = family->draw_base(cfg.s_diag, cell_seed(seed, base_id + "/target"));
      const Matrix p_draws = pd.eps * chol.lower().transpose();
      const std::vector<double> p_dist = distances(p_draws, p.mean);
      std::vector<double> pooled = q_dist_all;
      pooled.insert(pooled.end(), p_dist.begin(), p_dist.end());
      const auto [lo, hi] = std::minmax_element(pooled.begin(), pooled.end());
      for (const auto& [name, dist] : q_dists) {
        auto h = histogram(dim, name, "q", dist, *lo, *hi);
        profiles[c].insert(profiles[c].end(), h.begin(), h.end());
      }
      auto h = histogram(dim, "target", "p", p_dist, *lo, *hi);
      profiles[c].insert(profiles[c].end(), h.begin(), h.end());
    }
  });

  CaseStudyOutput out;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    out.records.insert(out.records.end(), records[c].begin(), records[c].end());
    out.profiles.insert(out.profiles.end(), profiles[c].begin(), profiles[c].end());
  }
  return out;
}

TruthResult ground_truth(const std::string& model, const TargetModel& target,
                         const HmcConfig& config) {
  TruthResult out;
  if (target.truth()) {
    out.truth = *target.truth();
    return out;
  }
  ReferenceMoments ref;
  if (model == "eight_schools_cp") {
    const TargetPtr ncp = make_eight_schools(SchoolsParameterization::NonCentered);
    ref = reference_sampler(*ncp, config, schools_noncentered_to_centered);
  } else {
    ref = reference_sampler(target, config);
  }
  out.truth = ref.as_truth();
  out.reference = std::move(ref);
  return out;
}

std::vector<ResultRecord> run_bbvi_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  if (cfg.experiment == ExperimentKind::CaseStudy) {
    throw InvalidSpec("run_bbvi_experiment: use run_case_study for the case study");
  }
  const std::vector<std::string> models = models_for(cfg);

  // Reference moments once per (model, dim), before the sweep.
  struct TargetEntry {
    std::string model;
    int dim;
    TargetPtr target;
    std::optional<TruthResult> truth;
    std::string truth_error;
  };
  std::vector<TargetEntry> targets;
  for (const auto& model : models) {
    for (int d : dims_for(cfg, model)) {
      TargetEntry e{model, d, make_named_target(model, d, cfg.rho, cfg.data_seed, cfg.n_data),
                    std::nullopt, {}};
      try {
        e.truth = ground_truth(model, *e.target, cfg.reference);
        if (e.truth->reference && !e.truth->reference->reliable) {
          e.truth_error = "reference moments unreliable (split R-hat > 1.05)";
        }
      } catch (const std::exception& ex) {
        e.truth_error = std::string("reference sampler failed: ") + ex.what();
      }
      targets.push_back(std::move(e));
    }
  }

  // ExclusiveKL runs first so that its solution can warm-start the others.
  std::vector<DivergenceSpec> order = {DivergenceSpec::exclusive_kl()};
  bool emit_exclusive = false;
  for (const auto& d : cfg.divergences) {
    if (d.kind == DivergenceKind::ExclusiveKL) {
      emit_exclusive = true;
    } else {
      order.push_back(d);
    }
  }

  struct Cell {
    std::size_t target;
    FamilyKind family;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    for (const FamilyKind f : cfg.families) {
      for (std::uint64_t seed : cfg.seeds) cells.push_back({t, f, seed});
    }
  }
  std::vector<std::vector<ResultRecord>> records(cells.size());

  parallel_for(cells.size(), cfg.threads, [&](std::size_t c) {
    const Cell& cell = cells[c];
    const TargetEntry& entry = targets[cell.target];
    const std::string cell_id =
        entry.model + "/d" + std::to_string(entry.dim) + "/" + to_string(cell.family);
    const std::uint64_t seed = cell_seed(cell.seed, cell_id);
    std::optional<Vector> warm;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const DivergenceSpec& spec = order[k];
      const bool emit = k > 0 || emit_exclusive;
      const auto start = Clock::now();
      ResultRecord rec;
      rec.experiment = to_string(cfg.experiment);
      rec.model = entry.model;
      rec.dim = entry.target->dim();
      rec.rho = cfg.rho;
      rec.family = to_string(cell.family);
      rec.divergence = to_string(spec);
      const EstimatorKind estimator = estimator_for(cfg, spec);
      rec.estimator = to_string(estimator);
      rec.seed = cell.seed;
      try {
        const FamilyPtr family = make_family(cell.family, rec.dim, cfg.family_options);
        OptimizerConfig oc = cfg.optimizer;
        oc.seed = derive_seed(seed, hash_label(rec.divergence));
        const auto dp = cfg.draws_per_gradient.find(rec.divergence);
        oc.draws_per_step = dp != cfg.draws_per_gradient.end() ? dp->second : 0;
        const FitResult fitted = fit(*entry.target, *family, spec, estimator, oc,
                                     k == 0 ? std::nullopt : warm);
        if (k == 0) warm = fitted.params.values;
        rec.iterations = static_cast<int>(fitted.trace.records.size());
        rec.termination = to_string(fitted.trace.termination);
        if (fitted.trace.termination == Termination::Failed) {
          rec.status = "failed";
          rec.failure = fitted.trace.failure;
        }
        if (emit) {
          const Vector& lambda = fitted.params.values;
          const MomentSuite suite = estimate_all_moments(
              *family, lambda, *entry.target, cfg.estimate_draws,
              derive_seed(seed, hash_label(rec.divergence + "/estimate")));
          fill_khats(rec, suite.weights);
          if (spec.kind != DivergenceKind::TailAdaptive) {
            rec.divergence_estimate = mc_loss(spec, suite.weights).value;
          }
          if (is_gaussian_model(entry.model) && cell.family == FamilyKind::MFGaussian &&
              spec.kind != DivergenceKind::TailAdaptive) {
            rec.divergence_analytic =
                mean_field_gaussian_divergence(spec, gaussian_of(*entry.target), lambda, nullptr);
          }
          rec.min_sample_size = min_sample_size(divergence_khat(spec, suite.weights).khat);
          const BaseDraws gdraws = family->draw_base(
              cfg.s_diag, derive_seed(seed, hash_label(rec.divergence + "/grad")));
          fill_gradient_variance(
              rec, estimate_gradient(spec, estimator, *family, lambda, *entry.target, gdraws));
          if (entry.truth) {
            fill_errors(rec, suite.plain, suite.snis, suite.psis, entry.truth->truth);
          }
          if (!entry.truth_error.empty()) {
            rec.failure += (rec.failure.empty() ? "" : "; ") + entry.truth_error;
          }
        }
      } catch (const std::exception& e) {
        rec.status = "failed";
        rec.failure = e.what();
      }
      rec.wall_time_s = seconds_since(start);
      if (emit) records[c].push_back(std::move(rec));
    }
  });

  std::vector<ResultRecord> out;
  for (auto& r : records) out.insert(out.end(), r.begin(), r.end());
  return out;
}

std::string profiles_path(const std::string& output) {
  const auto dot = output.rfind('.');
  const auto slash = output.find_last_of('/');
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? output.substr(0, dot) : output) + ".profiles.csv";
}

void write_outputs(const ExperimentConfig& cfg, const std::vector<ResultRecord>& records,
                   const std::vector<ProfileRecord>* profiles) {
  if (cfg.output.empty()) throw InvalidSpec("config: output path is empty");
  {
    std::ofstream out(cfg.output, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + cfg.output);
    write_results_csv(out, records);
  }
  write_json(cfg.output + ".json", sidecar(to_json(cfg)));
  if (profiles) {
    const std::string path = profiles_path(cfg.output);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_profiles_csv(out, *profiles);
  }
}

}  // namespace vibench
