#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdemix/hash.hpp"
#include "pdemix/integrate.hpp"
#include "pdemix/parallel.hpp"
#include "pdemix/sample.hpp"
#include "pdemix/variational.hpp"

namespace pdemix {

// ---------------------------------------------------------------------------
// Optimizer

/// Adam with bias correction over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void set_learning_rate(double lr) { lr_ = lr; }

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Fitting

struct FitConfig {
  std::size_t max_iters = 2000;
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t eval_mc_samples = 32;
  std::uint64_t seed = 0;
  std::size_t convergence_window = 100;
  double convergence_rel_tol = 1e-4;
  /// Leading iterations that optimize the coefficient posteriors against
  /// sum_k c_k nll_k (an upper bound on the mixture term) with the logits
  /// held at zero, so every component is fitted before weights compete.
  std::size_t warmup_iters = 400;
  /// Reconstruction term optimized after warm-up. With per-sample weights the
  /// mixture term's optimum in c is set by the weighted KL (components left
  /// at their prior look cheap), so argmax c stops tracking the likelihood.
  /// The bound sum_k c_k nll_k makes c the posterior over components.
  /// Reported ELBOs always use the mixture term.
  ReconMode recon_mode = ReconMode::JensenBound;
  double init_log_sigma2 = std::log(0.01);
  /// Learning rate decays geometrically from learning_rate to this value
  /// over max_iters; <= 0 keeps it constant.
  double final_learning_rate = 1e-3;
  /// Initial log-variance of every coefficient posterior; NaN starts at the
  /// prior variance.
  double init_log_var = std::numeric_limits<double>::quiet_NaN();
  std::size_t max_consecutive_failures = 10;
  SolverOptions solver{};

  void validate() const {
    if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
      throw std::invalid_argument("adam betas must lie in (0, 1)");
    if (eval_mc_samples < 1) throw std::invalid_argument("eval_mc_samples must be >= 1");
    if (convergence_window < 1) throw std::invalid_argument("convergence window must be >= 1");
  }
};

enum class FitStatus { Converged, MaxIters, Diverged, Failed };

inline const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::Converged: return "Converged";
    case FitStatus::MaxIters: return "MaxIters";
    case FitStatus::Diverged: return "Diverged";
    case FitStatus::Failed: return "Failed";
  }
  return "?";
}

inline FitStatus fit_status_from_string(const std::string& s) {
  for (auto st : {FitStatus::Converged, FitStatus::MaxIters, FitStatus::Diverged, FitStatus::Failed})
    if (s == to_string(st)) return st;
  throw std::invalid_argument("unknown fit status '" + s + "'");
}

struct ComponentEstimate {
  double z_x = 0.0;  // posterior median
  double z_r = 0.0;  // posterior median, 0 for pure diffusion
};

struct FitReport {
  std::string sample_id;
  std::vector<ReactionKind> components;
  FitStatus status = FitStatus::Failed;
  std::string message;
  std::size_t iterations = 0;
  std::vector<double> elbo_trace;
  std::vector<double> final_weights;
  std::size_t assigned = 0;
  std::vector<ComponentEstimate> params;
  VariationalState posterior;
  double eval_elbo = -std::numeric_limits<double>::infinity();
  double eval_elbo_se = 0.0;
  Trajectory predicted;  // posterior-median run of the assigned component at the observed times

  bool has_fit() const { return status != FitStatus::Failed && !final_weights.empty(); }
};

/// argmax with ties going to the lowest index.
inline std::size_t argmax_lowest(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

inline std::size_t assign_component(const FitReport& report) {
  return argmax_lowest(report.final_weights);
}

inline std::vector<ComponentSpec> make_components(std::span<const ReactionKind> kinds,
                                                  const PriorSpec& prior = {}) {
  std::vector<ComponentSpec> out;
  for (auto k : kinds) out.push_back({k, prior});
  return out;
}

namespace detail {

inline std::mt19937_64 fit_rng(std::uint64_t seed, const std::string& sample_id,
                               std::uint64_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32),
                    std::uint32_t(fnv1a(sample_id)), std::uint32_t(fnv1a(sample_id) >> 32),
                    std::uint32_t(stream)};
  return std::mt19937_64(seq);
}

inline std::vector<double> draw_noise(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

inline double window_mean(std::span<const double> v, std::size_t begin, std::size_t len) {
  double s = 0.0;
  for (std::size_t i = begin; i < begin + len; ++i) s += v[i];
  return s / double(len);
}

}  // namespace detail

struct EvalEstimate {
  double mean_elbo = -std::numeric_limits<double>::infinity();
  double std_error = 0.0;
  std::size_t failures = 0;
};

/// Monte-Carlo estimate of the ELBO at a fixed state with a fixed-seed stream.
inline EvalEstimate evaluate_elbo(const SampleRecord& sample, std::span<const ComponentSpec> comps,
                                  const VariationalState& state, const FitConfig& cfg) {
  auto rng = detail::fit_rng(cfg.seed, sample.id, 2);
  ElboOptions opt;
  opt.solver = cfg.solver;
  opt.with_gradient = false;
  std::vector<double> vals;
  EvalEstimate est;
  for (std::size_t s = 0; s < cfg.eval_mc_samples; ++s) {
    auto noise = detail::draw_noise(rng, 2 * comps.size());
    try {
      vals.push_back(-elbo(sample, comps, state, noise, opt).loss);
    } catch (const FitDiverged&) {
      ++est.failures;
    }
  }
  if (vals.empty()) return est;
  const double n = double(vals.size());
  const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / n;
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  var = vals.size() > 1 ? var / (n - 1.0) : 0.0;
  est.mean_elbo = mean;
  est.std_error = std::sqrt(var / n);
  return est;
}

/// Per-sample variational fit over the candidate components.
inline FitReport fit_sample(const SampleRecord& sample, std::span<const ComponentSpec> comps,
                            const FitConfig& cfg) {
  cfg.validate();
  detail::check_sample(sample);
  if (comps.empty()) throw std::invalid_argument("fit_sample: no components");

  const std::size_t k = comps.size();
  FitReport rep;
  rep.sample_id = sample.id;
  for (const auto& c : comps) rep.components.push_back(c.kind);

  VariationalState state = VariationalState::at_prior(comps, cfg.init_log_sigma2);
  if (!std::isnan(cfg.init_log_var))
    for (auto& c : state.components) c.z_x.log_var = c.z_r.log_var = cfg.init_log_var;
  std::vector<double> flat = state.flatten();
  Adam adam(flat.size(), cfg.learning_rate, cfg.beta1, cfg.beta2);
  auto rng = detail::fit_rng(cfg.seed, sample.id, 1);

  ElboOptions opt;
  opt.solver = cfg.solver;
  const std::size_t warmup = k > 1 ? std::min(cfg.warmup_iters, cfg.max_iters) : 0;
  const std::size_t window = cfg.convergence_window;

  rep.status = FitStatus::MaxIters;
  std::size_t consecutive_failures = 0;
  std::size_t iter = 0;
  for (; iter < cfg.max_iters; ++iter) {
    const bool warming = iter < warmup;
    if (cfg.final_learning_rate > 0.0 && cfg.max_iters > 1)
      adam.set_learning_rate(cfg.learning_rate *
                             std::pow(cfg.final_learning_rate / cfg.learning_rate,
                                      double(iter) / double(cfg.max_iters - 1)));
    opt.mode = warming ? ReconMode::JensenBound : cfg.recon_mode;
    opt.freeze_logits = warming;
    auto noise = detail::draw_noise(rng, 2 * k);
    ElboResult res;
    try {
      res = elbo(sample, comps, state, noise, opt);
    } catch (const FitDiverged& e) {
      if (++consecutive_failures > cfg.max_consecutive_failures) {
        rep.status = FitStatus::Diverged;
        rep.message = e.what();
        break;
      }
      continue;
    }
    consecutive_failures = 0;
    rep.elbo_trace.push_back(-res.loss);

    auto grad = res.gradient.flatten();
    adam.step(flat, grad);
    state.unflatten(flat);
    state.clamp();
    flat = state.flatten();

    // Converged when the windowed mean ELBO stops moving (post warm-up only).
    if (!warming && iter + 1 >= warmup + 2 * window) {
      const auto& tr = rep.elbo_trace;
      const std::size_t n = tr.size();
      const double recent = detail::window_mean(tr, n - window, window);
      const double before = detail::window_mean(tr, n - 2 * window, window);
      if (std::abs(recent - before) <= cfg.convergence_rel_tol * std::max(std::abs(before), 1e-12)) {
        rep.status = FitStatus::Converged;
        ++iter;
        break;
      }
    }
  }
  rep.iterations = iter;

  rep.posterior = state;
  rep.final_weights = state.weights.probs();
  rep.assigned = argmax_lowest(rep.final_weights);
  for (std::size_t c = 0; c < k; ++c) {
    const auto& post = state.components[c];
    rep.params.push_back({post.z_x.median(), comps[c].has_reaction() ? post.z_r.median() : 0.0});
  }

  const EvalEstimate ev = evaluate_elbo(sample, comps, state, cfg);
  rep.eval_elbo = ev.mean_elbo;
  rep.eval_elbo_se = ev.std_error;
  if (ev.failures == cfg.eval_mc_samples) {
    rep.status = FitStatus::Diverged;
    if (rep.message.empty()) rep.message = "every evaluation draw failed";
  }

  // Median-parameter reconstruction at the observed times.
  try {
    const auto& est = rep.params[rep.assigned];
    PdeParams p{est.z_x, est.z_r, comps[rep.assigned].kind};
    rep.predicted = integrate(p, sample.frames.front(), detail::relative_times(sample.times), cfg.solver);
    rep.predicted.times = sample.times;
  } catch (const SolverError& e) {
    if (rep.message.empty()) rep.message = std::string("median reconstruction failed: ") + e.what();
  }
  return rep;
}

/// Fits every sample on a worker pool; output order follows `samples`.
inline std::vector<FitReport> fit_samples(std::span<const SampleRecord> samples,
                                          std::span<const ComponentSpec> comps, const FitConfig& cfg,
                                          std::size_t workers = 1) {
  std::vector<FitReport> out(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    try {
      out[i] = fit_sample(samples[i], comps, cfg);
    } catch (const std::exception& e) {
      out[i].sample_id = samples[i].id;
      for (const auto& c : comps) out[i].components.push_back(c.kind);
      out[i].status = FitStatus::Failed;
      out[i].message = e.what();
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark metrics

struct ResidualRow {
  std::string sample_id;
  std::size_t true_component = 0;
  std::size_t assigned = 0;
  double z_x_true = 0, z_r_true = 0;
  double z_x_est = 0, z_r_est = 0;

  double z_x_residual() const { return z_x_true - z_x_est; }
  double z_r_residual() const { return z_r_true - z_r_est; }
  double z_x_rel_error() const { return std::abs(z_x_residual()) / z_x_true; }
  double z_r_rel_error() const {
    return z_r_true > 0.0 ? std::abs(z_r_residual()) / z_r_true : std::abs(z_r_est);
  }
  bool correct() const { return true_component == assigned; }
};

struct WeightRow {
  std::string sample_id;
  std::size_t true_component = 0;
  std::vector<double> weights;
};

struct AssignmentEvaluation {
  std::size_t num_components = 0;
  std::vector<std::vector<std::size_t>> confusion;  // rows = truth, cols = predicted
  std::vector<WeightRow> weights;
  std::vector<ResidualRow> residuals;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  double accuracy = 0.0;
  double macro_recall = 0.0;

  /// Every diagonal entry strictly exceeds the off-diagonal entries in its row.
  bool diagonally_dominant() const {
    for (std::size_t i = 0; i < num_components; ++i)
      for (std::size_t j = 0; j < num_components; ++j)
        if (i != j && confusion[i][i] <= confusion[i][j]) return false;
    return true;
  }
};

/// Compares reports against ground truth. Reports are matched to samples by
/// id; the fitted component order must match the generating component ids.
/// Reports without a fit (status Failed) are skipped.
inline AssignmentEvaluation evaluate_assignments(std::span<const SampleRecord> samples,
                                                 std::span<const FitReport> reports,
                                                 std::size_t num_components) {
  AssignmentEvaluation ev;
  ev.num_components = num_components;
  ev.confusion.assign(num_components, std::vector<std::size_t>(num_components, 0));
  std::size_t correct = 0;
  for (const auto& rep : reports) {
    auto it = std::find_if(samples.begin(), samples.end(),
                           [&](const SampleRecord& s) { return s.id == rep.sample_id; });
    if (it == samples.end())
      throw std::invalid_argument("evaluate_assignments: no sample for report '" + rep.sample_id + "'");
    if (!it->truth)
      throw std::invalid_argument("evaluate_assignments: sample '" + it->id + "' has no ground truth");
    if (!rep.has_fit()) {
      ++ev.skipped;
      continue;
    }
    const GroundTruth& truth = *it->truth;
    if (truth.component_id >= num_components || rep.final_weights.size() != num_components)
      throw std::invalid_argument("evaluate_assignments: component count mismatch for '" + rep.sample_id + "'");
    const std::size_t pred = assign_component(rep);
    ++ev.confusion[truth.component_id][pred];
    ++ev.evaluated;
    if (pred == truth.component_id) ++correct;
    ev.weights.push_back({rep.sample_id, truth.component_id, rep.final_weights});
    ev.residuals.push_back({rep.sample_id, truth.component_id, pred, truth.z_x, truth.z_r,
                            rep.params[pred].z_x, rep.params[pred].z_r});
  }
  ev.accuracy = ev.evaluated ? double(correct) / double(ev.evaluated) : 0.0;
  double recall_sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t i = 0; i < num_components; ++i) {
    const std::size_t row = std::accumulate(ev.confusion[i].begin(), ev.confusion[i].end(), std::size_t{0});
    if (row == 0) continue;
    recall_sum += double(ev.confusion[i][i]) / double(row);
    ++classes;
  }
  ev.macro_recall = classes ? recall_sum / double(classes) : 0.0;
  return ev;
}

// ---------------------------------------------------------------------------
// Model evidence

struct EvidenceResult {
  std::vector<std::size_t> subset;
  double evidence = 0.0;   // sum over samples of the evaluation ELBO
  double std_error = 0.0;  // Monte-Carlo standard error of the sum
  std::vector<FitReport> reports;
};

/// Refits every sample with only the components in `subset` (a standalone
/// mixture with a uniform prior over the subset) and sums evaluation ELBOs.
inline EvidenceResult model_evidence(std::span<const SampleRecord> samples,
                                     std::span<const ComponentSpec> comps,
                                     std::span<const std::size_t> subset, const FitConfig& cfg,
                                     std::size_t workers = 1) {
  if (subset.empty()) throw std::invalid_argument("model_evidence: empty component subset");
  std::vector<ComponentSpec> sub;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] >= comps.size())
      throw std::out_of_range("model_evidence: component index " + std::to_string(subset[i]) + " out of range");
    for (std::size_t j = 0; j < i; ++j)
      if (subset[j] == subset[i]) throw std::invalid_argument("model_evidence: duplicate component index");
    sub.push_back(comps[subset[i]]);
  }
  EvidenceResult res;
  res.subset.assign(subset.begin(), subset.end());
  res.reports = fit_samples(samples, sub, cfg, workers);
  double var = 0.0;
  for (const auto& r : res.reports) {
    res.evidence += r.has_fit() ? r.eval_elbo : -std::numeric_limits<double>::infinity();
    var += r.eval_elbo_se * r.eval_elbo_se;
  }
  res.std_error = std::sqrt(var);
  return res;
}

// ---------------------------------------------------------------------------
// Prediction

inline constexpr std::size_t kPredictiveDraws = 100;

/// Posterior-mean prediction of the assigned component at absolute `times`
/// (same clock as sample.times), started from the first observed frame.
inline Trajectory predict(const FitReport& report, std::span<const ComponentSpec> comps,
                          const SampleRecord& sample, std::span<const double> times,
                          std::uint64_t seed = 0, std::size_t draws = kPredictiveDraws,
                          const SolverOptions& solver = {}) {
  if (!report.has_fit()) throw std::invalid_argument("predict: report has no fit");
  if (report.posterior.num_components() != comps.size())
    throw std::invalid_argument("predict: component list does not match the report");
  if (sample.frames.empty()) throw std::invalid_argument("predict: sample has no frames");
  const std::size_t k = assign_component(report);
  const ComponentSpec& spec = comps[k];
  const ComponentPosterior& post = report.posterior.components[k];

  std::vector<double> rel(times.begin(), times.end());
  for (double& t : rel) {
    t -= sample.times.front();
    if (t < 0.0) throw std::invalid_argument("predict: requested time precedes the first observation");
  }

  auto rng = detail::fit_rng(seed, sample.id, 3);
  Trajectory mean;
  mean.times.assign(times.begin(), times.end());
  const ScalarField& x0 = sample.frames.front();
  mean.frames.assign(rel.size(), ScalarField(x0.rows(), x0.cols()));
  for (std::size_t d = 0; d < draws; ++d) {
    auto noise = detail::draw_noise(rng, 2);
    Trajectory tr = integrate(draw_params(spec, post, noise[0], noise[1]), x0, rel, solver);
    for (std::size_t t = 0; t < rel.size(); ++t) {
      auto acc = mean.frames[t].values();
      auto v = tr.frames[t].values();
      for (std::size_t n = 0; n < acc.size(); ++n) acc[n] += v[n];
    }
  }
  for (auto& f : mean.frames)
    for (double& v : f.values()) v /= double(draws);
  return mean;
}

// ---------------------------------------------------------------------------
// Degeneracy

inline constexpr double kDegeneracyNllGap = 0.05;
inline constexpr double kDegeneracyErrorRatio = 2.0;

struct DegeneracyReport {
  std::string sample_id;
  ReactionKind true_kind = ReactionKind::Logistic0;
  ReactionKind wrong_kind = ReactionKind::Logistic0;
  double nll_true = 0.0;
  double nll_wrong = 0.0;
  double gap = 0.0;      // nll_wrong - nll_true
  double rel_gap = 0.0;  // |gap| / |nll_true|
  double err_true = 0.0;
  double err_wrong = 0.0;
  ComponentEstimate est_true, est_wrong;
  FitStatus status_true = FitStatus::Failed, status_wrong = FitStatus::Failed;
  bool flag = false;
};

/// Relative error of the reaction rate, or of the diffusion coefficient when
/// the truth has no reaction.
inline double parameter_error(const GroundTruth& truth, const ComponentEstimate& est) {
  if (truth.z_r > 0.0) return std::abs(est.z_r - truth.z_r) / truth.z_r;
  return std::abs(est.z_x - truth.z_x) / truth.z_x;
}

/// Reconstruction NLL of the observed frames (all but the first) at the
/// posterior medians, under the fit's own noise variance.
inline double reconstruction_nll(const FitReport& rep, const SampleRecord& sample) {
  if (rep.predicted.frames.size() != sample.frames.size())
    return std::numeric_limits<double>::infinity();
  std::span<const ScalarField> obs(sample.frames.data() + 1, sample.frames.size() - 1);
  std::span<const ScalarField> pred(rep.predicted.frames.data() + 1, rep.predicted.frames.size() - 1);
  return gaussian_nll(obs, pred, rep.posterior.noise.sigma2());
}

/// Fits the true and the wrong component separately and flags degeneracy
/// when both reconstruct about equally well but the wrong one recovers the
/// coefficient markedly worse.
inline DegeneracyReport degeneracy_probe(const SampleRecord& sample, const ComponentSpec& true_comp,
                                         const ComponentSpec& wrong_comp, const FitConfig& cfg) {
  if (!sample.truth) throw std::invalid_argument("degeneracy_probe: sample has no ground truth");
  DegeneracyReport out;
  out.sample_id = sample.id;
  out.true_kind = true_comp.kind;
  out.wrong_kind = wrong_comp.kind;

  const FitReport fit_true = fit_sample(sample, std::span(&true_comp, 1), cfg);
  const bool same = true_comp.kind == wrong_comp.kind;
  const FitReport fit_wrong = same ? fit_true : fit_sample(sample, std::span(&wrong_comp, 1), cfg);

  out.status_true = fit_true.status;
  out.status_wrong = fit_wrong.status;
  out.est_true = fit_true.params.front();
  out.est_wrong = fit_wrong.params.front();
  out.nll_true = reconstruction_nll(fit_true, sample);
  out.nll_wrong = reconstruction_nll(fit_wrong, sample);
  out.gap = same ? 0.0 : out.nll_wrong - out.nll_true;
  out.rel_gap = same ? 0.0 : std::abs(out.gap) / std::max(std::abs(out.nll_true), 1e-300);
  out.err_true = parameter_error(*sample.truth, out.est_true);
  out.err_wrong = parameter_error(*sample.truth, out.est_wrong);
  out.flag = !same && std::isfinite(out.gap) && out.rel_gap < kDegeneracyNllGap &&
             out.err_wrong >= kDegeneracyErrorRatio * out.err_true && out.err_wrong > out.err_true;
  return out;
}

}  // namespace pdemix
