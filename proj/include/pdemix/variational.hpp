#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdemix/integrate.hpp"
#include "pdemix/reaction.hpp"
#include "pdemix/sample.hpp"

namespace pdemix {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kMinVariance = 1e-12;
inline constexpr double kMaxVariance = 1e4;
inline constexpr double kMinNoiseVariance = 1e-12;

/// Posterior over a positive coefficient: z~ = exp(z), z ~ Normal(mu, exp(log_var)).
struct LogNormalPosterior {
  double mu = 0.0;
  double log_var = 0.0;

  double variance() const { return std::exp(log_var); }
  double median() const { return std::exp(mu); }

  /// Keeps the variance strictly inside (kMinVariance, kMaxVariance).
  void clamp() {
    static const double lo = std::log(kMinVariance) + 1e-9;
    static const double hi = std::log(kMaxVariance) - 1e-9;
    log_var = std::clamp(log_var, lo, hi);
  }
};

struct CategoricalPosterior {
  std::vector<double> logits;

  std::vector<double> probs() const;
};

struct NoiseModel {
  double log_sigma2 = std::log(0.01);

  double sigma2() const { return std::exp(log_sigma2); }
  void clamp() { log_sigma2 = std::max(log_sigma2, std::log(kMinNoiseVariance)); }
};

/// Gaussian prior on log z.
struct NormalPrior {
  double mean = 0.0;
  double variance = 1.0;
};

struct PriorSpec {
  NormalPrior z_x{std::log(0.1), 1.0};
  NormalPrior z_r{std::log(0.05), 1.0};
};

/// One candidate PDE: the reaction shape plus priors on its coefficients.
struct ComponentSpec {
  ReactionKind kind = ReactionKind::Logistic0;
  PriorSpec prior{};

  bool has_reaction() const { return kind != ReactionKind::None; }
};

struct ComponentPosterior {
  LogNormalPosterior z_x;
  LogNormalPosterior z_r;  // unused (pinned at the prior) for pure diffusion
};

/// Per-sample variational parameters. Also used as the gradient carrier.
struct VariationalState {
  std::vector<ComponentPosterior> components;
  CategoricalPosterior weights;
  NoiseModel noise;

  std::size_t num_components() const { return components.size(); }

  /// Posteriors at the priors, uniform logits, default noise.
  static VariationalState at_prior(std::span<const ComponentSpec> specs,
                                   double log_sigma2 = std::log(0.01)) {
    VariationalState s;
    for (const auto& c : specs) {
      s.components.push_back({{c.prior.z_x.mean, std::log(c.prior.z_x.variance)},
                              {c.prior.z_r.mean, std::log(c.prior.z_r.variance)}});
    }
    s.weights.logits.assign(specs.size(), 0.0);
    s.noise.log_sigma2 = log_sigma2;
    return s;
  }

  static VariationalState zeros_like(const VariationalState& other) {
    VariationalState s;
    s.components.assign(other.components.size(), {{0.0, 0.0}, {0.0, 0.0}});
    s.weights.logits.assign(other.weights.logits.size(), 0.0);
    s.noise.log_sigma2 = 0.0;
    return s;
  }

  // Flat layout: per component (mu_x, log_var_x, mu_r, log_var_r), then the
  // K logits, then log sigma^2.
  std::vector<double> flatten() const {
    std::vector<double> v;
    v.reserve(5 * components.size() + 1);
    for (const auto& c : components) {
      v.insert(v.end(), {c.z_x.mu, c.z_x.log_var, c.z_r.mu, c.z_r.log_var});
    }
    v.insert(v.end(), weights.logits.begin(), weights.logits.end());
    v.push_back(noise.log_sigma2);
    return v;
  }

  void unflatten(std::span<const double> v) {
    const std::size_t k = components.size();
    if (v.size() != 5 * k + 1) throw std::invalid_argument("VariationalState: bad flat size");
    for (std::size_t i = 0; i < k; ++i) {
      components[i].z_x = {v[4 * i], v[4 * i + 1]};
      components[i].z_r = {v[4 * i + 2], v[4 * i + 3]};
    }
    for (std::size_t i = 0; i < k; ++i) weights.logits[i] = v[4 * k + i];
    noise.log_sigma2 = v[5 * k];
  }

  void clamp() {
    for (auto& c : components) {
      c.z_x.clamp();
      c.z_r.clamp();
    }
    noise.clamp();
  }
};

/// The ELBO could not be evaluated because a PDE solve failed.
class FitDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Unit-level terms

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) s += (p[k] = std::exp(logits[k] - m));
  for (double& v : p) v /= s;
  return p;
}

inline std::vector<double> CategoricalPosterior::probs() const { return softmax(logits); }

struct ReparamSample {
  double z_tilde;
  double dz_dmu;
  double dz_dlogvar;
};

/// z~ = exp(mu + exp(log_var / 2) * noise) with its derivatives; `noise`
/// is a standard-normal draw owned by the caller.
inline ReparamSample sample_reparameterized(const LogNormalPosterior& post, double noise) {
  const double sd = std::exp(0.5 * post.log_var);
  const double z = std::exp(post.mu + sd * noise);
  return {z, z, z * noise * sd * 0.5};
}

struct KlGradient {
  double d_mu;
  double d_log_var;
};

/// KL(Normal(mu, exp(log_var)) || prior). Equal to the KL between the
/// corresponding log-normals.
inline double kl_normal(double mu, double log_var, const NormalPrior& p) {
  const double var_q = std::exp(log_var);
  const double d = mu - p.mean;
  return 0.5 * (std::log(p.variance) - log_var + (var_q + d * d) / p.variance - 1.0);
}

inline double kl_normal(const LogNormalPosterior& q, const NormalPrior& p) {
  return kl_normal(q.mu, q.log_var, p);
}

inline KlGradient kl_normal_gradient(const LogNormalPosterior& q, const NormalPrior& p) {
  return {(q.mu - p.mean) / p.variance, 0.5 * (q.variance() / p.variance - 1.0)};
}

/// KL(probs || uniform over K) with 0 log 0 = 0.
inline double kl_categorical_uniform(std::span<const double> probs) {
  const double log_k = std::log(double(probs.size()));
  double kl = 0.0;
  for (double p : probs)
    if (p > 0.0) kl += p * (std::log(std::max(p, kProbFloor)) + log_k);
  return kl;
}

/// d KL(softmax(logits) || uniform) / d logits.
inline std::vector<double> kl_categorical_uniform_logit_gradient(std::span<const double> probs) {
  double mean_log = 0.0;
  for (double p : probs) mean_log += p * std::log(std::max(p, kProbFloor));
  std::vector<double> g(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k)
    g[k] = probs[k] * (std::log(std::max(probs[k], kProbFloor)) - mean_log);
  return g;
}

/// Number of scalar observations compared by gaussian_nll.
inline std::size_t observation_count(std::span<const ScalarField> frames) {
  std::size_t d = 0;
  for (const auto& f : frames) d += f.size();
  return d;
}

inline double squared_residual(std::span<const ScalarField> x, std::span<const ScalarField> x_hat) {
  if (x.size() != x_hat.size()) throw std::invalid_argument("gaussian_nll: frame count mismatch");
  double ss = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (!x[t].same_shape(x_hat[t])) throw std::invalid_argument("gaussian_nll: shape mismatch");
    auto a = x[t].values();
    auto b = x_hat[t].values();
    for (std::size_t n = 0; n < a.size(); ++n) ss += (a[n] - b[n]) * (a[n] - b[n]);
  }
  return ss;
}

/// Isotropic Gaussian negative log-likelihood of `x` given `x_hat`:
/// 0.5 * (|x - x_hat|^2 / sigma2 + D log(2 pi sigma2)). The caller decides
/// which frames take part; the ELBO leaves out the supplied initial frame.
inline double gaussian_nll(std::span<const ScalarField> x, std::span<const ScalarField> x_hat,
                           double sigma2) {
  const double ss = squared_residual(x, x_hat);
  const double d = double(observation_count(x));
  return 0.5 * (ss / sigma2 + d * std::log(2.0 * std::numbers::pi * sigma2));
}

struct MixtureRecon {
  double value;
  std::vector<double> responsibilities;  // d value / d nll_k
  std::vector<double> d_logits;          // through softmax, c = softmax(logits)
};

/// -log sum_k c_k exp(-nll_k), shifted by the smallest nll.
inline MixtureRecon mixture_recon_loss(std::span<const double> c, std::span<const double> nlls) {
  if (c.size() != nlls.size() || c.empty())
    throw std::invalid_argument("mixture_recon_loss: size mismatch");
  const std::size_t k = c.size();
  const double m = *std::min_element(nlls.begin(), nlls.end());
  std::vector<double> w(k);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += (w[i] = c[i] * std::exp(m - nlls[i]));
  MixtureRecon out;
  if (s > 0.0) {
    out.value = m - std::log(s);
    for (double& v : w) v /= s;
  } else {
    // Every minimising component has zero weight; fall back to floored
    // log-weights in the log domain.
    std::vector<double> a(k);
    for (std::size_t i = 0; i < k; ++i) a[i] = std::log(std::max(c[i], kProbFloor)) - nlls[i];
    const double amax = *std::max_element(a.begin(), a.end());
    double t = 0.0;
    for (std::size_t i = 0; i < k; ++i) t += (w[i] = std::exp(a[i] - amax));
    out.value = -(amax + std::log(t));
    for (double& v : w) v /= t;
  }
  out.responsibilities = w;
  out.d_logits.resize(k);
  for (std::size_t i = 0; i < k; ++i) out.d_logits[i] = c[i] - w[i];
  return out;
}

// ---------------------------------------------------------------------------
// Full objective

enum class ReconMode {
  Mixture,      // -log sum_k c_k exp(-nll_k)
  JensenBound,  // sum_k c_k nll_k, an upper bound on the mixture term
};

struct ElboOptions {
  SolverOptions solver{};
  ReconMode mode = ReconMode::Mixture;
  bool with_gradient = true;
  bool freeze_logits = false;
};

struct ElboResult {
  double loss = 0.0;       // negative ELBO
  double objective = 0.0;  // value the gradient belongs to (loss unless JensenBound)
  double recon = 0.0;
  double kl_z = 0.0;
  double kl_c = 0.0;
  std::vector<double> nlls;
  std::vector<double> kl_per_component;
  std::vector<double> probs;
  std::vector<double> responsibilities;
  VariationalState gradient;  // d objective / d state (when requested)
};

namespace detail {

inline std::vector<double> relative_times(std::span<const double> times) {
  std::vector<double> rel(times.begin(), times.end());
  for (double& t : rel) t -= times.front();
  return rel;
}

inline void check_sample(const SampleRecord& sample) {
  if (sample.frames.size() < 2)
    throw std::invalid_argument("sample '" + sample.id + "' needs at least two frames");
  if (sample.frames.size() != sample.times.size())
    throw std::invalid_argument("sample '" + sample.id + "' has mismatched frames/times");
}

}  // namespace detail

/// Coefficients implied by posterior draws (noise_x, noise_r).
inline PdeParams draw_params(const ComponentSpec& spec, const ComponentPosterior& post,
                             double noise_x, double noise_r) {
  PdeParams p;
  p.kind = spec.kind;
  p.z_x = sample_reparameterized(post.z_x, noise_x).z_tilde;
  p.z_r = spec.has_reaction() ? sample_reparameterized(post.z_r, noise_r).z_tilde : 0.0;
  return p;
}

/// Single-draw Monte-Carlo estimate of the negative ELBO and its gradient.
/// `noise` holds one standard-normal draw per (component, coefficient):
/// noise[2k] for z_x and noise[2k + 1] for z_r. The decoder starts from
/// frames[0]; frames[1..] enter the likelihood.
inline ElboResult elbo(const SampleRecord& sample, std::span<const ComponentSpec> components,
                       const VariationalState& state, std::span<const double> noise,
                       const ElboOptions& opt = {}) {
  detail::check_sample(sample);
  const std::size_t k = components.size();
  if (state.num_components() != k || state.weights.logits.size() != k)
    throw std::invalid_argument("elbo: state does not match component list");
  if (noise.size() != 2 * k) throw std::invalid_argument("elbo: need two noise draws per component");

  const auto times = detail::relative_times(sample.times);
  const ScalarField& x0 = sample.frames.front();
  std::span<const ScalarField> observed(sample.frames.data() + 1, sample.frames.size() - 1);
  const double sigma2 = state.noise.sigma2();
  const double d = double(observation_count(observed));

  ElboResult res;
  res.probs = state.weights.probs();
  res.nlls.resize(k);
  res.kl_per_component.resize(k);
  if (opt.with_gradient) res.gradient = VariationalState::zeros_like(state);

  // Per-component d nll / d (mu, log_var) and d nll / d log sigma^2.
  struct Local {
    double dmu_x = 0, dlv_x = 0, dmu_r = 0, dlv_r = 0, dlog_sigma2 = 0;
  };
  std::vector<Local> local(k);

  for (std::size_t c = 0; c < k; ++c) {
    const auto& spec = components[c];
    const auto& post = state.components[c];
    const ReparamSample sx = sample_reparameterized(post.z_x, noise[2 * c]);
    const ReparamSample sr = sample_reparameterized(post.z_r, noise[2 * c + 1]);
    PdeParams params{sx.z_tilde, spec.has_reaction() ? sr.z_tilde : 0.0, spec.kind};

    try {
      if (opt.with_gradient) {
        SensitivityBundle b = integrate_with_sensitivities(params, x0, times, opt.solver);
        double ss = 0.0, gx = 0.0, gr = 0.0;
        for (std::size_t t = 1; t < times.size(); ++t) {
          auto x = sample.frames[t].values();
          auto xh = b.trajectory.frames[t].values();
          auto dx = b.d_dzx[t].values();
          auto dr = b.d_dzr[t].values();
          for (std::size_t n = 0; n < x.size(); ++n) {
            const double r = xh[n] - x[n];
            ss += r * r;
            gx += r * dx[n];
            gr += r * dr[n];
          }
        }
        res.nlls[c] = 0.5 * (ss / sigma2 + d * std::log(2.0 * std::numbers::pi * sigma2));
        gx /= sigma2;
        gr /= sigma2;
        local[c].dmu_x = gx * sx.dz_dmu;
        local[c].dlv_x = gx * sx.dz_dlogvar;
        if (spec.has_reaction()) {
          local[c].dmu_r = gr * sr.dz_dmu;
          local[c].dlv_r = gr * sr.dz_dlogvar;
        }
        local[c].dlog_sigma2 = 0.5 * (d - ss / sigma2);
      } else {
        Trajectory traj = integrate(params, x0, times, opt.solver);
        std::span<const ScalarField> pred(traj.frames.data() + 1, traj.frames.size() - 1);
        res.nlls[c] = gaussian_nll(observed, pred, sigma2);
      }
    } catch (const SolverError& e) {
      throw FitDiverged("component " + std::to_string(c) + " (" +
                        std::string(to_string(spec.kind)) + "): " + e.what());
    }

    double kl = kl_normal(post.z_x, spec.prior.z_x);
    if (spec.has_reaction()) kl += kl_normal(post.z_r, spec.prior.z_r);
    res.kl_per_component[c] = kl;
  }

  // Reconstruction.
  MixtureRecon mr = mixture_recon_loss(res.probs, res.nlls);
  res.recon = mr.value;
  res.responsibilities = mr.responsibilities;
  std::vector<double> weight_on_nll = mr.responsibilities;
  std::vector<double> d_logits = mr.d_logits;
  double objective_recon = mr.value;
  if (opt.mode == ReconMode::JensenBound) {
    double mean = 0.0;
    for (std::size_t c = 0; c < k; ++c) mean += res.probs[c] * res.nlls[c];
    objective_recon = mean;
    weight_on_nll = res.probs;
    for (std::size_t c = 0; c < k; ++c) d_logits[c] = res.probs[c] * (res.nlls[c] - mean);
  }

  // Mixture-weighted KL over coefficients.
  double weighted_kl = 0.0;
  for (std::size_t c = 0; c < k; ++c) weighted_kl += res.probs[c] * res.kl_per_component[c];
  res.kl_z = weighted_kl;
  res.kl_c = kl_categorical_uniform(res.probs);
  res.loss = res.recon + res.kl_z + res.kl_c;
  res.objective = objective_recon + res.kl_z + res.kl_c;

  if (!opt.with_gradient) return res;

  auto& g = res.gradient;
  const auto dkl_c = kl_categorical_uniform_logit_gradient(res.probs);
  for (std::size_t c = 0; c < k; ++c) {
    const auto& spec = components[c];
    const auto& post = state.components[c];
    const double w = weight_on_nll[c];
    const double pc = res.probs[c];
    const KlGradient kx = kl_normal_gradient(post.z_x, spec.prior.z_x);
    g.components[c].z_x.mu = w * local[c].dmu_x + pc * kx.d_mu;
    g.components[c].z_x.log_var = w * local[c].dlv_x + pc * kx.d_log_var;
    if (spec.has_reaction()) {
      const KlGradient kr = kl_normal_gradient(post.z_r, spec.prior.z_r);
      g.components[c].z_r.mu = w * local[c].dmu_r + pc * kr.d_mu;
      g.components[c].z_r.log_var = w * local[c].dlv_r + pc * kr.d_log_var;
    }
    g.noise.log_sigma2 += w * local[c].dlog_sigma2;
    if (!opt.freeze_logits)
      g.weights.logits[c] =
          d_logits[c] + pc * (res.kl_per_component[c] - weighted_kl) + dkl_c[c];
  }
  return res;
}

}  // namespace pdemix
