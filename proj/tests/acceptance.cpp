// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [criterion ...]   (default: all of 1..9)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pdemix/commands.hpp"
#include "pdemix/pdemix.hpp"
#include "tmpdir.hpp"

using namespace pdemix;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Every regular file under `a` has a byte-identical twin under `b`, and vice versa.
bool trees_identical(const fs::path& a, const fs::path& b) {
  std::set<fs::path> seen;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    seen.insert(rel);
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) return false;
  }
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file() && !seen.count(fs::relative(e.path(), b))) return false;
  return !seen.empty();
}

// --- 1 --------------------------------------------------------------------

Outcome solver_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (double z_x : {0.0, 0.37, 1.0})
    for (double u0v : {0.05, 0.2, 0.8}) {
      const std::vector<double> times{0.0, 1.0, 10.0, 24.0};
      Trajectory tr = integrate({z_x, 0.1, ReactionKind::Logistic0}, ScalarField(16, 16, u0v), times);
      for (std::size_t t = 1; t < times.size(); ++t)
        for (double v : tr.frames[t].values())
          worst = std::max(worst, std::abs(v - oracle::logistic(u0v, 0.1, times[t])));
    }
  const double secs = seconds_since(t0);
  return {worst <= 1e-5 && secs < 1.0, fmt("max abs err %.2e (tol 1e-05), %.3f s (limit 1 s)", worst, secs)};
}

// --- 2 --------------------------------------------------------------------

Outcome conservation() {
  double worst = 0.0;
  for (unsigned seed = 0; seed < 5; ++seed) {
    ScalarField u0 = oracle::random_field(32, 32, seed);
    Trajectory tr = integrate({0.1 + 0.2 * seed, 0.0, ReactionKind::None}, u0,
                              std::vector<double>{0.0, 1.0, 6.0, 12.0, 24.0, 48.0});
    for (const auto& f : tr.frames) worst = std::max(worst, std::abs(f.sum() - u0.sum()) / u0.sum());
  }
  return {worst <= 1e-8, fmt("max relative mass drift %.2e (tol 1e-08)", worst)};
}

// --- 3 --------------------------------------------------------------------

double sensitivity_error(ReactionKind kind) {
  const ScalarField u0 = oracle::bump(10, 10, 0.85, 2.2);
  const std::vector<double> times{12.0, 24.0};
  const SolverOptions tight{1e-11, 1e-13};
  const double z_x = 0.3, z_r = kind == ReactionKind::None ? 0.0 : 0.08;
  SensitivityBundle sb = integrate_with_sensitivities({z_x, z_r, kind}, u0, times, tight);
  double worst = 0.0;
  for (bool wrt_x : {true, false}) {
    if (!wrt_x && kind == ReactionKind::None) continue;
    const double h = 1e-4 * (wrt_x ? z_x : z_r);
    PdeParams p{z_x, z_r, kind}, m{z_x, z_r, kind};
    (wrt_x ? p.z_x : p.z_r) += h;
    (wrt_x ? m.z_x : m.z_r) -= h;
    Trajectory a = integrate(p, u0, times, tight), b = integrate(m, u0, times, tight);
    for (std::size_t t = 0; t < times.size(); ++t) {
      const auto& s = wrt_x ? sb.d_dzx[t] : sb.d_dzr[t];
      double num = 0.0, den = 0.0;
      for (std::size_t n = 0; n < s.size(); ++n) {
        const double fd = (a.frames[t].values()[n] - b.frames[t].values()[n]) / (2 * h);
        num = std::max(num, std::abs(s.values()[n] - fd));
        den = std::max(den, std::abs(fd));
      }
      worst = std::max(worst, num / den);
    }
  }
  return worst;
}

double elbo_gradient_error(ReconMode mode) {
  const ScalarField u0 = oracle::bump(8, 8, 0.7, 1.6);
  const std::vector<double> times{0.0, 6.0, 12.0};
  SampleRecord s;
  s.id = "toy";
  s.frames = integrate({0.2, 0.09, ReactionKind::Logistic0}, u0, times).frames;
  s.times = times;
  for (std::size_t t = 1; t < 3; ++t)
    for (std::size_t n = 0; n < s.frames[t].size(); ++n) s.frames[t].values()[n] += 0.01 * std::sin(1.7 * n + t);
  const std::vector<ComponentSpec> comps{{ReactionKind::Logistic0, {}}, {ReactionKind::Logistic2, {}}};
  VariationalState st = VariationalState::at_prior(comps, std::log(0.02));
  st.components[0].z_x = {std::log(0.18), -2.0};
  st.components[0].z_r = {std::log(0.1), -1.5};
  st.components[1].z_x = {std::log(0.3), -1.0};
  st.components[1].z_r = {std::log(0.06), -2.5};
  st.weights.logits = {0.4, -0.3};
  const std::vector<double> noise{0.3, -0.8, 1.1, 0.5};
  ElboOptions opt;
  opt.mode = mode;
  opt.solver = {1e-11, 1e-13};
  const auto grad = elbo(s, comps, st, noise, opt).gradient.flatten();
  opt.with_gradient = false;
  const auto x = st.flatten();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = 1e-5;
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    VariationalState sp = st, sm = st;
    sp.unflatten(xp);
    sm.unflatten(xm);
    const double fd = (elbo(s, comps, sp, noise, opt).objective - elbo(s, comps, sm, noise, opt).objective) / (2 * h);
    worst = std::max(worst, std::abs(grad[i] - fd) / std::max(std::abs(fd), 1e-3));
  }
  return worst;
}

Outcome gradient_fidelity() {
  double sens = 0.0;
  for (auto k : kAllReactionKinds) sens = std::max(sens, sensitivity_error(k));
  const double em = elbo_gradient_error(ReconMode::Mixture);
  const double eb = elbo_gradient_error(ReconMode::JensenBound);
  return {sens <= 1e-4 && em <= 1e-3 && eb <= 1e-3,
          fmt("sensitivity rel err %.2e (tol 1e-04); ELBO grad rel err %.2e mixture, %.2e bound (tol 1e-03)", sens,
              em, eb)};
}

// --- 4 --------------------------------------------------------------------

Outcome closed_forms() {
  const double kl = kl_normal(1.0, 0.0, {0.0, 1.0});
  const double kc = kl_categorical_uniform(std::vector<double>{1.0, 0.0, 0.0});
  std::vector<ScalarField> x{ScalarField(8, 8, 0.4), ScalarField(8, 8, 0.7)};
  const double nll = gaussian_nll(x, x, 1.0 / (2.0 * std::numbers::pi));
  const double e1 = std::abs(kl - 0.5), e2 = std::abs(kc - std::log(3.0)), e3 = std::abs(nll);
  return {e1 <= 1e-12 && e2 <= 1e-12 && e3 <= 1e-12,
          fmt("|KL-0.5| %.1e, |KLcat-ln3| %.1e, |NLL| %.1e (tol 1e-12)", e1, e2, e3)};
}

// --- 5, 6 -----------------------------------------------------------------

struct RecoveryRun {
  AssignmentEvaluation eval;
  double seconds = 0.0;
  std::size_t failed = 0;
};

const RecoveryRun& recovery_run(std::size_t workers) {
  static RecoveryRun run = [&] {
    GenConfig g;
    g.rows = g.cols = 16;
    g.n_train = g.n_val = 0;
    g.n_test = 120;
    g.obs_times = {0.0, 12.0, 24.0};
    g.z_r_range = {0.03, 0.1};
    g.seed = 7;
    const auto t0 = Clock::now();
    const auto samples = generate_dataset(g, workers).test.samples;
    const auto reports = fit_samples(samples, make_components(g.components), FitConfig{}, workers);
    RecoveryRun r;
    for (const auto& rep : reports) r.failed += !rep.has_fit();
    r.eval = evaluate_assignments(samples, reports, g.components.size());
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

std::string confusion_text(const AssignmentEvaluation& ev) {
  std::string s = "[";
  for (std::size_t i = 0; i < ev.confusion.size(); ++i) {
    s += i ? "; " : "";
    for (std::size_t j = 0; j < ev.confusion[i].size(); ++j) s += (j ? " " : "") + std::to_string(ev.confusion[i][j]);
  }
  return s + "]";
}

Outcome cluster_recovery(std::size_t workers) {
  const auto& r = recovery_run(workers);
  const bool pass = r.eval.accuracy >= 0.70 && r.eval.diagonally_dominant() && r.eval.evaluated == 120;
  return {pass, fmt("accuracy %.3f (floor 0.70), confusion %s, diagonally dominant %s, %zu failed, %.0f s on %zu workers",
                    r.eval.accuracy, confusion_text(r.eval).c_str(), r.eval.diagonally_dominant() ? "yes" : "no",
                    r.failed, r.seconds, workers)};
}

Outcome parameter_recovery(std::size_t workers) {
  const auto& r = recovery_run(workers);
  std::vector<double> ex, er;
  for (const auto& row : r.eval.residuals)
    if (row.correct()) {
      ex.push_back(row.z_x_rel_error());
      er.push_back(row.z_r_rel_error());
    }
  const double mx = median(ex), mr = median(er);
  return {!er.empty() && mr <= 0.20 && mx <= 0.35,
          fmt("median rel err z_r %.3f (limit 0.20), z_x %.3f (limit 0.35) over %zu correct samples", mr, mx,
              er.size())};
}

// --- 7 --------------------------------------------------------------------

Outcome evidence_ordering(std::size_t workers) {
  GenConfig g;
  g.rows = g.cols = 12;
  g.n_train = g.n_val = 0;
  g.n_test = 8;
  g.seed = 3;
  g.components = {ReactionKind::None, ReactionKind::Logistic0};
  g.blob.center_margin = 4.0;
  const auto samples = generate_dataset(g, workers).test.samples;
  const auto comps = make_components(g.components);
  FitConfig cfg;
  cfg.max_iters = 1000;
  std::size_t first = 0, within = 0;
  const std::size_t seeds = 10;
  std::string worst;
  double worst_margin = INFINITY;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    cfg.seed = seed;
    const auto full = model_evidence(samples, comps, std::vector<std::size_t>{0, 1}, cfg, workers);
    bool ok = true, top = true;
    for (std::size_t single : {0, 1}) {
      const auto one = model_evidence(samples, comps, std::vector<std::size_t>{single}, cfg, workers);
      const double se = std::hypot(full.std_error, one.std_error);
      const double margin = (full.evidence - one.evidence) / std::max(se, 1e-12);
      ok = ok && full.evidence >= one.evidence - 3.0 * se;
      top = top && full.evidence > one.evidence;
      if (margin < worst_margin) {
        worst_margin = margin;
        worst = fmt("seed %llu vs {%zu}: %.1f vs %.1f", (unsigned long long)seed, single, full.evidence, one.evidence);
      }
    }
    within += ok;
    first += top;
  }
  return {within == seeds && first >= 8,
          fmt("full >= singleton - 3 SE in %zu/%zu seeds, full ranks first in %zu/%zu (need 8); tightest %s", within,
              seeds, first, seeds, worst.c_str())};
}

// --- 8 --------------------------------------------------------------------

struct ProbeStats {
  std::size_t flagged = 0, probed = 0, errors = 0;
};

ProbeStats probe(ReactionKind true_kind, ReactionKind wrong_kind, Range z_r, std::size_t n, std::size_t workers) {
  GenConfig g;
  g.rows = g.cols = 16;
  g.components = {true_kind};
  g.z_r_range = z_r;
  g.blob.amplitude = {0.45, 0.55};
  g.blob.sigma = {8.0, 12.0};
  g.obs_noise_std = 0.02;
  g.seed = 11;
  std::vector<SampleRecord> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = sample_rng(g.seed, i);
    samples[i] = generate_sample(rng, 0, g, "probe-" + std::to_string(i));
  }
  const ComponentSpec t{true_kind, {}}, w{wrong_kind, {}};
  std::vector<int> flags(n, 0), errors(n, 0);
  parallel_for(n, workers, [&](std::size_t i) {
    try {
      flags[i] = degeneracy_probe(samples[i], t, w, FitConfig{}).flag;
    } catch (const std::exception&) {
      errors[i] = 1;
    }
  });
  ProbeStats s;
  s.probed = n;
  for (std::size_t i = 0; i < n; ++i) {
    s.flagged += flags[i];
    s.errors += errors[i];
  }
  return s;
}

Outcome degeneracy(std::size_t workers) {
  const std::size_t n = 20;
  const ProbeStats deg = probe(ReactionKind::Logistic1, ReactionKind::Logistic2, {0.01, 0.1}, n, workers);
  const ProbeStats ctl = probe(ReactionKind::Logistic0, ReactionKind::None, {0.07, 0.1}, n, workers);
  const double rate = double(deg.flagged) / double(n);
  return {rate >= 0.20 && ctl.flagged == 0 && deg.errors == 0 && ctl.errors == 0,
          fmt("Logistic1 vs Logistic2 flagged %zu/%zu (need >= 20%%); Logistic0 vs None flagged %zu/%zu (need 0); "
              "%zu probe errors",
              deg.flagged, n, ctl.flagged, n, deg.errors + ctl.errors)};
}

// --- 9 --------------------------------------------------------------------

Outcome determinism(std::size_t workers) {
  TempDir tmp("acceptance");
  RunConfig cfg = run_config_from_json(json::object());
  cfg.generate.rows = cfg.generate.cols = 10;
  cfg.generate.n_train = 3;
  cfg.generate.n_val = 2;
  cfg.generate.n_test = 6;
  cfg.generate.blob.center_margin = 2.0;
  cfg.fit.max_iters = 60;
  cfg.fit.warmup_iters = 20;
  cfg.fit.eval_mc_samples = 4;
  std::ostringstream log;

  cli::cmd_generate(cfg, tmp / "gen1", 1, log);
  cli::cmd_generate(cfg, tmp / "gen2", workers, log);
  const bool regen = trees_identical(tmp / "gen1", tmp / "gen2");

  cli::cmd_fit(cfg, tmp / "gen1" / "test", tmp / "fit1", 1, log);
  cli::cmd_fit(cfg, tmp / "gen1" / "test", tmp / "fit2", workers, log);
  const bool refit = trees_identical(tmp / "fit1", tmp / "fit2");

  const DatasetSplits splits = generate_dataset(cfg.generate);
  bool round_trip = true;
  for (const Dataset* d : {&splits.train, &splits.val, &splits.test}) {
    const Dataset back = read_dataset(tmp / "gen1" / to_string(d->split));
    round_trip = round_trip && back.samples == d->samples && back.normalization == d->normalization;
  }

  // Truncate one sample and break another's frame count.
  fs::copy(tmp / "gen1" / "test", tmp / "bad");
  fs::resize_file(tmp / "bad" / "test-00001.f32", fs::file_size(tmp / "bad" / "test-00001.f32") - 7);
  fs::resize_file(tmp / "bad" / "test-00004.f32", 100 * 4);
  bool isolated = false;
  try {
    const auto summary = cli::cmd_fit(cfg, tmp / "bad", tmp / "fit_bad", workers, log);
    const auto r1 = fit_report_from_json(json::parse(slurp(tmp / "fit_bad" / "reports" / "test-00001.json")));
    const auto r0 = slurp(tmp / "fit_bad" / "reports" / "test-00000.json");
    isolated = summary.samples == 6 && summary.failed == 2 && r1.status == FitStatus::Failed &&
               r0 == slurp(tmp / "fit1" / "reports" / "test-00000.json");
  } catch (const std::exception& e) {
    log << "corrupt-input run aborted: " << e.what() << '\n';
  }
  return {regen && refit && round_trip && isolated,
          fmt("regenerate identical %s, refit identical %s, round trip bit-exact %s, corrupt inputs isolated %s",
              regen ? "yes" : "no", refit ? "yes" : "no", round_trip ? "yes" : "no", isolated ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.empty())
    for (int c = 1; c <= 9; ++c) wanted.insert(c);
  const std::size_t workers = resolve_workers();

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"solver matches closed-form logistic", solver_oracle},
      {"pure diffusion conserves mass", conservation},
      {"gradients match finite differences", gradient_fidelity},
      {"closed-form unit values", closed_forms},
      {"cluster recovery", [&] { return cluster_recovery(workers); }},
      {"parameter recovery", [&] { return parameter_recovery(workers); }},
      {"evidence ordering", [&] { return evidence_ordering(workers); }},
      {"degeneracy probe", [&] { return degeneracy(workers); }},
      {"determinism and formats", [&] { return determinism(workers); }},
  };

  bool all = true;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    if (!wanted.count(int(c + 1))) continue;
    Outcome o;
    try {
      o = criteria[c].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c + 1 << " (" << criteria[c].first
              << "): " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
