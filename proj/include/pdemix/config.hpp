#pragma once

// Run configuration, report serialization and CSV helpers shared by the CLI
// and the tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pdemix/engine.hpp"
#include "pdemix/json_support.hpp"

namespace pdemix {

// --- FitConfig ------------------------------------------------------------

inline const char* to_string(ReconMode m) {
  return m == ReconMode::Mixture ? "mixture" : "bound";
}

inline ReconMode recon_mode_from_string(const std::string& s, const std::string& where) {
  if (s == "mixture") return ReconMode::Mixture;
  if (s == "bound") return ReconMode::JensenBound;
  throw ConfigError(where + ": recon_mode must be \"mixture\" or \"bound\", got '" + s + "'");
}

/// Non-finite values serialize as null.
inline json number_or_null(double v) { return std::isfinite(v) ? json(round9(v)) : json(nullptr); }

inline double number_or(const json& j, double null_value) {
  return j.is_null() ? null_value : j.get<double>();
}

inline json to_json(const FitConfig& c) {
  return json{
      {"max_iters", c.max_iters},
      {"learning_rate", c.learning_rate},
      {"final_learning_rate", c.final_learning_rate},
      {"adam_betas", json::array({c.beta1, c.beta2})},
      {"eval_mc_samples", c.eval_mc_samples},
      {"seed", c.seed},
      {"convergence", {{"window", c.convergence_window}, {"rel_tol", c.convergence_rel_tol}}},
      {"warmup_iters", c.warmup_iters},
      {"recon_mode", to_string(c.recon_mode)},
      {"init_log_sigma2", c.init_log_sigma2},
      {"init_log_var", number_or_null(c.init_log_var)},
      {"max_consecutive_failures", c.max_consecutive_failures},
      {"solver", {{"rtol", c.solver.rtol}, {"atol", c.solver.atol}, {"max_steps", c.solver.max_steps}}},
  };
}

inline FitConfig fit_config_from_json(const json& j, const std::string& where = "fit") {
  require_known_keys(j,
                     {"max_iters", "learning_rate", "final_learning_rate", "adam_betas",
                      "eval_mc_samples", "seed", "convergence", "warmup_iters", "recon_mode",
                      "init_log_sigma2", "init_log_var", "max_consecutive_failures", "solver"},
                     where);
  FitConfig c;
  c.max_iters = get_or<std::size_t>(j, "max_iters", c.max_iters, where);
  c.learning_rate = get_or<double>(j, "learning_rate", c.learning_rate, where);
  c.final_learning_rate = get_or<double>(j, "final_learning_rate", c.final_learning_rate, where);
  if (j.contains("adam_betas")) {
    const auto& b = j.at("adam_betas");
    if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number())
      throw ConfigError(where + ".adam_betas: expected [beta1, beta2]");
    c.beta1 = b[0].get<double>();
    c.beta2 = b[1].get<double>();
  }
  c.eval_mc_samples = get_or<std::size_t>(j, "eval_mc_samples", c.eval_mc_samples, where);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, where);
  if (j.contains("convergence")) {
    const auto& cv = j.at("convergence");
    const std::string cw = where + ".convergence";
    require_known_keys(cv, {"window", "rel_tol"}, cw);
    c.convergence_window = get_or<std::size_t>(cv, "window", c.convergence_window, cw);
    c.convergence_rel_tol = get_or<double>(cv, "rel_tol", c.convergence_rel_tol, cw);
  }
  c.warmup_iters = get_or<std::size_t>(j, "warmup_iters", c.warmup_iters, where);
  if (j.contains("recon_mode"))
    c.recon_mode = recon_mode_from_string(get_or<std::string>(j, "recon_mode", "", where),
                                          where + ".recon_mode");
  c.init_log_sigma2 = get_or<double>(j, "init_log_sigma2", c.init_log_sigma2, where);
  if (j.contains("init_log_var")) {
    const auto& v = j.at("init_log_var");
    if (!v.is_null() && !v.is_number()) throw ConfigError(where + ".init_log_var: expected a number or null");
    c.init_log_var = number_or(v, std::numeric_limits<double>::quiet_NaN());
  }
  c.max_consecutive_failures =
      get_or<std::size_t>(j, "max_consecutive_failures", c.max_consecutive_failures, where);
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    const std::string sw = where + ".solver";
    require_known_keys(s, {"rtol", "atol", "max_steps"}, sw);
    c.solver.rtol = get_or<double>(s, "rtol", c.solver.rtol, sw);
    c.solver.atol = get_or<double>(s, "atol", c.solver.atol, sw);
    c.solver.max_steps = get_or<std::size_t>(s, "max_steps", c.solver.max_steps, sw);
    if (!(c.solver.rtol > 0.0 && c.solver.atol > 0.0))
      throw ConfigError(sw + ": tolerances must be positive");
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

// --- priors ---------------------------------------------------------------

inline json to_json(const PriorSpec& p) {
  return {{"z_x", {{"mean", p.z_x.mean}, {"variance", p.z_x.variance}}},
          {"z_r", {{"mean", p.z_r.mean}, {"variance", p.z_r.variance}}}};
}

/// Priors are Gaussian on log z: {"z_x": {"mean", "variance"}, "z_r": {...}}.
inline PriorSpec prior_from_json(const json& j, const std::string& where = "prior") {
  require_known_keys(j, {"z_x", "z_r"}, where);
  PriorSpec p;
  auto one = [&](const char* key, NormalPrior& out) {
    if (!j.contains(key)) return;
    const std::string w = where + "." + key;
    const auto& e = j.at(key);
    require_known_keys(e, {"mean", "variance"}, w);
    out.mean = get_or<double>(e, "mean", out.mean, w);
    out.variance = get_or<double>(e, "variance", out.variance, w);
    if (!(out.variance > 0.0) || !std::isfinite(out.mean))
      throw ConfigError(w + ": need a finite mean and a positive variance");
  };
  one("z_x", p.z_x);
  one("z_r", p.z_r);
  return p;
}

// --- RunConfig ------------------------------------------------------------

struct RunConfig {
  GenConfig generate{};
  FitConfig fit{};
  std::vector<ReactionKind> components;  // defaults to generate.components
  PriorSpec prior{};
  std::string data_dir;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;  // evidence seeds; defaults to {fit.seed}
  std::vector<std::vector<std::size_t>> evidence_subsets;  // empty: every non-empty subset
  std::vector<double> predict_times;
  std::size_t predict_draws = kPredictiveDraws;
  std::optional<std::size_t> degeneracy_true, degeneracy_wrong;

  std::vector<ComponentSpec> component_specs() const { return make_components(components, prior); }

  /// Seeds for multi-seed commands.
  std::vector<std::uint64_t> seed_list() const {
    return seeds.empty() ? std::vector<std::uint64_t>{fit.seed} : seeds;
  }
};

inline json subset_to_json(const std::vector<std::size_t>& s) { return json(s); }

inline std::vector<std::size_t> subset_from_json(const json& j, std::size_t num_components,
                                                 const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": subset must be a non-empty index array");
  std::vector<std::size_t> out;
  for (const auto& e : j) {
    if (!e.is_number_unsigned()) throw ConfigError(where + ": subset entries must be component indices");
    const auto v = e.get<std::size_t>();
    if (v >= num_components)
      throw ConfigError(where + ": component index " + std::to_string(v) + " out of range");
    for (auto seen : out)
      if (seen == v) throw ConfigError(where + ": duplicate component index " + std::to_string(v));
    out.push_back(v);
  }
  return out;
}

inline json to_json(const RunConfig& c) {
  json subsets = json::array();
  for (const auto& s : c.evidence_subsets) subsets.push_back(subset_to_json(s));
  json degeneracy = json::object();
  if (c.degeneracy_true) degeneracy["true"] = *c.degeneracy_true;
  if (c.degeneracy_wrong) degeneracy["wrong"] = *c.degeneracy_wrong;
  return json{
      {"generate", to_json(c.generate)},
      {"fit", to_json(c.fit)},
      {"components", kinds_to_json(c.components)},
      {"prior", to_json(c.prior)},
      {"paths", {{"data", c.data_dir}, {"out", c.out_dir}}},
      {"seeds", c.seeds},
      {"evidence", {{"subsets", subsets}}},
      {"predict", {{"times", c.predict_times}, {"draws", c.predict_draws}}},
      {"degeneracy", degeneracy},
  };
}

inline RunConfig run_config_from_json(const json& j) {
  require_known_keys(j,
                     {"generate", "fit", "components", "prior", "paths", "seeds", "evidence",
                      "predict", "degeneracy"},
                     "config");
  RunConfig c;
  if (j.contains("generate")) c.generate = gen_config_from_json(j.at("generate"), "config.generate");
  if (j.contains("fit")) c.fit = fit_config_from_json(j.at("fit"), "config.fit");
  c.components = j.contains("components") ? kinds_from_json(j.at("components"), "config.components")
                                          : c.generate.components;
  if (c.components.empty()) throw ConfigError("config.components: must not be empty");
  if (j.contains("prior")) c.prior = prior_from_json(j.at("prior"), "config.prior");
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    require_known_keys(p, {"data", "out"}, "config.paths");
    c.data_dir = get_or<std::string>(p, "data", "", "config.paths");
    c.out_dir = get_or<std::string>(p, "out", "", "config.paths");
  }
  c.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {}, "config");
  if (j.contains("evidence")) {
    const auto& e = j.at("evidence");
    require_known_keys(e, {"subsets"}, "config.evidence");
    if (e.contains("subsets")) {
      const auto& arr = e.at("subsets");
      if (!arr.is_array()) throw ConfigError("config.evidence.subsets: expected an array of subsets");
      for (const auto& s : arr)
        c.evidence_subsets.push_back(subset_from_json(s, c.components.size(), "config.evidence.subsets"));
    }
  }
  if (j.contains("predict")) {
    const auto& p = j.at("predict");
    require_known_keys(p, {"times", "draws"}, "config.predict");
    c.predict_times = get_or<std::vector<double>>(p, "times", {}, "config.predict");
    c.predict_draws = get_or<std::size_t>(p, "draws", c.predict_draws, "config.predict");
    if (c.predict_draws < 1) throw ConfigError("config.predict.draws: must be >= 1");
  }
  if (j.contains("degeneracy")) {
    const auto& d = j.at("degeneracy");
    require_known_keys(d, {"true", "wrong"}, "config.degeneracy");
    if (d.contains("true")) c.degeneracy_true = get_or<std::size_t>(d, "true", 0, "config.degeneracy");
    if (d.contains("wrong")) c.degeneracy_wrong = get_or<std::size_t>(d, "wrong", 0, "config.degeneracy");
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

/// Stable hash of the resolved configuration; paths are left out so a
/// relocated run hashes the same.
inline std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("paths");
  return hex64(fnv1a(j.dump()));
}

// --- FitReport ------------------------------------------------------------

inline json to_json(const LogNormalPosterior& p) {
  return {{"mu", round9(p.mu)}, {"log_var", round9(p.log_var)}};
}

inline LogNormalPosterior log_normal_from_json(const json& j) {
  return {j.at("mu").get<double>(), j.at("log_var").get<double>()};
}

inline json to_json(const VariationalState& s) {
  json comps = json::array();
  for (const auto& c : s.components) comps.push_back({{"z_x", to_json(c.z_x)}, {"z_r", to_json(c.z_r)}});
  return {{"components", comps},
          {"logits", round9(s.weights.logits)},
          {"log_sigma2", round9(s.noise.log_sigma2)}};
}

inline VariationalState variational_state_from_json(const json& j) {
  VariationalState s;
  for (const auto& c : j.at("components"))
    s.components.push_back({log_normal_from_json(c.at("z_x")), log_normal_from_json(c.at("z_r"))});
  s.weights.logits = j.at("logits").get<std::vector<double>>();
  s.noise.log_sigma2 = j.at("log_sigma2").get<double>();
  if (s.weights.logits.size() != s.components.size())
    throw ConfigError("posterior: logits and components disagree in length");
  return s;
}

/// Per-sample report. Keys come out sorted and floats carry 9 significant
/// digits, so reruns produce identical bytes.
inline json to_json(const FitReport& r) {
  json params = json::array();
  for (const auto& p : r.params) params.push_back({{"z_x", round9(p.z_x)}, {"z_r", round9(p.z_r)}});
  json trace = json::array();
  for (double v : r.elbo_trace) trace.push_back(number_or_null(v));
  json out{
      {"sample_id", r.sample_id},
      {"components", kinds_to_json(r.components)},
      {"status", to_string(r.status)},
      {"message", r.message},
      {"iterations", r.iterations},
      {"elbo_trace", trace},
      {"final_weights", round9(r.final_weights)},
      {"assigned", r.has_fit() ? json(r.assigned) : json(nullptr)},
      {"params", params},
      {"eval_elbo", number_or_null(r.eval_elbo)},
      {"eval_elbo_se", number_or_null(r.eval_elbo_se)},
  };
  out["posterior"] = r.has_fit() ? to_json(r.posterior) : json(nullptr);
  return out;
}

inline FitReport fit_report_from_json(const json& j) {
  try {
    FitReport r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.components = kinds_from_json(j.at("components"), "report.components");
    r.status = fit_status_from_string(j.at("status").get<std::string>());
    r.message = j.at("message").get<std::string>();
    r.iterations = j.at("iterations").get<std::size_t>();
    for (const auto& v : j.at("elbo_trace"))
      r.elbo_trace.push_back(number_or(v, -std::numeric_limits<double>::infinity()));
    r.final_weights = j.at("final_weights").get<std::vector<double>>();
    if (!j.at("assigned").is_null()) r.assigned = j.at("assigned").get<std::size_t>();
    for (const auto& p : j.at("params")) r.params.push_back({p.at("z_x").get<double>(), p.at("z_r").get<double>()});
    r.eval_elbo = number_or(j.at("eval_elbo"), -std::numeric_limits<double>::infinity());
    r.eval_elbo_se = number_or(j.at("eval_elbo_se"), 0.0);
    if (!j.at("posterior").is_null()) r.posterior = variational_state_from_json(j.at("posterior"));
    return r;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("report: ") + e.what());
  }
}

// --- CSV ------------------------------------------------------------------

/// Fixed 9-significant-digit formatting used in every table.
inline std::string fmt9(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// Quotes a free-text field when it would otherwise break the row.
inline std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
  std::string out = "\"";
  for (char ch : text) {
    if (ch == '"') out += '"';
    out += ch == '\n' || ch == '\r' ? ' ' : ch;
  }
  return out + "\"";
}

/// Writes the provenance comment and the header row.
inline void write_csv_preamble(std::ostream& out, const std::string& hash, std::uint64_t seed,
                               const std::vector<std::string>& header) {
  out << "# config_hash=" << hash << " seed=" << seed << '\n';
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
}

}  // namespace pdemix
