#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <initializer_list>
#include <set>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "pdemix/datagen.hpp"
#include "pdemix/hash.hpp"
#include "pdemix/reaction.hpp"

namespace pdemix {

using json = nlohmann::json;

/// Schema violation in a JSON document.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejects any key of `obj` outside `allowed`.
inline void require_known_keys(const json& obj, std::initializer_list<const char*> allowed,
                               const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

namespace detail {

template <class T>
struct is_vector : std::false_type {};
template <class U>
struct is_vector<std::vector<U>> : std::true_type {};

// nlohmann converts -1 or 2.5 to an unsigned type without complaint.
template <class T>
bool fits(const json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v.is_boolean();
  } else if constexpr (std::is_unsigned_v<T>) {
    return v.is_number_unsigned();
  } else if constexpr (is_vector<T>::value) {
    if (!v.is_array()) return false;
    for (const auto& e : v)
      if (!fits<typename T::value_type>(e)) return false;
    return true;
  } else {
    return true;
  }
}

}  // namespace detail

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  if (!detail::fits<T>(obj.at(key)))
    throw ConfigError(where + "." + key + ": expected " +
                      (std::is_unsigned_v<T> ? "a non-negative integer" : "a value of the right type"));
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T get_required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  return get_or<T>(obj, key, T{}, where);
}

/// Rounds to 9 significant digits so serialized reports are stable.
inline double round9(double v) {
  if (!std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline json round9(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(round9(x));
  return a;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// --- GenConfig ------------------------------------------------------------

inline json range_to_json(const Range& r) { return json::array({r.lo, r.hi}); }

inline Range range_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(where + ": expected [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline json kinds_to_json(const std::vector<ReactionKind>& kinds) {
  json a = json::array();
  for (auto k : kinds) a.push_back(std::string(to_string(k)));
  return a;
}

inline std::vector<ReactionKind> kinds_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of reaction kinds");
  std::vector<ReactionKind> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw ConfigError(where + ": reaction kinds must be strings");
    auto k = parse_reaction_kind(e.get<std::string>());
    if (!k) throw ConfigError(where + ": unknown reaction kind '" + e.get<std::string>() + "'");
    out.push_back(*k);
  }
  return out;
}

inline json to_json(const GenConfig& c) {
  return json{
      {"grid", json::array({c.rows, c.cols})},
      {"n_train", c.n_train},
      {"n_val", c.n_val},
      {"n_test", c.n_test},
      {"obs_times", c.obs_times},
      {"z_x_range", range_to_json(c.z_x_range)},
      {"z_r_range", range_to_json(c.z_r_range)},
      {"components", kinds_to_json(c.components)},
      {"seed", c.seed},
      {"blob",
       {{"amplitude_range", range_to_json(c.blob.amplitude)},
        {"sigma_range", range_to_json(c.blob.sigma)},
        {"center_margin", c.blob.center_margin}}},
      {"obs_noise_std", c.obs_noise_std},
      {"normalize", c.normalize},
  };
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline GenConfig gen_config_from_json(const json& j, const std::string& where = "generate") {
  require_known_keys(j,
                     {"grid", "n_train", "n_val", "n_test", "obs_times", "z_x_range", "z_r_range",
                      "components", "seed", "blob", "obs_noise_std",
                      "normalize"},
                     where);
  GenConfig c;
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    if (!g.is_array() || g.size() != 2) throw ConfigError(where + ".grid: expected [rows, cols]");
    c.rows = g[0].get<std::size_t>();
    c.cols = g[1].get<std::size_t>();
  }
  c.n_train = get_or<std::size_t>(j, "n_train", c.n_train, where);
  c.n_val = get_or<std::size_t>(j, "n_val", c.n_val, where);
  c.n_test = get_or<std::size_t>(j, "n_test", c.n_test, where);
  c.obs_times = get_or<std::vector<double>>(j, "obs_times", c.obs_times, where);
  if (j.contains("z_x_range")) c.z_x_range = range_from_json(j.at("z_x_range"), where + ".z_x_range");
  if (j.contains("z_r_range")) c.z_r_range = range_from_json(j.at("z_r_range"), where + ".z_r_range");
  if (j.contains("components")) c.components = kinds_from_json(j.at("components"), where + ".components");
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, where);
  if (j.contains("blob")) {
    const auto& b = j.at("blob");
    const std::string bw = where + ".blob";
    require_known_keys(b, {"amplitude_range", "sigma_range", "center_margin"}, bw);
    if (b.contains("amplitude_range"))
      c.blob.amplitude = range_from_json(b.at("amplitude_range"), bw + ".amplitude_range");
    if (b.contains("sigma_range")) c.blob.sigma = range_from_json(b.at("sigma_range"), bw + ".sigma_range");
    c.blob.center_margin = get_or<double>(b, "center_margin", c.blob.center_margin, bw);
  }
  c.obs_noise_std = get_or<double>(j, "obs_noise_std", c.obs_noise_std, where);
  c.normalize = get_or<bool>(j, "normalize", c.normalize, where);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

}  // namespace pdemix
