#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pdemix {

/// Reaction term shapes f_r(u) of the candidate KPP-type components.
enum class ReactionKind {
  Logistic0,  // u (1 - u)
  Logistic1,  // u (1 - u)^2
  Logistic2,  // u^2 (1 - u)
  None,       // pure diffusion
};

inline constexpr std::array<ReactionKind, 4> kAllReactionKinds = {
    ReactionKind::Logistic0, ReactionKind::Logistic1, ReactionKind::Logistic2,
    ReactionKind::None};

inline constexpr double reaction_shape(ReactionKind kind, double u) {
  switch (kind) {
    case ReactionKind::Logistic0: return u * (1.0 - u);
    case ReactionKind::Logistic1: return u * (1.0 - u) * (1.0 - u);
    case ReactionKind::Logistic2: return u * u * (1.0 - u);
    case ReactionKind::None: return 0.0;
  }
  return 0.0;
}

/// d f_r / du.
inline constexpr double reaction_shape_derivative(ReactionKind kind, double u) {
  switch (kind) {
    case ReactionKind::Logistic0: return 1.0 - 2.0 * u;
    case ReactionKind::Logistic1: return (1.0 - u) * (1.0 - 3.0 * u);
    case ReactionKind::Logistic2: return u * (2.0 - 3.0 * u);
    case ReactionKind::None: return 0.0;
  }
  return 0.0;
}

inline std::string_view to_string(ReactionKind kind) {
  switch (kind) {
    case ReactionKind::Logistic0: return "Logistic0";
    case ReactionKind::Logistic1: return "Logistic1";
    case ReactionKind::Logistic2: return "Logistic2";
    case ReactionKind::None: return "None";
  }
  return "?";
}

inline std::optional<ReactionKind> parse_reaction_kind(std::string_view name) {
  for (ReactionKind k : kAllReactionKinds)
    if (to_string(k) == name) return k;
  return std::nullopt;
}

inline ReactionKind reaction_kind_from_string(std::string_view name) {
  if (auto k = parse_reaction_kind(name)) return *k;
  throw std::invalid_argument("unknown reaction kind '" + std::string(name) +
                              "' (expected Logistic0, Logistic1, Logistic2 or None)");
}

}  // namespace pdemix
