#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

#include "pdemix/reaction.hpp"
#include "pdemix/scalar_field.hpp"

namespace pdemix {

/// Coefficients of du/dt = z_x lap(u) + z_r f_r(u).
struct PdeParams {
  double z_x = 0.1;
  double z_r = 0.0;
  ReactionKind kind = ReactionKind::None;

  /// z_x must be positive for fitted models; the analytic reaction-only
  /// checks use z_x = 0, so zero is accepted here.
  void validate() const {
    if (!(std::isfinite(z_x) && z_x >= 0.0))
      throw std::invalid_argument("PdeParams: z_x must be finite and non-negative");
    if (!(std::isfinite(z_r) && z_r >= 0.0))
      throw std::invalid_argument("PdeParams: z_r must be finite and non-negative");
    if (kind == ReactionKind::None && z_r != 0.0)
      throw std::invalid_argument("PdeParams: z_r must be 0 for a pure-diffusion component");
  }
};

namespace detail {

// 5-point Laplacian, unit spacing. Zero-flux boundary: the ghost cell
// beyond an edge mirrors the edge cell across the face, so the boundary
// flux vanishes and the operator sums to zero over the grid.
inline void laplacian_kernel(std::span<const double> u, std::span<double> out,
                             std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = u.data() + i * cols;
    const double* up = i > 0 ? row - cols : row;
    const double* down = i + 1 < rows ? row + cols : row;
    double* dst = out.data() + i * cols;
    dst[0] = up[0] + down[0] + row[1] - 3.0 * row[0];
    for (std::size_t j = 1; j + 1 < cols; ++j)
      dst[j] = up[j] + down[j] + row[j - 1] + row[j + 1] - 4.0 * row[j];
    const std::size_t e = cols - 1;
    dst[e] = up[e] + down[e] + row[e - 1] - 3.0 * row[e];
  }
}

}  // namespace detail

inline ScalarField laplacian_neumann(const ScalarField& field) {
  require_stencil_shape(field.rows(), field.cols());
  ScalarField out(field.rows(), field.cols());
  detail::laplacian_kernel(field.values(), out.values(), field.rows(), field.cols());
  return out;
}

inline ScalarField reaction_term(ReactionKind kind, const ScalarField& u, double z_r) {
  ScalarField out(u.rows(), u.cols());
  if (kind == ReactionKind::None) return out;
  auto src = u.values();
  auto dst = out.values();
  for (std::size_t n = 0; n < src.size(); ++n) dst[n] = z_r * reaction_shape(kind, src[n]);
  return out;
}

inline ScalarField rhs(const PdeParams& params, const ScalarField& u) {
  ScalarField lap = laplacian_neumann(u);
  ScalarField react = reaction_term(params.kind, u, params.z_r);
  auto l = lap.values();
  auto r = react.values();
  for (std::size_t n = 0; n < l.size(); ++n) l[n] = params.z_x * l[n] + r[n];
  return lap;
}

}  // namespace pdemix
