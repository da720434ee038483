#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "pdemix/dopri5.hpp"
#include "pdemix/pde.hpp"
#include "pdemix/scalar_field.hpp"

namespace pdemix {

struct Trajectory {
  std::vector<double> times;
  std::vector<ScalarField> frames;
};

/// State trajectory plus forward sensitivities du/dz_x and du/dz_r at the
/// same output times.
struct SensitivityBundle {
  Trajectory trajectory;
  std::vector<ScalarField> d_dzx;
  std::vector<ScalarField> d_dzr;
};

namespace detail {

inline void check_times(std::span<const double> times) {
  if (times.empty()) throw std::invalid_argument("integrate: empty time list");
  if (!(times[0] >= 0.0)) throw std::invalid_argument("integrate: times[0] must be >= 0");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1]))
      throw std::invalid_argument("integrate: times must be strictly increasing");
}

inline void check_initial(const ScalarField& u0) {
  require_stencil_shape(u0.rows(), u0.cols());
  if (!u0.all_finite()) throw std::invalid_argument("integrate: initial field is not finite");
}

// Method-of-lines right-hand side for u alone.
struct StateRhs {
  PdeParams params;
  std::size_t rows, cols;

  void operator()(double, std::span<const double> u, std::span<double> du) const {
    laplacian_kernel(u, du, rows, cols);
    const double zx = params.z_x, zr = params.z_r;
    if (params.kind == ReactionKind::None) {
      for (std::size_t n = 0; n < u.size(); ++n) du[n] *= zx;
      return;
    }
    for (std::size_t n = 0; n < u.size(); ++n)
      du[n] = zx * du[n] + zr * reaction_shape(params.kind, u[n]);
  }
};

// Augmented system [u, s_x, s_r] (s_r omitted for pure diffusion).
struct SensitivityRhs {
  PdeParams params;
  std::size_t rows, cols;

  void operator()(double, std::span<const double> y, std::span<double> dy) const {
    const std::size_t n = rows * cols;
    const double zx = params.z_x, zr = params.z_r;
    auto u = y.subspan(0, n);
    auto sx = y.subspan(n, n);
    auto du = dy.subspan(0, n);
    auto dsx = dy.subspan(n, n);
    laplacian_kernel(u, du, rows, cols);
    laplacian_kernel(sx, dsx, rows, cols);
    if (params.kind == ReactionKind::None) {
      for (std::size_t i = 0; i < n; ++i) {
        const double lap_u = du[i];
        du[i] = zx * lap_u;
        dsx[i] = lap_u + zx * dsx[i];
      }
      return;
    }
    auto sr = y.subspan(2 * n, n);
    auto dsr = dy.subspan(2 * n, n);
    laplacian_kernel(sr, dsr, rows, cols);
    const ReactionKind kind = params.kind;
    for (std::size_t i = 0; i < n; ++i) {
      const double lap_u = du[i];
      const double f = reaction_shape(kind, u[i]);
      const double jac = zr * reaction_shape_derivative(kind, u[i]);
      du[i] = zx * lap_u + zr * f;
      dsx[i] = lap_u + zx * dsx[i] + jac * sx[i];
      dsr[i] = f + zx * dsr[i] + jac * sr[i];
    }
  }
};

}  // namespace detail

/// Integrates du/dt = rhs(params, u) from u(0) = u0 and samples the
/// solution at `times`.
inline Trajectory integrate(const PdeParams& params, const ScalarField& u0,
                            std::span<const double> times, const SolverOptions& opt = {},
                            SolverStats* stats = nullptr) {
  params.validate();
  detail::check_initial(u0);
  detail::check_times(times);
  detail::StateRhs f{params, u0.rows(), u0.cols()};
  auto states = dopri5_solve(f, u0.data(), 0.0, times, opt, stats);
  Trajectory traj;
  traj.times.assign(times.begin(), times.end());
  traj.frames.reserve(states.size());
  for (auto& s : states) traj.frames.emplace_back(u0.rows(), u0.cols(), std::move(s));
  return traj;
}

/// Integrates the state jointly with its forward sensitivities; the
/// sensitivities start at zero.
inline SensitivityBundle integrate_with_sensitivities(const PdeParams& params,
                                                      const ScalarField& u0,
                                                      std::span<const double> times,
                                                      const SolverOptions& opt = {},
                                                      SolverStats* stats = nullptr) {
  params.validate();
  detail::check_initial(u0);
  detail::check_times(times);
  const std::size_t n = u0.size();
  const bool has_reaction = params.kind != ReactionKind::None;
  std::vector<double> y0((has_reaction ? 3 : 2) * n, 0.0);
  std::copy(u0.data().begin(), u0.data().end(), y0.begin());

  detail::SensitivityRhs f{params, u0.rows(), u0.cols()};
  auto states = dopri5_solve(f, std::move(y0), 0.0, times, opt, stats);

  SensitivityBundle out;
  out.trajectory.times.assign(times.begin(), times.end());
  for (const auto& s : states) {
    auto block = [&](std::size_t b) {
      return ScalarField(u0.rows(), u0.cols(),
                         std::vector<double>(s.begin() + b * n, s.begin() + (b + 1) * n));
    };
    out.trajectory.frames.push_back(block(0));
    out.d_dzx.push_back(block(1));
    out.d_dzr.push_back(has_reaction ? block(2) : ScalarField(u0.rows(), u0.cols()));
  }
  // An output at t = 0 returns the initial condition verbatim.
  if (times[0] == 0.0) out.trajectory.frames[0] = u0;
  return out;
}

}  // namespace pdemix
