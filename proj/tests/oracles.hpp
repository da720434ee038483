#pragma once

// Reference implementations used only by the tests. They are written
// independently of the library: explicit ghost padding, textbook reaction
// formulas and fixed-step integrators.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "pdemix/scalar_field.hpp"

namespace oracle {

using pdemix::ScalarField;

/// Copies the field into an (H+2)x(W+2) array whose ghost ring repeats the
/// adjacent edge cell, then applies the plain 5-point stencil.
inline ScalarField padded_laplacian(const ScalarField& u) {
  const std::size_t h = u.rows(), w = u.cols();
  std::vector<std::vector<double>> p(h + 2, std::vector<double>(w + 2, 0.0));
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) p[i + 1][j + 1] = u(i, j);
  for (std::size_t j = 1; j <= w; ++j) {
    p[0][j] = p[1][j];
    p[h + 1][j] = p[h][j];
  }
  for (std::size_t i = 1; i <= h; ++i) {
    p[i][0] = p[i][1];
    p[i][w + 1] = p[i][w];
  }
  ScalarField out(h, w);
  for (std::size_t i = 1; i <= h; ++i)
    for (std::size_t j = 1; j <= w; ++j)
      out(i - 1, j - 1) = p[i - 1][j] + p[i + 1][j] + p[i][j - 1] + p[i][j + 1] - 4.0 * p[i][j];
  return out;
}

// kind: 0..2 logistic variants, 3 pure diffusion
inline double reaction(int kind, double u) {
  switch (kind) {
    case 0: return u * (1.0 - u);
    case 1: return u * (1.0 - u) * (1.0 - u);
    case 2: return u * u * (1.0 - u);
    default: return 0.0;
  }
}

inline ScalarField rhs(int kind, double z_x, double z_r, const ScalarField& u) {
  ScalarField out = padded_laplacian(u);
  for (std::size_t n = 0; n < u.size(); ++n)
    out.values()[n] = z_x * out.values()[n] + z_r * reaction(kind, u.values()[n]);
  return out;
}

inline ScalarField axpy(const ScalarField& y, double a, const ScalarField& x) {
  ScalarField out = y;
  for (std::size_t n = 0; n < y.size(); ++n) out.values()[n] += a * x.values()[n];
  return out;
}

/// Classical RK4 with a fixed step; `t_end` must be a multiple of `dt`.
inline ScalarField rk4(int kind, double z_x, double z_r, ScalarField u, double t_end, double dt) {
  const long steps = std::lround(t_end / dt);
  for (long s = 0; s < steps; ++s) {
    const ScalarField k1 = rhs(kind, z_x, z_r, u);
    const ScalarField k2 = rhs(kind, z_x, z_r, axpy(u, dt / 2, k1));
    const ScalarField k3 = rhs(kind, z_x, z_r, axpy(u, dt / 2, k2));
    const ScalarField k4 = rhs(kind, z_x, z_r, axpy(u, dt, k3));
    for (std::size_t n = 0; n < u.size(); ++n)
      u.values()[n] += dt / 6.0 *
                       (k1.values()[n] + 2 * k2.values()[n] + 2 * k3.values()[n] + k4.values()[n]);
  }
  return u;
}

inline ScalarField euler(int kind, double z_x, double z_r, ScalarField u, double t_end, double dt) {
  const long steps = std::lround(t_end / dt);
  for (long s = 0; s < steps; ++s) u = axpy(u, dt, rhs(kind, z_x, z_r, u));
  return u;
}

/// Closed-form solution of u' = z_r u (1 - u).
inline double logistic(double u0, double z_r, double t) {
  const double e = std::exp(z_r * t);
  return u0 * e / (1.0 + u0 * (e - 1.0));
}

inline ScalarField random_field(std::size_t h, std::size_t w, unsigned seed, double lo = 0.0,
                                double hi = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  ScalarField f(h, w);
  for (double& v : f.values()) v = d(rng);
  return f;
}

/// Smooth bump, handy for integrator checks.
inline ScalarField bump(std::size_t h, std::size_t w, double amp, double sigma) {
  ScalarField f(h, w);
  const double ci = (double(h) - 1) / 2, cj = (double(w) - 1) / 2;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      f(i, j) = amp * std::exp(-((i - ci) * (i - ci) + (j - cj) * (j - cj)) / (2 * sigma * sigma));
  return f;
}

}  // namespace oracle
