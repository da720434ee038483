#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdemix {

/// Raised when the time integration cannot proceed.
class SolverError : public std::runtime_error {
 public:
  enum class Kind { StepFailure, NonFinite };

  SolverError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct SolverOptions {
  double rtol = 1e-6;
  double atol = 1e-8;
  double min_step = 1e-10;
  std::size_t max_steps = 200000;
};

struct SolverStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evals = 0;
};

namespace dp5 {

// Dormand-Prince 5(4) tableau.
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                        a75 = -2187.0 / 6784, a76 = 11.0 / 84;
// Difference between the 5th and embedded 4th order weights.
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// Continuous extension (Hairer, Norsett & Wanner).
inline constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                        d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                        d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

}  // namespace dp5

/// Adaptive Dormand-Prince 5(4) integration of dy/dt = f(t, y) from t0,
/// returning the state at each requested output time via dense output.
/// `f` has signature void(double t, std::span<const double> y, std::span<double> dydt).
/// Output times must be non-decreasing and >= t0; an output time equal to
/// t0 returns y0 unchanged.
template <class Rhs>
std::vector<std::vector<double>> dopri5_solve(Rhs&& f, std::vector<double> y, double t0,
                                              std::span<const double> out_times,
                                              const SolverOptions& opt = {},
                                              SolverStats* stats = nullptr) {
  using namespace dp5;
  const std::size_t n = y.size();
  std::vector<std::vector<double>> out;
  out.reserve(out_times.size());
  SolverStats local;

  std::size_t next = 0;
  while (next < out_times.size() && out_times[next] <= t0) {
    if (out_times[next] < t0) throw std::invalid_argument("dopri5_solve: output time before t0");
    out.push_back(y);
    ++next;
  }
  if (next == out_times.size()) {
    if (stats) *stats = local;
    return out;
  }
  const double t_end = out_times.back();

  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n);
  std::vector<double> r1(n), r2(n), r3(n), r4(n), r5(n);

  auto error_norm_scale = [&](double a, double b) {
    return opt.atol + opt.rtol * std::max(std::abs(a), std::abs(b));
  };

  double t = t0;
  f(t, std::span<const double>(y), std::span<double>(k1));
  ++local.rhs_evals;

  // Initial step guess from derivative magnitudes.
  double h;
  {
    double d0 = 0.0, dd1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sc = opt.atol + opt.rtol * std::abs(y[i]);
      d0 += (y[i] / sc) * (y[i] / sc);
      dd1 += (k1[i] / sc) * (k1[i] / sc);
    }
    d0 = std::sqrt(d0 / double(n));
    dd1 = std::sqrt(dd1 / double(n));
    h = (d0 < 1e-5 || dd1 < 1e-5) ? 1e-6 : 0.01 * d0 / dd1;
    h = std::min(h, t_end - t);
  }

  bool last_rejected = false;
  while (next < out_times.size()) {
    if (local.accepted + local.rejected >= opt.max_steps)
      throw SolverError(SolverError::Kind::StepFailure,
                        "step budget exhausted at t=" + std::to_string(t));
    if (h < opt.min_step)
      throw SolverError(SolverError::Kind::StepFailure,
                        "step size underflow at t=" + std::to_string(t));
    const double snap = 1e-12 * std::max(1.0, std::abs(t_end));
    const bool final_step = t + h >= t_end - snap;
    if (final_step) h = t_end - t;

    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
    f(t + c2 * h, std::span<const double>(ytmp), std::span<double>(k2));
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
    f(t + c3 * h, std::span<const double>(ytmp), std::span<double>(k3));
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    f(t + c4 * h, std::span<const double>(ytmp), std::span<double>(k4));
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    f(t + c5 * h, std::span<const double>(ytmp), std::span<double>(k5));
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    f(t + h, std::span<const double>(ytmp), std::span<double>(k6));
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
    f(t + h, std::span<const double>(ynew), std::span<double>(k7));
    local.rhs_evals += 6;

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double ei =
          h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double r = ei / error_norm_scale(y[i], ynew[i]);
      err += r * r;
    }
    err = std::sqrt(err / double(n));

    if (!std::isfinite(err)) {
      // A non-finite trial state: shrink hard and retry, unless the step is
      // already tiny, in which case the solution itself has blown up.
      bool state_finite = true;
      for (double v : ynew) state_finite = state_finite && std::isfinite(v);
      if (!state_finite && h <= 16.0 * opt.min_step)
        throw SolverError(SolverError::Kind::NonFinite,
                          "state left finite range at t=" + std::to_string(t));
      h *= 0.1;
      ++local.rejected;
      last_rejected = true;
      continue;
    }

    if (err <= 1.0) {
      // Dense output coefficients for [t, t + h].
      for (std::size_t i = 0; i < n; ++i) {
        const double ydiff = ynew[i] - y[i];
        const double bspl = h * k1[i] - ydiff;
        r1[i] = y[i];
        r2[i] = ydiff;
        r3[i] = bspl;
        r4[i] = ydiff - h * k7[i] - bspl;
        r5[i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
      }
      const double t_new = final_step ? t_end : t + h;
      while (next < out_times.size() && out_times[next] <= t_new) {
        std::vector<double> yo(n);
        if (out_times[next] == t_new) {
          yo = ynew;
        } else {
          const double s = (out_times[next] - t) / h;
          const double s1 = 1.0 - s;
          for (std::size_t i = 0; i < n; ++i)
            yo[i] = r1[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
        }
        out.push_back(std::move(yo));
        ++next;
      }
      for (double v : ynew)
        if (!std::isfinite(v))
          throw SolverError(SolverError::Kind::NonFinite,
                            "state left finite range at t=" + std::to_string(t_new));
      t = t_new;
      y.swap(ynew);
      k1.swap(k7);  // FSAL
      ++local.accepted;

      double fac = err == 0.0 ? 10.0 : 0.9 * std::pow(err, -0.2);
      fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 10.0);
      h *= fac;
      last_rejected = false;
    } else {
      h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
      ++local.rejected;
      last_rejected = true;
    }
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace pdemix
