#pragma once

// Scalar channels of the saddle-point equations: the teacher partition
// function Z0 and its omega-derivative, the proximal map of V * l(y, .), and
// the induced f_l = (prox - omega) / V with its omega-derivative.

#include "gmix/gaussian.hpp"
#include "gmix/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace gmix {

/// Z0(y, omega, v) = E_{tau ~ N(omega, v)} P0(y | tau).
inline double z0(const TeacherChannel& ch, double y, double omega, double v) {
  if (v < 0.0) throw DomainError("z0: variance must be nonnegative");
  const double s2 = v + ch.delta;
  if (ch.kind == ChannelKind::GaussianNoise) {
    if (s2 == 0.0) return y == omega ? std::numeric_limits<double>::infinity() : 0.0;
    const double r = y - omega;
    return std::exp(-0.5 * r * r / s2) / std::sqrt(2.0 * std::numbers::pi * s2);
  }
  if (s2 == 0.0) {
    const double t = y * omega;
    return t > 0.0 ? 1.0 : (t < 0.0 ? 0.0 : 0.5);
  }
  return normal_cdf(y * omega / std::sqrt(s2));
}

inline double dz0_domega(const TeacherChannel& ch, double y, double omega, double v) {
  if (v < 0.0) throw DomainError("dz0_domega: variance must be nonnegative");
  const double s2 = v + ch.delta;
  if (s2 == 0.0) return 0.0;
  if (ch.kind == ChannelKind::GaussianNoise) return z0(ch, y, omega, v) * (y - omega) / s2;
  const double s = std::sqrt(s2);
  return y * normal_pdf(y * omega / s) / s;
}

/// argmin_z (z - omega)^2 / (2 v) + l(y, z).
inline double prox(LossKind loss, double y, double omega, double v) {
  if (!std::isfinite(y) || !std::isfinite(omega) || !std::isfinite(v))
    throw DomainError("prox: non-finite input");
  if (v < 0.0) throw DomainError("prox: step must be nonnegative");
  if (v == 0.0) return omega;
  if (loss == LossKind::SquareHalf) return (omega + v * y) / (1.0 + v);

  // |l'| <= |y|, so the root sits between omega and omega + v*y.
  double lo = std::min(omega, omega + v * y);
  double hi = std::max(omega, omega + v * y);
  if (lo == hi) return omega;
  auto g = [&](double z) { return (z - omega) / v + loss_d1(loss, y, z); };
  double z = omega + v * y * 0.5;
  for (int it = 0; it < 200; ++it) {
    const double gz = g(z);
    if (gz == 0.0) return z;
    if (gz > 0.0) hi = z; else lo = z;
    const double dg = 1.0 / v + loss_d2(loss, y, z);
    double next = z - gz / dg;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - z) <= 1e-16 * (1.0 + std::abs(z)) || lo == hi) return next;
    z = next;
  }
  return z;
}

/// f_l(y, omega, v) = (prox - omega) / v; equals -l'(y, prox) by stationarity,
/// with the continuous extension -l'(y, omega) at v = 0.
inline double f_ell(LossKind loss, double y, double omega, double v) {
  if (loss == LossKind::SquareHalf) {
    if (v < 0.0) throw DomainError("f_ell: step must be nonnegative");
    return (y - omega) / (1.0 + v);
  }
  return -loss_d1(loss, y, prox(loss, y, omega, v));
}

/// d f_l / d omega = -l'' / (1 + v l''), evaluated at the prox.
inline double df_ell_domega(LossKind loss, double y, double omega, double v) {
  if (loss == LossKind::SquareHalf) {
    if (v < 0.0) throw DomainError("df_ell_domega: step must be nonnegative");
    return -1.0 / (1.0 + v);
  }
  const double l2 = loss_d2(loss, y, prox(loss, y, omega, v));
  return -l2 / (1.0 + v * l2);
}

/// Integral over y of Z0(y, omega, v) * integrand(y). Exact two-point sum for
/// sign labels, Gauss-Hermite around omega with variance v + Delta otherwise.
template <class F>
double label_expectation(const TeacherChannel& ch, double omega, double v, F&& integrand,
                         const QuadratureRule& y_rule) {
  if (ch.kind == ChannelKind::SignNoise) {
    return z0(ch, 1.0, omega, v) * integrand(1.0) + z0(ch, -1.0, omega, v) * integrand(-1.0);
  }
  const double s2 = v + ch.delta;
  if (s2 == 0.0) return integrand(omega);
  const double s = std::sqrt(s2);
  return y_rule.expect([&](double x) { return integrand(omega + s * x); });
}

/// Integral over y of dZ0/domega(y, omega, v) * integrand(y).
template <class F>
double label_expectation_domega(const TeacherChannel& ch, double omega, double v, F&& integrand,
                                const QuadratureRule& y_rule) {
  if (ch.kind == ChannelKind::SignNoise) {
    return dz0_domega(ch, 1.0, omega, v) * integrand(1.0) +
           dz0_domega(ch, -1.0, omega, v) * integrand(-1.0);
  }
  const double s2 = v + ch.delta;
  if (s2 == 0.0) throw DomainError("label_expectation_domega: degenerate Gaussian channel");
  const double s = std::sqrt(s2);
  return y_rule.expect([&](double x) { return (x / s) * integrand(omega + s * x); });
}

}  // namespace gmix
