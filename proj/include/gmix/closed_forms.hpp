#pragma once

// Ridge closed forms for the symmetric isotropic two-cluster mixture
// (mu_+- = +-mu, Sigma = I, p = 1/2) and related limits.

#include "gmix/model.hpp"

#include <cmath>
#include <string>

namespace gmix {

struct IsotropicMixtureParams {
  double alpha = 1.0;
  double lambda = 0.0;
  double rho = 1.0;    // theta0' Sigma theta0 / d
  double gamma = 1.0;  // |mu|^2 / d
  double pi = 0.0;     // mu' theta0 / d
  double delta = 0.0;

  void validate() const {
    if (!(alpha > 0.0)) throw DomainError("alpha must be positive");
    if (!(lambda >= 0.0)) throw DomainError("lambda must be nonnegative");
    if (!(rho > 0.0)) throw DomainError("rho must be positive");
    if (!(gamma > 0.0)) throw DomainError("gamma must be positive");
    if (!(delta >= 0.0)) throw DomainError("delta must be nonnegative");
    if (pi * pi > rho * gamma + 1e-12)
      throw DomainError("pi^2 exceeds rho*gamma (Cauchy-Schwarz)");
  }
};

struct ClosedFormErrors {
  double gen = 0.0;
  double train = 0.0;
};

/// eta = 1 + (a - sqrt(4 lambda + a^2)) / 2 with a = alpha - 1 + lambda.
inline double eta(double alpha, double lambda) {
  if (!(alpha > 0.0)) throw DomainError("eta: alpha must be positive");
  if (!(lambda >= 0.0)) throw DomainError("eta: lambda must be nonnegative");
  const double a = alpha - 1.0 + lambda;
  const double s = std::sqrt(4.0 * lambda + a * a);
  // a - s cancels for a > 0
  const double diff = a > 0.0 ? -4.0 * lambda / (a + s) : a - s;
  return 1.0 + 0.5 * diff;
}

/// Coefficient of the pi^2 correction.
inline double pi2_coefficient(double eta_value, double rho, double gamma, double delta) {
  const double e1 = eta_value - 1.0;
  const double base = delta + e1 * e1 * rho;
  if (base == 0.0) return 0.0;
  const double g1 = 1.0 + gamma * eta_value;
  return e1 * e1 * (gamma * eta_value * eta_value + 2.0 * eta_value - 1.0) / (base * g1 * g1);
}

inline ClosedFormErrors mixture_errors(const IsotropicMixtureParams& p) {
  p.validate();
  const double e = eta(p.alpha, p.lambda);
  const double pole = p.alpha - e * e;
  if (std::abs(pole) < 1e-12)
    throw NumericalError("closed form at the interpolation pole (alpha = eta^2)");
  const double base = p.delta + (e - 1.0) * (e - 1.0) * p.rho;
  const double g = p.alpha * base / pole;
  const double t = (p.alpha - e) * (p.alpha - e) * base / (p.alpha * pole);
  const double corr = 1.0 - p.pi * p.pi * pi2_coefficient(e, p.rho, p.gamma, p.delta);
  return {g * corr, t * corr};
}

/// Ridge training error at vanishing penalty, alpha > 1.
inline double strong_universality_train(double alpha, double delta) {
  if (!(alpha > 1.0)) throw DomainError("strong universality training error needs alpha > 1");
  if (!(delta >= 0.0)) throw DomainError("delta must be nonnegative");
  return (alpha - 1.0) * delta / alpha;
}

/// Generalization-error gap for a teacher interpolating real labels, E = eta(alpha, Lambda).
inline double interp_teacher_discrepancy(double alpha, double Lambda, double gamma) {
  if (!(gamma > 0.0)) throw DomainError("gamma must be positive");
  const double E = eta(alpha, Lambda);
  const double a1 = alpha + 1.0;
  const double g1 = E * gamma + 1.0;
  return 4.0 * alpha * alpha * (E - 1.0) * (E * E * gamma + 2.0 * E - 1.0) / (a1 * a1 * g1 * g1);
}

/// Fitted-teacher overlaps h and q.
inline double h_erm(double alpha, double gamma) {
  return gamma * alpha * (gamma + 1.0) / (1.0 + gamma * alpha);
}

inline double q_erm(double alpha, double gamma, double rho, double pi, double delta) {
  if (alpha == 1.0) throw NumericalError("q_erm has a pole at alpha = 1");
  return alpha * (-delta / (alpha - 1.0) - (alpha - 1.0) * pi * pi / (alpha * gamma + 1.0) + rho);
}

/// theta0(Omega) = Omega mu_perp + sqrt(1 - Omega^2) mu_+ with |mu_perp| = |mu_+|.
inline double pi_from_omega(double omega, double rho, double gamma) {
  if (!(omega >= 0.0 && omega <= 1.0)) throw DomainError("Omega must lie in [0,1]");
  return std::sqrt(rho * gamma) * std::sqrt(1.0 - omega * omega);
}

}  // namespace gmix
