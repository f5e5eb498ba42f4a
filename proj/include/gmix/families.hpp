#pragma once

// Named model families used by the experiments and tests.

#include "gmix/closed_forms.hpp"
#include "gmix/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace gmix {

struct Problem {
  MixtureModel model;
  TeacherSpec teacher;
};

namespace detail {
inline Vector alternating(Index d) {
  Vector v(d);
  for (Index i = 0; i < d; ++i) v[i] = (i % 2 == 0) ? 1.0 : -1.0;
  return v;
}
}  // namespace detail

/// mu_+- = +-sqrt(gamma) 1, Sigma = I, p = 1/2, and a teacher with the given
/// rho = |theta0|^2/d and pi = mu' theta0/d (built from 1 and the alternating vector).
inline Problem two_cluster_isotropic(Index d, double rho, double gamma, double pi,
                                     TeacherChannel channel) {
  if (d < 2 || d % 2 != 0) throw DimensionError("two-cluster family needs an even dimension");
  IsotropicMixtureParams{1.0, 0.0, rho, gamma, pi, 0.0}.validate();
  const Vector u = Vector::Ones(d);
  const Vector v = detail::alternating(d);
  const double c = std::clamp(pi / std::sqrt(rho * gamma), -1.0, 1.0);
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  const Vector mu = std::sqrt(gamma) * u;
  Vector theta = std::sqrt(rho) * (c * u + s * v);
  MixtureModel m({ClusterSpec{0.5, mu, Covariance::isotropic(1.0)},
                  ClusterSpec{0.5, -mu, Covariance::isotropic(1.0)}},
                 d);
  return {std::move(m), TeacherSpec{std::move(theta), channel}};
}

/// theta0(Omega) = Omega mu_perp + sqrt(1 - Omega^2) mu_+ with |mu_perp| = |mu_+|, so rho = gamma.
inline Problem omega_family(Index d, double gamma, double omega, TeacherChannel channel) {
  return two_cluster_isotropic(d, gamma, gamma, pi_from_omega(omega, gamma, gamma), channel);
}

/// Zero-mean two-cluster mixture with swapped diagonal covariances:
/// Sigma_+ = diag(0.1.., 1.9..), p_+ = 0.8; Sigma_- = diag(1.9.., 0.1..), p_- = 0.2; theta0 = 1.
inline Problem heteroscedastic_mixture(Index d, TeacherChannel channel) {
  if (d < 2 || d % 2 != 0) throw DimensionError("heteroscedastic family needs an even dimension");
  Vector sp(d), sm(d);
  for (Index i = 0; i < d; ++i) {
    sp[i] = i < d / 2 ? 0.1 : 1.9;
    sm[i] = i < d / 2 ? 1.9 : 0.1;
  }
  MixtureModel m({ClusterSpec{0.8, Vector::Zero(d), Covariance::diagonal(sp)},
                  ClusterSpec{0.2, Vector::Zero(d), Covariance::diagonal(sm)}},
                 d);
  return {std::move(m), TeacherSpec{Vector::Ones(d), channel}};
}

/// Single centered Gaussian with the weight-averaged covariance sum_c p_c Sigma_c.
inline MixtureModel gcm_baseline(const MixtureModel& model) {
  const Index d = model.dimension();
  if (model.all_diagonal()) {
    Vector s = Vector::Zero(d);
    for (const auto& c : model.clusters()) s += c.weight * c.covariance.diagonal_entries(d);
    if ((s.array() == s[0]).all()) return MixtureModel::gaussian(Vector::Zero(d), Covariance::isotropic(s[0]));
    return MixtureModel::gaussian(Vector::Zero(d), Covariance::diagonal(s));
  }
  Matrix S = Matrix::Zero(d, d);
  for (const auto& c : model.clusters()) S += c.weight * c.covariance.to_dense(d);
  S = 0.5 * (S + S.transpose());
  return MixtureModel::gaussian(Vector::Zero(d), Covariance::dense(S));
}

}  // namespace gmix
