#pragma once

// Replica saddle-point equations for l2-penalized GLMs on Gaussian mixtures:
// conjugate ("hat") updates by Gauss-Hermite quadrature or the analytic ridge
// reduction, resolvent-trace overlap updates, a damped/Anderson fixed-point
// driver, and the asymptotic error functionals.

#include "gmix/channels.hpp"
#include "gmix/gaussian.hpp"
#include "gmix/model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace gmix {

struct SolverConfig {
  double alpha = 1.0;
  double lambda = 1e-10;
  /// Stop when max_i |G(x)_i - x_i| / max(1, |x_i|) <= tolerance.
  double tolerance = 1e-9;
  int max_iterations = 10000;
  /// Fraction of the old state retained per sweep.
  double damping = 0.5;
  /// Anderson mixing depth on top of the damped sweep; 0 gives plain damping.
  int anderson_depth = 5;
  std::optional<OverlapState> init;
  int xi_order = 101;
  int y_order = 61;
  double divergence_threshold = 1e12;
  /// Rotate homoscedastic dense covariances to their eigenbasis once.
  bool rotate_homoscedastic = true;
  std::ostream* diagnostics = nullptr;

  void validate() const {
    if (!(alpha > 0.0)) throw DomainError("solver: alpha must be positive");
    if (!(lambda >= 0.0)) throw DomainError("solver: lambda must be nonnegative");
    if (!(tolerance > 0.0)) throw DomainError("solver: tolerance must be positive");
    if (!(damping >= 0.0 && damping < 1.0)) throw DomainError("solver: damping must be in [0,1)");
    if (max_iterations < 1) throw DomainError("solver: max_iterations must be >= 1");
    if (anderson_depth < 0) throw DomainError("solver: anderson_depth must be >= 0");
  }
};

inline Metric default_metric(const TeacherChannel& ch) {
  return ch.is_classification() ? Metric::Classification : Metric::Regression;
}

// ---------------------------------------------------------------------------
// Geometry of the resolvent (lambda I + sum_c Vhat_c Sigma_c)^{-1}
// ---------------------------------------------------------------------------

class ResolventGeometry {
 public:
  enum class Mode { Diagonal, Dense };

  ResolventGeometry(const MixtureModel& model, const TeacherSpec& teacher, bool rotate)
      : d_(model.dimension()), K_(model.size()) {
    if (teacher.theta0.size() != d_) throw DimensionError("teacher/model dimension mismatch");
    if (model.all_diagonal()) {
      mode_ = Mode::Diagonal;
      theta_ = teacher.theta0;
      for (const auto& c : model.clusters()) {
        diag_.push_back(c.covariance.diagonal_entries(d_));
        means_.push_back(c.mean);
      }
    } else if (rotate && model.homoscedastic()) {
      // Sigma = U S U': every trace is diagonal in the eigenbasis.
      mode_ = Mode::Diagonal;
      Eigen::SelfAdjointEigenSolver<Matrix> es(model.cluster(0).covariance.to_dense(d_));
      const Matrix& U = es.eigenvectors();
      theta_ = U.transpose() * teacher.theta0;
      for (const auto& c : model.clusters()) {
        diag_.push_back(es.eigenvalues());
        means_.push_back(U.transpose() * c.mean);
      }
    } else {
      mode_ = Mode::Dense;
      theta_ = teacher.theta0;
      for (const auto& c : model.clusters()) {
        dense_.push_back(c.covariance.to_dense(d_));
        means_.push_back(c.mean);
      }
    }
    for (std::size_t c = 0; c < K_; ++c) {
      sigma_theta_.push_back(mode_ == Mode::Diagonal ? Vector(diag_[c].cwiseProduct(theta_))
                                                     : Vector(dense_[c] * theta_));
    }
  }

  Mode mode() const { return mode_; }
  Index dimension() const { return d_; }

  /// (V_c, q_c, m_c, h_c) from the conjugates, for every cluster.
  std::vector<Primal> overlaps(const std::vector<Conjugate>& hats, double lambda) const {
    if (hats.size() != K_) throw DimensionError("overlap update: wrong number of clusters");
    return mode_ == Mode::Diagonal ? overlaps_diagonal(hats, lambda)
                                   : overlaps_dense(hats, lambda);
  }

  /// theta0' Sigma_{c'} A^{-1} mu_c / d for all (c, c'), A = lambda I + sum Vhat Sigma.
  Matrix mean_leakage(const std::vector<double>& vhat, double lambda) const {
    Matrix b(K_, K_);
    if (mode_ == Mode::Diagonal) {
      const Vector A = diagonal_resolvent(vhat, lambda);
      for (std::size_t c = 0; c < K_; ++c)
        for (std::size_t cp = 0; cp < K_; ++cp)
          b(c, cp) = (sigma_theta_[cp].array() * means_[c].array() / A.array()).sum() / double(d_);
    } else {
      const auto ldlt = dense_factor(vhat, lambda);
      for (std::size_t c = 0; c < K_; ++c) {
        const Vector y = ldlt.solve(means_[c]);
        for (std::size_t cp = 0; cp < K_; ++cp) b(c, cp) = sigma_theta_[cp].dot(y) / double(d_);
      }
    }
    return b;
  }

 private:
  Vector diagonal_resolvent(const std::vector<double>& vhat, double lambda) const {
    Vector A = Vector::Constant(d_, lambda);
    for (std::size_t c = 0; c < K_; ++c) A += vhat[c] * diag_[c];
    const Index i = [&] { Index k; A.minCoeff(&k); return k; }();
    if (!(A[i] > 0.0))
      throw NumericalError("singular resolvent: smallest pivot " + std::to_string(A[i]) +
                           " at index " + std::to_string(i));
    return A;
  }

  Eigen::LDLT<Matrix> dense_factor(const std::vector<double>& vhat, double lambda) const {
    Matrix A = lambda * Matrix::Identity(d_, d_);
    for (std::size_t c = 0; c < K_; ++c) A += vhat[c] * dense_[c];
    Eigen::LDLT<Matrix> ldlt(A);
    const double pivot = ldlt.vectorD().minCoeff();
    if (ldlt.info() != Eigen::Success || !(pivot > 0.0))
      throw NumericalError("singular resolvent: smallest pivot " + std::to_string(pivot));
    return ldlt;
  }

  std::vector<Primal> overlaps_diagonal(const std::vector<Conjugate>& hats, double lambda) const {
    std::vector<double> vhat(K_);
    for (std::size_t c = 0; c < K_; ++c) vhat[c] = hats[c].Vhat;
    const Vector A = diagonal_resolvent(vhat, lambda);
    Vector b = Vector::Zero(d_);
    Vector Q = Vector::Zero(d_);
    for (std::size_t c = 0; c < K_; ++c) {
      b += hats[c].hhat * means_[c] + hats[c].mhat * sigma_theta_[c];
      Q += hats[c].qhat * diag_[c];
    }
    const Vector u = b.cwiseQuotient(A);
    const Vector A2 = A.cwiseProduct(A);
    const double inv_d = 1.0 / double(d_);
    std::vector<Primal> out(K_);
    for (std::size_t c = 0; c < K_; ++c) {
      const auto& s = diag_[c];
      out[c].V = s.cwiseQuotient(A).sum() * inv_d;
      out[c].q = ((Q.cwiseProduct(s)).cwiseQuotient(A2).sum() + u.cwiseProduct(u).dot(s)) * inv_d;
      out[c].m = sigma_theta_[c].dot(u) * inv_d;
      out[c].h = means_[c].dot(u) * inv_d;
    }
    return out;
  }

  std::vector<Primal> overlaps_dense(const std::vector<Conjugate>& hats, double lambda) const {
    std::vector<double> vhat(K_);
    for (std::size_t c = 0; c < K_; ++c) vhat[c] = hats[c].Vhat;
    const auto ldlt = dense_factor(vhat, lambda);
    const Matrix Ainv = ldlt.solve(Matrix::Identity(d_, d_));
    Vector b = Vector::Zero(d_);
    Matrix M = Matrix::Zero(d_, d_);
    for (std::size_t c = 0; c < K_; ++c) {
      b += hats[c].hhat * means_[c] + hats[c].mhat * sigma_theta_[c];
      M += hats[c].qhat * dense_[c];
    }
    const Vector u = ldlt.solve(b);
    const Matrix C = M * Ainv;
    const double inv_d = 1.0 / double(d_);
    std::vector<Primal> out(K_);
    for (std::size_t c = 0; c < K_; ++c) {
      const Matrix B = dense_[c] * Ainv;
      out[c].V = B.trace() * inv_d;
      // tr(M A^-1 Sigma_c A^-1) + u' Sigma_c u
      out[c].q = (C.cwiseProduct(B.transpose()).sum() + u.dot(dense_[c] * u)) * inv_d;
      out[c].m = sigma_theta_[c].dot(u) * inv_d;
      out[c].h = means_[c].dot(u) * inv_d;
    }
    return out;
  }

  Index d_;
  std::size_t K_;
  Mode mode_ = Mode::Diagonal;
  Vector theta_;
  std::vector<Vector> diag_;
  std::vector<Matrix> dense_;
  std::vector<Vector> means_;
  std::vector<Vector> sigma_theta_;
};

// ---------------------------------------------------------------------------
// Single-Gaussian spectral route
// ---------------------------------------------------------------------------

/// One Gaussian cluster in the eigenbasis of its covariance.
struct SpectralGcm {
  Vector eigenvalues;
  Vector theta;  // U' theta0
  Vector mean;   // U' mu

  static SpectralGcm from(const MixtureModel& model, const TeacherSpec& teacher) {
    if (model.size() != 1) throw DomainError("spectral GCM route needs exactly one cluster");
    const Index d = model.dimension();
    if (teacher.theta0.size() != d) throw DimensionError("teacher/model dimension mismatch");
    Eigen::SelfAdjointEigenSolver<Matrix> es(model.cluster(0).covariance.to_dense(d));
    return {es.eigenvalues(), es.eigenvectors().transpose() * teacher.theta0,
            es.eigenvectors().transpose() * model.cluster(0).mean};
  }
};

/// V = tr[S (lambda + Vhat S)^-1]/d, q = tr[(qhat S + muhat muhat') S (lambda + Vhat S)^-2]/d,
/// m = tr[muhat theta' S (.)^-1]/d, h = tr[muhat mu' (.)^-1]/d with muhat = hhat mu + mhat S theta.
inline Primal update_overlaps_gcm(const Conjugate& hat, const SpectralGcm& g, double lambda) {
  const Index d = g.eigenvalues.size();
  Primal p{0.0, 0.0, 0.0, 0.0};
  for (Index i = 0; i < d; ++i) {
    const double s = g.eigenvalues[i];
    const double a = lambda + hat.Vhat * s;
    if (!(a > 0.0)) throw NumericalError("singular resolvent: smallest pivot " + std::to_string(a));
    const double muhat = hat.hhat * g.mean[i] + hat.mhat * s * g.theta[i];
    p.V += s / a;
    p.q += (hat.qhat * s + muhat * muhat) * s / (a * a);
    p.m += muhat * g.theta[i] * s / a;
    p.h += muhat * g.mean[i] / a;
  }
  p.V /= double(d);
  p.q /= double(d);
  p.m /= double(d);
  p.h /= double(d);
  return p;
}

// ---------------------------------------------------------------------------
// Problem context: quadrature rules and teacher overlaps
// ---------------------------------------------------------------------------

class ReplicaProblem {
 public:
  ReplicaProblem(const MixtureModel& model, const TeacherSpec& teacher, LossKind loss,
                 int xi_order = 101, int y_order = 61, bool rotate = true)
      : model_(model),
        teacher_(teacher),
        loss_(loss),
        overlaps_(rho_pi(model, teacher)),
        xi_rule_(gauss_hermite(xi_order)),
        y_rule_(gauss_hermite(y_order)),
        geometry_(model, teacher, rotate) {}

  const MixtureModel& model() const { return model_; }
  const TeacherSpec& teacher() const { return teacher_; }
  const TeacherChannel& channel() const { return teacher_.channel; }
  LossKind loss() const { return loss_; }
  const std::vector<TeacherOverlap>& teacher_overlaps() const { return overlaps_; }
  const QuadratureRule& xi_rule() const { return xi_rule_; }
  const QuadratureRule& y_rule() const { return y_rule_; }
  const ResolventGeometry& geometry() const { return geometry_; }

  /// Square loss with Gaussian labels: conjugates and errors in closed form.
  bool analytic_ridge() const {
    return loss_ == LossKind::SquareHalf && teacher_.channel.kind == ChannelKind::GaussianNoise;
  }

 private:
  const MixtureModel& model_;
  const TeacherSpec& teacher_;
  LossKind loss_;
  std::vector<TeacherOverlap> overlaps_;
  QuadratureRule xi_rule_;
  QuadratureRule y_rule_;
  ResolventGeometry geometry_;
};

namespace detail {

/// Teacher field conditional on the student field h + sqrt(q) xi:
/// mean pi + slope * xi, variance cond_var.
struct ConditionalTeacher {
  double slope = 0.0;
  double cond_var = 0.0;
};

inline ConditionalTeacher conditional_teacher(const ClusterOverlaps& o) {
  if (o.q < 0.0) throw NumericalError("negative student variance q = " + std::to_string(o.q));
  if (o.q == 0.0) return {0.0, std::max(o.rho, 0.0)};
  const double v = o.rho - o.m * o.m / o.q;
  if (v < -1e-10)
    throw NumericalError("negative conditional variance rho - m^2/q = " + std::to_string(v));
  return {o.m / std::sqrt(o.q), std::max(v, 0.0)};
}

/// Label nodes for a fixed teacher mean/variance: y, weight under Z0, weight under dZ0/domega.
struct LabelNode {
  double y, wz, wdz;
};

inline void label_nodes(const TeacherChannel& ch, double omega, double v, const QuadratureRule& rule,
                        std::vector<LabelNode>& out) {
  out.clear();
  if (ch.kind == ChannelKind::SignNoise) {
    for (double y : {1.0, -1.0}) out.push_back({y, z0(ch, y, omega, v), dz0_domega(ch, y, omega, v)});
    return;
  }
  const double s2 = v + ch.delta;
  if (s2 == 0.0) {
    out.push_back({omega, 1.0, 0.0});
    return;
  }
  const double s = std::sqrt(s2);
  for (std::size_t j = 0; j < rule.nodes.size(); ++j)
    out.push_back({omega + s * rule.nodes[j], rule.weights[j], rule.weights[j] * rule.nodes[j] / s});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Conjugate updates
// ---------------------------------------------------------------------------

/// Vhat_c = -alpha p_c E[int dy Z0 d_omega f], qhat_c = alpha p_c E[int Z0 f^2],
/// mhat_c = alpha p_c E[int d_omega Z0 f], hhat_c = alpha p_c E[int Z0 f], with Z0 at
/// (pi_c + m_c/sqrt(q_c) xi, rho_c - m_c^2/q_c) and f at (h_c + sqrt(q_c) xi, V_c).
inline std::vector<Conjugate> update_hats(const OverlapState& state, const ReplicaProblem& prob,
                                          double alpha, bool force_quadrature = false) {
  const auto& model = prob.model();
  if (state.size() != model.size()) throw DimensionError("update_hats: wrong number of clusters");
  const auto& ch = prob.channel();
  const LossKind loss = prob.loss();
  std::vector<Conjugate> out(state.size());
  std::vector<detail::LabelNode> nodes;
  for (std::size_t c = 0; c < state.size(); ++c) {
    const auto& o = state[c];
    const double ap = alpha * model.cluster(c).weight;
    if (!(o.V > 0.0)) throw NumericalError("update_hats: V must be positive");
    if (prob.analytic_ridge() && !force_quadrature) {
      const double e = o.rho + ch.delta + o.q - 2.0 * o.m + (o.h - o.pi) * (o.h - o.pi);
      out[c] = {ap / (1.0 + o.V), ap * e / ((1.0 + o.V) * (1.0 + o.V)), ap / (1.0 + o.V),
                ap * (o.pi - o.h) / (1.0 + o.V)};
      continue;
    }
    const auto ct = detail::conditional_teacher(o);
    const double sq = std::sqrt(o.q);
    double vh = 0.0, qh = 0.0, mh = 0.0, hh = 0.0;
    const auto& xr = prob.xi_rule();
    for (std::size_t i = 0; i < xr.nodes.size(); ++i) {
      const double xi = xr.nodes[i];
      const double w = xr.weights[i];
      const double omega_t = o.pi + ct.slope * xi;
      const double omega_s = o.h + sq * xi;
      detail::label_nodes(ch, omega_t, ct.cond_var, prob.y_rule(), nodes);
      double a = 0.0, b = 0.0, cc = 0.0, dd = 0.0;
      for (const auto& n : nodes) {
        double f, df;
        if (loss == LossKind::SquareHalf) {
          f = (n.y - omega_s) / (1.0 + o.V);
          df = -1.0 / (1.0 + o.V);
        } else {
          const double z = prox(loss, n.y, omega_s, o.V);
          const double l2 = loss_d2(loss, n.y, z);
          f = -loss_d1(loss, n.y, z);
          df = -l2 / (1.0 + o.V * l2);
        }
        a += n.wz * df;
        b += n.wz * f * f;
        cc += n.wdz * f;
        dd += n.wz * f;
      }
      vh += w * a;
      qh += w * b;
      mh += w * cc;
      hh += w * dd;
    }
    out[c] = {-ap * vh, ap * qh, ap * mh, ap * hh};
  }
  return out;
}

/// Convenience overload building the quadrature context per call.
inline std::vector<Conjugate> update_hats(const OverlapState& state, const MixtureModel& model,
                                          const TeacherSpec& teacher, LossKind loss, double alpha) {
  ReplicaProblem prob(model, teacher, loss);
  return update_hats(state, prob, alpha);
}

/// Resolvent-trace overlap updates with the l2 penalty; dense covariances use
/// one LDLT factorization per call, diagonal ones O(d) closed forms.
inline std::vector<Primal> update_overlaps_l2(const std::vector<Conjugate>& hats,
                                              const MixtureModel& model, const TeacherSpec& teacher,
                                              double lambda) {
  ResolventGeometry geo(model, teacher, /*rotate=*/false);
  return geo.overlaps(hats, lambda);
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ErrorPair {
  double train = 0.0;
  double gen = 0.0;
};

namespace detail {

inline ErrorPair classification_errors(const ClusterOverlaps& o, double delta, LossKind loss) {
  // U = teacher field + label noise, nu = student field; mislabel iff sign(U) != sign(nu).
  const double su = std::sqrt(o.rho + delta);
  if (!(su > 0.0)) throw DomainError("classification error: degenerate teacher field");
  // prox(y, w) has the sign of y iff w is past t_y = V l'(y, 0).
  const double tp = o.V * loss_d1(loss, 1.0, 0.0);
  const double tm = o.V * loss_d1(loss, -1.0, 0.0);
  const double pu = o.pi / su;
  if (o.q <= 0.0) {
    const double p_pos = normal_cdf(pu);
    const auto miss = [&](double t) {
      return (o.h < t ? p_pos : 0.0) + (o.h >= t ? 1.0 - p_pos : 0.0);
    };
    // training thresholds differ per label
    const double tr = (o.h < tp ? p_pos : 0.0) + (o.h >= tm ? 1.0 - p_pos : 0.0);
    return {tr, miss(0.0)};
  }
  const double sq = std::sqrt(o.q);
  const double r = std::clamp(o.m / (su * sq), -1.0, 1.0);
  const double gen = bivariate_normal_upper(-pu, o.h / sq, -r) +
                     bivariate_normal_upper(pu, -o.h / sq, -r);
  const double tr = bivariate_normal_upper(-pu, (o.h - tp) / sq, -r) +
                    bivariate_normal_upper(pu, (tm - o.h) / sq, -r);
  return {tr, gen};
}

}  // namespace detail

/// Asymptotic (train, generalization) errors at a fixed point. Train uses the
/// prox of V l(y, .) at the student field, generalization the raw field.
inline ErrorPair evaluate_errors(const OverlapState& state, const ReplicaProblem& prob, Metric metric,
                                 bool force_quadrature = false) {
  const auto& model = prob.model();
  const auto& ch = prob.channel();
  const LossKind loss = prob.loss();
  if (metric == Metric::Classification && !ch.is_classification())
    throw DomainError("classification metric needs sign labels");
  ErrorPair total;
  std::vector<detail::LabelNode> nodes;
  for (std::size_t c = 0; c < state.size(); ++c) {
    const auto& o = state[c];
    const double p = model.cluster(c).weight;
    if (metric == Metric::Regression && prob.analytic_ridge() && !force_quadrature) {
      const double e = o.rho + ch.delta + o.q - 2.0 * o.m + (o.h - o.pi) * (o.h - o.pi);
      total.train += p * e / ((1.0 + o.V) * (1.0 + o.V));
      total.gen += p * e;
      continue;
    }
    if (metric == Metric::Classification) {
      const auto e = detail::classification_errors(o, ch.delta, loss);
      total.train += p * e.train;
      total.gen += p * e.gen;
      continue;
    }
    const auto ct = detail::conditional_teacher(o);
    const double sq = std::sqrt(std::max(o.q, 0.0));
    double tr = 0.0, gen = 0.0;
    const auto& xr = prob.xi_rule();
    for (std::size_t i = 0; i < xr.nodes.size(); ++i) {
      const double xi = xr.nodes[i];
      const double omega_s = o.h + sq * xi;
      detail::label_nodes(ch, o.pi + ct.slope * xi, ct.cond_var, prob.y_rule(), nodes);
      double a = 0.0, b = 0.0;
      for (const auto& n : nodes) {
        a += n.wz * metric_value(metric, loss, n.y, prox(loss, n.y, omega_s, o.V));
        b += n.wz * metric_value(metric, loss, n.y, omega_s);
      }
      tr += xr.weights[i] * a;
      gen += xr.weights[i] * b;
    }
    total.train += p * tr;
    total.gen += p * gen;
  }
  return total;
}

inline ErrorPair evaluate_errors(const OverlapState& state, const MixtureModel& model,
                                 const TeacherSpec& teacher, LossKind loss, Metric metric) {
  ReplicaProblem prob(model, teacher, loss);
  return evaluate_errors(state, prob, metric);
}

// ---------------------------------------------------------------------------
// Fixed-point driver
// ---------------------------------------------------------------------------

inline OverlapState preset_state(const std::vector<TeacherOverlap>& teacher) {
  OverlapState st;
  for (const auto& t : teacher) {
    ClusterOverlaps o;
    o.rho = t.rho;
    o.pi = t.pi;
    o.V = 1.0;
    o.q = 0.5;
    o.m = std::min(0.01, 0.5 * std::sqrt(std::max(t.rho, 0.0) * o.q));
    o.h = 0.0;
    st.clusters.push_back(o);
  }
  return st;
}

namespace detail {

inline Vector pack(const OverlapState& st) {
  Vector x(4 * st.size());
  for (std::size_t c = 0; c < st.size(); ++c) {
    x[4 * c] = st[c].V;
    x[4 * c + 1] = st[c].q;
    x[4 * c + 2] = st[c].m;
    x[4 * c + 3] = st[c].h;
  }
  return x;
}

inline void unpack(const Vector& x, OverlapState& st) {
  for (std::size_t c = 0; c < st.size(); ++c)
    st[c].set(Primal{x[4 * c], x[4 * c + 1], x[4 * c + 2], x[4 * c + 3]});
}

inline Vector pack(const std::vector<Primal>& p) {
  Vector x(4 * p.size());
  for (std::size_t c = 0; c < p.size(); ++c) {
    x[4 * c] = p[c].V;
    x[4 * c + 1] = p[c].q;
    x[4 * c + 2] = p[c].m;
    x[4 * c + 3] = p[c].h;
  }
  return x;
}

/// V > 0, q >= 0, and m^2 <= rho q (up to rounding): the domain of the hat map.
inline bool admissible(const Vector& x, const OverlapState& st) {
  if (!x.allFinite()) return false;
  for (std::size_t c = 0; c < st.size(); ++c) {
    const double V = x[4 * c], q = x[4 * c + 1], m = x[4 * c + 2];
    if (!(V > 0.0) || q < 0.0) return false;
    if (m * m > st[c].rho * q * (1.0 + 1e-9) + 1e-14) return false;
  }
  return true;
}

inline double scaled_residual(const Vector& gx, const Vector& x) {
  double r = 0.0;
  for (Index i = 0; i < x.size(); ++i)
    r = std::max(r, std::abs(gx[i] - x[i]) / std::max(1.0, std::abs(x[i])));
  return r;
}

/// Damped fixed-point iteration x <- (1-damping) G(x) + damping x, with
/// Anderson (type II) extrapolation over the last few residuals. Proposals
/// leaving the admissible set fall back to the plain damped step. A growing
/// residual restarts the history; after too many restarts acceleration is dropped.
template <class OverlapMap>
SaddleSolution drive(OverlapState state, const ReplicaProblem& prob, const SolverConfig& cfg,
                     OverlapMap&& overlap_map, Metric metric) {
  const double beta = 1.0 - cfg.damping;
  std::vector<Conjugate> hats;
  auto G = [&](const Vector& x) {
    unpack(x, state);
    hats = update_hats(state, prob, cfg.alpha);
    return pack(overlap_map(hats));
  };

  SaddleSolution sol;
  Vector x = pack(state);
  std::deque<Vector> dX, dF;
  Vector x_prev, f_prev;
  bool have_prev = false;
  bool accelerate = cfg.anderson_depth > 0;
  int restarts = 0;
  constexpr int kMaxRestarts = 25;
  double residual = std::numeric_limits<double>::infinity();
  double prev_residual = residual;
  int it = 0;
  for (; it < cfg.max_iterations; ++it) {
    const Vector gx = G(x);
    const Vector f = gx - x;
    residual = scaled_residual(gx, x);
    if (cfg.diagnostics) *cfg.diagnostics << it << ' ' << residual << '\n';
    for (std::size_t c = 0; c < state.size(); ++c) {
      if (!(std::abs(gx[4 * c + 1]) <= cfg.divergence_threshold)) {
        sol.status = SolveStatus::Diverging;
        sol.iterations = it + 1;
        sol.residual = residual;
        for (std::size_t k = 0; k < state.size(); ++k) state[k].set(hats[k]);
        sol.overlaps = state;
        sol.train_error = sol.gen_error = std::numeric_limits<double>::quiet_NaN();
        return sol;
      }
    }
    if (residual <= cfg.tolerance) {
      sol.status = SolveStatus::Converged;
      break;
    }

    Vector next = x + beta * f;
    if (accelerate && residual > 2.0 * prev_residual) {
      dX.clear();
      dF.clear();
      have_prev = false;
      if (++restarts > kMaxRestarts) accelerate = false;
    }
    prev_residual = residual;
    if (accelerate) {
      if (have_prev) {
        dX.push_back(x - x_prev);
        dF.push_back(f - f_prev);
        if (int(dX.size()) > cfg.anderson_depth) {
          dX.pop_front();
          dF.pop_front();
        }
      }
      x_prev = x;
      f_prev = f;
      have_prev = true;
      if (!dF.empty()) {
        const Index mcols = Index(dF.size());
        Matrix Fm(x.size(), mcols), Xm(x.size(), mcols);
        for (Index j = 0; j < mcols; ++j) {
          Fm.col(j) = dF[j];
          Xm.col(j) = dX[j];
        }
        const Vector gamma = Fm.colPivHouseholderQr().solve(f);
        const Vector cand = x + beta * f - (Xm + beta * Fm) * gamma;
        if (gamma.allFinite() && admissible(cand, state)) {
          next = cand;
        } else {
          dX.clear();
          dF.clear();
          have_prev = false;
        }
      }
    }
    x = next;
  }
  sol.iterations = std::min(it + 1, cfg.max_iterations);
  sol.residual = residual;
  sol.converged = sol.status == SolveStatus::Converged;
  // hats of the returned primal point (the last G evaluation was at x when converged)
  if (!sol.converged) {
    unpack(x, state);
    hats = update_hats(state, prob, cfg.alpha);
  }
  for (std::size_t c = 0; c < state.size(); ++c) state[c].set(hats[c]);
  sol.overlaps = state;
  const auto err = evaluate_errors(state, prob, metric);
  sol.train_error = err.train;
  sol.gen_error = err.gen;
  return sol;
}

inline OverlapState initial_state(const ReplicaProblem& prob, const SolverConfig& cfg) {
  OverlapState st;
  if (cfg.init) {
    st = *cfg.init;
    if (st.size() != prob.model().size()) throw DimensionError("init state: wrong cluster count");
    const auto& t = prob.teacher_overlaps();
    for (std::size_t c = 0; c < st.size(); ++c) {
      st[c].rho = t[c].rho;
      st[c].pi = t[c].pi;
    }
  } else {
    st = preset_state(prob.teacher_overlaps());
  }
  const auto hats = update_hats(st, prob, cfg.alpha);
  for (std::size_t c = 0; c < st.size(); ++c) st[c].set(hats[c]);
  return st;
}

}  // namespace detail

/// Solve the saddle-point equations for the mixture; deterministic given its inputs.
inline SaddleSolution solve(const MixtureModel& model, const TeacherSpec& teacher, LossKind loss,
                            const SolverConfig& cfg, std::optional<Metric> metric = std::nullopt) {
  cfg.validate();
  ReplicaProblem prob(model, teacher, loss, cfg.xi_order, cfg.y_order, cfg.rotate_homoscedastic);
  auto st = detail::initial_state(prob, cfg);
  return detail::drive(
      std::move(st), prob, cfg,
      [&](const std::vector<Conjugate>& hats) { return prob.geometry().overlaps(hats, cfg.lambda); },
      metric.value_or(default_metric(teacher.channel)));
}

/// Single-Gaussian solve through the spectral route.
inline SaddleSolution solve_gcm(const MixtureModel& model, const TeacherSpec& teacher, LossKind loss,
                                const SolverConfig& cfg, std::optional<Metric> metric = std::nullopt) {
  cfg.validate();
  ReplicaProblem prob(model, teacher, loss, cfg.xi_order, cfg.y_order, cfg.rotate_homoscedastic);
  const auto spectral = SpectralGcm::from(model, teacher);
  auto st = detail::initial_state(prob, cfg);
  return detail::drive(
      std::move(st), prob, cfg,
      [&](const std::vector<Conjugate>& hats) {
        return std::vector<Primal>{update_overlaps_gcm(hats.at(0), spectral, cfg.lambda)};
      },
      metric.value_or(default_metric(teacher.channel)));
}

// ---------------------------------------------------------------------------
// Mean universality
// ---------------------------------------------------------------------------

struct MeanUniversalityReport {
  std::vector<double> a;  // theta0' mu_c / d
  Matrix b;               // b(c, c') = theta0' Sigma_c' (lambda + sum Vhat* Sigma)^-1 mu_c / d
  double tolerance = 0.0;
  bool holds = false;
  SolveStatus centered_status = SolveStatus::MaxIterations;
};

/// Evaluate both displayed limits of the mean-universality assumption, with
/// Vhat* from a solve of the centered mixture. Default tolerance 1e-3 sqrt(rho_bar).
inline MeanUniversalityReport mean_universality_check(const MixtureModel& model,
                                                      const TeacherSpec& teacher, LossKind loss,
                                                      const SolverConfig& cfg,
                                                      std::optional<double> tolerance = std::nullopt) {
  MeanUniversalityReport rep;
  const auto centered = model.centered();
  const auto sol = solve(centered, teacher, loss, cfg);
  rep.centered_status = sol.status;
  const auto t = rho_pi(model, teacher);
  double rho_bar = 0.0;
  for (std::size_t c = 0; c < model.size(); ++c) {
    rho_bar += model.cluster(c).weight * t[c].rho;
    rep.a.push_back(t[c].pi);
  }
  rep.tolerance = tolerance.value_or(1e-3 * std::sqrt(std::max(rho_bar, 0.0)));
  if (!sol.converged) return rep;
  std::vector<double> vhat;
  for (const auto& o : sol.overlaps.clusters) vhat.push_back(o.Vhat);
  ResolventGeometry geo(model, teacher, cfg.rotate_homoscedastic);
  rep.b = geo.mean_leakage(vhat, cfg.lambda);
  rep.holds = true;
  for (double a : rep.a) rep.holds = rep.holds && std::abs(a) <= rep.tolerance;
  rep.holds = rep.holds && (rep.b.size() == 0 || rep.b.cwiseAbs().maxCoeff() <= rep.tolerance);
  return rep;
}

// ---------------------------------------------------------------------------
// Separability threshold
// ---------------------------------------------------------------------------

inline SolverConfig separability_solver_defaults() {
  SolverConfig c;
  // near the transition q grows into the thousands and order 101 smears the prox kink
  c.xi_order = 401;
  c.max_iterations = 20000;
  return c;
}

struct SeparabilityOptions {
  double lambda_probe = 1e-6;
  /// Training 0/1 error at or below this (or an unconverged solve) reads as separable.
  double eps_floor = 1e-4;
  SolverConfig solver = separability_solver_defaults();
};

struct SeparabilityProbe {
  double alpha = 0.0;
  double train_error = 0.0;
  SolveStatus status = SolveStatus::MaxIterations;
  bool separable = false;
};

struct SeparabilityResult {
  enum class Status { Found, NoThreshold, BracketFailure };
  Status status = Status::BracketFailure;
  std::optional<double> alpha_star;
  std::vector<SeparabilityProbe> probes;
};

/// Smallest grid alpha at which the logistic fit stops separating the data.
/// Separability is monotone in alpha, so the grid is bisected.
inline SeparabilityResult separability_threshold(const MixtureModel& model, const TeacherSpec& teacher,
                                                 std::vector<double> alpha_grid,
                                                 const SeparabilityOptions& opt = {}) {
  if (!teacher.channel.is_classification())
    throw DomainError("separability threshold needs sign labels");
  if (alpha_grid.size() < 2) throw DomainError("separability threshold needs at least two grid points");
  std::sort(alpha_grid.begin(), alpha_grid.end());
  SeparabilityResult res;
  auto probe = [&](std::size_t i) {
    SolverConfig cfg = opt.solver;
    cfg.alpha = alpha_grid[i];
    cfg.lambda = opt.lambda_probe;
    const auto sol = solve(model, teacher, LossKind::Logistic, cfg, Metric::Classification);
    SeparabilityProbe p{cfg.alpha, sol.train_error, sol.status, true};
    p.separable = !(sol.converged && sol.train_error > opt.eps_floor);
    res.probes.push_back(p);
    return p.separable;
  };
  std::size_t hi = alpha_grid.size() - 1;
  if (probe(hi)) {
    res.status = SeparabilityResult::Status::NoThreshold;
    return res;
  }
  std::size_t lo = 0;
  if (!probe(lo)) {
    res.status = SeparabilityResult::Status::BracketFailure;
    return res;
  }
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (probe(mid)) lo = mid; else hi = mid;
  }
  res.status = SeparabilityResult::Status::Found;
  res.alpha_star = alpha_grid[hi];
  return res;
}

}  // namespace gmix
