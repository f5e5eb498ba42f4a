#pragma once

// Data laws, teacher channels, losses and order-parameter records shared by
// every other header. Means are stored unscaled: a sample of cluster c is
// drawn from N(mu_c / sqrt(d), Sigma_c).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace gmix {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// sign with the tie-break sign(0) = +1 used by every 0/1 metric.
inline double sign_pm(double x) { return x >= 0.0 ? 1.0 : -1.0; }

// ---------------------------------------------------------------------------
// Covariance
// ---------------------------------------------------------------------------

struct Isotropic {
  double scale = 1.0;
};

struct Diagonal {
  Vector entries;
};

struct DenseSymmetric {
  Matrix matrix;
};

class Covariance {
 public:
  enum class Kind { Isotropic, Diagonal, Dense };

  static Covariance isotropic(double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale))
      throw DomainError("isotropic covariance scale must be positive");
    return Covariance(Isotropic{scale});
  }

  static Covariance diagonal(Vector entries) {
    if (entries.size() == 0) throw DimensionError("diagonal covariance is empty");
    for (Index i = 0; i < entries.size(); ++i) {
      if (!(entries[i] > 0.0) || !std::isfinite(entries[i]))
        throw DomainError("diagonal covariance entry " + std::to_string(i) +
                          " must be positive");
    }
    return Covariance(Diagonal{std::move(entries)});
  }

  static Covariance dense(Matrix m) {
    if (m.rows() != m.cols() || m.rows() == 0)
      throw DimensionError("dense covariance must be square and non-empty");
    if (!m.allFinite()) throw DomainError("dense covariance has non-finite entries");
    const double scale = m.cwiseAbs().maxCoeff();
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * scale)
      throw DomainError("dense covariance is not symmetric (max |S_ij - S_ji| = " +
                        std::to_string(asym) + ")");
    Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > 0.0))
      throw DomainError("dense covariance is not positive definite (min eigenvalue " +
                        std::to_string(es.eigenvalues().minCoeff()) + ")");
    return Covariance(DenseSymmetric{std::move(m)});
  }

  Kind kind() const { return static_cast<Kind>(rep_.index()); }
  bool is_diagonal() const { return kind() != Kind::Dense; }
  const auto& rep() const { return rep_; }

  /// Number of rows the representation pins down; 0 for isotropic.
  Index fixed_dimension() const {
    switch (kind()) {
      case Kind::Diagonal: return std::get<Diagonal>(rep_).entries.size();
      case Kind::Dense: return std::get<DenseSymmetric>(rep_).matrix.rows();
      default: return 0;
    }
  }

  Vector apply(const Vector& v) const {
    switch (kind()) {
      case Kind::Isotropic: return std::get<Isotropic>(rep_).scale * v;
      case Kind::Diagonal: return std::get<Diagonal>(rep_).entries.cwiseProduct(v);
      default: return std::get<DenseSymmetric>(rep_).matrix * v;
    }
  }

  /// a' Sigma b
  double bilinear(const Vector& a, const Vector& b) const { return a.dot(apply(b)); }

  /// Diagonal entries; only meaningful for isotropic/diagonal representations.
  Vector diagonal_entries(Index d) const {
    switch (kind()) {
      case Kind::Isotropic: return Vector::Constant(d, std::get<Isotropic>(rep_).scale);
      case Kind::Diagonal: return std::get<Diagonal>(rep_).entries;
      default: return std::get<DenseSymmetric>(rep_).matrix.diagonal();
    }
  }

  Matrix to_dense(Index d) const {
    switch (kind()) {
      case Kind::Isotropic:
        return std::get<Isotropic>(rep_).scale * Matrix::Identity(d, d);
      case Kind::Diagonal: return std::get<Diagonal>(rep_).entries.asDiagonal();
      default: return std::get<DenseSymmetric>(rep_).matrix;
    }
  }

  double trace(Index d) const { return diagonal_entries(d).sum(); }

 private:
  template <class R>
  explicit Covariance(R r) : rep_(std::move(r)) {}

  std::variant<Isotropic, Diagonal, DenseSymmetric> rep_;
};

// ---------------------------------------------------------------------------
// Mixture
// ---------------------------------------------------------------------------

struct ClusterSpec {
  double weight = 1.0;
  Vector mean;  // unscaled
  Covariance covariance = Covariance::isotropic(1.0);
};

class MixtureModel {
 public:
  MixtureModel(std::vector<ClusterSpec> clusters, Index dimension)
      : clusters_(std::move(clusters)), dimension_(dimension) {
    if (dimension_ <= 0) throw DimensionError("dimension must be positive");
    if (clusters_.empty()) throw DomainError("a mixture needs at least one cluster");
    double total = 0.0;
    for (std::size_t c = 0; c < clusters_.size(); ++c) {
      const auto& cl = clusters_[c];
      if (!(cl.weight >= 0.0 && cl.weight <= 1.0))
        throw DomainError("cluster " + std::to_string(c) + " weight outside [0,1]");
      if (cl.mean.size() != dimension_)
        throw DimensionError("cluster " + std::to_string(c) + " mean has dimension " +
                             std::to_string(cl.mean.size()) + ", expected " +
                             std::to_string(dimension_));
      const Index fd = cl.covariance.fixed_dimension();
      if (fd != 0 && fd != dimension_)
        throw DimensionError("cluster " + std::to_string(c) +
                             " covariance has dimension " + std::to_string(fd));
      total += cl.weight;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw DomainError("cluster weights sum to " + std::to_string(total) + ", not 1");
  }

  /// Single Gaussian N(mean / sqrt(d), covariance).
  static MixtureModel gaussian(Vector mean, Covariance covariance) {
    const Index d = mean.size();
    return MixtureModel({ClusterSpec{1.0, std::move(mean), std::move(covariance)}}, d);
  }

  const std::vector<ClusterSpec>& clusters() const { return clusters_; }
  const ClusterSpec& cluster(std::size_t c) const { return clusters_.at(c); }
  std::size_t size() const { return clusters_.size(); }
  Index dimension() const { return dimension_; }

  bool all_diagonal() const {
    for (const auto& c : clusters_)
      if (!c.covariance.is_diagonal()) return false;
    return true;
  }

  /// All clusters share one covariance (compared entrywise).
  bool homoscedastic() const {
    const Matrix first = clusters_.front().covariance.to_dense(dimension_);
    for (std::size_t c = 1; c < clusters_.size(); ++c) {
      if ((clusters_[c].covariance.to_dense(dimension_) - first).cwiseAbs().maxCoeff() > 0.0)
        return false;
    }
    return true;
  }

  /// Same covariances and weights with every mean set to zero.
  MixtureModel centered() const {
    auto cl = clusters_;
    for (auto& c : cl) c.mean = Vector::Zero(dimension_);
    return MixtureModel(std::move(cl), dimension_);
  }

 private:
  std::vector<ClusterSpec> clusters_;
  Index dimension_;
};

// ---------------------------------------------------------------------------
// Teacher
// ---------------------------------------------------------------------------

enum class ChannelKind { GaussianNoise, SignNoise };

struct TeacherChannel {
  ChannelKind kind = ChannelKind::GaussianNoise;
  double delta = 0.0;

  static TeacherChannel gaussian(double delta) { return make(ChannelKind::GaussianNoise, delta); }
  static TeacherChannel sign(double delta) { return make(ChannelKind::SignNoise, delta); }
  static TeacherChannel make(ChannelKind kind, double delta) {
    if (!(delta >= 0.0) || !std::isfinite(delta))
      throw DomainError("channel noise variance must be nonnegative");
    return TeacherChannel{kind, delta};
  }
  bool is_classification() const { return kind == ChannelKind::SignNoise; }
};

struct TeacherSpec {
  Vector theta0;
  TeacherChannel channel;
};

/// Teacher overlaps of one cluster: rho = theta0' Sigma theta0 / d, pi = theta0' mu / d.
struct TeacherOverlap {
  double rho = 0.0;
  double pi = 0.0;
};

inline std::vector<TeacherOverlap> rho_pi(const MixtureModel& model, const TeacherSpec& teacher) {
  const Index d = model.dimension();
  if (teacher.theta0.size() != d)
    throw DimensionError("teacher has dimension " + std::to_string(teacher.theta0.size()) +
                         ", model has " + std::to_string(d));
  std::vector<TeacherOverlap> out;
  out.reserve(model.size());
  for (const auto& c : model.clusters()) {
    TeacherOverlap t{c.covariance.bilinear(teacher.theta0, teacher.theta0) / double(d),
                     teacher.theta0.dot(c.mean) / double(d)};
    if (!std::isfinite(t.rho) || !std::isfinite(t.pi))
      throw DomainError("teacher overlaps are not finite");
    out.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses and metrics
// ---------------------------------------------------------------------------

/// SquareHalf: l(y,z) = (y-z)^2 / 2.  Logistic: l(y,z) = log(1 + exp(-y z)).
enum class LossKind { SquareHalf, Logistic };

/// Reported error functional. Regression: (y - yhat)^2. Classification:
/// 1{y != sign(yhat)}. Loss: the training loss itself.
enum class Metric { Regression, Classification, Loss };

namespace detail {
inline double log1pexp(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}
inline double logistic_sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}
}  // namespace detail

inline double loss_value(LossKind loss, double y, double z) {
  switch (loss) {
    case LossKind::SquareHalf: return 0.5 * (y - z) * (y - z);
    default: return detail::log1pexp(-y * z);
  }
}

/// d l / dz
inline double loss_d1(LossKind loss, double y, double z) {
  switch (loss) {
    case LossKind::SquareHalf: return z - y;
    default: return -y * detail::logistic_sigmoid(-y * z);
  }
}

/// d^2 l / dz^2
inline double loss_d2(LossKind loss, double y, double z) {
  switch (loss) {
    case LossKind::SquareHalf: return 1.0;
    default: {
      const double s = detail::logistic_sigmoid(y * z);
      return y * y * s * (1.0 - s);
    }
  }
}

inline double metric_value(Metric metric, LossKind loss, double y, double yhat) {
  switch (metric) {
    case Metric::Regression: return (y - yhat) * (y - yhat);
    case Metric::Classification: return y != sign_pm(yhat) ? 1.0 : 0.0;
    default: return loss_value(loss, y, yhat);
  }
}

// ---------------------------------------------------------------------------
// Order parameters
// ---------------------------------------------------------------------------

struct Primal {
  double V = 1.0, q = 0.5, m = 0.01, h = 0.0;
};

struct Conjugate {
  double Vhat = 0.0, qhat = 0.0, mhat = 0.0, hhat = 0.0;
};

struct ClusterOverlaps {
  double V = 1.0, q = 0.5, m = 0.01, h = 0.0;
  double Vhat = 0.0, qhat = 0.0, mhat = 0.0, hhat = 0.0;
  double rho = 0.0, pi = 0.0;

  Primal primal() const { return {V, q, m, h}; }
  Conjugate conjugate() const { return {Vhat, qhat, mhat, hhat}; }
  void set(const Primal& p) { V = p.V; q = p.q; m = p.m; h = p.h; }
  void set(const Conjugate& c) { Vhat = c.Vhat; qhat = c.qhat; mhat = c.mhat; hhat = c.hhat; }
};

struct OverlapState {
  std::vector<ClusterOverlaps> clusters;

  std::size_t size() const { return clusters.size(); }
  ClusterOverlaps& operator[](std::size_t c) { return clusters[c]; }
  const ClusterOverlaps& operator[](std::size_t c) const { return clusters[c]; }
};

enum class SolveStatus { Converged, MaxIterations, Diverging };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max_iterations";
    default: return "diverging";
  }
}

struct SaddleSolution {
  OverlapState overlaps;
  double residual = 0.0;
  int iterations = 0;
  double train_error = 0.0;
  double gen_error = 0.0;
  bool converged = false;
  SolveStatus status = SolveStatus::MaxIterations;
};

}  // namespace gmix
