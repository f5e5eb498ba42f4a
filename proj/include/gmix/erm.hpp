#pragma once

// Finite-size empirical risk minimization: mixture sampling, ridge and
// logistic fits under sum_nu l(y, theta'x/sqrt(d)) + (lambda/2)|theta|^2,
// and seeded Monte Carlo over alpha grids.

#include "gmix/model.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace gmix {

// ---------------------------------------------------------------------------
// Seeds and parallel map
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based child seed; independent of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ (b + 0x632be59bd9b4e019ULL));
  return splitmix64(s ^ (c + 0x85157af5ULL));
}

inline int default_workers() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : int(n);
}

/// Runs task(i) for i in [0, count) on up to `workers` threads. Each task
/// writes only its own slot, so results do not depend on scheduling.
inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& task) {
  workers = std::max(1, std::min<int>(workers, int(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct Provenance {
  std::uint64_t seed = 0;
  std::string source;                // "mixture" or a file path
  std::vector<int> cluster_index;    // per sample, empty for corpora
};

struct Dataset {
  Matrix X;  // n x d
  Vector y;
  Provenance provenance;

  Index n() const { return X.rows(); }
  Index d() const { return X.cols(); }

  void validate(bool classification) const {
    if (X.rows() < 1) throw DomainError("dataset is empty");
    if (y.size() != X.rows()) throw DimensionError("dataset labels/features length mismatch");
    if (!X.allFinite() || !y.allFinite()) throw DomainError("dataset has non-finite entries");
    if (classification)
      for (Index i = 0; i < y.size(); ++i)
        if (y[i] != 1.0 && y[i] != -1.0)
          throw DomainError("label " + std::to_string(i) + " is not +-1");
  }
};

/// Draws from sum_c p_c N(mu_c/sqrt(d), Sigma_c); dense covariances are factored once.
class MixtureSampler {
 public:
  explicit MixtureSampler(const MixtureModel& model) : model_(model) {
    const Index d = model.dimension();
    for (const auto& c : model.clusters()) {
      if (c.covariance.is_diagonal()) {
        scale_.push_back(c.covariance.diagonal_entries(d).cwiseSqrt());
        chol_.emplace_back();
      } else {
        Eigen::LLT<Matrix> llt(c.covariance.to_dense(d));
        if (llt.info() != Eigen::Success) throw NumericalError("covariance Cholesky failed");
        chol_.push_back(llt.matrixL());
        scale_.emplace_back();
      }
      mean_.push_back(c.mean / std::sqrt(double(d)));
    }
  }

  Dataset sample(const TeacherSpec& teacher, Index n, std::uint64_t seed) const {
    if (n < 1) throw DomainError("sample size must be >= 1");
    const Index d = model_.dimension();
    if (teacher.theta0.size() != d) throw DimensionError("teacher/model dimension mismatch");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;
    Dataset ds;
    ds.X.resize(n, d);
    ds.y.resize(n);
    ds.provenance.seed = seed;
    ds.provenance.source = "mixture";
    ds.provenance.cluster_index.resize(n);
    const double sqrt_d = std::sqrt(double(d));
    const double noise = std::sqrt(teacher.channel.delta);
    Vector z(d);
    for (Index i = 0; i < n; ++i) {
      const double u = unif(rng);
      std::size_t c = 0;
      double acc = model_.cluster(0).weight;
      while (u >= acc && c + 1 < model_.size()) acc += model_.cluster(++c).weight;
      ds.provenance.cluster_index[i] = int(c);
      for (Index j = 0; j < d; ++j) z[j] = normal(rng);
      if (scale_[c].size() > 0)
        ds.X.row(i) = (mean_[c] + scale_[c].cwiseProduct(z)).transpose();
      else
        ds.X.row(i) = (mean_[c] + chol_[c] * z).transpose();
      const double tau = ds.X.row(i).dot(teacher.theta0) / sqrt_d;
      const double field = tau + noise * normal(rng);
      ds.y[i] = teacher.channel.is_classification() ? sign_pm(field) : field;
    }
    return ds;
  }

 private:
  const MixtureModel& model_;
  std::vector<Vector> scale_;
  std::vector<Matrix> chol_;
  std::vector<Vector> mean_;
};

inline Dataset sample_mixture(const MixtureModel& model, const TeacherSpec& teacher, Index n,
                              std::uint64_t seed) {
  return MixtureSampler(model).sample(teacher, n, seed);
}

// ---------------------------------------------------------------------------
// Fits
// ---------------------------------------------------------------------------

enum class FitStatus { Ok, Separable, MaxIterations };

inline const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::Ok: return "ok";
    case FitStatus::Separable: return "separable";
    default: return "max_iterations";
  }
}

struct FitResult {
  Vector theta_hat;
  double train_error = 0.0;
  int iterations = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  FitStatus status = FitStatus::Ok;
};

inline Vector predict(const Vector& theta, const Matrix& X) {
  return X * theta / std::sqrt(double(X.cols()));
}

inline double empirical_metric(Metric metric, LossKind loss, const Vector& y, const Vector& yhat) {
  if (y.size() == 0) throw DomainError("empirical error over an empty set");
  double acc = 0.0;
  for (Index i = 0; i < y.size(); ++i) acc += metric_value(metric, loss, y[i], yhat[i]);
  return acc / double(y.size());
}

inline double erm_objective(LossKind loss, const Dataset& data, const Vector& theta, double lambda) {
  const Vector z = predict(theta, data.X);
  double acc = 0.0;
  for (Index i = 0; i < z.size(); ++i) acc += loss_value(loss, data.y[i], z[i]);
  return acc + 0.5 * lambda * theta.squaredNorm();
}

/// Gradient of the regularized objective.
inline Vector erm_gradient(LossKind loss, const Dataset& data, const Vector& theta, double lambda) {
  const double sqrt_d = std::sqrt(double(data.d()));
  const Vector z = predict(theta, data.X);
  Vector r(z.size());
  for (Index i = 0; i < z.size(); ++i) r[i] = loss_d1(loss, data.y[i], z[i]);
  return data.X.transpose() * r / sqrt_d + lambda * theta;
}

/// theta = (Xs'Xs + lambda I)^-1 Xs'y for n >= d, Xs'(Xs Xs' + lambda I)^-1 y otherwise; Xs = X/sqrt(d).
inline FitResult ridge_fit(const Dataset& data, double lambda, Metric metric = Metric::Regression) {
  if (!(lambda >= 0.0)) throw DomainError("ridge: lambda must be nonnegative");
  data.validate(false);
  const Index n = data.n(), d = data.d();
  const Matrix Xs = data.X / std::sqrt(double(d));
  FitResult fr;
  auto check = [&](const Eigen::LDLT<Matrix>& f) {
    if (f.info() != Eigen::Success || !(f.vectorD().minCoeff() > 0.0))
      throw NumericalError("ridge: singular system (degenerate design at lambda = 0)");
  };
  if (n >= d) {
    Matrix G = Xs.transpose() * Xs;
    G.diagonal().array() += lambda;
    Eigen::LDLT<Matrix> f(G);
    check(f);
    fr.theta_hat = f.solve(Xs.transpose() * data.y);
  } else {
    Matrix G = Xs * Xs.transpose();
    G.diagonal().array() += lambda;
    Eigen::LDLT<Matrix> f(G);
    check(f);
    fr.theta_hat = Xs.transpose() * f.solve(data.y);
  }
  fr.objective = erm_objective(LossKind::SquareHalf, data, fr.theta_hat, lambda);
  fr.grad_norm = erm_gradient(LossKind::SquareHalf, data, fr.theta_hat, lambda).norm();
  fr.train_error = empirical_metric(metric, LossKind::SquareHalf, data.y, predict(fr.theta_hat, data.X));
  return fr;
}

struct LogisticOptions {
  int max_iterations = 200;
  double grad_tol_per_sample = 1e-8;
  double separable_norm = 1e6;
};

/// Newton with Armijo backtracking. At lambda = 0 a fit that classifies every
/// sample with positive margin, or whose norm passes 1e6, is reported Separable.
inline FitResult logistic_fit(const Dataset& data, double lambda,
                              Metric metric = Metric::Classification, const LogisticOptions& opt = {}) {
  if (!(lambda >= 0.0)) throw DomainError("logistic: lambda must be nonnegative");
  data.validate(true);
  const LossKind loss = LossKind::Logistic;
  const Index n = data.n(), d = data.d();
  const Matrix Xs = data.X / std::sqrt(double(d));
  FitResult fr;
  Vector theta = Vector::Zero(d);
  double f = erm_objective(loss, data, theta, lambda);
  const double gtol = opt.grad_tol_per_sample * double(n);
  fr.status = FitStatus::MaxIterations;
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Vector z = Xs * theta;
    Vector r(n), w(n);
    for (Index i = 0; i < n; ++i) {
      r[i] = loss_d1(loss, data.y[i], z[i]);
      w[i] = loss_d2(loss, data.y[i], z[i]);
    }
    const Vector g = Xs.transpose() * r + lambda * theta;
    fr.iterations = it;
    fr.grad_norm = g.norm();
    if (fr.grad_norm <= gtol) {
      fr.status = FitStatus::Ok;
      break;
    }
    if (lambda == 0.0) {
      if ((data.y.array() * z.array() > 0.0).all() || theta.norm() > opt.separable_norm) {
        fr.status = FitStatus::Separable;
        break;
      }
    }
    Matrix H = Xs.transpose() * w.asDiagonal() * Xs;
    H.diagonal().array() += std::max(lambda, 1e-12);
    const Vector step = H.ldlt().solve(-g);
    const double slope = g.dot(step);
    double t = 1.0;
    Vector cand = theta + step;
    double fc = erm_objective(loss, data, cand, lambda);
    while (fc > f + 1e-4 * t * slope && t > 1e-12) {
      t *= 0.5;
      cand = theta + t * step;
      fc = erm_objective(loss, data, cand, lambda);
    }
    if (!(fc <= f)) {
      // no descent left at machine precision
      fr.status = FitStatus::Ok;
      break;
    }
    theta = cand;
    f = fc;
  }
  fr.theta_hat = theta;
  fr.objective = erm_objective(loss, data, theta, lambda);
  fr.train_error = empirical_metric(metric, loss, data.y, predict(theta, data.X));
  return fr;
}

inline FitResult fit(LossKind loss, const Dataset& data, double lambda, Metric metric) {
  return loss == LossKind::SquareHalf ? ridge_fit(data, lambda, metric)
                                      : logistic_fit(data, lambda, metric);
}

struct EmpiricalErrors {
  double train = 0.0;
  double gen = 0.0;
};

inline EmpiricalErrors empirical_errors(const FitResult& fit, LossKind loss, const Dataset& train,
                                        const Dataset& test, Metric metric) {
  if (test.n() == 0) throw DomainError("empty test set");
  return {empirical_metric(metric, loss, train.y, predict(fit.theta_hat, train.X)),
          empirical_metric(metric, loss, test.y, predict(fit.theta_hat, test.X))};
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

struct MonteCarloConfig {
  std::vector<double> alpha_grid;
  double lambda = 0.1;
  int reps = 30;
  std::uint64_t master_seed = 0;
  Index test_size = 0;  // 0 -> max(1e4, 10 d)
  int workers = 1;
  Metric metric = Metric::Regression;
};

struct MonteCarloRow {
  double alpha = 0.0;
  Index n = 0;
  double train_mean = 0.0, train_se = 0.0;
  double gen_mean = 0.0, gen_se = 0.0;
  int ok_reps = 0;
  int failed_reps = 0;
  std::string first_error;
  bool failed() const { return ok_reps == 0; }
};

struct RepOutcome {
  bool ok = false;
  double train = 0.0, gen = 0.0;
  std::string error;
};

namespace detail {
inline void mean_se(const std::vector<double>& v, double& mean, double& se) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  se = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1) / double(v.size())) : 0.0;
}

/// Outcomes laid out grid-major, `reps` per grid point.
inline std::vector<MonteCarloRow> aggregate_reps(const std::vector<double>& alpha_grid, Index d,
                                                 std::size_t reps, const std::vector<RepOutcome>& out) {
  std::vector<MonteCarloRow> rows;
  for (std::size_t g = 0; g < alpha_grid.size(); ++g) {
    MonteCarloRow row;
    row.alpha = alpha_grid[g];
    row.n = std::max<Index>(1, Index(std::llround(row.alpha * double(d))));
    std::vector<double> tr, ge;
    for (std::size_t r = 0; r < reps; ++r) {
      const auto& s = out[g * reps + r];
      if (s.ok) {
        tr.push_back(s.train);
        ge.push_back(s.gen);
      } else {
        ++row.failed_reps;
        if (row.first_error.empty()) row.first_error = s.error;
      }
    }
    row.ok_reps = int(tr.size());
    if (!tr.empty()) {
      mean_se(tr, row.train_mean, row.train_se);
      mean_se(ge, row.gen_mean, row.gen_se);
    }
    rows.push_back(row);
  }
  return rows;
}
}  // namespace detail

/// Per grid point, `reps` independent train/test draws with seeds derived from
/// (master_seed, grid index, rep). A rep that throws is recorded, not fatal.
inline std::vector<MonteCarloRow> monte_carlo(const MixtureModel& model, const TeacherSpec& teacher,
                                              LossKind loss, const MonteCarloConfig& cfg) {
  if (cfg.reps < 2) throw DomainError("monte carlo needs reps >= 2");
  const Index d = model.dimension();
  const Index test_n = cfg.test_size > 0 ? cfg.test_size : std::max<Index>(10000, 10 * d);
  const MixtureSampler sampler(model);
  const std::size_t G = cfg.alpha_grid.size();
  const std::size_t R = std::size_t(cfg.reps);
  std::vector<RepOutcome> slots(G * R);
  parallel_for(G * R, cfg.workers, [&](std::size_t k) {
    const std::size_t g = k / R, r = k % R;
    const Index n = std::max<Index>(1, Index(std::llround(cfg.alpha_grid[g] * double(d))));
    try {
      const auto train = sampler.sample(teacher, n, derive_seed(cfg.master_seed, g, r, 0));
      const auto test = sampler.sample(teacher, test_n, derive_seed(cfg.master_seed, g, r, 1));
      const auto fr = fit(loss, train, cfg.lambda, cfg.metric);
      const auto e = empirical_errors(fr, loss, train, test, cfg.metric);
      slots[k] = {true, e.train, e.gen, {}};
    } catch (const std::exception& ex) {
      slots[k] = {false, 0.0, 0.0, ex.what()};
    }
  });
  return detail::aggregate_reps(cfg.alpha_grid, d, R, slots);
}

}  // namespace gmix
