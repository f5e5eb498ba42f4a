#pragma once

// Theory-vs-simulation drivers: the correlated-teacher Omega sweep and
// learning curves on a fixed feature corpus.

#include "gmix/closed_forms.hpp"
#include "gmix/erm.hpp"
#include "gmix/families.hpp"
#include "gmix/replica.hpp"

#include <numeric>
#include <optional>
#include <vector>

namespace gmix {

struct OmegaSweepConfig {
  double gamma = 1.0;
  std::vector<double> omegas;
  double alpha = 1.2;
  double lambda = 0.7;
  Index d = 500;
  int reps = 30;
  std::uint64_t master_seed = 0;
  Index test_size = 0;
  int workers = 1;
  LossKind loss = LossKind::SquareHalf;
  TeacherChannel channel = TeacherChannel::gaussian(0.0);
  SolverConfig solver{};
};

struct OmegaSweepRow {
  double omega = 0.0;
  double pi = 0.0;
  MonteCarloRow simulation;
  SaddleSolution gmm;
  SaddleSolution gcm;                         // centered single Gaussian, Sigma = I
  std::optional<ClosedFormErrors> closed;     // ridge + Gaussian labels only
};

inline std::vector<OmegaSweepRow> omega_sweep(const OmegaSweepConfig& cfg) {
  const Metric metric = default_metric(cfg.channel);
  std::vector<OmegaSweepRow> rows;
  for (std::size_t k = 0; k < cfg.omegas.size(); ++k) {
    OmegaSweepRow row;
    row.omega = cfg.omegas[k];
    row.pi = pi_from_omega(row.omega, cfg.gamma, cfg.gamma);
    SolverConfig sc = cfg.solver;
    sc.alpha = cfg.alpha;
    sc.lambda = cfg.lambda;
    // the theory only sees (rho, gamma, pi); d = 2 carries them exactly
    const auto small = omega_family(2, cfg.gamma, row.omega, cfg.channel);
    row.gmm = solve(small.model, small.teacher, cfg.loss, sc, metric);
    row.gcm = solve(gcm_baseline(small.model), small.teacher, cfg.loss, sc, metric);
    if (cfg.loss == LossKind::SquareHalf && !cfg.channel.is_classification())
      row.closed = mixture_errors({cfg.alpha, cfg.lambda, cfg.gamma, cfg.gamma, row.pi, cfg.channel.delta});
    if (cfg.reps > 0) {
      const auto big = omega_family(cfg.d, cfg.gamma, row.omega, cfg.channel);
      MonteCarloConfig mc;
      mc.alpha_grid = {cfg.alpha};
      mc.lambda = cfg.lambda;
      mc.reps = cfg.reps;
      mc.master_seed = derive_seed(cfg.master_seed, 0x0e6a, k);
      mc.test_size = cfg.test_size;
      mc.workers = cfg.workers;
      mc.metric = metric;
      row.simulation = monte_carlo(big.model, big.teacher, cfg.loss, mc).front();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

struct CorpusCurveConfig {
  std::vector<double> alpha_grid;
  double lambda = 0.1;
  int reps = 10;
  std::uint64_t master_seed = 0;
  Index test_size = 0;  // 0 -> every row not used for training
  int workers = 1;
  Metric metric = Metric::Regression;
};

/// Learning curve on fixed features/labels: per (alpha, rep) a seeded
/// permutation picks n = alpha d training rows, the test rows come after them.
inline std::vector<MonteCarloRow> corpus_learning_curve(const Matrix& X, const Vector& y, LossKind loss,
                                                        const CorpusCurveConfig& cfg) {
  if (cfg.reps < 2) throw DomainError("learning curve needs reps >= 2");
  if (y.size() != X.rows()) throw DimensionError("features/labels length mismatch");
  const Index N = X.rows(), d = X.cols();
  const std::size_t G = cfg.alpha_grid.size(), R = std::size_t(cfg.reps);
  std::vector<RepOutcome> slots(G * R);
  parallel_for(G * R, cfg.workers, [&](std::size_t k) {
    const std::size_t g = k / R, r = k % R;
    const Index n = std::max<Index>(1, Index(std::llround(cfg.alpha_grid[g] * double(d))));
    try {
      if (n >= N) throw DomainError("corpus too small for alpha = " + std::to_string(cfg.alpha_grid[g]));
      std::vector<Index> perm(static_cast<std::size_t>(N));
      std::iota(perm.begin(), perm.end(), Index(0));
      std::mt19937_64 rng(derive_seed(cfg.master_seed, g, r));
      std::shuffle(perm.begin(), perm.end(), rng);
      const Index nt = cfg.test_size > 0 ? std::min(cfg.test_size, N - n) : N - n;
      Dataset train, test;
      train.X.resize(n, d);
      train.y.resize(n);
      test.X.resize(nt, d);
      test.y.resize(nt);
      for (Index i = 0; i < n; ++i) {
        train.X.row(i) = X.row(perm[std::size_t(i)]);
        train.y[i] = y[perm[std::size_t(i)]];
      }
      for (Index i = 0; i < nt; ++i) {
        test.X.row(i) = X.row(perm[std::size_t(n + i)]);
        test.y[i] = y[perm[std::size_t(n + i)]];
      }
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
