#include "gmix/closed_forms.hpp"
#include "gmix/families.hpp"
#include "gmix/replica.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace gmix;

namespace {

Matrix random_spd(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix g(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) g(i, j) = n(rng);
  Matrix s = g * g.transpose() / double(d) + 0.2 * Matrix::Identity(d, d);
  return 0.5 * (s + s.transpose());
}

Vector random_vector(Index d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(d);
  for (Index i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

// An admissible overlap state for the given teacher overlaps.
OverlapState random_state(const std::vector<TeacherOverlap>& t, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  OverlapState st;
  for (const auto& to : t) {
    ClusterOverlaps o;
    o.rho = to.rho;
    o.pi = to.pi;
    o.V = 0.2 + 2.0 * u(rng);
    o.q = 0.1 + 2.0 * u(rng);
    o.m = (2.0 * u(rng) - 1.0) * 0.9 * std::sqrt(o.rho * o.q);
    o.h = 2.0 * u(rng) - 1.0;
    st.clusters.push_back(o);
  }
  return st;
}

std::vector<Conjugate> random_hats(std::size_t K, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 2.0), s(-1.0, 1.0);
  std::vector<Conjugate> h(K);
  for (auto& c : h) c = {u(rng), u(rng), s(rng), s(rng)};
  return h;
}

// Simpson over [a, b] against the standard normal density.
template <class F>
double simpson_normal(F&& f, double a, double b, int n = 20000) {
  if (b <= a) return 0.0;
  const double dx = (b - a) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = a + i * dx;
    acc += (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0)) * normal_pdf(x) * f(x);
  }
  return acc * dx / 3.0;
}

// Where an increasing function of xi crosses zero on [-10, 10], by bisection.
template <class F>
double crossing(F&& g) {
  double lo = -10.0, hi = 10.0;
  if (g(lo) >= 0) return lo;
  if (g(hi) < 0) return hi;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0 ? lo : hi) = mid;
  }
  return hi;
}

SolverConfig tight(double alpha, double lambda) {
  SolverConfig c;
  c.alpha = alpha;
  c.lambda = lambda;
  c.tolerance = 1e-12;
  c.max_iterations = 50000;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conjugate updates
// ---------------------------------------------------------------------------

TEST(Hats, RidgeQuadratureMatchesAnalytic) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const double rho = 0.5 + trial % 3, gamma = 0.7, pi = 0.3 * ((trial % 5) - 2) / 2.0;
    const auto pb = two_cluster_isotropic(4, rho, gamma, std::clamp(pi, -0.5, 0.5),
                                          TeacherChannel::gaussian(0.1 * (trial % 4)));
    ReplicaProblem prob(pb.model, pb.teacher, LossKind::SquareHalf);
    const auto st = random_state(prob.teacher_overlaps(), rng);
    const double alpha = 0.3 + 0.1 * trial;
    const auto a = update_hats(st, prob, alpha, false);
    const auto q = update_hats(st, prob, alpha, true);
    for (std::size_t c = 0; c < a.size(); ++c) {
      EXPECT_NEAR(a[c].Vhat, q[c].Vhat, 1e-10 * (1 + std::abs(a[c].Vhat)));
      EXPECT_NEAR(a[c].qhat, q[c].qhat, 1e-10 * (1 + std::abs(a[c].qhat)));
      EXPECT_NEAR(a[c].mhat, q[c].mhat, 1e-10 * (1 + std::abs(a[c].mhat)));
      EXPECT_NEAR(a[c].hhat, q[c].hhat, 1e-10 * (1 + std::abs(a[c].hhat)));
    }
    const auto ea = evaluate_errors(st, prob, Metric::Regression, false);
    const auto eq = evaluate_errors(st, prob, Metric::Regression, true);
    EXPECT_NEAR(ea.train, eq.train, 1e-10 * (1 + ea.train));
    EXPECT_NEAR(ea.gen, eq.gen, 1e-10 * (1 + ea.gen));
  }
}

TEST(Hats, SymmetricLogisticHasNoBiasConjugate) {
  // odd f, even Z0 around pi = h = 0
  const auto model = MixtureModel::gaussian(Vector::Zero(4), Covariance::isotropic(1.0));
  const TeacherSpec t{Vector::Ones(4), TeacherChannel::sign(0.3)};
  ReplicaProblem prob(model, t, LossKind::Logistic);
  OverlapState st;
  ClusterOverlaps o;
  o.rho = 1.0;
  o.pi = 0.0;
  o.V = 0.8;
  o.q = 0.6;
  o.m = 0.4;
  o.h = 0.0;
  st.clusters.push_back(o);
  const auto h = update_hats(st, prob, 1.7);
  EXPECT_NEAR(h[0].hhat, 0.0, 1e-14);
  EXPECT_GT(h[0].Vhat, 0.0);
  EXPECT_GT(h[0].qhat, 0.0);
}

TEST(Hats, NegativeConditionalVarianceThrows) {
  const auto model = MixtureModel::gaussian(Vector::Zero(2), Covariance::isotropic(1.0));
  const TeacherSpec t{Vector::Ones(2), TeacherChannel::sign(0.0)};
  OverlapState st;
  ClusterOverlaps o;
  o.rho = 1.0;
  o.q = 0.5;
  o.m = 0.9;  // m^2 > rho q
  st.clusters.push_back(o);
  EXPECT_THROW(update_hats(st, model, t, LossKind::Logistic, 1.0), NumericalError);
}

// ---------------------------------------------------------------------------
// Overlap updates
// ---------------------------------------------------------------------------

TEST(Overlaps, SingleIsotropicClusterScalarReduction) {
  std::mt19937_64 rng(3);
  const Index d = 50;
  const Vector mu = random_vector(d, rng), th = random_vector(d, rng);
  const auto model = MixtureModel::gaussian(mu, Covariance::isotropic(1.0));
  const TeacherSpec t{th, TeacherChannel::gaussian(0.0)};
  const double rho = th.squaredNorm() / d, gamma = mu.squaredNorm() / d, pi = mu.dot(th) / d;
  for (int trial = 0; trial < 20; ++trial) {
    const auto hats = random_hats(1, rng);
    const double lambda = 0.05 * (trial + 1);
    const auto& c = hats[0];
    const double A = lambda + c.Vhat;
    const auto p = update_overlaps_l2(hats, model, t, lambda)[0];
    EXPECT_NEAR(p.V, 1.0 / A, 1e-13);
    EXPECT_NEAR(p.q,
                (c.qhat + c.hhat * c.hhat * gamma + 2 * c.hhat * c.mhat * pi + c.mhat * c.mhat * rho) / (A * A),
                1e-12);
    EXPECT_NEAR(p.m, (c.hhat * pi + c.mhat * rho) / A, 1e-13);
    EXPECT_NEAR(p.h, (c.hhat * gamma + c.mhat * pi) / A, 1e-13);
  }
}

TEST(Overlaps, SymmetricTwoClusterReduction) {
  // mu_+- = +-mu, Sigma = I: with H = hhat+ - hhat-, M = mhat+ + mhat-, Q = qhat+ + qhat-,
  // A = lambda + Vhat+ + Vhat-: V = 1/A, q = (Q + rho M^2 + 2 pi M H + gamma H^2)/A^2,
  // m = (H pi + M rho)/A, h+- = +-(H gamma + M pi)/A.
  std::mt19937_64 rng(5);
  const double rho = 1.3, gamma = 0.8, pi = 0.4;
  const auto pb = two_cluster_isotropic(40, rho, gamma, pi, TeacherChannel::gaussian(0.0));
  for (int trial = 0; trial < 20; ++trial) {
    const auto hats = random_hats(2, rng);
    const double lambda = 0.01 + 0.1 * trial;
    const double A = lambda + hats[0].Vhat + hats[1].Vhat;
    const double H = hats[0].hhat - hats[1].hhat, M = hats[0].mhat + hats[1].mhat;
    const double Q = hats[0].qhat + hats[1].qhat;
    const auto p = update_overlaps_l2(hats, pb.model, pb.teacher, lambda);
    for (int c = 0; c < 2; ++c) {
      EXPECT_NEAR(p[c].V, 1.0 / A, 1e-13);
      EXPECT_NEAR(p[c].q, (Q + rho * M * M + 2 * pi * M * H + gamma * H * H) / (A * A), 1e-12);
      EXPECT_NEAR(p[c].m, (H * pi + M * rho) / A, 1e-12);
    }
    EXPECT_NEAR(p[0].h, (H * gamma + M * pi) / A, 1e-12);
    EXPECT_NEAR(p[1].h, -(H * gamma + M * pi) / A, 1e-12);
  }
}

TEST(Overlaps, DenseAndDiagonalRoutesAgree) {
  std::mt19937_64 rng(11);
  const Index d = 64;
  std::uniform_real_distribution<double> u(0.2, 3.0);
  Vector s1(d), s2(d);
  for (Index i = 0; i < d; ++i) {
    s1[i] = u(rng);
    s2[i] = u(rng);
  }
  const Vector m1 = random_vector(d, rng), m2 = random_vector(d, rng), th = random_vector(d, rng);
  MixtureModel diag({{0.3, m1, Covariance::diagonal(s1)}, {0.7, m2, Covariance::diagonal(s2)}}, d);
  MixtureModel dense({{0.3, m1, Covariance::dense(Matrix(s1.asDiagonal()))},
                      {0.7, m2, Covariance::dense(Matrix(s2.asDiagonal()))}},
                     d);
  const TeacherSpec t{th, TeacherChannel::gaussian(0.0)};
  ResolventGeometry gd(diag, t, false), gD(dense, t, false);
  ASSERT_EQ(gd.mode(), ResolventGeometry::Mode::Diagonal);
  ASSERT_EQ(gD.mode(), ResolventGeometry::Mode::Dense);
  for (int trial = 0; trial < 10; ++trial) {
    const auto hats = random_hats(2, rng);
    const auto a = gd.overlaps(hats, 0.3), b = gD.overlaps(hats, 0.3);
    for (int c = 0; c < 2; ++c) {
      EXPECT_NEAR(a[c].V, b[c].V, 1e-12);
      EXPECT_NEAR(a[c].q, b[c].q, 1e-12 * (1 + a[c].q));
      EXPECT_NEAR(a[c].m, b[c].m, 1e-12);
      EXPECT_NEAR(a[c].h, b[c].h, 1e-12);
    }
  }
}

TEST(Overlaps, RotatedHomoscedasticMatchesDense) {
  std::mt19937_64 rng(13);
  const Index d = 30;
  const Matrix S = random_spd(d, rng);
  const Vector mu = random_vector(d, rng), th = random_vector(d, rng);
  MixtureModel m({{0.4, mu, Covariance::dense(S)}, {0.6, -mu, Covariance::dense(S)}}, d);
  const TeacherSpec t{th, TeacherChannel::gaussian(0.0)};
  ResolventGeometry rot(m, t, true), plain(m, t, false);
  ASSERT_EQ(rot.mode(), ResolventGeometry::Mode::Diagonal);
  ASSERT_EQ(plain.mode(), ResolventGeometry::Mode::Dense);
  const auto hats = random_hats(2, rng);
  const auto a = rot.overlaps(hats, 0.1), b = plain.overlaps(hats, 0.1);
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(a[c].V, b[c].V, 1e-10);
    EXPECT_NEAR(a[c].q, b[c].q, 1e-10 * (1 + b[c].q));
    EXPECT_NEAR(a[c].m, b[c].m, 1e-10);
    EXPECT_NEAR(a[c].h, b[c].h, 1e-10);
  }
}

TEST(Overlaps, SingularResolventThrows) {
  const auto model = MixtureModel::gaussian(Vector::Zero(3), Covariance::dense(Matrix::Identity(3, 3)));
  const TeacherSpec t{Vector::Ones(3), TeacherChannel::gaussian(0.0)};
  ResolventGeometry g(model, t, false);
  std::vector<Conjugate> hats{{0.0, 1.0, 0.0, 0.0}};
  EXPECT_THROW(g.overlaps(hats, 0.0), NumericalError);
  ResolventGeometry gd(MixtureModel::gaussian(Vector::Zero(3), Covariance::isotropic(1.0)), t, false);
  EXPECT_THROW(gd.overlaps(hats, 0.0), NumericalError);
}

// ---------------------------------------------------------------------------
// Error functionals
// ---------------------------------------------------------------------------

TEST(Errors, ClassificationAtIndependenceIsHalf) {
  ClusterOverlaps o;
  o.rho = 1.0;
  o.pi = 0.0;
  o.q = 0.7;
  o.m = 0.0;
  o.h = 0.0;
  o.V = 1.0;
  EXPECT_NEAR(detail::classification_errors(o, 0.5, LossKind::Logistic).gen, 0.5, 1e-15);
}

TEST(Errors, ClassificationGenIsArccosOverPi) {
  for (double r : {-0.8, -0.2, 0.1, 0.5, 0.95}) {
    ClusterOverlaps o;
    o.rho = 1.0;
    o.q = 2.0;
    const double delta = 0.4;
    o.m = r * std::sqrt(o.q * (o.rho + delta));
    const double e = detail::classification_errors(o, delta, LossKind::Logistic).gen;
    EXPECT_NEAR(e, std::acos(r) / std::numbers::pi, 1e-13);
  }
}

TEST(Errors, ClassificationMatchesDirectIntegral) {
  // Oracle: sum_y of the xi integral of Z0 over the side where the field has the wrong sign.
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 12; ++trial) {
    ClusterOverlaps o;
    o.rho = 0.5 + u(rng);
    o.pi = u(rng) - 0.5;
    o.q = 0.2 + u(rng);
    o.m = (2 * u(rng) - 1) * 0.9 * std::sqrt(o.rho * o.q);
    o.h = 0.6 * (u(rng) - 0.5);
    o.V = 0.3 + 2 * u(rng);
    const double delta = 0.5 * u(rng);
    const auto ch = TeacherChannel::sign(delta);
    const auto ct = detail::conditional_teacher(o);
    for (LossKind loss : {LossKind::Logistic, LossKind::SquareHalf}) {
      const auto e = detail::classification_errors(o, delta, loss);
      const double sq = std::sqrt(o.q);
      double gen = 0.0, tr = 0.0;
      for (double y : {1.0, -1.0}) {
        auto w = [&](double xi) { return z0(ch, y, o.pi + ct.slope * xi, ct.cond_var); };
        // mislabelled side of a field that is increasing in xi
        auto integrate_wrong = [&](double xs) {
          return y > 0 ? simpson_normal(w, -10.0, xs) : simpson_normal(w, xs, 10.0);
        };
        gen += integrate_wrong(crossing([&](double xi) { return o.h + sq * xi; }));
        tr += integrate_wrong(crossing([&](double xi) { return prox(loss, y, o.h + sq * xi, o.V); }));
      }
      EXPECT_NEAR(e.gen, gen, 1e-10);
      EXPECT_NEAR(e.train, tr, 1e-10);
    }
  }
}

TEST(Errors, ClassificationMatchesMonteCarlo) {
  ClusterOverlaps o;
  o.rho = 1.2;
  o.pi = 0.3;
  o.q = 0.9;
  o.m = 0.5;
  o.h = -0.1;
  o.V = 1.0;
  const double delta = 0.2;
  const auto e = detail::classification_errors(o, delta, LossKind::Logistic);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n;
  const int N = 2'000'000;
  const double slope = o.m / std::sqrt(o.q), cv = o.rho - o.m * o.m / o.q;
  long miss = 0;
  for (int i = 0; i < N; ++i) {
    const double xi = n(rng);
    const double u = o.pi + slope * xi + std::sqrt(cv + delta) * n(rng);
    const double nu = o.h + std::sqrt(o.q) * xi;
    miss += ((u >= 0) != (nu >= 0));
  }
  const double p = double(miss) / N;
  EXPECT_NEAR(e.gen, p, 5 * std::sqrt(p * (1 - p) / N));
}

TEST(Errors, ClassificationMetricNeedsSignLabels) {
  const auto model = MixtureModel::gaussian(Vector::Zero(2), Covariance::isotropic(1.0));
  const TeacherSpec t{Vector::Ones(2), TeacherChannel::gaussian(0.1)};
  ReplicaProblem prob(model, t, LossKind::SquareHalf);
  const auto st = preset_state(prob.teacher_overlaps());
  EXPECT_THROW(evaluate_errors(st, prob, Metric::Classification), DomainError);
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

TEST(Solve, VanishingPenaltyRidgeNoiseOnly) {
  const auto pb = two_cluster_isotropic(2, 1.0, 1.0, 0.0, TeacherChannel::gaussian(0.3));
  const auto s = solve(pb.model, pb.teacher, LossKind::SquareHalf, tight(2.0, 1e-10));
  ASSERT_TRUE(s.converged);
  EXPECT_NEAR(s.train_error, 0.15, 1e-6);
  EXPECT_NEAR(s.gen_error, 0.6, 1e-6);
}

TEST(Solve, VTimesVhatIsEta) {
  const auto pb = two_cluster_isotropic(2, 1.0, 1.0, 0.5, TeacherChannel::gaussian(0.2));
  for (double a : {0.5, 2.0, 3.5}) {
    for (double l : {0.1, 1.0}) {
      const auto s = solve(pb.model, pb.teacher, LossKind::SquareHalf, tight(a, l));
      ASSERT_TRUE(s.converged);
      const auto& o = s.overlaps.clusters;
      EXPECT_NEAR(o[0].V * (o[0].Vhat + o[1].Vhat), eta(a, l), 1e-10) << a << " " << l;
    }
  }
}

TEST(Solve, FixedPointResidual) {
  const auto pb = two_cluster_isotropic(2, 1.0, 0.5, 0.3, TeacherChannel::sign(0.1));
  SolverConfig cfg;
  cfg.alpha = 1.5;
  cfg.lambda = 0.05;
  const auto s = solve(pb.model, pb.teacher, LossKind::Logistic, cfg);
  ASSERT_TRUE(s.converged);
  ReplicaProblem prob(pb.model, pb.teacher, LossKind::Logistic);
  const auto hats = update_hats(s.overlaps, prob, cfg.alpha);
  const auto next = prob.geometry().overlaps(hats, cfg.lambda);
  for (std::size_t c = 0; c < 2; ++c) {
    const auto& o = s.overlaps[c];
    EXPECT_LE(std::abs(next[c].V - o.V) / std::max(1.0, o.V), 10 * cfg.tolerance);
    EXPECT_LE(std::abs(next[c].q - o.q) / std::max(1.0, o.q), 10 * cfg.tolerance);
    EXPECT_LE(std::abs(next[c].m - o.m), 10 * cfg.tolerance);
    EXPECT_LE(std::abs(next[c].h - o.h), 10 * cfg.tolerance);
  }
}

TEST(Solve, DampingDoesNotMoveTheFixedPoint) {
  const auto pb = two_cluster_isotropic(2, 1.0, 1.0, 0.4, TeacherChannel::sign(0.2));
  std::vector<SaddleSolution> sols;
  for (double dmp : {0.3, 0.5, 0.7}) {
    for (int depth : {0, 5}) {
      SolverConfig cfg = tight(1.3, 0.1);
      cfg.damping = dmp;
      cfg.anderson_depth = depth;
      sols.push_back(solve(pb.model, pb.teacher, LossKind::Logistic, cfg));
      ASSERT_TRUE(sols.back().converged) << dmp << " " << depth;
    }
  }
  for (const auto& s : sols) {
    EXPECT_NEAR(s.gen_error, sols[0].gen_error, 1e-7);
    EXPECT_NEAR(s.train_error, sols[0].train_error, 1e-7);
    EXPECT_NEAR(s.overlaps[0].q, sols[0].overlaps[0].q, 1e-7);
  }
}

TEST(Solve, SpectralGcmMatchesDenseRoute) {
  std::mt19937_64 rng(23);
  const Index d = 40;
  const auto model = MixtureModel::gaussian(Vector::Zero(d), Covariance::dense(random_spd(d, rng)));
  const TeacherSpec t{random_vector(d, rng), TeacherChannel::sign(0.1)};
  SolverConfig cfg = tight(1.7, 0.2);
  cfg.rotate_homoscedastic = false;
  const auto a = solve(model, t, LossKind::Logistic, cfg);
  const auto b = solve_gcm(model, t, LossKind::Logistic, cfg);
  ASSERT_TRUE(a.converged);
  ASSERT_TRUE(b.converged);
  EXPECT_NEAR(a.gen_error, b.gen_error, 1e-10);
  EXPECT_NEAR(a.train_error, b.train_error, 1e-10);
  EXPECT_NEAR(a.overlaps[0].q, b.overlaps[0].q, 1e-9);
  EXPECT_NEAR(a.overlaps[0].m, b.overlaps[0].m, 1e-10);
}

TEST(Solve, HomoscedasticOrthogonalTeacherMatchesGaussian) {
  // pi = 0 and an isotropic resolvent: the cluster means never reach the teacher direction.
  const auto pb = two_cluster_isotropic(2, 1.0, 1.0, 0.0, TeacherChannel::sign(0.25));
  const auto gcm = gcm_baseline(pb.model);
  for (double a : {0.7, 2.5}) {
    const auto cfg = tight(a, 0.1);
    const auto s1 = solve(pb.model, pb.teacher, LossKind::Logistic, cfg);
    const auto s2 = solve(gcm, pb.teacher, LossKind::Logistic, cfg);
    ASSERT_TRUE(s1.converged && s2.converged);
    EXPECT_NEAR(s1.gen_error, s2.gen_error, 1e-8);
    EXPECT_NEAR(s1.train_error, s2.train_error, 1e-8);
  }
  const auto pr = two_cluster_isotropic(2, 1.0, 1.0, 0.0, TeacherChannel::gaussian(0.25));
  const auto s1 = solve(pr.model, pr.teacher, LossKind::SquareHalf, tight(1.5, 0.3));
  const auto s2 = solve(gcm_baseline(pr.model), pr.teacher, LossKind::SquareHalf, tight(1.5, 0.3));
  EXPECT_NEAR(s1.gen_error, s2.gen_error, 1e-8);
  EXPECT_NEAR(s1.train_error, s2.train_error, 1e-8);
}

TEST(Solve, HeteroscedasticRidgeTrainingIdentity) {
  const double delta = 0.5;
  const auto pb = heteroscedastic_mixture(8, TeacherChannel::gaussian(delta));
  for (double a : {1.5, 2.0, 4.0}) {
    const auto s = solve(pb.model, pb.teacher, LossKind::SquareHalf, tight(a, 1e-10));
    ASSERT_TRUE(s.converged);
    EXPECT_NEAR(s.train_error, strong_universality_train(a, delta), 1e-6);
    // covariance structure does show up in the test error
    const auto g = solve(gcm_baseline(pb.model), pb.teacher, LossKind::SquareHalf, tight(a, 1e-10));
    EXPECT_NEAR(g.train_error, s.train_error, 1e-6);
    EXPECT_GT(s.gen_error, g.gen_error);
  }
}

TEST(Solve, MaxIterationsReportsNotConverged) {
  const auto pb = two_cluster_isotropic(2, 1.0, 1.0, 0.4, TeacherChannel::sign(0.2));
  SolverConfig cfg;
  cfg.alpha = 2.0;
  cfg.lambda = 0.1;
  cfg.max_iterations = 3;
  const auto s = solve(pb.model, pb.teacher, LossKind::Logistic, cfg);
  EXPECT_FALSE(s.converged);
  EXPECT_EQ(s.status, SolveStatus::MaxIterations);
  EXPECT_EQ(s.iterations, 3);
  EXPECT_TRUE(std::isfinite(s.gen_error));
}

TEST(Solve, DivergenceIsReported) {
  const auto pb = two_cluster_isotropic(2, 1.0, 1.0, 0.4, TeacherChannel::gaussian(0.2));
  SolverConfig cfg;
  cfg.alpha = 2.0;
  cfg.lambda = 0.1;
  cfg.divergence_threshold = 1e-3;
  const auto s = solve(pb.model, pb.teacher, LossKind::SquareHalf, cfg);
  EXPECT_EQ(s.status, SolveStatus::Diverging);
  EXPECT_FALSE(s.converged);
  EXPECT_TRUE(std::isnan(s.gen_error));
}

TEST(Solve, ConfigValidation) {
  const auto pb = two_cluster_isotropic(2, 1.0, 1.0, 0.0, TeacherChannel::gaussian(0.2));
  SolverConfig cfg;
  cfg.alpha = -1;
  EXPECT_THROW(solve(pb.model, pb.teacher, LossKind::SquareHalf, cfg), DomainError);
  cfg.alpha = 1;
  cfg.damping = 1.0;
  EXPECT_THROW(solve(pb.model, pb.teacher, LossKind::SquareHalf, cfg), DomainError);
}

// ---------------------------------------------------------------------------
// Mean universality and separability
// ---------------------------------------------------------------------------

TEST(MeanUniversality, OrthogonalTeacherHolds) {
  const auto pb = omega_family(4, 1.0, 1.0, TeacherChannel::gaussian(0.1));
  const auto r = mean_universality_check(pb.model, pb.teacher, LossKind::SquareHalf, tight(1.5, 0.1));
  ASSERT_EQ(r.centered_status, SolveStatus::Converged);
  for (double a : r.a) EXPECT_NEAR(a, 0.0, 1e-15);
  EXPECT_LE(r.b.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_TRUE(r.holds);
}

TEST(MeanUniversality, AlignedTeacherFails) {
  const double gamma = 0.8;
  const auto pb = omega_family(4, gamma, 0.0, TeacherChannel::gaussian(0.1));
  const auto r = mean_universality_check(pb.model, pb.teacher, LossKind::SquareHalf, tight(1.5, 0.1));
  EXPECT_NEAR(r.a[0], gamma, 1e-12);
  EXPECT_NEAR(r.a[1], -gamma, 1e-12);
  EXPECT_FALSE(r.holds);
}

TEST(Separability, NoiselessLabelsNeverStopSeparating) {
  const auto model = MixtureModel::gaussian(Vector::Zero(2), Covariance::isotropic(1.0));
  const TeacherSpec t{Vector::Ones(2), TeacherChannel::sign(0.0)};
  const auto r = separability_threshold(model, t, {1.0, 3.0});
  EXPECT_EQ(r.status, SeparabilityResult::Status::NoThreshold);
  EXPECT_FALSE(r.alpha_star.has_value());
}

TEST(Separability, GridAboveThresholdIsBracketFailure) {
  const auto model = MixtureModel::gaussian(Vector::Zero(2), Covariance::isotropic(1.0));
  const TeacherSpec t{Vector::Ones(2), TeacherChannel::sign(1e3)};
  const auto r = separability_threshold(model, t, {4.0, 3.0});
  EXPECT_EQ(r.status, SeparabilityResult::Status::BracketFailure);
  ASSERT_EQ(r.probes.size(), 2u);
  EXPECT_GT(r.probes[0].train_error, 0.1);
}

TEST(Separability, RejectsRegressionLabels) {
  const auto model = MixtureModel::gaussian(Vector::Zero(2), Covariance::isotropic(1.0));
  const TeacherSpec t{Vector::Ones(2), TeacherChannel::gaussian(0.0)};
  EXPECT_THROW(separability_threshold(model, t, {1.0, 2.0}), DomainError);
}
