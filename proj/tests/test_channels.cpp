#include "gmix/channels.hpp"
#include "gmix/gaussian.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace gmix;

namespace {

// P(X > h, Y > k) = int_h^inf phi(x) Phi((r x - k) / sqrt(1 - r^2)) dx by composite Simpson.
double bvn_oracle(double h, double k, double r) {
  const double a = std::max(h, -12.0), b = 12.0;
  const int n = 20000;
  const double dx = (b - a) / n;
  const double s = std::sqrt(1.0 - r * r);
  auto f = [&](double x) { return normal_pdf(x) * normal_cdf((r * x - k) / s); };
  double acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(a + i * dx);
  return acc * dx / 3.0;
}

}  // namespace

TEST(GaussHermite, MomentsExact) {
  for (int order : {2, 5, 20, 61, 101, 201}) {
    const auto rule = gauss_hermite(order);
    EXPECT_NEAR(rule.expect([](double) { return 1.0; }), 1.0, 1e-14);
    EXPECT_NEAR(rule.expect([](double x) { return x; }), 0.0, 1e-14);
    EXPECT_NEAR(rule.expect([](double x) { return x * x; }), 1.0, 1e-13);
    if (order >= 3) {
      EXPECT_NEAR(rule.expect([](double x) { return std::pow(x, 4); }), 3.0, 1e-12);
    }
    if (order >= 5) {
      EXPECT_NEAR(rule.expect([](double x) { return std::pow(x, 8); }), 105.0, 1e-9);
    }
  }
}

TEST(GaussHermite, SmoothFunction) {
  // E cos(x) = exp(-1/2)
  const auto rule = gauss_hermite(61);
  EXPECT_NEAR(rule.expect([](double x) { return std::cos(x); }), std::exp(-0.5), 1e-14);
}

TEST(GaussHermite, RejectsBadOrder) {
  EXPECT_THROW(gauss_hermite(1), DomainError);
  EXPECT_THROW(gauss_hermite(100000), DomainError);
}

TEST(BivariateNormal, KnownValues) {
  EXPECT_NEAR(bivariate_normal_upper(0, 0, 0), 0.25, 1e-15);
  for (double r : {-0.95, -0.5, 0.2, 0.8, 0.99})
    EXPECT_NEAR(bivariate_normal_upper(0, 0, r), 0.25 + std::asin(r) / (2 * std::numbers::pi), 1e-14);
  EXPECT_NEAR(bivariate_normal_upper(0.3, -0.4, 1.0), normal_cdf(-0.3), 1e-15);
  // Y = -X: P(0.3 < X < 0.4)
  EXPECT_NEAR(bivariate_normal_upper(0.3, -0.4, -1.0), normal_cdf(0.4) - normal_cdf(0.3), 1e-14);
}

TEST(BivariateNormal, MatchesOneDimensionalIntegral) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2.5, 2.5), ur(-0.99, 0.99);
  for (int i = 0; i < 200; ++i) {
    const double h = u(rng), k = u(rng), r = ur(rng);
    EXPECT_NEAR(bivariate_normal_upper(h, k, r), bvn_oracle(h, k, r), 1e-10) << h << " " << k << " " << r;
  }
}

// ---------------------------------------------------------------------------

class ChannelOracle : public ::testing::Test {
 protected:
  std::mt19937_64 rng{2024};
  std::uniform_real_distribution<double> om{-3.0, 3.0}, var{0.05, 3.0}, del{0.0, 2.0};
  QuadratureRule rule = gauss_hermite(61);
};

TEST_F(ChannelOracle, Normalization) {
  for (int i = 0; i < 1000; ++i) {
    const double w = om(rng), v = var(rng), d = del(rng);
    const auto g = TeacherChannel::gaussian(d);
    const auto s = TeacherChannel::sign(d);
    EXPECT_NEAR(z0(s, 1, w, v) + z0(s, -1, w, v), 1.0, 1e-14);
    EXPECT_NEAR(label_expectation(g, w, v, [](double) { return 1.0; }, rule), 1.0, 1e-13);
    // integral of the Gaussian density over y by Simpson
    const double sd = std::sqrt(v + d);
    double acc = 0.0;
    const int n = 2000;
    const double a = w - 12 * sd, b = w + 12 * sd, h = (b - a) / n;
    for (int j = 0; j <= n; ++j) acc += (j == 0 || j == n ? 1 : (j % 2 ? 4 : 2)) * z0(g, a + j * h, w, v);
    EXPECT_NEAR(acc * h / 3, 1.0, 1e-9);
    // derivative integrates to zero
    EXPECT_NEAR(dz0_domega(s, 1, w, v) + dz0_domega(s, -1, w, v), 0.0, 1e-14);
  }
}

TEST_F(ChannelOracle, Z0DerivativeFiniteDifference) {
  for (int i = 0; i < 1000; ++i) {
    const double w = om(rng), v = var(rng), d = del(rng), y = om(rng);
    const double h = 1e-6;
    for (const auto& ch : {TeacherChannel::gaussian(d), TeacherChannel::sign(d)}) {
      const double yy = ch.is_classification() ? (y >= 0 ? 1.0 : -1.0) : y;
      const double fd = (z0(ch, yy, w + h, v) - z0(ch, yy, w - h, v)) / (2 * h);
      EXPECT_NEAR(dz0_domega(ch, yy, w, v), fd, 1e-7 * (1 + std::abs(fd)));
    }
  }
}

TEST_F(ChannelOracle, ProxStationarity) {
  for (int i = 0; i < 1000; ++i) {
    const double w = 3 * om(rng), v = var(rng) * 3, y = (i % 2 ? 1.0 : -1.0);
    for (LossKind loss : {LossKind::SquareHalf, LossKind::Logistic}) {
      const double z = prox(loss, y, w, v);
      EXPECT_NEAR((z - w) / v + loss_d1(loss, y, z), 0.0, 1e-12);
    }
  }
}

TEST_F(ChannelOracle, ProxSquareExample) {
  EXPECT_DOUBLE_EQ(prox(LossKind::SquareHalf, 1, 0, 1), 0.5);
  EXPECT_DOUBLE_EQ(f_ell(LossKind::SquareHalf, 1, 0, 1), 0.5);
  EXPECT_DOUBLE_EQ(df_ell_domega(LossKind::SquareHalf, 1, 0, 1), -0.5);
}

TEST_F(ChannelOracle, ProxErrors) {
  EXPECT_THROW(prox(LossKind::Logistic, 1, std::nan(""), 1), DomainError);
  EXPECT_THROW(prox(LossKind::Logistic, 1, 0, -1), DomainError);
  EXPECT_DOUBLE_EQ(prox(LossKind::Logistic, 1, 0.3, 0.0), 0.3);
}

TEST_F(ChannelOracle, FEllDerivativeFiniteDifference) {
  for (int i = 0; i < 1000; ++i) {
    const double w = om(rng), v = var(rng), y = (i % 2 ? 1.0 : -1.0);
    for (LossKind loss : {LossKind::SquareHalf, LossKind::Logistic}) {
      const double h = 1e-5;
      const double fd = (f_ell(loss, y, w + h, v) - f_ell(loss, y, w - h, v)) / (2 * h);
      EXPECT_NEAR(df_ell_domega(loss, y, w, v), fd, 1e-8);
      // f = (prox - omega) / V
      EXPECT_NEAR(f_ell(loss, y, w, v), (prox(loss, y, w, v) - w) / v, 1e-12);
    }
  }
}

TEST_F(ChannelOracle, Symmetries) {
  for (int i = 0; i < 1000; ++i) {
    const double w = om(rng), v = var(rng), d = del(rng), y = (i % 2 ? 1.0 : -1.0);
    // prox and f are odd under (y, omega) -> (-y, -omega)
    EXPECT_NEAR(prox(LossKind::Logistic, -y, -w, v), -prox(LossKind::Logistic, y, w, v), 1e-12);
    EXPECT_NEAR(f_ell(LossKind::Logistic, -y, -w, v), -f_ell(LossKind::Logistic, y, w, v), 1e-12);
    // derivative of f is even
    EXPECT_NEAR(df_ell_domega(LossKind::Logistic, -y, -w, v), df_ell_domega(LossKind::Logistic, y, w, v), 1e-12);
    // Z0 is even, its omega-derivative odd
    const auto s = TeacherChannel::sign(d);
    EXPECT_NEAR(z0(s, -y, -w, v), z0(s, y, w, v), 1e-15);
    EXPECT_NEAR(dz0_domega(s, -y, -w, v), -dz0_domega(s, y, w, v), 1e-15);
    const auto g = TeacherChannel::gaussian(d);
    EXPECT_NEAR(z0(g, -y * w, -w, v), z0(g, y * w, w, v), 1e-15);
  }
}

TEST_F(ChannelOracle, LabelExpectationDomegaMatchesDerivative) {
  // d/domega E_y[g(y)] = E_y'[g]
  for (int i = 0; i < 200; ++i) {
    const double w = om(rng), v = var(rng), d = del(rng) + 0.1;
    auto g = [](double y) { return std::sin(y) + 0.3 * y * y; };
    for (const auto& ch : {TeacherChannel::gaussian(d), TeacherChannel::sign(d)}) {
      const double h = 1e-5;
      const double fd = (label_expectation(ch, w + h, v, g, rule) - label_expectation(ch, w - h, v, g, rule)) / (2 * h);
      EXPECT_NEAR(label_expectation_domega(ch, w, v, g, rule), fd, 1e-7);
    }
  }
}
