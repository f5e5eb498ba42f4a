#pragma once

// Standard-normal helpers and Gauss-Hermite rules for expectations under N(0,1).

#include "gmix/model.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace gmix {

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Upper bivariate normal probability P(X > h, Y > k) for standard margins
/// with correlation r. Genz's BVNU algorithm (Drezner-Wesolowsky reduction
/// with Gauss-Legendre on the correlation path); absolute accuracy ~1e-15.
inline double bivariate_normal_upper(double h, double k, double r) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (h == inf || k == inf) return 0.0;
  if (h == -inf) return k == -inf ? 1.0 : normal_cdf(-k);
  if (k == -inf) return normal_cdf(-h);
  if (r == 0.0) return normal_cdf(-h) * normal_cdf(-k);
  r = std::clamp(r, -1.0, 1.0);

  static constexpr std::array<double, 3> w6{0.1713244923791705, 0.3607615730481384,
                                            0.4679139345726904};
  static constexpr std::array<double, 3> x6{0.9324695142031522, 0.6612093864662647,
                                            0.2386191860831970};
  static constexpr std::array<double, 6> w12{0.04717533638651177, 0.1069393259953183,
                                             0.1600783285433464,  0.2031674267230659,
                                             0.2334925365383547,  0.2491470458134029};
  static constexpr std::array<double, 6> x12{0.9815606342467191, 0.9041172563704750,
                                             0.7699026741943050, 0.5873179542866171,
                                             0.3678314989981802, 0.1252334085114692};
  static constexpr std::array<double, 10> w20{
      0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475,
      0.1019301198172404,  0.1181945319615184,  0.1316886384491766,  0.1420961093183821,
      0.1491729864726037,  0.1527533871307259};
  static constexpr std::array<double, 10> x20{
      0.9931285991850949, 0.9639719272779138, 0.9122344282513259, 0.8391169718222188,
      0.7463319064601508, 0.6360536807265150, 0.5108670019508271, 0.3737060887154196,
      0.2277858511416451, 0.07652652113349733};

  const double* wp;
  const double* xp;
  int ng;
  if (std::abs(r) < 0.3) {
    wp = w6.data(), xp = x6.data(), ng = 3;
  } else if (std::abs(r) < 0.75) {
    wp = w12.data(), xp = x12.data(), ng = 6;
  } else {
    wp = w20.data(), xp = x20.data(), ng = 10;
  }
  // nodes on [0, 2]: 1 - x and 1 + x
  std::vector<double> w, x;
  for (int i = 0; i < ng; ++i) {
    w.push_back(wp[i]);
    x.push_back(1.0 - xp[i]);
  }
  for (int i = 0; i < ng; ++i) {
    w.push_back(wp[i]);
    x.push_back(1.0 + xp[i]);
  }

  constexpr double tp = 2.0 * std::numbers::pi;
  double hk = h * k;
  double bvn = 0.0;
  if (std::abs(r) < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r) / 2.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double sn = std::sin(asr * x[i]);
      bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
    }
    bvn = bvn * asr / tp + normal_cdf(-h) * normal_cdf(-k);
  } else {
    if (r < 0.0) {
      k = -k;
      hk = -hk;
    }
    if (std::abs(r) < 1.0) {
      const double as = (1.0 - r) * (1.0 + r);
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      double asr = -(bs / as + hk) / 2.0;
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 80.0;
      if (asr > -100.0)
        bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
      if (hk > -100.0) {
        const double b = std::sqrt(bs);
        const double sp = std::sqrt(tp) * normal_cdf(-b / a);
        bvn -= std::exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
      }
      a /= 2.0;
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double xs = (a * x[i]) * (a * x[i]);
        asr = -(bs / xs + hk) / 2.0;
        if (asr <= -100.0) continue;
        const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
        const double rs = std::sqrt(1.0 - xs);
        const double ep = std::exp(-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
        acc += std::exp(asr) * (sp - ep) * w[i];
      }
      bvn = (a * acc - bvn) / tp;
    }
    if (r > 0.0) {
      bvn += normal_cdf(-std::max(h, k));
    } else if (h >= k) {
      bvn = -bvn;
    } else {
      const double L = h < 0.0 ? normal_cdf(k) - normal_cdf(h) : normal_cdf(-h) - normal_cdf(-k);
      bvn = L - bvn;
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Gauss-Hermite
// ---------------------------------------------------------------------------

/// Nodes/weights for E_{xi ~ N(0,1)}[f(xi)] ~= sum_i w_i f(x_i).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  int order = 0;

  template <class F>
  double expect(F&& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
    return acc;
  }
};

/// Golub-Welsch eigenvalues of the probabilists' Jacobi matrix, polished by
/// Newton on the normalized Hermite functions (which stay bounded at the
/// outer nodes where the polynomials themselves would overflow).
inline QuadratureRule gauss_hermite(int order) {
  if (order < 2 || order > 512)
    throw DomainError("Gauss-Hermite order " + std::to_string(order) + " outside [2, 512]");
  const int n = order;
  Vector diag = Vector::Zero(n);
  Vector sub(n - 1);
  for (int i = 1; i < n; ++i) sub[i - 1] = std::sqrt(double(i));
  Eigen::SelfAdjointEigenSolver<Matrix> es;
  es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  const Vector guess = es.eigenvalues();

  // psi_j(x) = p_j(x) sqrt(phi(x)), p_j orthonormal w.r.t. the N(0,1) density.
  auto hermite_functions = [n](double x, double& psi_n, double& psi_nm1) {
    double p0 = std::exp(-0.25 * x * x) / std::pow(2.0 * std::numbers::pi, 0.25);
    double p1 = x * p0;
    for (int j = 1; j < n; ++j) {
      const double p2 = (x * p1 - std::sqrt(double(j)) * p0) / std::sqrt(double(j + 1));
      p0 = p1;
      p1 = p2;
    }
    psi_n = p1;
    psi_nm1 = p0;
  };

  QuadratureRule rule;
  rule.order = order;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = guess[i];
    double pn = 0.0, pnm1 = 0.0;
    for (int it = 0; it < 8; ++it) {
      hermite_functions(x, pn, pnm1);
      const double dpn = std::sqrt(double(n)) * pnm1 - 0.5 * x * pn;
      if (dpn == 0.0) break;
      const double step = pn / dpn;
      x -= step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    hermite_functions(x, pn, pnm1);
    rule.nodes[i] = x;
    // w = 1 / (n p_{n-1}(x)^2) = phi(x) / (n psi_{n-1}(x)^2)
    rule.weights[i] = normal_pdf(x) / (double(n) * pnm1 * pnm1);
  }
  // symmetrize: exact odd moments
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double xs = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double ws = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -xs;
    rule.nodes[j] = xs;
    rule.weights[i] = rule.weights[j] = ws;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  double total = 0.0;
  for (double w : rule.weights) total += w;
  for (double& w : rule.weights) w /= total;
  return rule;
}

}  // namespace gmix
