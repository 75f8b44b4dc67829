#pragma once

// Independent reference computations used only by the tests.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Stationary law of the topmost-position chain on states 1..K+1, solved from
/// the explicit generator. A publisher arrival sends any state to 1; any
/// other arrival pushes x <= K down to x + 1 (K+1 absorbs the push).
inline std::vector<double> ctmc_stationary(double eff, double other, int K) {
  const int S = K + 1;
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(S, S);
  for (int x = 0; x < S; ++x) {
    if (x != 0) Q(x, 0) += eff;
    if (x < K) Q(x, x + 1) += other;
  }
  for (int x = 0; x < S; ++x) Q(x, x) = -Q.row(x).sum();
  // pi Q = 0 with sum(pi) = 1: replace one balance equation by normalization.
  Eigen::MatrixXd A = Q.transpose();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(S);
  A.row(S - 1).setOnes();
  b(S - 1) = 1.0;
  Eigen::VectorXd pi = A.fullPivLu().solve(b);
  return {pi.data(), pi.data() + S};
}

/// Maximizer of a concave function on [lo, hi] by golden-section search.
inline double golden_max(const std::function<double(double)>& f, double lo, double hi,
                         int iters = 200) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters; ++i) {
    if (fc < fd) {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    } else {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    }
  }
  return (a + b) / 2.0;
}

/// Plain OLS via the normal equations solved by Eigen (QR), for cross-checks.
inline std::pair<double, double> ols(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = x[static_cast<std::size_t>(i)];
    Y(i) = y[static_cast<std::size_t>(i)];
  }
  Eigen::VectorXd beta = X.colPivHouseholderQr().solve(Y);
  return {beta(0), beta(1)};
}

/// Two-sided Student-t tail by Simpson integration of the density.
inline double t_two_sided(double t, double dof) {
  const double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) /
                   std::sqrt(dof * M_PI);
  auto pdf = [&](double u) { return c * std::pow(1 + u * u / dof, -(dof + 1) / 2); };
  const double a = 0.0, b = std::abs(t);
  const int m = 20000;
  const double h = (b - a) / m;
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < m; ++i) s += (i % 2 ? 4 : 2) * pdf(a + i * h);
  return 1.0 - 2.0 * (s * h / 3.0);
}

}  // namespace oracle
