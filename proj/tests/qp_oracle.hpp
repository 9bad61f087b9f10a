#pragma once

#include <Eigen/LU>
#include <limits>
#include <random>
#include <vector>

#include "synergrasp/synik.hpp"

namespace qp_oracle {

using synergrasp::QpProblem;

// Best objective over all active sets whose KKT system gives a feasible
// point with non-negative multipliers.
inline double enumerate_active_sets(const QpProblem& p) {
  const int n = p.dim(), m = p.constraint_count();
  double best = std::numeric_limits<double>::infinity();
  for (int mask = 0; mask < (1 << m); ++mask) {
    std::vector<int> S;
    for (int k = 0; k < m; ++k)
      if (mask & (1 << k)) S.push_back(k);
    const int a = static_cast<int>(S.size());
    if (a > n) continue;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + a, n + a);
    Eigen::VectorXd rhs(n + a);
    K.topLeftCorner(n, n) = p.H;
    rhs.head(n) = -p.g;
    for (int i = 0; i < a; ++i) {
      K.block(0, n + i, n, 1) = p.G.row(S[static_cast<std::size_t>(i)]).transpose();
      K.block(n + i, 0, 1, n) = p.G.row(S[static_cast<std::size_t>(i)]);
      rhs[n + i] = p.h[S[static_cast<std::size_t>(i)]];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (lu.rank() < n + a) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    if ((sol.tail(a).array() < -1e-9).any()) continue;
    if (m > 0 && ((p.G * x - p.h).array() > 1e-9).any()) continue;
    best = std::min(best, 0.5 * x.dot(p.H * x) + p.g.dot(x));
  }
  return best;
}

inline QpProblem random_problem(std::mt19937_64& rng, int n, int m, bool singular = false) {
  std::normal_distribution<double> nd;
  QpProblem p;
  const Eigen::MatrixXd B = Eigen::MatrixXd::NullaryExpr(n, singular ? n - 1 : n, [&] { return nd(rng); });
  p.H = B * B.transpose();
  p.H = 0.5 * (p.H + p.H.transpose());
  p.g = Eigen::VectorXd::NullaryExpr(n, [&] { return 2.0 * nd(rng); });
  p.G = Eigen::MatrixXd::NullaryExpr(m, n, [&] { return nd(rng); });
  const Eigen::VectorXd x0 = Eigen::VectorXd::NullaryExpr(n, [&] { return 0.3 * nd(rng); });
  p.h = p.G * x0 + Eigen::VectorXd::NullaryExpr(m, [&] { return std::abs(nd(rng)); });
  return p;
}

}  // namespace qp_oracle
