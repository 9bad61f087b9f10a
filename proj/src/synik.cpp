#include "synergrasp/synik.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "synergrasp/error.hpp"

namespace synergrasp {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void QpProblem::validate() const {
  const Eigen::Index n = g.size();
  if (n < 1) throw InvalidArgument("qp: empty problem");
  if (H.rows() != n || H.cols() != n) throw InvalidArgument("qp: H must be n x n");
  if (G.rows() != h.size() || (G.rows() > 0 && G.cols() != n)) throw InvalidArgument("qp: constraint dimensions disagree");
  if (!H.allFinite() || !g.allFinite() || !G.allFinite() || !h.allFinite()) throw InvalidArgument("qp: non-finite data");
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, H.cwiseAbs().maxCoeff()))
    throw InvalidArgument("qp: H is not symmetric");
}

QpResult solve_qp(const QpProblem& p) {
  p.validate();
  const Eigen::Index n = p.dim(), m = p.constraint_count();
  QpResult res;

  Eigen::MatrixXd H = 0.5 * (p.H + p.H.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  const double max_diag = std::max(H.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  auto well_posed = [&] {
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd d = llt.matrixLLT().diagonal();
    return d.minCoeff() * d.minCoeff() > 1e-12 * max_diag;
  };
  if (!well_posed()) {
    res.regularization = 1e-9;
    H += res.regularization * Eigen::MatrixXd::Identity(n, n);
    llt.compute(H);
    if (llt.info() != Eigen::Success) throw NumericalError("qp: H is not positive semi-definite");
  }

  Eigen::VectorXd x = -llt.solve(p.g);
  std::vector<int> A;
  Eigen::VectorXd u(0);
  const int max_iterations = static_cast<int>(10 * (m + n) + 100);

  // Constraints in the form a^T x >= b with a = -G_k^T, b = -h_k.
  auto slack = [&](Eigen::Index k) { return p.h[k] - p.G.row(k).dot(x); };
  auto in_active = [&](int k) { return std::find(A.begin(), A.end(), k) != A.end(); };

  while (true) {
    if (++res.iterations > max_iterations) throw NumericalError("qp: active-set iteration limit reached");
    int q = -1;
    double worst = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (in_active(static_cast<int>(k))) continue;
      const double scale = std::max(1.0, p.G.row(k).norm());
      const double s = slack(k) / scale;
      if (s < -1e-12 * std::max(1.0, std::abs(p.h[k])) && s < worst) {
        worst = s;
        q = static_cast<int>(k);
      }
    }
    if (q < 0) break;

    Eigen::VectorXd uplus(u.size() + 1);
    uplus << u, 0.0;
    while (true) {
      const Eigen::VectorXd np = -p.G.row(q).transpose();
      const Eigen::VectorXd Hn = llt.solve(np);
      Eigen::VectorXd r(static_cast<Eigen::Index>(A.size()));
      Eigen::VectorXd z = Hn;
      if (!A.empty()) {
        Eigen::MatrixXd N(n, static_cast<Eigen::Index>(A.size()));
        for (std::size_t j = 0; j < A.size(); ++j) N.col(static_cast<Eigen::Index>(j)) = -p.G.row(A[j]).transpose();
        const Eigen::MatrixXd HN = llt.solve(N);
        r = (N.transpose() * HN).colPivHouseholderQr().solve(N.transpose() * Hn);
        z = Hn - HN * r;
      }
      double t1 = kInf;
      int k = -1;
      for (Eigen::Index j = 0; j < r.size(); ++j)
        if (r[j] > 1e-12 && uplus[j] / r[j] < t1) {
          t1 = uplus[j] / r[j];
          k = static_cast<int>(j);
        }
      const double zn = z.dot(np);
      const bool z_zero = zn <= 1e-12 * Hn.dot(np);
      const double t2 = z_zero ? kInf : -slack(q) / zn;
      const double t = std::min(t1, t2);
      if (t == kInf) {
        res.feasible = false;
        res.conflict.push_back(q);
        for (Eigen::Index j = 0; j < r.size(); ++j)
          if (std::abs(r[j]) > 1e-12) res.conflict.push_back(A[static_cast<std::size_t>(j)]);
        std::sort(res.conflict.begin(), res.conflict.end());
        res.x = x;
        res.multipliers = Eigen::VectorXd::Zero(m);
        res.active = A;
        return res;
      }
      auto drop = [&](int idx) {
        A.erase(A.begin() + idx);
        Eigen::VectorXd shrunk(uplus.size() - 1);
        shrunk << uplus.head(idx), uplus.tail(uplus.size() - 1 - idx);
        uplus = shrunk;
      };
      if (z_zero) {
        uplus.head(r.size()) -= t * r;
        uplus[uplus.size() - 1] += t;
        drop(k);
        continue;
      }
      x += t * z;
      uplus.head(r.size()) -= t * r;
      uplus[uplus.size() - 1] += t;
      if (t2 <= t1) {
        A.push_back(q);
        u = uplus;
        break;
      }
      drop(k);
    }
  }

  res.x = x;
  res.active = A;
  res.multipliers = Eigen::VectorXd::Zero(m);
  for (std::size_t j = 0; j < A.size(); ++j) res.multipliers[A[j]] = std::max(0.0, u[static_cast<Eigen::Index>(j)]);

  // Polish: solve the KKT system of the final active set with the original H.
  // Kept only when it is nonsingular and stays primal and dual feasible.
  const auto a = static_cast<Eigen::Index>(A.size());
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + a, n + a);
  Eigen::VectorXd rhs(n + a);
  K.topLeftCorner(n, n) = 0.5 * (p.H + p.H.transpose());
  rhs.head(n) = -p.g;
  for (Eigen::Index j = 0; j < a; ++j) {
    K.block(0, n + j, n, 1) = p.G.row(A[static_cast<std::size_t>(j)]).transpose();
    K.block(n + j, 0, 1, n) = p.G.row(A[static_cast<std::size_t>(j)]);
    rhs[n + j] = p.h[A[static_cast<std::size_t>(j)]];
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  lu.setThreshold(1e-10);
  if (lu.isInvertible()) {
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd xp = sol.head(n);
    bool ok = sol.allFinite() && (sol.tail(a).array() >= -1e-10).all();
    for (Eigen::Index k = 0; ok && k < m; ++k) ok = p.G.row(k).dot(xp) - p.h[k] <= 1e-10 * std::max(1.0, std::abs(p.h[k]));
    if (ok) {
      res.x = xp;
      for (Eigen::Index j = 0; j < a; ++j) res.multipliers[A[static_cast<std::size_t>(j)]] = std::max(0.0, sol[n + j]);
    }
  }
  res.objective = 0.5 * x.dot(p.H * x) + p.g.dot(x);
  return res;
}

KktResiduals kkt_residuals(const QpProblem& p, const QpResult& r) {
  KktResiduals k;
  Eigen::VectorXd stat = p.H * r.x + p.g;
  if (p.constraint_count() > 0) stat += p.G.transpose() * r.multipliers;
  k.stationarity = stat.cwiseAbs().maxCoeff();
  for (int i = 0; i < p.constraint_count(); ++i) {
    const double viol = p.G.row(i).dot(r.x) - p.h[i];
    k.primal = std::max(k.primal, viol);
    k.dual = std::max(k.dual, -r.multipliers[i]);
    k.complementarity = std::max(k.complementarity, std::abs(r.multipliers[i] * viol));
  }
  return k;
}

void IkOptions::validate() const {
  if (max_iterations < 1) throw InvalidArgument("ik: max_iterations must be positive");
  for (const auto& [value, name] : {std::pair{tolerance, "tolerance"}, {margin, "margin"},
                                    {activation_distance, "activation_distance"}, {fd_step, "fd_step"},
                                    {penetration_tolerance, "penetration_tolerance"}, {trust_radius, "trust_radius"},
                                    {deep_penetration, "deep_penetration"}})
    if (!(value > 0) || !std::isfinite(value)) throw InvalidArgument(std::string("ik: ") + name + " must be positive");
  if (open_synergy && !open_synergy->allFinite()) throw InvalidArgument("ik: non-finite open synergy");
}

namespace {

void check_ik_dims(const SynergySpace& space, const HandModel& hand, const Eigen::VectorXd& s, const char* what) {
  if (hand.actuated_count() != space.joint_count())
    throw InvalidArgument("ik: hand '" + hand.id() + "' has " + std::to_string(hand.actuated_count()) +
                          " actuated joints but the synergy space has " + std::to_string(space.joint_count()));
  if (s.size() != space.synergy_count())
    throw InvalidArgument(std::string("ik: ") + what + " has " + std::to_string(s.size()) + " entries, expected " +
                          std::to_string(space.synergy_count()));
  if (!s.allFinite()) throw InvalidArgument(std::string("ik: non-finite ") + what);
}

CollisionReport report_at(const SynergySpace& space, const HandModel& hand, const Eigen::VectorXd& s) {
  return self_collision_depths(hand, to_joints(space, s));
}

double positive_depth(const CollisionReport& r) { return r.pairs.empty() ? 0.0 : std::max(0.0, r.max_depth()); }

}  // namespace

double synergy_penetration(const SynergySpace& space, const HandModel& hand, const Eigen::VectorXd& s) {
  return positive_depth(report_at(space, hand, s));
}

IkStep ik_step(const SynergySpace& space, const HandModel& hand, const Eigen::VectorXd& s,
               const Eigen::VectorXd& s_target, const IkOptions& opts) {
  opts.validate();
  check_ik_dims(space, hand, s, "synergy vector");
  check_ik_dims(space, hand, s_target, "target");
  const Eigen::Index l = s.size();
  const auto report = report_at(space, hand, s);

  IkStep step;
  for (std::size_t k = 0; k < report.pairs.size(); ++k)
    if (report.pairs[k].depth > -(opts.margin + opts.activation_distance)) step.constrained_pairs.push_back(static_cast<int>(k));

  if (!step.constrained_pairs.empty()) {
    std::vector<CollisionReport> plus, minus;
    for (Eigen::Index i = 0; i < l; ++i) {
      Eigen::VectorXd sp = s, sm = s;
      sp[i] += opts.fd_step;
      sm[i] -= opts.fd_step;
      plus.push_back(report_at(space, hand, sp));
      minus.push_back(report_at(space, hand, sm));
    }
    std::vector<int> kept;
    for (int k : step.constrained_pairs) {
      Eigen::VectorXd grad(l);
      for (Eigen::Index i = 0; i < l; ++i)
        grad[i] = (plus[static_cast<std::size_t>(i)].pairs[static_cast<std::size_t>(k)].depth -
                   minus[static_cast<std::size_t>(i)].pairs[static_cast<std::size_t>(k)].depth) /
                  (2 * opts.fd_step);
      // Pairs the synergies cannot move get no row.
      if (grad.norm() < 1e-12) continue;
      kept.push_back(k);
      step.gradients.push_back(grad);
      step.depths.push_back(report.pairs[static_cast<std::size_t>(k)].depth);
    }
    step.constrained_pairs = kept;
  }

  const auto rows = static_cast<Eigen::Index>(step.constrained_pairs.size());
  QpProblem qp;
  qp.H = Eigen::MatrixXd::Identity(l, l);
  qp.g = s - s_target;
  qp.G.resize(rows + 2 * l, l);
  qp.h.resize(rows + 2 * l);
  for (Eigen::Index k = 0; k < rows; ++k) {
    qp.G.row(k) = step.gradients[static_cast<std::size_t>(k)].transpose();
    qp.h[k] = -step.depths[static_cast<std::size_t>(k)] - opts.margin;
  }
  qp.G.bottomRows(2 * l) << Eigen::MatrixXd::Identity(l, l), -Eigen::MatrixXd::Identity(l, l);
  qp.h.tail(2 * l).setConstant(opts.trust_radius);
  step.qp = solve_qp(qp);

  if (step.qp.feasible) {
    step.delta = step.qp.x;
    step.kkt_ok = kkt_residuals(qp, step.qp).ok();
    return step;
  }

  // Escape: smallest step satisfying the collision rows, without the task or trust rows.
  step.escape = true;
  QpProblem escape;
  escape.H = Eigen::MatrixXd::Identity(l, l);
  escape.g = Eigen::VectorXd::Zero(l);
  escape.G = qp.G.topRows(rows);
  escape.h = qp.h.head(rows);
  step.qp = solve_qp(escape);
  if (step.qp.feasible) {
    step.delta = step.qp.x;
    step.kkt_ok = kkt_residuals(escape, step.qp).ok();
  } else {
    // Conflicting rows: minimum-norm least-squares step on the violated ones.
    std::vector<Eigen::Index> violated;
    for (Eigen::Index k = 0; k < rows; ++k)
      if (qp.h[k] < 0) violated.push_back(k);
    Eigen::MatrixXd Gv(static_cast<Eigen::Index>(violated.size()), l);
    Eigen::VectorXd hv(Gv.rows());
    for (Eigen::Index i = 0; i < Gv.rows(); ++i) {
      Gv.row(i) = qp.G.row(violated[static_cast<std::size_t>(i)]);
      hv[i] = qp.h[violated[static_cast<std::size_t>(i)]];
    }
    step.delta = Gv.rows() ? Eigen::VectorXd(Gv.completeOrthogonalDecomposition().solve(hv)) : Eigen::VectorXd::Zero(l);
  }
  const double inf_norm = step.delta.cwiseAbs().maxCoeff();
  if (inf_norm > opts.trust_radius) step.delta *= opts.trust_radius / inf_norm;
  return step;
}

IkResult solve_collision_free(const SynergySpace& space, const HandModel& hand, const Eigen::VectorXd& s_target,
                              const IkOptions& opts) {
  opts.validate();
  check_ik_dims(space, hand, s_target, "target");
  IkResult res;
  res.s = s_target;
  CollisionReport report = report_at(space, hand, s_target);
  if (opts.open_synergy && positive_depth(report) > opts.deep_penetration) {
    check_ik_dims(space, hand, *opts.open_synergy, "open synergy");
    res.s = *opts.open_synergy;
    res.started_open = true;
    report = report_at(space, hand, res.s);
  }
  double pen = positive_depth(report);
  res.penetration_history.push_back(pen);

  auto clears_margin = [&](const CollisionReport& r) {
    return r.pairs.empty() || r.max_depth() <= -opts.margin + opts.penetration_tolerance;
  };
  std::optional<Eigen::VectorXd> best_feasible;
  Eigen::VectorXd least_penetrating = res.s;
  double least_pen = pen;
  auto remember = [&](const Eigen::VectorXd& s, double p) {
    if (p <= opts.penetration_tolerance &&
        (!best_feasible || (s - s_target).norm() < (*best_feasible - s_target).norm()))
      best_feasible = s;
    if (p < least_pen) {
      least_pen = p;
      least_penetrating = s;
    }
  };
  remember(res.s, pen);

  // The trust radius halves whenever a step reverses the previous one and
  // recovers while steps agree.
  IkOptions local = opts;
  Eigen::VectorXd previous = Eigen::VectorXd::Zero(s_target.size());
  int consecutive_escapes = 0;
  std::string stop;
  // A start trapped between conflicting pairs is retried once from the open configuration.
  auto restart_open = [&] {
    if (res.started_open || !opts.open_synergy) return false;
    check_ik_dims(space, hand, *opts.open_synergy, "open synergy");
    res.s = *opts.open_synergy;
    res.started_open = true;
    report = report_at(space, hand, res.s);
    pen = positive_depth(report);
    res.penetration_history.push_back(pen);
    remember(res.s, pen);
    local.trust_radius = opts.trust_radius;
    previous.setZero();
    consecutive_escapes = 0;
    return true;
  };
  for (int it = 0; it < opts.max_iterations; ++it) {
    if (consecutive_escapes >= 10) restart_open();
    const IkStep step = ik_step(space, hand, res.s, s_target, local);
    if (step.delta.norm() < opts.tolerance) {
      if (!step.escape && pen <= opts.penetration_tolerance && clears_margin(report)) {
        res.converged = true;
        break;
      }
      if (restart_open()) continue;
      stop = "the step vanished before every pair cleared the margin";
      break;
    }
    // Safety line search: never let the deepest penetration grow beyond the
    // finite-difference resolution.
    const double allowed = pen + opts.fd_step * opts.fd_step;
    Eigen::VectorXd taken;
    bool accepted = false;
    double alpha = 1.0;
    for (int b = 0; b < 12; ++b, alpha *= 0.5) {
      const Eigen::VectorXd candidate = res.s + alpha * step.delta;
      CollisionReport r = report_at(space, hand, candidate);
      const double p = positive_depth(r);
      if (p <= allowed) {
        taken = alpha * step.delta;
        res.s = candidate;
        report = std::move(r);
        pen = p;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (restart_open()) continue;
      stop = "no step keeps the penetration from growing";
      break;
    }
    ++res.iterations;
    if (step.escape) {
      ++res.escape_steps;
      ++consecutive_escapes;
    } else {
      consecutive_escapes = 0;
    }
    local.trust_radius = previous.dot(taken) < 0 ? 0.5 * local.trust_radius
                                                 : std::min(opts.trust_radius, 2.0 * local.trust_radius);
    previous = taken;
    res.penetration_history.push_back(pen);
    remember(res.s, pen);
    if (it + 1 == opts.max_iterations) stop = "iteration cap reached";
  }

  if (!res.converged) {
    res.s = best_feasible ? *best_feasible : least_penetrating;
    report = report_at(space, hand, res.s);
    std::ostringstream os;
    os << "collision-free correction did not converge after " << res.iterations << " iterations (" << stop
       << "); returning the " << (best_feasible ? "feasible iterate closest to the target" : "least penetrating iterate")
       << " with penetration " << positive_depth(report) << " m and deepest margin shortfall "
       << (report.pairs.empty() ? 0.0 : report.max_depth() + opts.margin) << " m";
    res.diagnostic = os.str();
  }
  res.report = std::move(report);
  return res;
}

}  // namespace synergrasp
