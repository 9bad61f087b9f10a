#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "synergrasp/handkin.hpp"
#include "synergrasp/synergy.hpp"

namespace synergrasp {

/// minimize 1/2 x^T H x + g^T x  subject to  G x <= h (row-wise).
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd G;  // m x n, m may be 0
  Eigen::VectorXd h;

  int dim() const { return static_cast<int>(g.size()); }
  int constraint_count() const { return static_cast<int>(G.rows()); }
  void validate() const;
};

struct QpResult {
  Eigen::VectorXd x;
  /// One multiplier per constraint row (zero for inactive rows).
  Eigen::VectorXd multipliers;
  std::vector<int> active;
  bool feasible = true;
  /// Infeasible problems: a set of rows that cannot hold together.
  std::vector<int> conflict;
  /// Added to H when it was not positive definite.
  double regularization = 0;
  int iterations = 0;
  double objective = 0;
};

struct KktResiduals {
  double stationarity = 0;
  double primal = 0;          // max(G x - h)
  double dual = 0;            // -min(multipliers)
  double complementarity = 0; // max |mu_k (G_k x - h_k)|

  bool ok(double stationarity_tol = 1e-6, double primal_tol = 1e-8, double dual_tol = 1e-8,
          double complementarity_tol = 1e-8) const {
    return stationarity < stationarity_tol && primal <= primal_tol && dual <= dual_tol &&
           complementarity < complementarity_tol;
  }
};

/// Dual active-set method (Goldfarb-Idnani). H is regularized by 1e-9 I when
/// it is not positive definite.
QpResult solve_qp(const QpProblem& problem);
KktResiduals kkt_residuals(const QpProblem& problem, const QpResult& result);

struct IkOptions {
  int max_iterations = 200;
  /// Stop once the step norm falls below this.
  double tolerance = 1e-7;
  /// Required clearance between allowlisted links (meters).
  double margin = 1e-3;
  /// Pairs closer than margin + activation_distance get a constraint row.
  double activation_distance = 5e-3;
  /// Central-difference step for the collision Jacobian (synergy units).
  double fd_step = 1e-4;
  /// Largest penetration accepted as collision-free (meters).
  double penetration_tolerance = 1e-4;
  /// Per-step bound on |ds|_inf.
  double trust_radius = 0.1;
  /// Targets penetrating deeper than this start from the open configuration
  /// when one is given.
  double deep_penetration = 5e-3;
  std::optional<Eigen::VectorXd> open_synergy;

  void validate() const;
};

struct IkStep {
  Eigen::VectorXd delta;
  /// The task row was dropped because the constrained QP was infeasible.
  bool escape = false;
  /// Indices into the collision report of the pairs that got a row.
  std::vector<int> constrained_pairs;
  /// Gradient of each constrained pair's depth with respect to s.
  std::vector<Eigen::VectorXd> gradients;
  /// Depth of each constrained pair at s.
  std::vector<double> depths;
  QpResult qp;
  /// Multipliers of the QP rows belonging to constrained pairs were checked.
  bool kkt_ok = true;
};

/// One linearized step from s toward s_target, with J = I and r = s - s_target.
IkStep ik_step(const SynergySpace& space, const HandModel& hand, const Eigen::VectorXd& s,
               const Eigen::VectorXd& s_target, const IkOptions& opts);

struct IkResult {
  Eigen::VectorXd s;
  CollisionReport report;
  bool converged = false;
  int iterations = 0;
  int escape_steps = 0;
  bool started_open = false;
  /// max(0, deepest penetration) after each accepted iteration, starting with the initial pose.
  std::vector<double> penetration_history;
  std::string diagnostic;

  double max_penetration() const { return std::max(0.0, report.max_depth()); }
};

IkResult solve_collision_free(const SynergySpace& space, const HandModel& hand, const Eigen::VectorXd& s_target,
                              const IkOptions& opts);

/// max(0, deepest allowlisted penetration) at synergy coordinates s.
double synergy_penetration(const SynergySpace& space, const HandModel& hand, const Eigen::VectorXd& s);

}  // namespace synergrasp
