#include "synergrasp/cpd.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <numbers>
#include <sstream>

#include "synergrasp/error.hpp"

namespace synergrasp {

void CpdParams::validate() const {
  if (beta && !(*beta > 0)) throw InvalidArgument("cpd: beta must be positive");
  if (!(lambda > 0)) throw InvalidArgument("cpd: lambda must be positive");
  if (!(outlier_weight >= 0 && outlier_weight < 1)) throw InvalidArgument("cpd: outlier weight must lie in [0, 1)");
  if (max_iterations < 1) throw InvalidArgument("cpd: max_iterations must be positive");
  if (!(tolerance > 0)) throw InvalidArgument("cpd: tolerance must be positive");
}

double CpdParams::resolve_beta(const PointCloud& canonical) const {
  if (beta) return *beta;
  const double d = diameter(canonical);
  return d > 0 ? 0.2 * d : 1.0;
}

KernelMatrix gaussian_kernel(const PointCloud& cloud, double beta) {
  if (!(beta > 0)) throw InvalidArgument("gaussian_kernel: beta must be positive");
  validate_cloud(cloud, "gaussian_kernel");
  const Eigen::Index m = cloud.size();
  KernelMatrix G;
  G.beta = beta;
  G.entries.resize(m, m);
  const double k = -1.0 / (2.0 * beta * beta);
  for (Eigen::Index j = 0; j < m; ++j) {
    G.entries(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < m; ++i) {
      const double v = std::exp(k * (cloud.points.row(i) - cloud.points.row(j)).squaredNorm());
      G.entries(i, j) = v;
      G.entries(j, i) = v;
    }
  }
  return G;
}

PointCloud apply_deformation(const PointCloud& canonical, const KernelMatrix& G,
                             const DeformationField& field) {
  const Eigen::Index m = canonical.size();
  if (G.size() != m || field.W.rows() != m || field.W.cols() != 3)
    throw InvalidArgument("apply_deformation: dimension mismatch (M=" + std::to_string(m) +
                          ", G=" + std::to_string(G.size()) + ", W=" + std::to_string(field.W.rows()) +
                          "x" + std::to_string(field.W.cols()) + ")");
  Points out = canonical.points + G.entries * field.W;
  return PointCloud(std::move(out), canonical.label);
}

namespace {

struct EStep {
  Eigen::MatrixXd P;   // M x N posteriors
  Eigen::VectorXd P1;  // row sums
  Eigen::VectorXd Pt1; // column sums
  double log_den_sum = 0;
};

// Posterior of each GMM centroid (rows of T) for each reference point (rows of X).
EStep expectation(const Eigen::MatrixXd& X, const Eigen::MatrixXd& T, double sigma2, double w) {
  const Eigen::Index n = X.rows(), m = T.rows();
  constexpr double D = 3.0;
  EStep e;
  const Eigen::VectorXd xx = X.rowwise().squaredNorm();
  const Eigen::VectorXd tt = T.rowwise().squaredNorm();
  e.P.noalias() = T * X.transpose();
  e.P *= -2.0;
  e.P.colwise() += tt;
  e.P.rowwise() += xx.transpose();
  e.P = e.P.cwiseMax(0.0) * (-0.5 / sigma2);  // log-kernel

  const double log_c = w > 0 ? D / 2.0 * std::log(2.0 * std::numbers::pi * sigma2) + std::log(w / (1.0 - w)) +
                                   std::log(static_cast<double>(m) / static_cast<double>(n))
                             : -std::numeric_limits<double>::infinity();
  e.Pt1.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    auto col = e.P.col(j);
    const double mx = std::max(col.maxCoeff(), log_c);
    col = (col.array() - mx).exp();
    const double den = col.sum() + std::exp(log_c - mx);
    col /= den;
    e.log_den_sum += mx + std::log(den);
    e.Pt1[j] = col.sum();
  }
  e.P1 = e.P.rowwise().sum();
  return e;
}

}  // namespace

DeformationField register_nonrigid(const PointCloud& canonical, const PointCloud& reference,
                                   const CpdParams& params, CpdReport* report,
                                   const KernelMatrix* kernel) {
  params.validate();
  validate_cloud(canonical, "register_nonrigid (canonical)");
  validate_cloud(reference, "register_nonrigid (reference)");
  const Eigen::Index m = canonical.size(), n = reference.size();
  constexpr double D = 3.0;
  const double beta = params.resolve_beta(canonical);

  KernelMatrix own;
  if (kernel == nullptr) {
    own = gaussian_kernel(canonical, beta);
    kernel = &own;
  } else if (kernel->size() != m) {
    throw InvalidArgument("register_nonrigid: kernel size does not match canonical model");
  }
  const Eigen::MatrixXd& G = kernel->entries;

  // Both clouds share the canonical model's similarity normalization, so the
  // kernel is unchanged and W maps back to meters by one scale factor.
  const Vec3 mu = centroid(canonical);
  double scale = std::sqrt((canonical.points.rowwise() - mu.transpose()).rowwise().squaredNorm().mean());
  if (!(scale > 0)) scale = 1.0;
  const Eigen::MatrixXd Y = (canonical.points.rowwise() - mu.transpose()) / scale;
  const Eigen::MatrixXd X = (reference.points.rowwise() - mu.transpose()) / scale;

  const double w = params.outlier_weight;
  double sigma2 = (static_cast<double>(m) * X.squaredNorm() + static_cast<double>(n) * Y.squaredNorm() -
                   2.0 * X.colwise().sum().dot(Y.colwise().sum())) /
                  (static_cast<double>(m * n) * D);
  constexpr double kSigmaFloor = 1e-10;
  if (!(sigma2 > kSigmaFloor)) sigma2 = kSigmaFloor;

  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(m, 3);
  Eigen::MatrixXd T = Y;
  Eigen::MatrixXd GW = Eigen::MatrixXd::Zero(m, 3);
  CpdReport rep;
  double prev = std::numeric_limits<double>::quiet_NaN();

  for (int it = 0; it < params.max_iterations; ++it) {
    EStep e = expectation(X, T, sigma2, w);
    const double nll = -e.log_den_sum + static_cast<double>(n) * D / 2.0 * std::log(2.0 * std::numbers::pi * sigma2) -
                       static_cast<double>(n) * std::log((1.0 - w) / static_cast<double>(m));
    const double objective = nll + params.lambda / 2.0 * (W.transpose() * GW).trace();
    rep.objective.push_back(objective);
    if (it > 0) {
      const double ntol = std::abs(objective - prev) / std::max(std::abs(prev), 1e-300);
      if (ntol < params.tolerance || sigma2 <= kSigmaFloor) {
        rep.converged = true;
        break;
      }
    }
    prev = objective;
    rep.iterations = it + 1;

    // M-step: (diag(P1) G + lambda sigma2 I) W = P X - diag(P1) Y, solved in the
    // symmetric form (S G S + lambda sigma2 I) V = S^-1 rhs, W = S V, S = diag(P1)^1/2.
    // Rows with P1 = 0 get W = 0 exactly.
    const Eigen::MatrixXd PX = e.P * X;
    const Eigen::VectorXd sq = e.P1.cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd A = sq.asDiagonal() * G * sq.asDiagonal();
    A.diagonal().array() += params.lambda * sigma2;
    Eigen::MatrixXd rhs(m, 3);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (e.P1[i] > 0)
        rhs.row(i) = (PX.row(i) / e.P1[i] - Y.row(i)) * sq[i];
      else
        rhs.row(i).setZero();
    }
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) {
      std::ostringstream os;
      os << "register_nonrigid: M-step system not positive definite at iteration " << it
         << " (sigma2=" << sigma2 << ", lambda*sigma2=" << params.lambda * sigma2
         << ", max P1=" << e.P1.maxCoeff() << ")";
      throw NumericalError(os.str());
    }
    W = sq.asDiagonal() * llt.solve(rhs);
    if (!W.allFinite()) throw NumericalError("register_nonrigid: non-finite M-step solution");
    GW.noalias() = G * W;
    T = Y + GW;

    const double np = e.P1.sum();
    const double num = (e.Pt1.asDiagonal() * X).cwiseProduct(X).sum() - 2.0 * PX.cwiseProduct(T).sum() +
                       (e.P1.asDiagonal() * T).cwiseProduct(T).sum();
    sigma2 = std::abs(num) / (np * D);
    if (!(sigma2 > kSigmaFloor)) sigma2 = kSigmaFloor;
  }

  if (report) *report = std::move(rep);
  DeformationField out;
  out.W = W * scale;
  out.beta = beta;
  out.sigma2 = sigma2 * scale * scale;
  return out;
}

}  // namespace synergrasp
