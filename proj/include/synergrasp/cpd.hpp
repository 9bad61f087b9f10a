#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "synergrasp/cloudio.hpp"

namespace synergrasp {

/// Non-rigid Coherent Point Drift parameters.
struct CpdParams {
  /// Kernel width in meters. Unset: 0.2 x the canonical cloud's diameter.
  std::optional<double> beta;
  /// Motion-coherence weight. Dimensionless: registration runs on clouds scaled
  /// by the canonical model's RMS radius.
  double lambda = 2.0;
  /// Uniform outlier component weight, in [0, 1).
  double outlier_weight = 0.1;
  int max_iterations = 150;
  /// Stop when the relative change of the objective falls below this.
  double tolerance = 1e-5;

  void validate() const;
  double resolve_beta(const PointCloud& canonical) const;
};

/// G with g_ij = exp(-|z_i - z_j|^2 / (2 beta^2)).
struct KernelMatrix {
  Eigen::MatrixXd entries;
  double beta = 0;

  Eigen::Index size() const { return entries.rows(); }
};

/// Coefficients W (M x 3) of the displacement G W applied to the canonical model.
struct DeformationField {
  Eigen::MatrixXd W;
  double beta = 0;
  /// GMM variance at termination, m^2.
  double sigma2 = 0;
};

struct CpdReport {
  /// Penalized negative log-likelihood evaluated at the start of every EM
  /// iteration (normalized coordinates).
  std::vector<double> objective;
  int iterations = 0;
  bool converged = false;
};

KernelMatrix gaussian_kernel(const PointCloud& cloud, double beta);

/// C + G W, same order as C.
PointCloud apply_deformation(const PointCloud& canonical, const KernelMatrix& G,
                             const DeformationField& field);

/// Deforms `canonical` onto `reference`. Pass a precomputed kernel to avoid
/// rebuilding it when registering one canonical model against many clouds.
DeformationField register_nonrigid(const PointCloud& canonical, const PointCloud& reference,
                                   const CpdParams& params, CpdReport* report = nullptr,
                                   const KernelMatrix* kernel = nullptr);

}  // namespace synergrasp
