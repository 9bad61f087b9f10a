#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "synergrasp/cloudio.hpp"
#include "synergrasp/cpd.hpp"

namespace synergrasp {

struct PcaResult {
  /// Orthonormal columns, ordered by descending eigenvalue.
  Eigen::MatrixXd basis;
  /// Eigenvalues of Y Y^T / (N - 1) restricted to the basis, descending.
  Eigen::VectorXd eigenvalues;
  int iterations = 0;
  bool converged = false;
  /// Y was (numerically) zero; basis is an arbitrary orthonormal set.
  bool degenerate = false;
};

/// Expectation-maximization PCA (zero-noise limit): alternates latent
/// projections X = (C^T C)^-1 C^T Y and loadings C = Y X^T (X X^T)^-1, then
/// rotates the converged subspace onto its eigenvectors. Y is used as given
/// (no centering). Deterministic for a fixed seed.
PcaResult pca_em(const Eigen::MatrixXd& Y, int L, int max_iterations = 1000, double tolerance = 1e-12,
                 std::uint64_t seed = 0);

struct LatentDescriptor {
  Eigen::VectorXd x;
  std::string category;
};

/// Latent deformation model of one object category. Immutable once built.
struct CategoryShapeSpace {
  std::string category;
  PointCloud canonical;
  KernelMatrix kernel;
  /// Mean and per-coordinate standard deviation of the vectorized fields
  /// (row-major W, index 3 m + d).
  Eigen::VectorXd field_mean;
  Eigen::VectorXd field_scale;
  /// 3M x L orthonormal basis over standardized fields.
  Eigen::MatrixXd basis;
  /// Retained eigenvalues (L) and the full spectrum computed at build time.
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd spectrum;
  /// Total variance of the standardized design matrix.
  double total_variance = 0;
  int training_count = 0;
  CpdParams cpd;
  /// Latent coordinates of the training fields, N x L.
  Eigen::MatrixXd training_latents;
  bool degenerate = false;

  // Derived, filled by finalize(): mean shape C + G reshape(mean) and the
  // per-component displacement modes G reshape(scale .* basis_l), M x 3 each.
  Points mean_shape;
  std::vector<Points> modes;

  int latent_dim() const { return static_cast<int>(basis.cols()); }
  Eigen::Index model_size() const { return canonical.size(); }
  /// Fraction of total variance captured by the first k components of the spectrum.
  double explained_variance(int k) const;
  void finalize();
  void validate() const;
};

struct ShapeSpaceOptions {
  CpdParams cpd;
  /// Explicit latent dimension; otherwise the smallest L reaching variance_target.
  std::optional<int> latent_dim;
  double variance_target = 0.95;
  int pca_max_iterations = 2000;
  double pca_tolerance = 1e-13;
  std::uint64_t seed = 0;
  /// Registrations run on this many threads; results do not depend on it.
  int threads = 1;
};

struct RegistrationSummary {
  double sigma2 = 0;
  int iterations = 0;
  /// Chamfer distance between the deformed canonical model and the sample.
  double residual = 0;
};

struct ShapeSpaceReport {
  std::vector<RegistrationSummary> registrations;
  std::vector<std::string> warnings;
  int clamped_coordinates = 0;
  PcaResult pca;
};

CategoryShapeSpace build_shape_space(const PointCloud& canonical, const std::vector<PointCloud>& training,
                                     const ShapeSpaceOptions& options, const std::string& category = {},
                                     ShapeSpaceReport* report = nullptr);

/// W = reshape(field_mean + field_scale .* (basis x)).
DeformationField latent_to_field(const CategoryShapeSpace& space, const LatentDescriptor& x);
/// Latent coordinates whose field is closest to `field` in the least-squares
/// sense (unstandardized field coordinates).
LatentDescriptor field_to_latent(const CategoryShapeSpace& space, const DeformationField& field);
/// Canonical model deformed by the field of x (canonical frame).
PointCloud reconstruct(const CategoryShapeSpace& space, const Eigen::VectorXd& x);

void save_shape_space(const CategoryShapeSpace& space, const std::filesystem::path& path);
CategoryShapeSpace load_shape_space(const std::filesystem::path& path);

/// Symmetric Chamfer distance: mean nearest-neighbor distance a->b and b->a, halved.
double chamfer(const PointCloud& a, const PointCloud& b);

// ---------------------------------------------------------------------------
// Latent inference

struct InferenceParams {
  int max_iterations = 400;
  /// Armijo constant, backtracking factor and budget.
  double armijo = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 40;
  /// Initial soft-assignment variance (m^2). Unset: mean squared distance per
  /// coordinate between observation and initial reconstruction.
  std::optional<double> initial_sigma2;
  double sigma2_decay = 0.95;
  /// Floor as a fraction of the canonical diameter squared.
  double sigma2_floor = 1e-6;
  /// Converged once sigma2 is at its floor and the cost decrease falls below
  /// this fraction of max(cost, N_obs x floor).
  double tolerance = 1e-9;
  bool fix_pose = false;
  /// Abort when the latent leaves this many standard deviations of the
  /// training distribution (Mahalanobis norm).
  double max_latent_sigma = 50.0;

  void validate() const;
};

struct InferenceResult {
  LatentDescriptor latent;
  RigidParams pose;
  /// Full canonical-topology reconstruction, posed in the observation frame.
  PointCloud reconstructed;
  double cost = 0;
  int iterations = 0;
};

struct InferenceTrace {
  /// Cost before and after the accepted step of each iteration, under that
  /// iteration's fixed weights.
  std::vector<double> cost_before, cost_after, sigma2;
};

/// Cost E(x, theta) = sum_mn P_mn |O_n - (R y_m(x) + t)|^2 with P fixed, and
/// its derivatives. Parameters are packed [x (L), rotation (3), translation (3)].
class LatentObjective {
 public:
  LatentObjective(const CategoryShapeSpace& space, const PointCloud& observation);

  int dim() const { return latent_dim_ + 6; }
  int latent_dim() const { return latent_dim_; }

  static Eigen::VectorXd pack(const Eigen::VectorXd& x, const RigidParams& pose);
  Eigen::VectorXd latent(const Eigen::VectorXd& params) const { return params.head(latent_dim_); }
  RigidParams pose(const Eigen::VectorXd& params) const;

  /// Model points in the canonical frame, y(x).
  Points shape(const Eigen::VectorXd& x) const;
  /// Posed model points R y + t.
  Points posed(const Eigen::VectorXd& params) const;

  /// Sufficient statistics of a fixed soft assignment.
  struct Assignment {
    Eigen::VectorXd mass;  // P1, per model point
    Points target;         // weighted mean observation per model point (zero rows where mass = 0)
    double offset = 0;     // constant part of the cost
  };
  /// Soft assignment with columns normalized over model points (softmax of
  /// -|O_n - z_m|^2 / (2 sigma2)).
  Assignment assign(const Eigen::VectorXd& params, double sigma2) const;
  /// Dense weight matrix (M x N); for tests and diagnostics.
  Eigen::MatrixXd weights(const Eigen::VectorXd& params, double sigma2) const;

  double cost(const Eigen::VectorXd& params, const Assignment& a) const;
  /// Cost, gradient, and the Gauss-Newton approximation of the Hessian.
  double evaluate(const Eigen::VectorXd& params, const Assignment& a, Eigen::VectorXd* gradient,
                  Eigen::MatrixXd* gauss_newton = nullptr) const;

  /// Mean squared per-coordinate distance over all observation/model pairs.
  double mean_pair_sigma2(const Eigen::VectorXd& params) const;

 private:
  const CategoryShapeSpace& space_;
  const PointCloud& obs_;
  int latent_dim_;
};

InferenceResult infer_latent(const CategoryShapeSpace& space, const PointCloud& observation,
                             const RigidParams& init_pose, const InferenceParams& params,
                             InferenceTrace* trace = nullptr);

}  // namespace synergrasp
