#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "synergrasp/handkin.hpp"
#include "synergrasp/shapespace.hpp"
#include "synergrasp/synergy.hpp"
#include "synergrasp/synik.hpp"

namespace synergrasp {

struct GpHyperparams {
  /// One RBF lengthscale per input dimension.
  Eigen::VectorXd lengthscales;
  double signal_variance = 1.0;
  double noise_variance = 1e-2;

  void validate(Eigen::Index input_dim) const;
};

/// k(a, b) = signal_variance * exp(-1/2 sum_d ((a_d - b_d) / lengthscale_d)^2).
double rbf_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const GpHyperparams& h);
Eigen::MatrixXd rbf_kernel_matrix(const Eigen::MatrixXd& X, const GpHyperparams& h);

/// Log marginal likelihood of targets y under a zero-mean GP; optional
/// gradient with respect to (log lengthscales, log signal, log noise).
/// Returns -inf when the kernel matrix cannot be factorized.
double log_marginal_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpHyperparams& h,
                               Eigen::VectorXd* gradient = nullptr);

/// One fitted GP: factor of K + (noise + jitter) I and the solve vector.
struct GaussianProcess {
  GpHyperparams hyper;
  Eigen::VectorXd targets;
  Eigen::MatrixXd cholesky;  // lower triangular
  Eigen::VectorXd alpha;     // (K + (noise + jitter) I)^-1 y
  double jitter = 0;
  double log_likelihood = 0;
};

/// Factorizes with jitter grown from 1e-10 to 1e-4 times the signal variance.
GaussianProcess fit_gp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpHyperparams& h);

struct HyperparamSearch {
  int restarts = 5;
  int max_iterations = 200;
  std::uint64_t seed = 0;
};

/// Maximizes the log marginal likelihood by quasi-Newton ascent in log
/// parameters from a data-driven start plus random restarts, within a box
/// scaled to the data.
GpHyperparams optimize_hyperparams(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const HyperparamSearch& search);

struct GraspLearner {
  std::string category;
  std::string hand_id;
  /// Training inputs, N x L.
  Eigen::MatrixXd inputs;
  /// One GP per synergy dimension.
  std::vector<GaussianProcess> gps;

  int latent_dim() const { return static_cast<int>(inputs.cols()); }
  int synergy_count() const { return static_cast<int>(gps.size()); }
  int training_count() const { return static_cast<int>(inputs.rows()); }
};

struct LearnerOptions {
  /// Shared hyperparameters for every synergy; unset: fitted per synergy.
  std::optional<GpHyperparams> hyper;
  HyperparamSearch search;
};

/// Row i of `synergies` is the synergy vector recorded for latents[i].
/// Duplicate latents are allowed.
GraspLearner train_learner(const std::vector<LatentDescriptor>& latents, const Eigen::MatrixXd& synergies,
                           const LearnerOptions& options, const std::string& hand_id = {});

struct SynergyPrediction {
  Eigen::VectorXd mean;
  /// Posterior variance of the latent function (noise excluded).
  Eigen::VectorXd variance;
};

SynergyPrediction predict(const GraspLearner& learner, const LatentDescriptor& x);

void save_learner(const GraspLearner& learner, const std::filesystem::path& path);
GraspLearner load_learner(const std::filesystem::path& path);

enum class PoseInit { Centroid, PrincipalAxes };

struct GraspInferenceOptions {
  InferenceParams inference;
  /// Explicit model-to-observation pose; otherwise derived per `pose_init`.
  std::optional<RigidParams> initial_pose;
  PoseInit pose_init = PoseInit::Centroid;
  IkOptions ik;
};

struct GraspDiagnostics {
  double shape_ms = 0, predict_ms = 0, correction_ms = 0, total_ms = 0;
  int shape_iterations = 0;
  double shape_cost = 0;
  Eigen::VectorXd synergy_variance;
  /// max(0, deepest penetration) of the raw prediction and the final pose.
  double raw_penetration = 0;
  double final_penetration = 0;
  std::vector<LimitViolation> raw_limit_violations;
  std::vector<LimitViolation> final_limit_violations;
  bool corrected = false;
  bool correction_converged = true;
  double correction_distance = 0;
  std::string correction_diagnostic;
};

struct GraspInference {
  Eigen::VectorXd joints;
  Eigen::VectorXd synergy;
  Eigen::VectorXd raw_synergy;
  LatentDescriptor latent;
  RigidParams pose;
  PointCloud reconstruction;
  GraspDiagnostics diagnostics;
};

/// Shape inference, synergy prediction, collision correction (only when the
/// predicted pose self-collides or leaves the joint limits) and joint mapping.
/// Stage failures are rethrown as StageError.
GraspInference infer_grasp(const CategoryShapeSpace& space, const GraspLearner& learner, const SynergySpace& synergies,
                           const HandModel& hand, const PointCloud& observation, const GraspInferenceOptions& options);

}  // namespace synergrasp
