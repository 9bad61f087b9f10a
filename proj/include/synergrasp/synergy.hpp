#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace synergrasp {

enum class GraspGroup { Power, Intermediate, Precision, Open };

std::string to_string(GraspGroup g);
GraspGroup parse_grasp_group(const std::string& name);

struct GraspRecord {
  /// Actuated joint angles (radians).
  Eigen::VectorXd joints;
  std::string label;
  GraspGroup group = GraspGroup::Power;
};

/// JSON lines, one {"label", "group", "joints"} object per line. Blank lines
/// are skipped. Errors name the offending line.
std::vector<GraspRecord> load_grasp_records(const std::filesystem::path& path);
void save_grasp_records(const std::vector<GraspRecord>& records, const std::filesystem::path& path);

/// Index of the open record with the smallest sum of absolute joint angles.
std::optional<std::size_t> widest_open_record(const std::vector<GraspRecord>& records);

struct SynergySpace {
  /// Mean joint vector (q).
  Eigen::VectorXd mean;
  /// q x l, orthonormal columns, leading eigenvectors of A^T A.
  Eigen::MatrixXd basis;
  /// All q eigenvalues of A^T A, descending.
  Eigen::VectorXd eigenvalues;
  std::string hand_id;
  int grasp_count = 0;
  /// A = 0: every eigenvalue is zero.
  bool degenerate = false;

  int joint_count() const { return static_cast<int>(mean.size()); }
  int synergy_count() const { return static_cast<int>(basis.cols()); }
  void validate() const;
};

SynergySpace build_synergy_space(const std::vector<GraspRecord>& grasps, int l, const std::string& hand_id = {});

/// s = L^T (q - mean).
Eigen::VectorXd to_synergy(const SynergySpace& space, const Eigen::VectorXd& q);
/// q = mean + L s. The result is not clamped to joint limits.
Eigen::VectorXd to_joints(const SynergySpace& space, const Eigen::VectorXd& s);

/// Fraction of the eigenvalue mass in the first k components; 1 when degenerate.
double explained_variance(const SynergySpace& space, int k);

void save_synergy_space(const SynergySpace& space, const std::filesystem::path& path);
SynergySpace load_synergy_space(const std::filesystem::path& path);

}  // namespace synergrasp
