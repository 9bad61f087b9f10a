#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "synergrasp/cloudio.hpp"

namespace synergrasp {

using Transform = Eigen::Isometry3d;

struct Capsule {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 0;

  Capsule transformed(const Transform& T) const { return {T * a, T * b, radius}; }
};

struct CapsuleContact {
  /// Segment-segment distance minus both radii; negative when overlapping.
  double distance = 0;
  /// Closest points on the two axis segments.
  Vec3 point_a = Vec3::Zero();
  Vec3 point_b = Vec3::Zero();
};

/// Closest approach of two capsules. Symmetric in its arguments to the last bit.
CapsuleContact capsule_contact(const Capsule& a, const Capsule& b);
double capsule_distance(const Capsule& a, const Capsule& b);

enum class Actuation { Actuated, Mimic, Fixed };

struct HandLink {
  std::string name;
  /// Capsules in the link frame.
  std::vector<Capsule> capsules;
};

struct HandJoint {
  std::string name;
  std::string parent;
  std::string child;
  /// Unit rotation axis in the joint frame (revolute joints).
  Vec3 axis = Vec3::UnitZ();
  /// Joint frame relative to the parent link frame at zero angle.
  Transform origin = Transform::Identity();
  double lower = 0;
  double upper = 0;
  Actuation actuation = Actuation::Actuated;
  /// Mimic joints: angle = multiplier * source + offset.
  std::string source;
  double multiplier = 1.0;
  double offset = 0.0;
};

struct LimitViolation {
  std::string joint;
  double value = 0;
  double lower = 0;
  double upper = 0;
};

struct PairPenetration {
  std::string link_a;
  std::string link_b;
  /// Largest penetration over all capsule combinations of the pair; negative
  /// values are clearances.
  double depth = 0;
  Vec3 witness_a = Vec3::Zero();
  Vec3 witness_b = Vec3::Zero();
};

struct CollisionReport {
  /// One entry per allowlisted pair, in allowlist order.
  std::vector<PairPenetration> pairs;

  /// Pairs with depth > threshold.
  std::vector<PairPenetration> penetrating(double threshold = 0.0) const;
  double max_depth() const;
  nlohmann::json to_json() const;
};

/// Kinematic tree of revolute joints with capsule link geometry. Immutable
/// after construction; all queries are const and thread-safe.
class HandModel {
 public:
  HandModel(std::string id, std::string root, std::vector<HandLink> links, std::vector<HandJoint> joints,
            std::vector<std::pair<std::string, std::string>> collision_pairs);

  static HandModel from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  const std::string& id() const { return id_; }
  const std::string& root() const { return root_; }
  const std::vector<HandLink>& links() const { return links_; }
  const std::vector<HandJoint>& joints() const { return joints_; }
  const std::vector<std::pair<std::string, std::string>>& collision_pairs() const { return pairs_; }

  int joint_count() const { return static_cast<int>(joints_.size()); }
  int actuated_count() const { return static_cast<int>(actuated_.size()); }
  int mimic_count() const;
  std::vector<std::string> actuated_names() const;
  /// Limits of the actuated joints, in actuation order.
  Eigen::VectorXd actuated_lower() const;
  Eigen::VectorXd actuated_upper() const;
  int link_index(const std::string& name) const;

  /// Angles of every joint (file order) with mimics expanded; fixed joints get 0.
  Eigen::VectorXd expand(const Eigen::VectorXd& q_actuated) const;
  /// Expanded angles outside their joint limits.
  std::vector<LimitViolation> limit_violations(const Eigen::VectorXd& q_actuated) const;

  /// World pose of every link, indexed like links().
  std::vector<Transform> link_poses(const Eigen::VectorXd& q_actuated) const;

  /// Index of the joint whose child is each link (-1 for the root).
  const std::vector<int>& parent_joint() const { return parent_joint_; }

 private:
  void check_dimension(const Eigen::VectorXd& q, const char* what) const;

  std::string id_;
  std::string root_;
  std::vector<HandLink> links_;
  std::vector<HandJoint> joints_;
  std::vector<std::pair<std::string, std::string>> pairs_;
  std::vector<int> actuated_;       // joint indices in actuation order
  std::vector<int> mimic_source_;   // per joint: index into actuated order, or -1
  std::vector<int> order_;          // joints in root-to-leaf order
  std::vector<int> parent_joint_;   // per link
  std::vector<std::pair<int, int>> pair_links_;
  friend CollisionReport self_collision_depths(const HandModel&, const Eigen::VectorXd&);
};

HandModel load_hand(const std::filesystem::path& path);
void save_hand(const HandModel& hand, const std::filesystem::path& path);

/// Link name -> world transform. Limit violations are reported through
/// `violations`; the poses are computed regardless.
std::map<std::string, Transform> forward_kinematics(const HandModel& hand, const Eigen::VectorXd& q_actuated,
                                                    std::vector<LimitViolation>* violations = nullptr);

CollisionReport self_collision_depths(const HandModel& hand, const Eigen::VectorXd& q_actuated);

/// The bundled Schunk-like fixture: 20 joints (9 actuated, 11 mimic) with
/// placeholder dimensions. Actuation order: thumb opposition, thumb flexion,
/// index proximal, index distal, middle proximal, middle distal, ring, pinky,
/// finger spread.
nlohmann::json fixture_hand_json();
HandModel fixture_hand();

}  // namespace synergrasp
