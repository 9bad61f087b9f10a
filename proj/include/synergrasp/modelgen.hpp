#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "synergrasp/cloudio.hpp"

namespace synergrasp {

enum class OpKind {
  GlobalScale,
  XScale,
  YScale,
  ZScale,
  XYScale,
  XZScale,
  YZScale,
  XYProjective,
  XZProjective,
  YZProjective,
};

/// "global-scale", "x-scale", ..., "yz-projective".
std::string to_string(OpKind kind);
OpKind parse_op_kind(const std::string& name);
bool is_projective(OpKind kind);

struct ShapeOp {
  OpKind kind = OpKind::GlobalScale;
  double activation = 1.0;

  /// Scale factors must be positive; projective activations must satisfy |k| < 1.
  bool valid() const;
};

/// Fixed point and normalization of an operation: the centroid of the points
/// it acts on and the largest centroid-relative extent along each axis.
struct ShapeFrame {
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Ones();

  static ShapeFrame of(const PointCloud& cloud);
};

/// Scale ops multiply the named coordinates about the frame center.
///
/// Projective ops act on a plane (a, b) named by the op (xy, xz, yz): with
/// u = (p - center) / half_extent, the homogeneous map
///   (u_a, u_b, 1) -> (u_a, u_b, 1 + k u_b)
/// followed by division by the last coordinate, i.e. u_a' = u_a / (1 + k u_b),
/// u_b' = u_b / (1 + k u_b). The first-named coordinate tapers along the second.
/// The op with -k in the same frame is its exact inverse, and |k| < 1 keeps the
/// map orientation-preserving on the frame's box.
///
/// The single-argument form uses the cloud's own frame.
PointCloud apply_shape_op(const PointCloud& cloud, const ShapeOp& op);
PointCloud apply_shape_op(const PointCloud& cloud, const ShapeOp& op, const ShapeFrame& frame);

struct ShapeConstraints {
  /// Bounding-box size along x, y, z (meters). Bounds must be finite; the
  /// defaults are loose enough to never bind at desk scale.
  Vec3 min_size = Vec3::Zero();
  Vec3 max_size = Vec3::Constant(1e6);
  /// Largest allowed ratio between box sizes on the xy, xz and yz axis pairs
  /// (either way round).
  std::array<double, 3> max_aspect = {1e6, 1e6, 1e6};

  void validate() const;
};

/// Description of the first violated constraint, or nothing if all hold.
std::optional<std::string> check_constraints(const PointCloud& cloud, const ShapeConstraints& c);

struct PartSpec {
  std::string name;
  std::vector<Eigen::Index> indices;
  std::vector<OpKind> ops;
};

struct GenerationSpec {
  std::string category;
  /// Ops applied to the whole cloud, in order.
  std::vector<OpKind> ops;
  /// Part ops run after the global ops, part by part, each in the part's frame.
  std::vector<PartSpec> parts;
  /// Activation distribution over [global ops..., part ops...].
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  ShapeConstraints constraints;
  /// Unset: 50 x count.
  std::optional<int> max_rejections;

  int activation_count() const;
  /// Checks dimensions, symmetry and positive semi-definiteness, and part
  /// indices against `model_size` when it is positive.
  void validate(Eigen::Index model_size = 0) const;
};

GenerationSpec generation_spec_from_json(const nlohmann::json& j, const PointCloud* canonical = nullptr);
nlohmann::json generation_spec_to_json(const GenerationSpec& spec);

/// Applies one activation vector (ordered as in GenerationSpec::mean).
PointCloud apply_activations(const PointCloud& canonical, const GenerationSpec& spec, const Eigen::VectorXd& a);

struct GenerationResult {
  std::vector<PointCloud> instances;
  std::vector<Eigen::VectorXd> activations;
  int attempts = 0;
  int rejected = 0;
  bool exhausted = false;
  /// Summary with acceptance rate and the most frequent rejection reason.
  std::string diagnostic;

  double acceptance_rate() const {
    return attempts ? static_cast<double>(instances.size()) / static_cast<double>(attempts) : 0.0;
  }
};

using InstanceFilter = std::function<bool(const PointCloud&)>;

/// Samples activations, applies ops, rejects constraint violators (and
/// instances refused by `filter`) until `count` are accepted or the rejection
/// budget runs out. Deterministic for a given seed.
GenerationResult generate_instances(const PointCloud& canonical, const GenerationSpec& spec, int count,
                                    std::uint64_t seed, const InstanceFilter& filter = {});

}  // namespace synergrasp
