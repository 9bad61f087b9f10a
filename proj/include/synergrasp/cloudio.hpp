#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace synergrasp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// Row-per-point coordinate matrix in meters.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct PointCloud {
  Points points;
  std::string label;

  PointCloud() = default;
  explicit PointCloud(Points p, std::string l = {}) : points(std::move(p)), label(std::move(l)) {}

  Eigen::Index size() const { return points.rows(); }
  bool empty() const { return points.rows() == 0; }
  Vec3 point(Eigen::Index i) const { return points.row(i).transpose(); }
};

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
};

/// Rigid motion p' = R(rotation) p + translation, rotation as an exponential-map vector.
struct RigidParams {
  Vec3 rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();

  Mat3 matrix() const;
  Vec3 apply(const Vec3& p) const;
  PointCloud apply(const PointCloud& c) const;
  /// (this ∘ other)(p) = this(other(p)).
  RigidParams compose(const RigidParams& other) const;
  RigidParams inverse() const;
};

Mat3 exp_so3(const Vec3& w);
/// Inverse of exp_so3, returning the representative with norm in [0, π].
Vec3 log_so3(const Mat3& R);
Mat3 skew(const Vec3& v);
/// Right Jacobian of SO(3): d/dw exp(w) = exp(w) * [J_r(w) dw]x.
Mat3 right_jacobian_so3(const Vec3& w);

Vec3 centroid(const PointCloud& c);
/// Length of the axis-aligned bounding-box diagonal.
double diameter(const PointCloud& c);
/// Throws InvalidArgument on empty clouds or non-finite coordinates.
void validate_cloud(const PointCloud& c, const char* what);

PointCloud load_cloud(const std::filesystem::path& path);
/// Writes ASCII PLY through a temporary file and an atomic rename.
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);
/// Reads an ASCII PLY with a vertex element and an optional face element of
/// vertex_indices lists (triangles only).
TriMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const TriMesh& mesh, const std::filesystem::path& path);

/// One output point per occupied voxel, at the centroid of the voxel's points.
/// Output order follows the first occurrence of each voxel in the input.
PointCloud voxel_downsample(const PointCloud& cloud, double leaf);

struct PlaneFit {
  Eigen::Vector4d plane;  // n.x + d = 0, |n| = 1
  std::vector<Eigen::Index> inliers;
};

/// RANSAC over 3-point samples, least-squares refit on the best inlier set.
PlaneFit fit_dominant_plane(const PointCloud& cloud, double dist_thresh, int iterations,
                            std::uint64_t seed);
PointCloud remove_dominant_plane(const PointCloud& cloud, double dist_thresh, int iterations,
                                 std::uint64_t seed);

/// Icosahedron subdivided `subdivisions` times and projected on a sphere.
TriMesh icosphere(int subdivisions, double radius = 1.0, const Vec3& center = Vec3::Zero());

/// Ray-casts the mesh from every vertex of an icosphere of radius twice the
/// mesh's bounding radius. Each view shoots `rays_per_view` rays through a
/// sunflower pattern covering the bounding disk; first hits are kept and
/// duplicates within 1e-6 m merged.
PointCloud mesh_to_cloud(const TriMesh& mesh, int subdivisions, int rays_per_view);

/// Rigid motion mapping `cloud` onto `reference`: centroids matched and
/// principal axes aligned (signs fixed by the third moment along each axis).
RigidParams coarse_align(const PointCloud& cloud, const PointCloud& reference);

}  // namespace synergrasp
