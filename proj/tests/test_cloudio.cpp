#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <tuple>

#include "synergrasp/cloudio.hpp"
#include "synergrasp/error.hpp"
#include "testutil.hpp"

using namespace synergrasp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "synergrasp_test_cloudio";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

}  // namespace

TEST_CASE("load_cloud reads points in file order") {
  const auto p = scratch("three.ply");
  write_text(p, "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
                "1 2 3\n4 5 6\n-0.5 0 1e-3\n");
  const auto c = load_cloud(p);
  REQUIRE(c.size() == 3);
  CHECK(c.point(0) == Vec3(1, 2, 3));
  CHECK(c.point(2) == Vec3(-0.5, 0, 1e-3));
}

TEST_CASE("load_cloud ignores extra properties and trailing elements") {
  const auto p = scratch("color.ply");
  write_text(p, "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty uchar red\nproperty float x\n"
                "property float y\nproperty float z\nproperty uchar green\nelement face 0\n"
                "property list uchar int vertex_indices\nend_header\n255 1 2 3 0\n0 4 5 6 7\n");
  const auto c = load_cloud(p);
  REQUIRE(c.size() == 2);
  CHECK(c.point(1) == Vec3(4, 5, 6));
}

TEST_CASE("load_cloud errors") {
  CHECK_THROWS_AS(load_cloud(scratch("does_not_exist.ply")), IoError);

  const auto bad = scratch("nan.ply");
  write_text(bad, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
                  "1 2 3\n4 nan 6\n");
  try {
    load_cloud(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 9);
  }

  const auto hdr = scratch("hdr.ply");
  write_text(hdr, "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n");
  CHECK_THROWS_AS(load_cloud(hdr), ParseError);
  write_text(hdr, "PLY?\n");
  CHECK_THROWS_AS(load_cloud(hdr), ParseError);
  write_text(hdr, "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n");
  CHECK_THROWS_AS(load_cloud(hdr), ParseError);
}

TEST_CASE("save_cloud round trip") {
  const auto c = testutil::random_cloud(100, 42);
  const auto p = scratch("roundtrip.ply");
  save_cloud(c, p);
  const auto back = load_cloud(p);
  REQUIRE(back.size() == 100);
  CHECK((back.points - c.points).cwiseAbs().maxCoeff() < 1e-6);

  SUBCASE("fresh empty directory") {
    const fs::path dir = scratch("emptydir");
    fs::remove_all(dir);
    fs::create_directories(dir);
    save_cloud(c, dir / "out.ply");
    CHECK(load_cloud(dir / "out.ply").size() == 100);
  }
  SUBCASE("unwritable path leaves nothing behind") {
    const fs::path blocker = scratch("blocker");
    write_text(blocker, "not a directory");
    CHECK_THROWS_AS(save_cloud(c, blocker / "out.ply"), IoError);
    CHECK_FALSE(fs::exists(blocker / "out.ply"));
  }
}

TEST_CASE("voxel_downsample") {
  SUBCASE("cube corners collapse to center") {
    const double leaf = 0.1;
    Points p(8, 3);
    int k = 0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int l = 0; l < 2; ++l) p.row(k++) << 0.01 + 0.05 * i, 0.01 + 0.05 * j, 0.01 + 0.05 * l;
    const auto out = voxel_downsample(PointCloud(p), leaf);
    REQUIRE(out.size() == 1);
    CHECK((out.point(0) - Vec3(0.035, 0.035, 0.035)).norm() < 1e-12);
  }
  SUBCASE("sparse grid unchanged") {
    Points p(27, 3);
    int k = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int l = 0; l < 3; ++l) p.row(k++) << 0.25 * i + 0.05, 0.25 * j + 0.05, 0.25 * l + 0.05;
    const auto out = voxel_downsample(PointCloud(p), 0.2);
    REQUIRE(out.size() == 27);
    CHECK((out.points - p).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("occupied voxel count matches independent hash-grid count") {
    const auto c = testutil::random_cloud(10000, 9, 0.0, 1.0);
    const double leaf = 0.1;
    std::set<std::tuple<long, long, long>> occupied;
    for (Eigen::Index i = 0; i < c.size(); ++i)
      occupied.emplace(static_cast<long>(std::floor(c.points(i, 0) / leaf)),
                       static_cast<long>(std::floor(c.points(i, 1) / leaf)),
                       static_cast<long>(std::floor(c.points(i, 2) / leaf)));
    const auto out = voxel_downsample(c, leaf);
    CHECK(static_cast<std::size_t>(out.size()) == occupied.size());
    // Every output point lies within leaf*sqrt(3)/2 of some input point.
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      const double d = (c.points.rowwise() - out.points.row(i)).rowwise().norm().minCoeff();
      CHECK(d <= leaf * std::sqrt(3.0) / 2);
    }
  }
  CHECK_THROWS_AS(voxel_downsample(testutil::random_cloud(3, 1), 0.0), InvalidArgument);
}

TEST_CASE("remove_dominant_plane") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Points p(700, 3);
  for (int i = 0; i < 500; ++i) p.row(i) << u(rng), u(rng), 0.0;
  const auto ball = testutil::fibonacci_sphere(200, 0.1);
  for (int i = 0; i < 200; ++i) p.row(500 + i) = ball.points.row(i) + Eigen::RowVector3d(0, 0, 0.15);
  const PointCloud scene(p);

  const auto out = remove_dominant_plane(scene, 0.005, 200, 7);
  int plane_left = 0, sphere_left = 0;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    (std::abs(out.points(i, 2)) < 1e-12 ? plane_left : sphere_left)++;
  CHECK(plane_left <= 25);     // >= 95% of 500 removed
  CHECK(sphere_left >= 190);   // >= 95% of 200 kept
  CHECK(out.size() <= scene.size());

  const auto again = remove_dominant_plane(scene, 0.005, 200, 7);
  CHECK(again.points == out.points);

  SUBCASE("no dominant plane: best plane still removed") {
    const auto blob = testutil::random_cloud(200, 4);
    const auto fit = fit_dominant_plane(blob, 0.01, 100, 1);
    const auto rem = remove_dominant_plane(blob, 0.01, 100, 1);
    CHECK(fit.inliers.size() >= 3);
    CHECK(rem.size() == blob.size() - static_cast<Eigen::Index>(fit.inliers.size()));
  }
  CHECK_THROWS_AS(remove_dominant_plane(testutil::random_cloud(2, 1), 0.01, 10, 1), InvalidArgument);
}

TEST_CASE("mesh_to_cloud") {
  SUBCASE("sphere mesh samples lie on the sphere") {
    const TriMesh sphere = icosphere(5, 1.0);
    const auto c = mesh_to_cloud(sphere, 1, 100);
    CHECK(c.size() > 1000);
    for (Eigen::Index i = 0; i < c.size(); ++i) CHECK(std::abs(c.point(i).norm() - 1.0) < 1e-3);
  }
  SUBCASE("single triangle") {
    TriMesh tri;
    tri.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    tri.faces = {{0, 1, 2}};
    const auto c = mesh_to_cloud(tri, 0, 200);
    CHECK(c.size() > 0);
    CHECK(c.points.col(2).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("closed box: interior never sampled") {
    TriMesh box;
    for (int i = 0; i < 8; ++i) box.vertices.emplace_back(i & 1 ? 0.1 : -0.1, i & 2 ? 0.05 : -0.05, i & 4 ? 0.2 : -0.2);
    box.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                 {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
    const auto c = mesh_to_cloud(box, 1, 300);
    CHECK(c.size() > 100);
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      const Vec3 q = c.point(i);
      const bool inside = std::abs(q.x()) < 0.1 - 1e-6 && std::abs(q.y()) < 0.05 - 1e-6 && std::abs(q.z()) < 0.2 - 1e-6;
      CHECK_FALSE(inside);
    }
  }
  CHECK_THROWS_AS(mesh_to_cloud(TriMesh{}, 1, 10), InvalidArgument);
}

TEST_CASE("coarse_align") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n01;
  Points p(2000, 3);
  for (int i = 0; i < 2000; ++i) p.row(i) << 0.3 * n01(rng), 0.1 * n01(rng), 0.03 * n01(rng);
  const PointCloud ell(p);

  SUBCASE("identity") {
    const auto r = coarse_align(ell, ell);
    CHECK(r.rotation.norm() < 1e-9);
    CHECK(r.translation.norm() < 1e-9);
  }
  SUBCASE("pure translation") {
    RigidParams t;
    t.translation = Vec3(0.1, 0, 0);
    const auto r = coarse_align(ell, t.apply(ell));
    CHECK((r.translation - Vec3(0.1, 0, 0)).norm() < 1e-9);
    CHECK(r.rotation.norm() < 1e-9);
  }
  SUBCASE("30 degree rotation about z") {
    RigidParams truth;
    truth.rotation = Vec3(0, 0, std::numbers::pi / 6);
    truth.translation = Vec3(0.02, -0.01, 0.05);
    const auto moved = truth.apply(ell);
    const auto r = coarse_align(ell, moved);
    CHECK(log_so3(r.matrix().transpose() * truth.matrix()).norm() < 1e-3);
    CHECK((r.apply(centroid(ell)) - centroid(moved)).norm() < 1e-9);
  }
  SUBCASE("covariance under a rigid motion of the source") {
    const auto ref = testutil::random_cloud(300, 8);
    RigidParams g;
    g.rotation = Vec3(0.2, -0.4, 1.1);
    g.translation = Vec3(0.3, 0.1, -0.2);
    const auto a = coarse_align(g.apply(ell), ref).compose(g);
    const auto b = coarse_align(ell, ref);
    CHECK((a.apply(centroid(ell)) - b.apply(centroid(ell))).norm() < 1e-9);
  }
  SUBCASE("coincident points: centroid translation only") {
    PointCloud same(Points::Constant(5, 3, 0.2));
    const auto r = coarse_align(same, ell);
    CHECK(r.rotation.norm() == 0.0);
    CHECK((r.apply(Vec3::Constant(0.2)) - centroid(ell)).norm() < 1e-12);
  }
}

TEST_CASE("so3 helpers") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int k = 0; k < 50; ++k) {
    const Vec3 w(u(rng), u(rng), u(rng));
    CHECK((log_so3(exp_so3(w)) - w).norm() < 1e-9);
    RigidParams a{w, Vec3(u(rng), u(rng), u(rng))};
    const Vec3 q(u(rng), u(rng), u(rng));
    CHECK((a.inverse().apply(a.apply(q)) - q).norm() < 1e-12);
  }
  const Vec3 near_pi(std::numbers::pi - 1e-9, 0, 0);
  CHECK((exp_so3(log_so3(exp_so3(near_pi))) - exp_so3(near_pi)).norm() < 1e-8);
}
