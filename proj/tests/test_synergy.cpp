#include <doctest.h>

#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <filesystem>
#include <fstream>
#include <random>

#include "synergrasp/error.hpp"
#include "synergrasp/synergy.hpp"

using namespace synergrasp;

namespace {

GraspRecord record(const Eigen::VectorXd& q, GraspGroup g = GraspGroup::Power, std::string label = "g") {
  return {q, std::move(label), g};
}

// Orthonormal 9x2 directions plus data q = mean + D c.
struct Planted {
  Eigen::VectorXd mean;
  Eigen::MatrixXd directions;
  std::vector<GraspRecord> grasps;
};

Planted planted(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Planted p;
  p.mean = Eigen::VectorXd::NullaryExpr(9, [&] { return 0.5 + 0.2 * nd(rng); });
  Eigen::MatrixXd raw = Eigen::MatrixXd::NullaryExpr(9, 2, [&] { return nd(rng); });
  p.directions = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ() * Eigen::MatrixXd::Identity(9, 2);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector2d c(0.4 * nd(rng), 0.15 * nd(rng));
    p.grasps.push_back(record(p.mean + p.directions * c));
  }
  return p;
}

std::vector<GraspRecord> random_grasps(int n, int q, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.4);
  std::vector<GraspRecord> out;
  for (int i = 0; i < n; ++i) out.push_back(record(Eigen::VectorXd::NullaryExpr(q, [&] { return u(rng); })));
  return out;
}

double largest_principal_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a.transpose() * b);
  const double smallest = std::min(1.0, svd.singularValues().minCoeff());
  return std::acos(smallest);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("synergrasp_synergy_" + name);
}

}  // namespace

TEST_CASE("planted two-dimensional subspace is recovered") {
  const auto p = planted(31, 3);
  const auto s = build_synergy_space(p.grasps, 2, "fixture-hand");
  CHECK(s.synergy_count() == 2);
  CHECK(s.hand_id == "fixture-hand");
  CHECK(largest_principal_angle(s.basis, p.directions) < 1e-6);
  CHECK(explained_variance(s, 2) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK((s.basis.transpose() * s.basis - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_FALSE(s.degenerate);
}

TEST_CASE("eigenvalues and explained variance follow the sample scatter") {
  // Rows +-sqrt(2) e1 and +-sqrt(1/2) e2: scatter eigenvalues (4, 1, 0, ...).
  std::vector<GraspRecord> g;
  for (double sign : {1.0, -1.0}) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(5), b = Eigen::VectorXd::Zero(5);
    a[0] = sign * std::sqrt(2.0);
    b[1] = sign * std::sqrt(0.5);
    g.push_back(record(a));
    g.push_back(record(b));
  }
  const auto s = build_synergy_space(g, 2);
  CHECK(s.eigenvalues[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(s.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(explained_variance(s, 1) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(explained_variance(s, 0) == 0.0);
  CHECK(explained_variance(s, 5) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("random grasps give a valid space with monotone explained variance") {
  const auto g = random_grasps(31, 9, 11);
  const auto s = build_synergy_space(g, 2);
  CHECK(explained_variance(s, 2) > 0.0);
  CHECK(explained_variance(s, 2) <= 1.0);
  double prev = 0;
  for (int k = 0; k <= 9; ++k) {
    const double v = explained_variance(s, k);
    CHECK(v >= prev - 1e-15);
    prev = v;
  }
  CHECK(explained_variance(s, 9) == doctest::Approx(1.0).epsilon(1e-12));
  for (int i = 0; i < 9; ++i) {
    CHECK(s.eigenvalues[i] >= 0.0);
    if (i) CHECK(s.eigenvalues[i] <= s.eigenvalues[i - 1]);
  }

  // Eigenvalues of the scatter matrix match the squared singular values of A.
  Eigen::MatrixXd A(31, 9);
  for (int i = 0; i < 31; ++i) A.row(i) = g[static_cast<std::size_t>(i)].joints.transpose();
  A.rowwise() -= A.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  for (int i = 0; i < 9; ++i)
    CHECK(s.eigenvalues[i] == doctest::Approx(svd.singularValues()[i] * svd.singularValues()[i]).epsilon(1e-9));
}

TEST_CASE("identical grasps are degenerate") {
  const Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(9, 0.1, 0.9);
  std::vector<GraspRecord> g(5, record(q));
  const auto s = build_synergy_space(g, 2);
  CHECK(s.degenerate);
  CHECK(s.eigenvalues.cwiseAbs().maxCoeff() == 0.0);
  CHECK(explained_variance(s, 1) == 1.0);
  CHECK((to_joints(s, Eigen::Vector2d::Zero()) - q).norm() == 0.0);
}

TEST_CASE("coordinate maps") {
  const auto s = build_synergy_space(random_grasps(31, 9, 5), 3);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;

  CHECK(to_synergy(s, s.mean).norm() == 0.0);
  CHECK((to_joints(s, Eigen::Vector3d::Zero()) - s.mean).norm() == 0.0);
  const Eigen::VectorXd along = s.mean + s.basis.col(0) * 0.7;
  CHECK((to_synergy(s, along) - Eigen::Vector3d(0.7, 0, 0)).cwiseAbs().maxCoeff() < 1e-12);

  // Naive matrix-vector product.
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd q = Eigen::VectorXd::NullaryExpr(9, [&] { return nd(rng); });
    Eigen::VectorXd expected(3);
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int i = 0; i < 9; ++i) acc += s.basis(i, j) * (q[i] - s.mean[i]);
      expected[j] = acc;
    }
    CHECK((to_synergy(s, q) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  // Left inverse over 100 random synergy vectors.
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd v = Eigen::VectorXd::NullaryExpr(3, [&] { return nd(rng); });
    worst = std::max(worst, (to_synergy(s, to_joints(s, v)) - v).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-12);

  // Round trip through synergy space is the orthogonal projection onto the affine span.
  const Eigen::MatrixXd projector = s.basis * (s.basis.transpose() * s.basis).inverse() * s.basis.transpose();
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd q = Eigen::VectorXd::NullaryExpr(9, [&] { return nd(rng); });
    const Eigen::VectorXd once = to_joints(s, to_synergy(s, q));
    const Eigen::VectorXd twice = to_joints(s, to_synergy(s, once));
    CHECK((twice - once).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::VectorXd d = q - s.mean;
    const double distance = (d - projector * d).norm();
    CHECK((q - once).norm() == doctest::Approx(distance).epsilon(1e-10));
  }
}

TEST_CASE("argument errors") {
  auto g = random_grasps(4, 9, 1);
  CHECK_THROWS_AS(build_synergy_space({g[0]}, 1), InvalidArgument);
  CHECK_THROWS_AS(build_synergy_space(g, 0), InvalidArgument);
  CHECK_THROWS_AS(build_synergy_space(g, 5), InvalidArgument);
  CHECK_THROWS_AS(build_synergy_space(random_grasps(12, 3, 1), 4), InvalidArgument);
  g[2].joints = Eigen::VectorXd::Zero(8);
  CHECK_THROWS_WITH_AS(build_synergy_space(g, 2), doctest::Contains("grasp 2"), InvalidArgument);

  const auto s = build_synergy_space(random_grasps(6, 9, 2), 2);
  CHECK_THROWS_AS(to_synergy(s, Eigen::VectorXd::Zero(8)), InvalidArgument);
  CHECK_THROWS_AS(to_joints(s, Eigen::VectorXd::Zero(3)), InvalidArgument);
  CHECK_THROWS_AS(explained_variance(s, 10), InvalidArgument);
}

TEST_CASE("grasp record files") {
  std::vector<GraspRecord> g = random_grasps(3, 4, 9);
  g[0].group = GraspGroup::Open;
  g[0].label = "open-flat";
  g[1].group = GraspGroup::Precision;
  g[2].group = GraspGroup::Open;
  g[2].joints *= 0.01;
  const auto path = temp_path("records.jsonl");
  save_grasp_records(g, path);
  const auto back = load_grasp_records(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].joints == g[i].joints);
    CHECK(back[i].group == g[i].group);
    CHECK(back[i].label == g[i].label);
  }
  CHECK(widest_open_record(back) == std::optional<std::size_t>(2));
  CHECK_FALSE(widest_open_record({g[1]}).has_value());

  auto write = [&](const std::string& text) {
    std::ofstream(path) << text;
  };
  write("{\"label\":\"a\",\"group\":\"power\",\"joints\":[0.1,0.2]}\n\n{\"label\":\"b\",\"group\":\"fist\",\"joints\":[0,0]}\n");
  try {
    load_grasp_records(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  write("{\"label\":\"a\",\"group\":\"power\",\"joints\":[0.1,0.2]}\n{\"label\":\"b\",\"group\":\"open\",\"joints\":[0]}\n");
  CHECK_THROWS_WITH_AS(load_grasp_records(path), doctest::Contains("line 2"), ParseError);
  write("{\"label\":\"a\",\"joints\":[0.1]}\n");
  CHECK_THROWS_AS(load_grasp_records(path), ParseError);
  write("not json\n");
  CHECK_THROWS_AS(load_grasp_records(path), ParseError);
  CHECK_THROWS_AS(load_grasp_records(temp_path("missing.jsonl")), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("synergy artifact round trip") {
  const auto s = build_synergy_space(random_grasps(31, 9, 4), 2, "hand-a");
  const auto path = temp_path("space.sgc");
  save_synergy_space(s, path);
  const auto back = load_synergy_space(path);
  CHECK(back.hand_id == "hand-a");
  CHECK(back.grasp_count == 31);
  CHECK(back.mean == s.mean);
  CHECK(back.basis == s.basis);
  CHECK(back.eigenvalues == s.eigenvalues);
  std::filesystem::remove(path);
}
