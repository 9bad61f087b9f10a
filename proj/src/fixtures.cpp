#include "synergrasp/fixtures.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "synergrasp/error.hpp"

namespace synergrasp {

namespace {

struct GroupTemplate {
  GraspGroup group;
  const char* name;
  int count;
  // Fraction of each actuated joint's range: thumb opposition, thumb flexion,
  // index proximal, index distal, middle proximal, middle distal, ring, pinky, spread.
  std::array<double, 9> posture;
  double closure_jitter;
};

constexpr std::array<GroupTemplate, 4> kTemplates = {{
    {GraspGroup::Power, "power", 10, {0.75, 0.55, 0.62, 0.55, 0.62, 0.55, 0.62, 0.62, 0.10}, 0.10},
    {GraspGroup::Intermediate, "intermediate", 7, {0.55, 0.35, 0.42, 0.30, 0.40, 0.30, 0.35, 0.35, 0.30}, 0.08},
    {GraspGroup::Precision, "precision", 8, {0.90, 0.30, 0.38, 0.18, 0.32, 0.15, 0.10, 0.10, 0.20}, 0.06},
    {GraspGroup::Open, "open", 6, {0.10, 0.05, 0.04, 0.03, 0.04, 0.03, 0.03, 0.03, 0.50}, 0.03},
}};

}  // namespace

std::vector<GraspRecord> fixture_grasp_records(const HandModel& hand, std::uint64_t seed) {
  if (hand.actuated_count() != 9) throw InvalidArgument("fixture grasps need a hand with 9 actuated joints");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const Eigen::VectorXd lo = hand.actuated_lower(), hi = hand.actuated_upper();
  std::vector<GraspRecord> out;
  for (const auto& t : kTemplates) {
    for (int i = 0; i < t.count; ++i) {
      for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) throw NumericalError("fixture grasps: no collision-free sample for group " + std::string(t.name));
        // Shared closure shift plus small independent joint noise.
        const double closure = t.closure_jitter * nd(rng);
        Eigen::VectorXd q(9);
        for (int j = 0; j < 9; ++j) {
          const double shift = j == 8 ? -0.5 * closure : closure;
          const double frac = std::clamp(t.posture[static_cast<std::size_t>(j)] + shift + 0.07 * nd(rng), 0.0, 1.0);
          q[j] = lo[j] + frac * (hi[j] - lo[j]);
        }
        if (!hand.limit_violations(q).empty()) continue;
        const auto report = self_collision_depths(hand, q);
        if (!report.pairs.empty() && report.max_depth() > -1e-3) continue;
        out.push_back({q, std::string(t.name) + "-" + std::to_string(i + 1), t.group});
        break;
      }
    }
  }
  return out;
}

PointCloud fixture_sphere_cloud(int points, double radius) {
  if (points < 4 || !(radius > 0)) throw InvalidArgument("fixture sphere: need at least 4 points and a positive radius");
  Points p(points, 3);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < points; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / points;
    const double r = std::sqrt(1.0 - z * z);
    p.row(i) << radius * r * std::cos(golden * i), radius * r * std::sin(golden * i), radius * z;
  }
  return PointCloud(p, "sphere");
}

PointCloud fixture_glass_cloud(int rings, int per_ring, double bottom_radius, double top_radius, double height) {
  if (rings < 1 || per_ring < 3 || !(bottom_radius > 0) || !(top_radius > 0) || !(height > 0))
    throw InvalidArgument("fixture glass: bad dimensions");
  std::vector<Vec3> pts;
  const double two_pi = 2.0 * std::numbers::pi;
  for (int i = 0; i < rings; ++i) {
    const double t = (i + 0.5) / rings;
    const double r = bottom_radius + t * (top_radius - bottom_radius);
    const double stagger = (i % 2) * 0.5;
    for (int j = 0; j < per_ring; ++j) {
      const double a = two_pi * (j + stagger) / per_ring;
      pts.emplace_back(r * std::cos(a), r * std::sin(a), t * height);
    }
  }
  const int disk_rings = std::max(1, rings / 4);
  for (int i = 0; i < disk_rings; ++i) {
    const double r = bottom_radius * (i + 0.5) / disk_rings;
    const int k = std::max(3, static_cast<int>(per_ring * (i + 0.5) / disk_rings));
    for (int j = 0; j < k; ++j) {
      const double a = two_pi * j / k;
      pts.emplace_back(r * std::cos(a), r * std::sin(a), 0.0);
    }
  }
  Points p(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) p.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return PointCloud(p, "glass");
}

nlohmann::json fixture_sphere_spec_json() {
  return {{"category", "sphere"},
          {"ops", {"global-scale"}},
          {"mean", {1.0}},
          {"covariance", {{0.15 * 0.15}}},
          {"constraints", {{"min_size", {0.07, 0.07, 0.07}}, {"max_size", {0.13, 0.13, 0.13}}}}};
}

nlohmann::json fixture_glass_spec_json() {
  // The base part is the bottom fifth of the wall plus the bottom disk.
  return {{"category", "glass"},
          {"ops", {"xy-scale", "z-scale"}},
          {"parts", {{{"name", "base"}, {"box", {{"min", {-1.0, -1.0, -1e-9}}, {"max", {1.0, 1.0, 0.03}}}}, {"ops", {"xy-scale"}}}}},
          {"mean", {1.0, 1.0, 1.0}},
          {"covariance", {{0.15 * 0.15, 0.0, 0.0}, {0.0, 0.07 * 0.07, 0.0}, {0.0, 0.0, 0.05 * 0.05}}},
          {"constraints",
           {{"min_size", {0.045, 0.045, 0.09}}, {"max_size", {0.11, 0.11, 0.15}}, {"max_aspect", {{"xy", 1.05}}}}}};
}

}  // namespace synergrasp
