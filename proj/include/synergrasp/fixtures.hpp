#pragma once

#include <cstdint>
#include <json.hpp>
#include <vector>

#include "synergrasp/cloudio.hpp"
#include "synergrasp/handkin.hpp"
#include "synergrasp/synergy.hpp"

namespace synergrasp {

/// Demonstration grasps for the fixture hand: 31 collision-free records
/// (power 10, intermediate 7, precision 8, open 6) drawn around per-group
/// posture templates. Deterministic for a given seed.
std::vector<GraspRecord> fixture_grasp_records(const HandModel& hand, std::uint64_t seed = 7);

/// Near-uniform points on a sphere centered at the origin (Fibonacci lattice).
PointCloud fixture_sphere_cloud(int points = 300, double radius = 0.05);

/// Open-top tapered glass standing on z = 0: side wall rings from the bottom
/// radius to the top radius plus a bottom disk.
PointCloud fixture_glass_cloud(int rings = 16, int per_ring = 24, double bottom_radius = 0.03,
                               double top_radius = 0.04, double height = 0.12);

/// Generation specs for the sphere category (one global scale) and the glass
/// category (width, height, and the width of the base part).
nlohmann::json fixture_sphere_spec_json();
nlohmann::json fixture_glass_spec_json();

}  // namespace synergrasp
