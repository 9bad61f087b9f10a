#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

namespace synergrasp {

/// Versioned artifact container shared by the shape-space, synergy-space and
/// learner files.
///
/// Layout:
///   line 1   "SYNERGRASP-ARTIFACT"
///   line 2   one-line JSON header: {"kind", "version", "meta", "arrays": [{"name","rows","cols"}]}
///   payload  each array in header order, row-major, little-endian IEEE-754 float64
struct Container {
  std::string kind;
  int version = 1;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;

  void add(std::string name, Eigen::MatrixXd m) { arrays.emplace_back(std::move(name), std::move(m)); }
  /// Throws ParseError when the array is missing or has the wrong shape
  /// (negative expected dimensions are not checked).
  const Eigen::MatrixXd& get(const std::string& name, Eigen::Index rows = -1,
                             Eigen::Index cols = -1) const;
};

std::string encode_container(const Container& c);
Container decode_container(const std::string& bytes, const std::string& expected_kind);

void save_container(const Container& c, const std::filesystem::path& path);
Container load_container(const std::filesystem::path& path, const std::string& expected_kind);

}  // namespace synergrasp
