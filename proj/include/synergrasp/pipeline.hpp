#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "synergrasp/cpd.hpp"
#include "synergrasp/grasplearn.hpp"
#include "synergrasp/modelgen.hpp"
#include "synergrasp/shapespace.hpp"
#include "synergrasp/synergy.hpp"
#include "synergrasp/synik.hpp"

namespace synergrasp {

/// Demonstrated grasp as a function of one generator activation: joint angles
/// interpolate linearly from `small` at range.lo to `large` at range.hi and are
/// held constant outside the range.
struct GraspRule {
  int activation = 0;
  double lo = 0.8, hi = 1.2;
  Eigen::VectorXd small, large;

  Eigen::VectorXd joints(const Eigen::VectorXd& activations) const;
};

enum class PoseStart { Centroid, PrincipalAxes, Identity };

/// Project configuration. Relative paths resolve against the config file's
/// directory; the artifact root may be overridden by SYNERGRASP_ARTIFACTS.
struct ProjectConfig {
  nlohmann::json raw;
  std::filesystem::path base_dir;

  std::string category;
  std::uint64_t seed = 0;
  int threads = 1;

  std::filesystem::path canonical, generation, hand, grasps, demonstrations, artifacts;

  int training_count = 16;
  int test_count = 7;
  ShapeSpaceOptions shape;
  /// Kernel width as a fraction of the canonical diameter, applied when no
  /// absolute width is configured.
  std::optional<double> beta_fraction;
  InferenceParams inference;
  PoseStart pose_start = PoseStart::Centroid;
  int synergy_count = 2;
  IkOptions ik;
  LearnerOptions learner;
  std::optional<GraspRule> rule;
  /// Rigid perturbation applied to held-out instances in eval.
  double eval_translation = 0.01;
  double eval_rotation = 0.3;
};

/// Defaults for every recognized key.
nlohmann::json default_config_json();

/// Applies "a.b.c=value" overrides; values parse as JSON, else as strings.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides);

/// Merges the file over the defaults, applies overrides and validates. Unknown
/// keys, a missing seed and unreadable input paths are errors.
ProjectConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
ProjectConfig config_from_json(const nlohmann::json& merged, const std::filesystem::path& base_dir);

/// Provenance of every artifact under one root: kind, version, content hash,
/// creation parameters and upstream hashes.
class Manifest {
 public:
  struct Entry {
    std::string kind;
    int version = 1;
    std::string path;  // relative to the artifact root
    std::string sha256;
    nlohmann::json params = nlohmann::json::object();
    std::map<std::string, std::string> upstream;
  };

  explicit Manifest(std::filesystem::path root);
  static Manifest load(const std::filesystem::path& root);
  void save() const;

  const std::filesystem::path& root() const { return root_; }
  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  /// Entry whose file still hashes to the recorded value; throws otherwise.
  const Entry& require(const std::string& name) const;
  std::filesystem::path path_of(const std::string& name) const { return root_ / require(name).path; }
  /// Hashes the file at root / relative and records it.
  void record(const std::string& name, Entry entry);
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::filesystem::path root_;
  std::map<std::string, Entry> entries_;
};

std::string file_sha256(const std::filesystem::path& path);

using Logger = std::function<void(const std::string&)>;

/// Writes the demo data set: sphere and glass categories (canonical cloud,
/// generation spec, config with a planted grasp rule), the fixture hand and its
/// 31 demonstration grasps. Returns the written file list.
std::vector<std::filesystem::path> cmd_fixtures(const std::filesystem::path& out_dir, const Logger& log);

/// Each command returns its JSON report (also written under the artifact root).
nlohmann::json cmd_gen_models(const ProjectConfig& cfg, const Logger& log);
nlohmann::json cmd_build_shape_space(const ProjectConfig& cfg, const Logger& log);
nlohmann::json cmd_infer_shape(const ProjectConfig& cfg, const std::filesystem::path& observation,
                               const std::filesystem::path& out_dir, const Logger& log);
nlohmann::json cmd_build_synergies(const ProjectConfig& cfg, const Logger& log);
nlohmann::json cmd_train_learner(const ProjectConfig& cfg, const Logger& log);
nlohmann::json cmd_infer_grasp(const ProjectConfig& cfg, const std::filesystem::path& observation,
                               const std::filesystem::path& out_dir, const Logger& log);
/// Runs infer_grasp on every held-out instance. Timings go to a separate file
/// so the report itself is reproducible.
nlohmann::json cmd_eval(const ProjectConfig& cfg, const Logger& log);

}  // namespace synergrasp
