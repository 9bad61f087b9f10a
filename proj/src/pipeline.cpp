#include "synergrasp/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "synergrasp/cloudio.hpp"
#include "synergrasp/error.hpp"
#include "synergrasp/fileutil.hpp"
#include "synergrasp/fixtures.hpp"
#include "synergrasp/handkin.hpp"

namespace synergrasp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kManifestFormat = "synergrasp-manifest";

json to_json_vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw InvalidArgument(what + ": expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw InvalidArgument(what + ": expected an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json pose_json(const RigidParams& p) {
  return {{"rotation", to_json_vec(p.rotation)}, {"translation", to_json_vec(p.translation)}};
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Every key of `user` must exist in `defaults`; null defaults and the listed
// free-form keys accept any value.
void check_keys(const json& user, const json& defaults, const std::string& prefix) {
  static const std::set<std::string> free_form = {"learner.hyper", "grasp_rule"};
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw InvalidArgument("config: unknown key '" + key + "'");
    const json& d = defaults.at(it.key());
    if (free_form.count(key) || d.is_null()) continue;
    if (d.is_object()) {
      if (!it->is_object()) throw InvalidArgument("config: '" + key + "' must be an object");
      check_keys(*it, d, key);
    }
  }
}

// Recursive merge that keeps explicit nulls (unlike a JSON merge patch).
void merge_over(json& base, const json& over, const std::string& prefix) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    json& slot = base[it.key()];
    if (slot.is_object() && it->is_object() && key != "learner.hyper" && key != "grasp_rule")
      merge_over(slot, *it, key);
    else
      slot = *it;
  }
}

template <class T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument("config: '" + key + "' has the wrong type");
  }
}

GpHyperparams hyper_from_json(const json& j) {
  GpHyperparams h;
  const json& ls = j.at("lengthscales");
  h.lengthscales = ls.is_number() ? Eigen::VectorXd::Constant(1, ls.get<double>()) : vec_from_json(ls, "learner.hyper");
  h.signal_variance = j.at("signal_variance").get<double>();
  h.noise_variance = j.at("noise_variance").get<double>();
  return h;
}

json hyper_to_json(const GpHyperparams& h) {
  return {{"lengthscales", to_json_vec(h.lengthscales)},
          {"signal_variance", h.signal_variance},
          {"noise_variance", h.noise_variance}};
}

GraspRule rule_from_json(const json& j) {
  GraspRule r;
  try {
    r.activation = j.at("activation").get<int>();
    const auto range = j.at("range").get<std::vector<double>>();
    if (range.size() != 2) throw InvalidArgument("grasp_rule: range needs two values");
    r.lo = range[0];
    r.hi = range[1];
    r.small = vec_from_json(j.at("small"), "grasp_rule.small");
    r.large = vec_from_json(j.at("large"), "grasp_rule.large");
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: grasp_rule: ") + e.what());
  }
  if (!(r.hi > r.lo)) throw InvalidArgument("config: grasp_rule range must be increasing");
  if (r.activation < 0) throw InvalidArgument("config: grasp_rule activation index must be non-negative");
  if (r.small.size() != r.large.size() || r.small.size() == 0)
    throw InvalidArgument("config: grasp_rule small and large postures must have the same non-zero size");
  return r;
}

json rule_to_json(const GraspRule& r) {
  return {{"activation", r.activation}, {"range", {r.lo, r.hi}}, {"small", to_json_vec(r.small)}, {"large", to_json_vec(r.large)}};
}

fs::path require_input(const fs::path& p, const char* key) {
  if (p.empty()) throw InvalidArgument(std::string("config: paths.") + key + " is not set");
  if (!fs::exists(p)) throw IoError(std::string("config: paths.") + key + " '" + p.string() + "' does not exist");
  return p;
}

// Instance list written by gen-models.
struct ModelSet {
  fs::path dir;
  std::vector<std::string> files;
  std::vector<Eigen::VectorXd> activations;
  std::vector<std::string> hashes;

  PointCloud cloud(std::size_t i) const {
    const fs::path p = dir / files[i];
    PointCloud c = load_cloud(p);
    if (file_sha256(p) != hashes[i]) throw IoError(p.string() + ": content hash does not match the model index");
    return c;
  }
};

ModelSet load_model_set(const Manifest& m, const std::string& name) {
  const fs::path index = m.path_of(name);
  ModelSet s;
  s.dir = index.parent_path();
  try {
    const json j = json::parse(read_file(index));
    for (const auto& e : j.at("instances")) {
      s.files.push_back(e.at("file").get<std::string>());
      s.activations.push_back(vec_from_json(e.at("activations"), "model index"));
      s.hashes.push_back(e.at("sha256").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ParseError(index.string() + ": bad model index: " + e.what());
  }
  return s;
}

RigidParams initial_pose(PoseStart start, const CategoryShapeSpace& space, const PointCloud& obs) {
  RigidParams p;
  switch (start) {
    case PoseStart::Identity:
      break;
    case PoseStart::PrincipalAxes:
      p = coarse_align(PointCloud(space.mean_shape), obs);
      break;
    case PoseStart::Centroid:
      p.translation = centroid(obs) - centroid(PointCloud(space.mean_shape));
      break;
  }
  return p;
}

double resolved_beta(const ProjectConfig& cfg, const PointCloud& canonical) {
  if (cfg.shape.cpd.beta) return *cfg.shape.cpd.beta;
  if (cfg.beta_fraction) return *cfg.beta_fraction * diameter(canonical);
  return cfg.shape.cpd.resolve_beta(canonical);
}

// Loaded downstream artifacts, with lineage checked against the manifest.
struct Stack {
  CategoryShapeSpace space;
  SynergySpace synergies;
  GraspLearner learner;
  HandModel hand;
  IkOptions ik;
};

Stack load_stack(const ProjectConfig& cfg, const Manifest& m) {
  const auto& learner_entry = m.require("learner");
  const auto& space_entry = m.require("shape-space");
  const auto& syn_entry = m.require("synergy-space");
  auto check = [&](const std::string& upstream, const std::string& current) {
    const auto it = learner_entry.upstream.find(upstream);
    if (it == learner_entry.upstream.end() || it->second != current)
      throw InvalidArgument("lineage: learner was trained on a different " + upstream + " than the one in " +
                            m.root().string() + "; rerun train-learner");
  };
  check("shape-space", space_entry.sha256);
  check("synergy-space", syn_entry.sha256);
  const fs::path hand_path = require_input(cfg.hand, "hand");
  const auto hand_it = syn_entry.upstream.find("input:hand");
  if (hand_it == syn_entry.upstream.end() || hand_it->second != file_sha256(hand_path))
    throw InvalidArgument("lineage: synergy space was built for a different hand file than '" + hand_path.string() +
                          "'; rerun build-synergies");
  Stack s{load_shape_space(m.path_of("shape-space")), load_synergy_space(m.path_of("synergy-space")),
          load_learner(m.path_of("learner")), load_hand(hand_path), cfg.ik};
  if (syn_entry.params.contains("open_synergy"))
    s.ik.open_synergy = vec_from_json(syn_entry.params.at("open_synergy"), "manifest open_synergy");
  return s;
}

GraspInferenceOptions grasp_options(const ProjectConfig& cfg, const Stack& s, const PointCloud& obs) {
  GraspInferenceOptions o;
  o.inference = cfg.inference;
  o.initial_pose = initial_pose(cfg.pose_start, s.space, obs);
  o.ik = s.ik;
  return o;
}

json diagnostics_json(const GraspDiagnostics& d, bool with_timing) {
  json j = {{"shape_iterations", d.shape_iterations},
            {"shape_cost", d.shape_cost},
            {"synergy_variance", to_json_vec(d.synergy_variance)},
            {"raw_penetration", d.raw_penetration},
            {"final_penetration", d.final_penetration},
            {"raw_limit_violations", d.raw_limit_violations.size()},
            {"final_limit_violations", d.final_limit_violations.size()},
            {"corrected", d.corrected},
            {"correction_converged", d.correction_converged},
            {"correction_distance", d.correction_distance},
            {"correction_diagnostic", d.correction_diagnostic}};
  if (with_timing)
    j["timing_ms"] = {{"shape", d.shape_ms}, {"predict", d.predict_ms}, {"correction", d.correction_ms}, {"total", d.total_ms}};
  return j;
}

void replace_dir(const fs::path& staged, const fs::path& target) {
  std::error_code ec;
  fs::remove_all(target, ec);
  fs::rename(staged, target);
}

}  // namespace

Eigen::VectorXd GraspRule::joints(const Eigen::VectorXd& activations) const {
  if (activation >= activations.size())
    throw InvalidArgument("grasp rule: activation index " + std::to_string(activation) + " out of range for " +
                          std::to_string(activations.size()) + " activations");
  const double t = std::clamp((activations[activation] - lo) / (hi - lo), 0.0, 1.0);
  return (1 - t) * small + t * large;
}

// ---------------------------------------------------------------------------
// Configuration

json default_config_json() {
  return json::parse(R"({
    "category": "",
    "seed": null,
    "threads": 1,
    "paths": {"canonical": null, "generation": null, "hand": null, "grasps": null,
              "demonstrations": null, "artifacts": "artifacts"},
    "models": {"training_count": 16, "test_count": 7},
    "cpd": {"beta": null, "beta_fraction": null, "lambda": 2.0, "outlier_weight": 0.1,
            "max_iterations": 150, "tolerance": 1e-5},
    "shape_space": {"latent_dim": null, "variance_target": 0.95},
    "inference": {"max_iterations": 400, "sigma2_decay": 0.95, "sigma2_floor": 1e-6, "tolerance": 1e-9,
                  "max_latent_sigma": 50.0, "pose_start": "centroid"},
    "synergy": {"count": 2},
    "ik": {"max_iterations": 200, "tolerance": 1e-7, "margin": 1e-3, "penetration_tolerance": 1e-4,
           "trust_radius": 0.1, "deep_penetration": 5e-3},
    "learner": {"hyper": "auto", "restarts": 5, "max_iterations": 200},
    "grasp_rule": null,
    "eval": {"translation": 0.01, "rotation": 0.3}
  })");
}

void apply_overrides(json& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    json* node = &config;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw InvalidArgument("override '" + o + "' has an empty key segment");
      if (!node->is_object()) *node = json::object();
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
}

ProjectConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json user;
  try {
    user = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!user.is_object()) throw ParseError(path.string() + ": config must be a JSON object");
  apply_overrides(user, overrides);
  check_keys(user, default_config_json(), "");
  json merged = default_config_json();
  merge_over(merged, user, "");
  return config_from_json(merged, fs::absolute(path).parent_path());
}

ProjectConfig config_from_json(const json& j, const fs::path& base_dir) {
  ProjectConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  c.category = get_as<std::string>(j.at("category"), "category");
  if (j.at("seed").is_null()) throw InvalidArgument("config: 'seed' is mandatory");
  c.seed = get_as<std::uint64_t>(j.at("seed"), "seed");
  c.threads = get_as<int>(j.at("threads"), "threads");
  if (c.threads < 1) throw InvalidArgument("config: 'threads' must be at least 1");

  const json& p = j.at("paths");
  auto path_of = [&](const char* key) -> fs::path {
    const json& v = p.at(key);
    if (v.is_null()) return {};
    const fs::path raw = get_as<std::string>(v, std::string("paths.") + key);
    const fs::path resolved = raw.is_absolute() ? raw : base_dir / raw;
    if (!fs::exists(resolved))
      throw IoError(std::string("config: paths.") + key + " '" + resolved.string() + "' does not exist");
    return resolved;
  };
  c.canonical = path_of("canonical");
  c.generation = path_of("generation");
  c.hand = path_of("hand");
  c.grasps = path_of("grasps");
  c.demonstrations = path_of("demonstrations");
  if (const char* env = std::getenv("SYNERGRASP_ARTIFACTS"); env && *env) {
    c.artifacts = fs::path(env);
  } else {
    const fs::path raw = get_as<std::string>(p.at("artifacts"), "paths.artifacts");
    c.artifacts = raw.is_absolute() ? raw : base_dir / raw;
  }

  c.training_count = get_as<int>(j.at("models").at("training_count"), "models.training_count");
  c.test_count = get_as<int>(j.at("models").at("test_count"), "models.test_count");
  if (c.training_count < 0 || c.test_count < 0) throw InvalidArgument("config: model counts must be non-negative");

  const json& cpd = j.at("cpd");
  if (!cpd.at("beta").is_null()) c.shape.cpd.beta = get_as<double>(cpd.at("beta"), "cpd.beta");
  if (!cpd.at("beta_fraction").is_null()) {
    c.beta_fraction = get_as<double>(cpd.at("beta_fraction"), "cpd.beta_fraction");
    if (!(*c.beta_fraction > 0)) throw InvalidArgument("config: cpd.beta_fraction must be positive");
  }
  c.shape.cpd.lambda = get_as<double>(cpd.at("lambda"), "cpd.lambda");
  c.shape.cpd.outlier_weight = get_as<double>(cpd.at("outlier_weight"), "cpd.outlier_weight");
  c.shape.cpd.max_iterations = get_as<int>(cpd.at("max_iterations"), "cpd.max_iterations");
  c.shape.cpd.tolerance = get_as<double>(cpd.at("tolerance"), "cpd.tolerance");
  c.shape.cpd.validate();

  const json& ss = j.at("shape_space");
  if (!ss.at("latent_dim").is_null()) c.shape.latent_dim = get_as<int>(ss.at("latent_dim"), "shape_space.latent_dim");
  c.shape.variance_target = get_as<double>(ss.at("variance_target"), "shape_space.variance_target");
  c.shape.seed = c.seed;
  c.shape.threads = c.threads;

  const json& inf = j.at("inference");
  c.inference.max_iterations = get_as<int>(inf.at("max_iterations"), "inference.max_iterations");
  c.inference.sigma2_decay = get_as<double>(inf.at("sigma2_decay"), "inference.sigma2_decay");
  c.inference.sigma2_floor = get_as<double>(inf.at("sigma2_floor"), "inference.sigma2_floor");
  c.inference.tolerance = get_as<double>(inf.at("tolerance"), "inference.tolerance");
  c.inference.max_latent_sigma = get_as<double>(inf.at("max_latent_sigma"), "inference.max_latent_sigma");
  c.inference.validate();
  const auto start = get_as<std::string>(inf.at("pose_start"), "inference.pose_start");
  if (start == "centroid") c.pose_start = PoseStart::Centroid;
  else if (start == "principal-axes") c.pose_start = PoseStart::PrincipalAxes;
  else if (start == "identity") c.pose_start = PoseStart::Identity;
  else throw InvalidArgument("config: inference.pose_start must be centroid, principal-axes or identity");

  c.synergy_count = get_as<int>(j.at("synergy").at("count"), "synergy.count");
  if (c.synergy_count < 1) throw InvalidArgument("config: synergy.count must be at least 1");

  const json& ik = j.at("ik");
  c.ik.max_iterations = get_as<int>(ik.at("max_iterations"), "ik.max_iterations");
  c.ik.tolerance = get_as<double>(ik.at("tolerance"), "ik.tolerance");
  c.ik.margin = get_as<double>(ik.at("margin"), "ik.margin");
  c.ik.penetration_tolerance = get_as<double>(ik.at("penetration_tolerance"), "ik.penetration_tolerance");
  c.ik.trust_radius = get_as<double>(ik.at("trust_radius"), "ik.trust_radius");
  c.ik.deep_penetration = get_as<double>(ik.at("deep_penetration"), "ik.deep_penetration");
  c.ik.validate();

  const json& le = j.at("learner");
  const json& hyper = le.at("hyper");
  if (hyper.is_string()) {
    if (hyper.get<std::string>() != "auto") throw InvalidArgument("config: learner.hyper must be \"auto\" or an object");
  } else if (hyper.is_object()) {
    try {
      c.learner.hyper = hyper_from_json(hyper);
    } catch (const json::exception& e) {
      throw InvalidArgument(std::string("config: learner.hyper: ") + e.what());
    }
  } else {
    throw InvalidArgument("config: learner.hyper must be \"auto\" or an object");
  }
  c.learner.search.restarts = get_as<int>(le.at("restarts"), "learner.restarts");
  c.learner.search.max_iterations = get_as<int>(le.at("max_iterations"), "learner.max_iterations");
  c.learner.search.seed = c.seed;

  if (!j.at("grasp_rule").is_null()) c.rule = rule_from_json(j.at("grasp_rule"));
  c.eval_translation = get_as<double>(j.at("eval").at("translation"), "eval.translation");
  c.eval_rotation = get_as<double>(j.at("eval").at("rotation"), "eval.rotation");
  if (c.eval_translation < 0 || c.eval_rotation < 0) throw InvalidArgument("config: eval perturbations must be non-negative");
  return c;
}

// ---------------------------------------------------------------------------
// Manifest

std::string file_sha256(const fs::path& path) { return sha256_hex(read_file(path)); }

Manifest::Manifest(fs::path root) : root_(std::move(root)) {}

Manifest Manifest::load(const fs::path& root) {
  Manifest m(root);
  const fs::path file = root / kManifestFile;
  if (!fs::exists(file)) return m;
  try {
    const json j = json::parse(read_file(file));
    if (j.at("format").get<std::string>() != kManifestFormat) throw ParseError(file.string() + ": not a manifest");
    for (auto it = j.at("artifacts").begin(); it != j.at("artifacts").end(); ++it) {
      Entry e;
      e.kind = it->at("kind").get<std::string>();
      e.version = it->at("version").get<int>();
      e.path = it->at("path").get<std::string>();
      e.sha256 = it->at("sha256").get<std::string>();
      e.params = it->value("params", json::object());
      e.upstream = it->value("upstream", std::map<std::string, std::string>{});
      m.entries_[it.key()] = std::move(e);
    }
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  return m;
}

void Manifest::save() const {
  json arts = json::object();
  for (const auto& [name, e] : entries_)
    arts[name] = {{"kind", e.kind}, {"version", e.version}, {"path", e.path}, {"sha256", e.sha256},
                  {"params", e.params}, {"upstream", e.upstream}};
  write_json(root_ / kManifestFile, {{"format", kManifestFormat}, {"version", 1}, {"artifacts", arts}});
}

const Manifest::Entry& Manifest::require(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end())
    throw InvalidArgument("artifact '" + name + "' is missing from " + (root_ / kManifestFile).string() +
                          "; run the command that produces it first");
  const fs::path p = root_ / it->second.path;
  if (!fs::exists(p)) throw IoError("artifact '" + name + "' file " + p.string() + " is missing");
  if (file_sha256(p) != it->second.sha256)
    throw InvalidArgument("artifact '" + name + "' file " + p.string() + " does not match its manifest hash");
  return it->second;
}

void Manifest::record(const std::string& name, Entry entry) {
  entry.sha256 = file_sha256(root_ / entry.path);
  entries_[name] = std::move(entry);
}

// ---------------------------------------------------------------------------
// Commands

std::vector<fs::path> cmd_fixtures(const fs::path& out_dir, const Logger& log) {
  std::vector<fs::path> written;
  auto put = [&](const fs::path& rel, const std::string& bytes) {
    write_file_atomic(out_dir / rel, bytes);
    written.push_back(out_dir / rel);
  };
  const HandModel hand = fixture_hand();
  put("hand.json", fixture_hand_json().dump(2) + "\n");
  const auto grasps = fixture_grasp_records(hand);
  save_grasp_records(grasps, out_dir / "grasps.jsonl");
  written.push_back(out_dir / "grasps.jsonl");

  // Planted rule: small objects get the most closed power grasp, large ones the
  // least closed one.
  std::size_t tight = grasps.size(), loose = grasps.size();
  for (std::size_t i = 0; i < grasps.size(); ++i) {
    if (grasps[i].group != GraspGroup::Power) continue;
    const double n = grasps[i].joints.lpNorm<1>();
    if (tight == grasps.size() || n > grasps[tight].joints.lpNorm<1>()) tight = i;
    if (loose == grasps.size() || n < grasps[loose].joints.lpNorm<1>()) loose = i;
  }
  auto rule = [&](double lo, double hi) {
    GraspRule r;
    r.lo = lo;
    r.hi = hi;
    r.small = grasps[tight].joints;
    r.large = grasps[loose].joints;
    return rule_to_json(r);
  };

  struct Category {
    const char* name;
    PointCloud canonical;
    json spec;
    int training, test;
    json extra;
  };
  const Category cats[] = {
      {"sphere", fixture_sphere_cloud(), fixture_sphere_spec_json(), 9, 4, json::object()},
      {"glass", fixture_glass_cloud(), fixture_glass_spec_json(), 16, 7, {{"cpd", {{"beta_fraction", 0.04}, {"lambda", 20.0}}}}},
  };
  for (const auto& c : cats) {
    const fs::path dir = c.name;
    save_cloud(c.canonical, out_dir / dir / "canonical.ply");
    written.push_back(out_dir / dir / "canonical.ply");
    put(dir / "spec.json", c.spec.dump(2) + "\n");
    json cfg = {{"category", c.name},
                {"seed", 1},
                {"paths",
                 {{"canonical", "canonical.ply"},
                  {"generation", "spec.json"},
                  {"hand", "../hand.json"},
                  {"grasps", "../grasps.jsonl"},
                  {"artifacts", "../artifacts/" + std::string(c.name)}}},
                {"models", {{"training_count", c.training}, {"test_count", c.test}}},
                {"grasp_rule", rule(0.7, 1.3)}};
    cfg.merge_patch(c.extra);
    put(dir / "config.json", cfg.dump(2) + "\n");
  }
  if (log) log("fixtures: wrote " + std::to_string(written.size()) + " files under " + out_dir.string());
  return written;
}

json cmd_gen_models(const ProjectConfig& cfg, const Logger& log) {
  const fs::path canonical_path = require_input(cfg.canonical, "canonical");
  const fs::path spec_path = require_input(cfg.generation, "generation");
  const PointCloud canonical = load_cloud(canonical_path);
  GenerationSpec spec;
  try {
    spec = generation_spec_from_json(json::parse(read_file(spec_path)), &canonical);
  } catch (const json::exception& e) {
    throw ParseError(spec_path.string() + ": " + e.what());
  }
  Manifest m = Manifest::load(cfg.artifacts);
  json report = {{"category", cfg.category}, {"seed", cfg.seed}};
  const struct {
    const char* name;
    const char* dir;
    int count;
    std::uint64_t seed;
  } sets[] = {{"training-models", "train", cfg.training_count, cfg.seed},
              {"test-models", "test", cfg.test_count, cfg.seed + 1}};
  for (const auto& s : sets) {
    const GenerationResult r = s.count > 0 ? generate_instances(canonical, spec, s.count, s.seed) : GenerationResult{};
    if (r.exhausted) throw NumericalError("gen-models: " + std::string(s.dir) + " set: " + r.diagnostic);
    const fs::path target = cfg.artifacts / "models" / s.dir;
    const fs::path staged = cfg.artifacts / "models" / (std::string(s.dir) + ".partial");
    std::error_code ec;
    fs::remove_all(staged, ec);
    json instances = json::array();
    for (std::size_t i = 0; i < r.instances.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%03zu.ply", cfg.category.empty() ? "model" : cfg.category.c_str(), i);
      PointCloud inst = r.instances[i];
      inst.label = cfg.category;
      save_cloud(inst, staged / name);
      instances.push_back({{"file", name}, {"activations", to_json_vec(r.activations[i])}, {"sha256", file_sha256(staged / name)}});
    }
    write_json(staged / "index.json", {{"category", cfg.category}, {"seed", s.seed}, {"instances", instances}});
    replace_dir(staged, target);
    Manifest::Entry e;
    e.kind = "model-set";
    e.path = (fs::path("models") / s.dir / "index.json").generic_string();
    e.params = {{"count", s.count}, {"seed", s.seed}, {"attempts", r.attempts}, {"rejected", r.rejected}};
    e.upstream = {{"input:canonical", file_sha256(canonical_path)}, {"input:generation", file_sha256(spec_path)}};
    m.record(s.name, e);
    report[s.dir] = {{"count", r.instances.size()}, {"acceptance_rate", r.acceptance_rate()}, {"diagnostic", r.diagnostic}};
    if (log)
      log("gen-models: " + std::to_string(r.instances.size()) + " " + s.dir + " instances (acceptance " +
          fmt("%.2f", r.acceptance_rate()) + ")");
  }
  m.save();
  write_json(cfg.artifacts / "reports" / "gen-models.json", report);
  return report;
}

json cmd_build_shape_space(const ProjectConfig& cfg, const Logger& log) {
  const fs::path canonical_path = require_input(cfg.canonical, "canonical");
  Manifest m = Manifest::load(cfg.artifacts);
  const ModelSet set = load_model_set(m, "training-models");
  const PointCloud canonical = load_cloud(canonical_path);
  std::vector<PointCloud> training;
  for (std::size_t i = 0; i < set.files.size(); ++i) training.push_back(set.cloud(i));
  ShapeSpaceOptions opt = cfg.shape;
  opt.cpd.beta = resolved_beta(cfg, canonical);
  ShapeSpaceReport rep;
  const auto t0 = std::chrono::steady_clock::now();
  const CategoryShapeSpace space = build_shape_space(canonical, training, opt, cfg.category, &rep);
  save_shape_space(space, cfg.artifacts / "shape_space.sgc");

  json residuals = json::array();
  for (std::size_t i = 0; i < rep.registrations.size(); ++i) {
    const auto& r = rep.registrations[i];
    residuals.push_back({{"file", set.files[i]}, {"residual", r.residual}, {"sigma2", r.sigma2}, {"iterations", r.iterations}});
    if (log) log("build-shape-space: " + set.files[i] + " residual " + fmt("%.3g", r.residual) + " m");
  }
  json variance = json::array();
  for (int k = 1; k <= std::min<int>(static_cast<int>(space.spectrum.size()), 10); ++k)
    variance.push_back(space.explained_variance(k));
  const json report = {{"category", cfg.category},
                       {"latent_dim", space.latent_dim()},
                       {"beta", *opt.cpd.beta},
                       {"explained_variance", variance},
                       {"degenerate", space.degenerate},
                       {"registrations", residuals},
                       {"warnings", rep.warnings}};
  Manifest::Entry e;
  e.kind = "shape-space";
  e.path = "shape_space.sgc";
  e.params = {{"latent_dim", space.latent_dim()}, {"beta", *opt.cpd.beta}, {"lambda", opt.cpd.lambda}};
  e.upstream = {{"training-models", m.require("training-models").sha256}, {"input:canonical", file_sha256(canonical_path)}};
  m.record("shape-space", e);
  m.save();
  write_json(cfg.artifacts / "reports" / "build-shape-space.json", report);
  if (log)
    log("build-shape-space: L = " + std::to_string(space.latent_dim()) + ", explained variance " +
        fmt("%.4f", space.explained_variance(space.latent_dim())) + " in " + fmt("%.1f", elapsed_ms(t0) / 1000) + " s");
  return report;
}

json cmd_infer_shape(const ProjectConfig& cfg, const fs::path& observation, const fs::path& out_dir, const Logger& log) {
  const Manifest m = Manifest::load(cfg.artifacts);
  const CategoryShapeSpace space = load_shape_space(m.path_of("shape-space"));
  const PointCloud obs = load_cloud(observation);
  const auto t0 = std::chrono::steady_clock::now();
  const InferenceResult r = infer_latent(space, obs, initial_pose(cfg.pose_start, space, obs), cfg.inference);
  const double ms = elapsed_ms(t0);
  const double ch = chamfer(r.reconstructed, obs);
  save_cloud(r.reconstructed, out_dir / "reconstruction.ply");
  const json report = {{"category", space.category},
                       {"observation", observation.string()},
                       {"latent", to_json_vec(r.latent.x)},
                       {"pose", pose_json(r.pose)},
                       {"cost", r.cost},
                       {"iterations", r.iterations},
                       {"chamfer", ch},
                       {"time_ms", ms}};
  write_json(out_dir / "latent.json", report);
  if (log)
    log("infer-shape: " + std::to_string(r.iterations) + " iterations, chamfer " + fmt("%.3g", ch) + " m, " +
        fmt("%.2f", ms / 1000) + " s");
  return report;
}

json cmd_build_synergies(const ProjectConfig& cfg, const Logger& log) {
  const fs::path hand_path = require_input(cfg.hand, "hand");
  const fs::path grasps_path = require_input(cfg.grasps, "grasps");
  const HandModel hand = load_hand(hand_path);
  const auto grasps = load_grasp_records(grasps_path);
  if (!grasps.empty() && grasps.front().joints.size() != hand.actuated_count())
    throw ParseError(grasps_path.string() + ": records have " + std::to_string(grasps.front().joints.size()) +
                     " joints but hand '" + hand.id() + "' has " + std::to_string(hand.actuated_count()) +
                     " actuated joints", 1);
  const SynergySpace space = build_synergy_space(grasps, cfg.synergy_count, hand.id());
  save_synergy_space(space, cfg.artifacts / "synergy_space.sgc");
  json variance = json::array();
  for (int k = 1; k <= space.joint_count(); ++k) variance.push_back(explained_variance(space, k));
  Manifest m = Manifest::load(cfg.artifacts);
  Manifest::Entry e;
  e.kind = "synergy-space";
  e.path = "synergy_space.sgc";
  e.params = {{"synergy_count", space.synergy_count()}, {"hand_id", hand.id()}};
  if (const auto open = widest_open_record(grasps)) e.params["open_synergy"] = to_json_vec(to_synergy(space, grasps[*open].joints));
  e.upstream = {{"input:hand", file_sha256(hand_path)}, {"input:grasps", file_sha256(grasps_path)}};
  m.record("synergy-space", e);
  m.save();
  const json report = {{"hand_id", hand.id()},
                       {"grasp_count", grasps.size()},
                       {"synergy_count", space.synergy_count()},
                       {"explained_variance", variance},
                       {"degenerate", space.degenerate}};
  write_json(cfg.artifacts / "reports" / "build-synergies.json", report);
  if (log)
    log("build-synergies: " + std::to_string(grasps.size()) + " grasps, " + std::to_string(space.synergy_count()) +
        " synergies explain " + fmt("%.3f", explained_variance(space, space.synergy_count())));
  return report;
}

json cmd_train_learner(const ProjectConfig& cfg, const Logger& log) {
  Manifest m = Manifest::load(cfg.artifacts);
  const auto& space_entry = m.require("shape-space");
  const auto& syn_entry = m.require("synergy-space");
  const auto& models_entry = m.require("training-models");
  if (space_entry.upstream.count("training-models") == 0 ||
      space_entry.upstream.at("training-models") != models_entry.sha256)
    throw InvalidArgument("lineage: shape space was built from a different training set; rerun build-shape-space");
  if (!cfg.rule && cfg.demonstrations.empty())
    throw InvalidArgument("config: train-learner needs either grasp_rule or paths.demonstrations");
  const CategoryShapeSpace space = load_shape_space(m.path_of("shape-space"));
  const SynergySpace synergies = load_synergy_space(m.path_of("synergy-space"));
  const ModelSet set = load_model_set(m, "training-models");
  if (static_cast<int>(set.files.size()) != space.training_count)
    throw InvalidArgument("lineage: model index lists " + std::to_string(set.files.size()) + " instances, shape space has " +
                          std::to_string(space.training_count));

  // Demonstrated joints per training instance, labelled by instance file.
  std::vector<GraspRecord> demos;
  fs::path demo_path;
  if (!cfg.demonstrations.empty()) {
    demo_path = cfg.demonstrations;
    demos = load_grasp_records(demo_path);
  } else {
    for (std::size_t i = 0; i < set.files.size(); ++i) {
      const Eigen::VectorXd q = cfg.rule->joints(set.activations[i]);
      if (q.size() != synergies.joint_count())
        throw InvalidArgument("config: grasp_rule postures have " + std::to_string(q.size()) + " joints, synergy space has " +
                              std::to_string(synergies.joint_count()));
      demos.push_back({q, set.files[i], GraspGroup::Power});
    }
    demo_path = cfg.artifacts / "demonstrations.jsonl";
    save_grasp_records(demos, demo_path);
  }
  std::map<std::string, std::size_t> instance_of;
  for (std::size_t i = 0; i < set.files.size(); ++i) instance_of[set.files[i]] = i;
  std::vector<LatentDescriptor> latents;
  Eigen::MatrixXd targets(static_cast<Eigen::Index>(demos.size()), synergies.synergy_count());
  for (std::size_t d = 0; d < demos.size(); ++d) {
    const auto it = instance_of.find(demos[d].label);
    if (it == instance_of.end())
      throw ParseError(demo_path.string() + ": demonstration label '" + demos[d].label + "' names no training instance",
                       d + 1);
    if (demos[d].joints.size() != synergies.joint_count())
      throw ParseError(demo_path.string() + ": demonstration has " + std::to_string(demos[d].joints.size()) + " joints", d + 1);
    latents.push_back({space.training_latents.row(static_cast<Eigen::Index>(it->second)).transpose(), space.category});
    targets.row(static_cast<Eigen::Index>(d)) = to_synergy(synergies, demos[d].joints).transpose();
  }
  LearnerOptions opt = cfg.learner;
  if (opt.hyper && opt.hyper->lengthscales.size() == 1 && space.latent_dim() > 1)
    opt.hyper->lengthscales = Eigen::VectorXd::Constant(space.latent_dim(), opt.hyper->lengthscales[0]);
  const GraspLearner learner = train_learner(latents, targets, opt, synergies.hand_id);
  save_learner(learner, cfg.artifacts / "learner.sgc");

  json gps = json::array();
  for (int k = 0; k < learner.synergy_count(); ++k) {
    const auto& gp = learner.gps[static_cast<std::size_t>(k)];
    double sq = 0;
    for (std::size_t i = 0; i < latents.size(); ++i) {
      const double r = predict(learner, latents[i]).mean[k] - targets(static_cast<Eigen::Index>(i), k);
      sq += r * r;
    }
    const double rms = std::sqrt(sq / static_cast<double>(latents.size()));
    gps.push_back({{"hyper", hyper_to_json(gp.hyper)}, {"log_likelihood", gp.log_likelihood}, {"jitter", gp.jitter},
                   {"training_rms", rms}, {"noise_bound", 3 * std::sqrt(gp.hyper.noise_variance)}});
    if (log)
      log("train-learner: synergy " + std::to_string(k) + " training rms " + fmt("%.3g", rms) + ", noise sd " +
          fmt("%.3g", std::sqrt(gp.hyper.noise_variance)));
  }
  Manifest::Entry e;
  e.kind = "grasp-learner";
  e.path = "learner.sgc";
  e.params = {{"training_count", learner.training_count()}, {"hyper", cfg.raw.at("learner").at("hyper")}};
  e.upstream = {{"shape-space", space_entry.sha256},
                {"synergy-space", syn_entry.sha256},
                {"training-models", models_entry.sha256},
                {"demonstrations", file_sha256(demo_path)}};
  m.record("learner", e);
  m.save();
  const json report = {{"training_count", learner.training_count()}, {"gps", gps}};
  write_json(cfg.artifacts / "reports" / "train-learner.json", report);
  return report;
}

json cmd_infer_grasp(const ProjectConfig& cfg, const fs::path& observation, const fs::path& out_dir, const Logger& log) {
  const Manifest m = Manifest::load(cfg.artifacts);
  const Stack s = load_stack(cfg, m);
  const PointCloud obs = load_cloud(observation);
  const GraspInference g = infer_grasp(s.space, s.learner, s.synergies, s.hand, obs, grasp_options(cfg, s, obs));
  json joints = json::object();
  for (std::size_t i = 0; i < s.hand.actuated_names().size(); ++i)
    joints[s.hand.actuated_names()[i]] = g.joints[static_cast<Eigen::Index>(i)];
  const json report = {{"observation", observation.string()},
                       {"hand_id", s.hand.id()},
                       {"joints", joints},
                       {"synergy", to_json_vec(g.synergy)},
                       {"raw_synergy", to_json_vec(g.raw_synergy)},
                       {"latent", to_json_vec(g.latent.x)},
                       {"pose", pose_json(g.pose)},
                       {"diagnostics", diagnostics_json(g.diagnostics, true)}};
  save_cloud(g.reconstruction, out_dir / "reconstruction.ply");
  write_json(out_dir / "grasp.json", report);
  if (log)
    log("infer-grasp: penetration " + fmt("%.3g", g.diagnostics.final_penetration) + " m" +
        (g.diagnostics.corrected ? " after correction" : "") + ", " + fmt("%.2f", g.diagnostics.total_ms / 1000) + " s");
  return report;
}

json cmd_eval(const ProjectConfig& cfg, const Logger& log) {
  const Manifest m = Manifest::load(cfg.artifacts);
  const ModelSet set = load_model_set(m, "test-models");
  json rows = json::array(), timings = json::array();
  int collisions = 0, corrected = 0, violations = 0;
  double chamfer_sum = 0, chamfer_max = 0, residual_sum = 0, residual_max = 0, time_max = 0;
  int residual_count = 0;
  if (!set.files.empty()) {
    const Stack s = load_stack(cfg, m);
    const double span = diameter(s.space.canonical);
    for (std::size_t i = 0; i < set.files.size(); ++i) {
      const PointCloud truth = set.cloud(i);
      std::mt19937_64 rng(cfg.seed * 1000003ULL + i);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      RigidParams perturb;
      perturb.rotation = Vec3(0, 0, cfg.eval_rotation * u(rng));
      perturb.translation = Vec3(u(rng), u(rng), u(rng)) * cfg.eval_translation;
      const PointCloud obs = perturb.apply(truth);
      const GraspInference g = infer_grasp(s.space, s.learner, s.synergies, s.hand, obs, grasp_options(cfg, s, obs));
      const double ch = chamfer(g.reconstruction, obs);
      const bool collides = g.diagnostics.final_penetration > cfg.ik.penetration_tolerance;
      collisions += collides;
      corrected += g.diagnostics.corrected;
      violations += !g.diagnostics.final_limit_violations.empty();
      chamfer_sum += ch;
      chamfer_max = std::max(chamfer_max, ch);
      json row = {{"file", set.files[i]},
                  {"chamfer", ch},
                  {"chamfer_relative", ch / span},
                  {"latent", to_json_vec(g.latent.x)},
                  {"synergy", to_json_vec(g.synergy)},
                  {"raw_synergy", to_json_vec(g.raw_synergy)},
                  {"collision", collides},
                  {"diagnostics", diagnostics_json(g.diagnostics, false)}};
      if (cfg.rule) {
        const Eigen::VectorXd expected = to_synergy(s.synergies, cfg.rule->joints(set.activations[i]));
        const double residual = (g.raw_synergy - expected).norm();
        row["expected_synergy"] = to_json_vec(expected);
        row["synergy_residual"] = residual;
        residual_sum += residual;
        residual_max = std::max(residual_max, residual);
        ++residual_count;
      }
      rows.push_back(row);
      timings.push_back({{"file", set.files[i]},
                         {"shape_ms", g.diagnostics.shape_ms},
                         {"predict_ms", g.diagnostics.predict_ms},
                         {"correction_ms", g.diagnostics.correction_ms},
                         {"total_ms", g.diagnostics.total_ms}});
      time_max = std::max(time_max, g.diagnostics.total_ms);
      if (log)
        log("eval: " + set.files[i] + " chamfer " + fmt("%.3g", ch) + " m, penetration " +
            fmt("%.3g", g.diagnostics.final_penetration) + " m, " + fmt("%.2f", g.diagnostics.total_ms / 1000) + " s");
    }
  }
  const double n = static_cast<double>(set.files.size());
  json summary = {{"count", set.files.size()},
                  {"collisions", collisions},
                  {"corrected", corrected},
                  {"limit_violations", violations},
                  {"chamfer_mean", set.files.empty() ? 0.0 : chamfer_sum / n},
                  {"chamfer_max", chamfer_max}};
  if (residual_count) {
    summary["synergy_residual_mean"] = residual_sum / residual_count;
    summary["synergy_residual_max"] = residual_max;
  }
  const json report = {{"category", cfg.category}, {"seed", cfg.seed}, {"summary", summary}, {"objects", rows}};
  write_json(cfg.artifacts / "eval" / "report.json", report);
  write_json(cfg.artifacts / "eval" / "timings.json", {{"objects", timings}, {"max_total_ms", time_max}});
  if (log)
    log("eval: " + std::to_string(set.files.size()) + " objects, " + std::to_string(collisions) + " collisions, " +
        std::to_string(corrected) + " corrected");
  return report;
}

}  // namespace synergrasp
