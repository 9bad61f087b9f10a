#include "synergrasp/handkin.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <tuple>
#include <unordered_map>

#include "synergrasp/error.hpp"
#include "synergrasp/fileutil.hpp"

namespace synergrasp {

namespace {

constexpr const char* kHandFormat = "synergrasp-hand";
constexpr int kHandVersion = 1;

CapsuleContact segment_contact(const Capsule& c1, const Capsule& c2) {
  const Vec3 d1 = c1.b - c1.a, d2 = c2.b - c2.a, r = c1.a - c2.a;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  constexpr double eps = 1e-300;
  double s = 0, t = 0;
  if (a <= eps && e <= eps) {
  } else if (a <= eps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= eps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > 1e-14 * a * e ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0) {
        t = 0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1) {
        t = 1;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  CapsuleContact out;
  out.point_a = c1.a + s * d1;
  out.point_b = c2.a + t * d2;
  out.distance = (out.point_a - out.point_b).norm() - (c1.radius + c2.radius);
  return out;
}

auto capsule_key(const Capsule& c) {
  return std::make_tuple(c.a.x(), c.a.y(), c.a.z(), c.b.x(), c.b.y(), c.b.z(), c.radius);
}

Vec3 vec3_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw InvalidArgument("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

nlohmann::json vec3_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Transform origin_from(const Vec3& xyz, const Vec3& rpy) {
  Transform T = Transform::Identity();
  T.linear() = (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
                Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
                   .toRotationMatrix();
  T.translation() = xyz;
  return T;
}

Vec3 rpy_of(const Mat3& R) {
  // Inverse of Rz(y) Ry(p) Rx(r).
  const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  const double roll = std::atan2(R(2, 1), R(2, 2));
  const double yaw = std::atan2(R(1, 0), R(0, 0));
  return {roll, pitch, yaw};
}

std::string actuation_name(Actuation a) {
  switch (a) {
    case Actuation::Actuated: return "actuated";
    case Actuation::Mimic: return "mimic";
    case Actuation::Fixed: return "fixed";
  }
  return "?";
}

}  // namespace

CapsuleContact capsule_contact(const Capsule& a, const Capsule& b) {
  if (capsule_key(b) < capsule_key(a)) {
    CapsuleContact c = segment_contact(b, a);
    std::swap(c.point_a, c.point_b);
    return c;
  }
  return segment_contact(a, b);
}

double capsule_distance(const Capsule& a, const Capsule& b) { return capsule_contact(a, b).distance; }

std::vector<PairPenetration> CollisionReport::penetrating(double threshold) const {
  std::vector<PairPenetration> out;
  for (const auto& p : pairs)
    if (p.depth > threshold) out.push_back(p);
  return out;
}

double CollisionReport::max_depth() const {
  double d = -std::numeric_limits<double>::infinity();
  for (const auto& p : pairs) d = std::max(d, p.depth);
  return d;
}

nlohmann::json CollisionReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : pairs)
    j.push_back({{"links", {p.link_a, p.link_b}},
                 {"depth", p.depth},
                 {"witness_a", vec3_json(p.witness_a)},
                 {"witness_b", vec3_json(p.witness_b)}});
  return {{"pairs", j}};
}

HandModel::HandModel(std::string id, std::string root, std::vector<HandLink> links, std::vector<HandJoint> joints,
                     std::vector<std::pair<std::string, std::string>> collision_pairs)
    : id_(std::move(id)), root_(std::move(root)), links_(std::move(links)), joints_(std::move(joints)),
      pairs_(std::move(collision_pairs)) {
  std::unordered_map<std::string, int> link_idx, joint_idx;
  for (std::size_t i = 0; i < links_.size(); ++i) {
    const auto& l = links_[i];
    if (l.name.empty()) throw InvalidArgument("hand: link with empty name");
    if (!link_idx.emplace(l.name, static_cast<int>(i)).second) throw InvalidArgument("hand: duplicate link '" + l.name + "'");
    for (const auto& c : l.capsules) {
      if (!(c.radius > 0) || !std::isfinite(c.radius))
        throw InvalidArgument("hand: link '" + l.name + "' has a capsule with non-positive radius");
      if (!c.a.allFinite() || !c.b.allFinite()) throw InvalidArgument("hand: link '" + l.name + "' has a non-finite capsule");
    }
  }
  if (!link_idx.count(root_)) throw InvalidArgument("hand: root link '" + root_ + "' not found");

  parent_joint_.assign(links_.size(), -1);
  std::vector<std::vector<int>> children(links_.size());
  for (std::size_t k = 0; k < joints_.size(); ++k) {
    auto& jt = joints_[k];
    const std::string where = "hand: joint '" + jt.name + "': ";
    if (jt.name.empty()) throw InvalidArgument("hand: joint with empty name");
    if (!joint_idx.emplace(jt.name, static_cast<int>(k)).second) throw InvalidArgument("hand: duplicate joint '" + jt.name + "'");
    const auto p = link_idx.find(jt.parent), c = link_idx.find(jt.child);
    if (p == link_idx.end()) throw InvalidArgument(where + "unknown parent link '" + jt.parent + "'");
    if (c == link_idx.end()) throw InvalidArgument(where + "unknown child link '" + jt.child + "'");
    if (c->second == link_idx.at(root_)) throw InvalidArgument(where + "the root link cannot be a child");
    if (parent_joint_[static_cast<std::size_t>(c->second)] >= 0)
      throw InvalidArgument(where + "link '" + jt.child + "' already has a parent joint");
    parent_joint_[static_cast<std::size_t>(c->second)] = static_cast<int>(k);
    children[static_cast<std::size_t>(p->second)].push_back(static_cast<int>(k));
    if (!std::isfinite(jt.lower) || !std::isfinite(jt.upper) || jt.lower > jt.upper)
      throw InvalidArgument(where + "limits must be finite with lower <= upper");
    if (jt.actuation != Actuation::Fixed) {
      const double n = jt.axis.norm();
      if (!(n > 1e-12) || !std::isfinite(n)) throw InvalidArgument(where + "axis must be non-zero");
      jt.axis /= n;
    }
    if (!jt.origin.matrix().allFinite()) throw InvalidArgument(where + "non-finite origin");
    if (jt.actuation == Actuation::Mimic && (!std::isfinite(jt.multiplier) || !std::isfinite(jt.offset)))
      throw InvalidArgument(where + "non-finite mimic coefficients");
  }

  // Tree check: every link reachable from the root exactly once.
  std::vector<bool> seen(links_.size(), false);
  std::queue<int> todo;
  todo.push(link_idx.at(root_));
  seen[static_cast<std::size_t>(link_idx.at(root_))] = true;
  while (!todo.empty()) {
    const int l = todo.front();
    todo.pop();
    for (int k : children[static_cast<std::size_t>(l)]) {
      order_.push_back(k);
      const int c = link_idx.at(joints_[static_cast<std::size_t>(k)].child);
      if (seen[static_cast<std::size_t>(c)]) throw InvalidArgument("hand: joint graph contains a cycle");
      seen[static_cast<std::size_t>(c)] = true;
      todo.push(c);
    }
  }
  for (std::size_t i = 0; i < links_.size(); ++i)
    if (!seen[i]) throw InvalidArgument("hand: link '" + links_[i].name + "' is not connected to the root");

  std::unordered_map<std::string, int> actuated_pos;
  for (std::size_t k = 0; k < joints_.size(); ++k)
    if (joints_[k].actuation == Actuation::Actuated) {
      actuated_pos[joints_[k].name] = static_cast<int>(actuated_.size());
      actuated_.push_back(static_cast<int>(k));
    }
  mimic_source_.assign(joints_.size(), -1);
  for (std::size_t k = 0; k < joints_.size(); ++k) {
    const auto& jt = joints_[k];
    if (jt.actuation != Actuation::Mimic) continue;
    const auto s = actuated_pos.find(jt.source);
    if (s == actuated_pos.end()) {
      if (joint_idx.count(jt.source))
        throw InvalidArgument("hand: mimic joint '" + jt.name + "' has non-actuated source '" + jt.source + "'");
      throw InvalidArgument("hand: mimic joint '" + jt.name + "' has unknown source '" + jt.source + "'");
    }
    mimic_source_[k] = s->second;
  }

  std::set<std::pair<int, int>> uniq;
  for (const auto& [a, b] : pairs_) {
    const auto ia = link_idx.find(a), ib = link_idx.find(b);
    if (ia == link_idx.end() || ib == link_idx.end())
      throw InvalidArgument("hand: collision pair (" + a + ", " + b + ") names an unknown link");
    if (ia->second == ib->second) throw InvalidArgument("hand: collision pair (" + a + ", " + b + ") repeats a link");
    const auto key = std::minmax(ia->second, ib->second);
    if (!uniq.insert(key).second) throw InvalidArgument("hand: duplicate collision pair (" + a + ", " + b + ")");
    pair_links_.emplace_back(ia->second, ib->second);
  }
}

int HandModel::mimic_count() const {
  return static_cast<int>(std::count_if(joints_.begin(), joints_.end(),
                                        [](const HandJoint& j) { return j.actuation == Actuation::Mimic; }));
}

std::vector<std::string> HandModel::actuated_names() const {
  std::vector<std::string> out;
  for (int k : actuated_) out.push_back(joints_[static_cast<std::size_t>(k)].name);
  return out;
}

Eigen::VectorXd HandModel::actuated_lower() const {
  Eigen::VectorXd v(actuated_count());
  for (std::size_t i = 0; i < actuated_.size(); ++i) v[static_cast<Eigen::Index>(i)] = joints_[static_cast<std::size_t>(actuated_[i])].lower;
  return v;
}

Eigen::VectorXd HandModel::actuated_upper() const {
  Eigen::VectorXd v(actuated_count());
  for (std::size_t i = 0; i < actuated_.size(); ++i) v[static_cast<Eigen::Index>(i)] = joints_[static_cast<std::size_t>(actuated_[i])].upper;
  return v;
}

int HandModel::link_index(const std::string& name) const {
  for (std::size_t i = 0; i < links_.size(); ++i)
    if (links_[i].name == name) return static_cast<int>(i);
  throw InvalidArgument("hand: unknown link '" + name + "'");
}

void HandModel::check_dimension(const Eigen::VectorXd& q, const char* what) const {
  if (q.size() != actuated_count())
    throw InvalidArgument(std::string(what) + ": expected " + std::to_string(actuated_count()) +
                          " actuated joint angles, got " + std::to_string(q.size()));
}

Eigen::VectorXd HandModel::expand(const Eigen::VectorXd& q) const {
  check_dimension(q, "expand");
  Eigen::VectorXd full = Eigen::VectorXd::Zero(joint_count());
  for (std::size_t i = 0; i < actuated_.size(); ++i) full[actuated_[i]] = q[static_cast<Eigen::Index>(i)];
  for (std::size_t k = 0; k < joints_.size(); ++k)
    if (mimic_source_[k] >= 0)
      full[static_cast<Eigen::Index>(k)] = joints_[k].multiplier * q[mimic_source_[k]] + joints_[k].offset;
  return full;
}

std::vector<LimitViolation> HandModel::limit_violations(const Eigen::VectorXd& q) const {
  const Eigen::VectorXd full = expand(q);
  std::vector<LimitViolation> out;
  for (std::size_t k = 0; k < joints_.size(); ++k) {
    const auto& jt = joints_[k];
    if (jt.actuation == Actuation::Fixed) continue;
    const double v = full[static_cast<Eigen::Index>(k)];
    if (v < jt.lower || v > jt.upper) out.push_back({jt.name, v, jt.lower, jt.upper});
  }
  return out;
}

std::vector<Transform> HandModel::link_poses(const Eigen::VectorXd& q) const {
  const Eigen::VectorXd full = expand(q);
  std::vector<Transform> poses(links_.size(), Transform::Identity());
  std::unordered_map<std::string, int> idx;
  for (std::size_t i = 0; i < links_.size(); ++i) idx[links_[i].name] = static_cast<int>(i);
  for (int k : order_) {
    const auto& jt = joints_[static_cast<std::size_t>(k)];
    Transform T = poses[static_cast<std::size_t>(idx.at(jt.parent))] * jt.origin;
    if (jt.actuation != Actuation::Fixed) T.rotate(Eigen::AngleAxisd(full[k], jt.axis));
    poses[static_cast<std::size_t>(idx.at(jt.child))] = T;
  }
  return poses;
}

std::map<std::string, Transform> forward_kinematics(const HandModel& hand, const Eigen::VectorXd& q,
                                                    std::vector<LimitViolation>* violations) {
  const auto poses = hand.link_poses(q);
  if (violations) *violations = hand.limit_violations(q);
  std::map<std::string, Transform> out;
  for (std::size_t i = 0; i < poses.size(); ++i) out.emplace(hand.links()[i].name, poses[i]);
  return out;
}

CollisionReport self_collision_depths(const HandModel& hand, const Eigen::VectorXd& q) {
  const auto poses = hand.link_poses(q);
  CollisionReport report;
  for (std::size_t p = 0; p < hand.pair_links_.size(); ++p) {
    const auto [ia, ib] = hand.pair_links_[p];
    const auto& la = hand.links_[static_cast<std::size_t>(ia)];
    const auto& lb = hand.links_[static_cast<std::size_t>(ib)];
    PairPenetration entry{la.name, lb.name, -std::numeric_limits<double>::infinity(), Vec3::Zero(), Vec3::Zero()};
    for (const auto& ca : la.capsules) {
      const Capsule wa = ca.transformed(poses[static_cast<std::size_t>(ia)]);
      for (const auto& cb : lb.capsules) {
        const auto c = capsule_contact(wa, cb.transformed(poses[static_cast<std::size_t>(ib)]));
        if (-c.distance > entry.depth) {
          entry.depth = -c.distance;
          entry.witness_a = c.point_a;
          entry.witness_b = c.point_b;
        }
      }
    }
    report.pairs.push_back(entry);
  }
  return report;
}

HandModel HandModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kHandFormat) throw ParseError("hand: unexpected format tag");
    const int version = j.at("version").get<int>();
    if (version != kHandVersion) throw ParseError("hand: unsupported version " + std::to_string(version));
    std::vector<HandLink> links;
    for (const auto& jl : j.at("links")) {
      HandLink l;
      l.name = jl.at("name").get<std::string>();
      for (const auto& jc : jl.value("capsules", nlohmann::json::array()))
        l.capsules.push_back({vec3_from(jc.at("a")), vec3_from(jc.at("b")), jc.at("radius").get<double>()});
      links.push_back(std::move(l));
    }
    std::vector<HandJoint> joints;
    for (const auto& jj : j.at("joints")) {
      HandJoint jt;
      jt.name = jj.at("name").get<std::string>();
      jt.parent = jj.at("parent").get<std::string>();
      jt.child = jj.at("child").get<std::string>();
      const auto& o = jj.value("origin", nlohmann::json::object());
      jt.origin = origin_from(o.contains("xyz") ? vec3_from(o["xyz"]) : Vec3::Zero(),
                              o.contains("rpy") ? vec3_from(o["rpy"]) : Vec3::Zero());
      const std::string type = jj.at("type").get<std::string>();
      if (type == "actuated") jt.actuation = Actuation::Actuated;
      else if (type == "mimic") jt.actuation = Actuation::Mimic;
      else if (type == "fixed") jt.actuation = Actuation::Fixed;
      else throw ParseError("hand: joint '" + jt.name + "' has unknown type '" + type + "'");
      if (jt.actuation != Actuation::Fixed) {
        jt.axis = vec3_from(jj.at("axis"));
        const auto lim = jj.at("limits").get<std::vector<double>>();
        if (lim.size() != 2) throw ParseError("hand: joint '" + jt.name + "' limits must be [lower, upper]");
        jt.lower = lim[0];
        jt.upper = lim[1];
      }
      if (jt.actuation == Actuation::Mimic) {
        jt.source = jj.at("source").get<std::string>();
        jt.multiplier = jj.value("multiplier", 1.0);
        jt.offset = jj.value("offset", 0.0);
      }
      joints.push_back(std::move(jt));
    }
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& jp : j.value("collision_pairs", nlohmann::json::array())) {
      const auto v = jp.get<std::vector<std::string>>();
      if (v.size() != 2) throw ParseError("hand: collision pair must name two links");
      pairs.emplace_back(v[0], v[1]);
    }
    return HandModel(j.at("id").get<std::string>(), j.at("root").get<std::string>(), std::move(links),
                     std::move(joints), std::move(pairs));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("hand: malformed description: ") + e.what());
  }
}

nlohmann::json HandModel::to_json() const {
  nlohmann::json links = nlohmann::json::array(), joints = nlohmann::json::array(), pairs = nlohmann::json::array();
  for (const auto& l : links_) {
    nlohmann::json caps = nlohmann::json::array();
    for (const auto& c : l.capsules) caps.push_back({{"a", vec3_json(c.a)}, {"b", vec3_json(c.b)}, {"radius", c.radius}});
    links.push_back({{"name", l.name}, {"capsules", caps}});
  }
  for (const auto& jt : joints_) {
    nlohmann::json o = {{"name", jt.name},
                        {"parent", jt.parent},
                        {"child", jt.child},
                        {"type", actuation_name(jt.actuation)},
                        {"origin", {{"xyz", vec3_json(jt.origin.translation())}, {"rpy", vec3_json(rpy_of(jt.origin.linear()))}}}};
    if (jt.actuation != Actuation::Fixed) {
      o["axis"] = vec3_json(jt.axis);
      o["limits"] = {jt.lower, jt.upper};
    }
    if (jt.actuation == Actuation::Mimic) {
      o["source"] = jt.source;
      o["multiplier"] = jt.multiplier;
      o["offset"] = jt.offset;
    }
    joints.push_back(o);
  }
  for (const auto& [a, b] : pairs_) pairs.push_back({a, b});
  return {{"format", kHandFormat}, {"version", kHandVersion}, {"id", id_},          {"root", root_},
          {"links", links},        {"joints", joints},          {"collision_pairs", pairs}};
}

HandModel load_hand(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  try {
    return HandModel::from_json(j);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_hand(const HandModel& hand, const std::filesystem::path& path) {
  write_file_atomic(path, hand.to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Fixture

namespace {

struct FingerGeometry {
  std::string name;
  double x;          // base position across the palm
  double z;          // base height
  double proximal;   // link lengths
  double middle;
  double distal;
};

nlohmann::json capsule_along_z(double length, double radius) {
  return {{"a", {0.0, 0.0, 0.0}}, {"b", {0.0, 0.0, length}}, {"radius", radius}};
}

}  // namespace

nlohmann::json fixture_hand_json() {
  using nlohmann::json;
  constexpr double r = 0.0085;
  const Vec3 flex(-1, 0, 0);  // positive flexion curls toward +y (palm side)
  json links = json::array(), joints = json::array(), pairs = json::array();
  auto link = [&](const std::string& name, json caps = json::array()) { links.push_back({{"name", name}, {"capsules", caps}}); };
  auto joint = [&](const std::string& name, const std::string& parent, const std::string& child, const Vec3& axis,
                   const Vec3& xyz, const Vec3& rpy, double lo, double hi) {
    joints.push_back({{"name", name}, {"parent", parent}, {"child", child}, {"type", "actuated"},
                      {"axis", vec3_json(axis)}, {"origin", {{"xyz", vec3_json(xyz)}, {"rpy", vec3_json(rpy)}}},
                      {"limits", {lo, hi}}});
  };
  auto mimic = [&](const std::string& source, double multiplier) {
    joints.back()["type"] = "mimic";
    joints.back()["source"] = source;
    joints.back()["multiplier"] = multiplier;
    joints.back()["offset"] = 0.0;
  };

  // Palm: three horizontal capsules spanning the knuckle row, fingers along +z.
  json palm = json::array();
  for (double z : {0.018, 0.048, 0.078})
    palm.push_back({{"a", {-0.032, 0.0, z}}, {"b", {0.030, 0.0, z}}, {"radius", 0.014}});
  link("palm", palm);

  // Thumb: opposition swings it about the palm's long axis, flexion curls it.
  link("thumb_base");
  link("thumb_proximal", json::array({capsule_along_z(0.040, r)}));
  link("thumb_middle", json::array({capsule_along_z(0.028, r)}));
  link("thumb_distal", json::array({capsule_along_z(0.022, r)}));
  joint("thumb_opposition", "palm", "thumb_base", Vec3::UnitZ(), {0.036, 0.016, 0.030}, Vec3::Zero(), 0.0, 1.0);
  joint("thumb_flexion", "thumb_base", "thumb_proximal", Vec3(-1, 0, 0), {0.010, 0.0, 0.0}, {0.0, 0.6, 0.0}, 0.0, 1.0);
  joint("thumb_middle", "thumb_proximal", "thumb_middle", Vec3(-1, 0, 0), {0.0, 0.0, 0.040}, Vec3::Zero(), 0.0, 1.0);
  mimic("thumb_flexion", 1.0);
  joint("thumb_distal", "thumb_middle", "thumb_distal", Vec3(-1, 0, 0), {0.0, 0.0, 0.028}, Vec3::Zero(), 0.0, 0.8);
  mimic("thumb_flexion", 0.8);

  const std::vector<FingerGeometry> fingers = {{"index", 0.023, 0.095, 0.045, 0.026, 0.021},
                                               {"middle", 0.002, 0.098, 0.048, 0.028, 0.022},
                                               {"ring", -0.019, 0.095, 0.044, 0.026, 0.021},
                                               {"pinky", -0.038, 0.090, 0.036, 0.022, 0.018}};
  for (const auto& f : fingers) {
    std::string parent = "palm";
    Vec3 base(f.x, 0.0, f.z);
    if (f.name == "pinky") {
      link("pinky_cup");
      joint("pinky_cup", "palm", "pinky_cup", Vec3::UnitZ(), {f.x, 0.0, 0.0}, Vec3::Zero(), 0.0, 0.15);
      mimic("finger_spread", 0.3);
      parent = "pinky_cup";
      base = Vec3(0.0, 0.0, f.z);
    }
    if (f.name != "middle") {
      link(f.name + "_base");
      const std::string spread = f.name == "index" ? "finger_spread" : f.name + "_spread";
      const double mult = f.name == "ring" ? -0.5 : -1.0;
      const double lo = f.name == "index" ? 0.0 : (f.name == "ring" ? -0.25 : -0.5);
      const double hi = f.name == "index" ? 0.5 : 0.0;
      joint(spread, parent, f.name + "_base", Vec3::UnitY(), base, Vec3::Zero(), lo, hi);
      if (f.name != "index") mimic("finger_spread", mult);
      parent = f.name + "_base";
      base = Vec3::Zero();
    }
    link(f.name + "_proximal", json::array({capsule_along_z(f.proximal, r)}));
    link(f.name + "_middle", json::array({capsule_along_z(f.middle, r)}));
    link(f.name + "_distal", json::array({capsule_along_z(f.distal, r)}));
    joint(f.name + "_proximal", parent, f.name + "_proximal", flex, base, Vec3::Zero(), 0.0, 1.5);
    joint(f.name + "_middle", f.name + "_proximal", f.name + "_middle", flex, {0.0, 0.0, f.proximal}, Vec3::Zero(), 0.0, 1.5);
    joint(f.name + "_distal_joint", f.name + "_middle", f.name + "_distal", flex, {0.0, 0.0, f.middle}, Vec3::Zero(), 0.0, 1.2);
    if (f.name == "index" || f.name == "middle") {
      // Separate distal actuator drives the middle joint; the distal joint follows.
      joints[joints.size() - 1]["type"] = "mimic";
      joints[joints.size() - 1]["source"] = f.name + "_middle";
      joints[joints.size() - 1]["multiplier"] = 0.8;
      joints[joints.size() - 1]["offset"] = 0.0;
    } else {
      joints[joints.size() - 2]["type"] = "mimic";
      joints[joints.size() - 2]["source"] = f.name + "_proximal";
      joints[joints.size() - 2]["multiplier"] = 1.0;
      joints[joints.size() - 2]["offset"] = 0.0;
      joints[joints.size() - 1]["type"] = "mimic";
      joints[joints.size() - 1]["source"] = f.name + "_proximal";
      joints[joints.size() - 1]["multiplier"] = 0.8;
      joints[joints.size() - 1]["offset"] = 0.0;
    }
  }

  // Actuation order is file order; the spread actuator goes last.
  json ordered = json::array();
  json spread;
  for (const auto& jt : joints) {
    if (jt["name"] == "finger_spread") spread = jt;
    else ordered.push_back(jt);
  }
  ordered.push_back(spread);

  // Allowlist: segments of different digits, and the palm against middle and
  // distal segments. Adjacent links are never paired.
  const std::vector<std::string> digits = {"thumb", "index", "middle", "ring", "pinky"};
  const std::vector<std::string> segments = {"proximal", "middle", "distal"};
  for (std::size_t a = 0; a < digits.size(); ++a)
    for (std::size_t b = a + 1; b < digits.size(); ++b)
      for (const auto& sa : segments)
        for (const auto& sb : segments) pairs.push_back({digits[a] + "_" + sa, digits[b] + "_" + sb});
  for (const auto& d : digits)
    for (const std::string s : {"middle", "distal"}) pairs.push_back({"palm", d + "_" + s});

  return {{"format", kHandFormat}, {"version", kHandVersion}, {"id", "schunk-like-fixture"}, {"root", "palm"},
          {"links", links},        {"joints", ordered},         {"collision_pairs", pairs}};
}

HandModel fixture_hand() { return HandModel::from_json(fixture_hand_json()); }

}  // namespace synergrasp
