#include "synergrasp/synergy.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "synergrasp/container.hpp"
#include "synergrasp/error.hpp"
#include "synergrasp/fileutil.hpp"

namespace synergrasp {

namespace {
constexpr const char* kGroupNames[] = {"power", "intermediate", "precision", "open"};
constexpr const char* kSynergyKind = "synergy-space";
}  // namespace

std::string to_string(GraspGroup g) { return kGroupNames[static_cast<int>(g)]; }

GraspGroup parse_grasp_group(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == kGroupNames[i]) return static_cast<GraspGroup>(i);
  throw InvalidArgument("unknown grasp group '" + name + "'");
}

std::vector<GraspRecord> load_grasp_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grasp records " + path.string());
  std::vector<GraspRecord> out;
  std::string line;
  std::size_t lineno = 0;
  const std::string where = path.string() + ": ";
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    GraspRecord r;
    try {
      const auto j = nlohmann::json::parse(line);
      r.label = j.at("label").get<std::string>();
      r.group = parse_grasp_group(j.at("group").get<std::string>());
      const auto q = j.at("joints").get<std::vector<double>>();
      r.joints = Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + "bad grasp record: " + e.what(), lineno);
    } catch (const InvalidArgument& e) {
      throw ParseError(where + e.what(), lineno);
    }
    if (r.joints.size() == 0) throw ParseError(where + "empty joint vector", lineno);
    if (!r.joints.allFinite()) throw ParseError(where + "non-finite joint angle", lineno);
    if (!out.empty() && r.joints.size() != out.front().joints.size())
      throw ParseError(where + "joint vector has " + std::to_string(r.joints.size()) + " entries, expected " +
                           std::to_string(out.front().joints.size()),
                       lineno);
    out.push_back(std::move(r));
  }
  return out;
}

void save_grasp_records(const std::vector<GraspRecord>& records, const std::filesystem::path& path) {
  std::ostringstream os;
  for (const auto& r : records) {
    nlohmann::json j;
    j["label"] = r.label;
    j["group"] = to_string(r.group);
    j["joints"] = std::vector<double>(r.joints.data(), r.joints.data() + r.joints.size());
    os << j.dump() << "\n";
  }
  write_file_atomic(path, os.str());
}

std::optional<std::size_t> widest_open_record(const std::vector<GraspRecord>& records) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].group != GraspGroup::Open) continue;
    if (!best || records[i].joints.lpNorm<1>() < records[*best].joints.lpNorm<1>()) best = i;
  }
  return best;
}

void SynergySpace::validate() const {
  const Eigen::Index q = mean.size(), l = basis.cols();
  if (q < 1 || basis.rows() != q || eigenvalues.size() != q) throw InvalidArgument("synergy space: inconsistent dimensions");
  if (l < 1 || l > q) throw InvalidArgument("synergy space: synergy count out of range");
  if ((basis.transpose() * basis - Eigen::MatrixXd::Identity(l, l)).cwiseAbs().maxCoeff() > 1e-9)
    throw InvalidArgument("synergy space: basis columns are not orthonormal");
  for (Eigen::Index i = 0; i < q; ++i) {
    if (eigenvalues[i] < 0) throw InvalidArgument("synergy space: negative eigenvalue");
    if (i > 0 && eigenvalues[i] > eigenvalues[i - 1]) throw InvalidArgument("synergy space: eigenvalues not descending");
  }
}

SynergySpace build_synergy_space(const std::vector<GraspRecord>& grasps, int l, const std::string& hand_id) {
  if (grasps.size() < 2) throw InvalidArgument("build_synergy_space: at least 2 grasps required");
  const Eigen::Index q = grasps.front().joints.size();
  const auto n = static_cast<Eigen::Index>(grasps.size());
  if (l < 1 || l > q || l > n)
    throw InvalidArgument("build_synergy_space: l=" + std::to_string(l) + " must lie in [1, min(q=" +
                          std::to_string(q) + ", grasps=" + std::to_string(n) + ")]");
  Eigen::MatrixXd A(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& g = grasps[static_cast<std::size_t>(i)];
    if (g.joints.size() != q)
      throw InvalidArgument("build_synergy_space: grasp " + std::to_string(i) + " ('" + g.label + "') has " +
                            std::to_string(g.joints.size()) + " joints, expected " + std::to_string(q));
    if (!g.joints.allFinite()) throw InvalidArgument("build_synergy_space: non-finite joints in grasp " + std::to_string(i));
    A.row(i) = g.joints.transpose();
  }
  SynergySpace s;
  s.hand_id = hand_id;
  s.grasp_count = static_cast<int>(n);
  s.mean = A.colwise().mean().transpose();
  A.rowwise() -= s.mean.transpose();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A.transpose() * A);
  s.eigenvalues.resize(q);
  Eigen::MatrixXd vecs(q, q);
  for (Eigen::Index j = 0; j < q; ++j) {
    s.eigenvalues[j] = std::max(0.0, es.eigenvalues()[q - 1 - j]);
    vecs.col(j) = es.eigenvectors().col(q - 1 - j);
  }
  s.degenerate = !(s.eigenvalues[0] > 1e-300);
  if (s.degenerate) {
    s.eigenvalues.setZero();
    vecs.setIdentity();
  }
  s.basis = vecs.leftCols(l);
  // Deterministic sign: largest-magnitude entry positive.
  for (Eigen::Index j = 0; j < l; ++j) {
    Eigen::Index i;
    s.basis.col(j).cwiseAbs().maxCoeff(&i);
    if (s.basis(i, j) < 0) s.basis.col(j) *= -1.0;
  }
  s.validate();
  return s;
}

Eigen::VectorXd to_synergy(const SynergySpace& space, const Eigen::VectorXd& q) {
  if (q.size() != space.joint_count())
    throw InvalidArgument("to_synergy: joint vector has " + std::to_string(q.size()) + " entries, expected " +
                          std::to_string(space.joint_count()));
  return space.basis.transpose() * (q - space.mean);
}

Eigen::VectorXd to_joints(const SynergySpace& space, const Eigen::VectorXd& s) {
  if (s.size() != space.synergy_count())
    throw InvalidArgument("to_joints: synergy vector has " + std::to_string(s.size()) + " entries, expected " +
                          std::to_string(space.synergy_count()));
  return space.mean + space.basis * s;
}

double explained_variance(const SynergySpace& space, int k) {
  if (k < 0 || k > space.joint_count()) throw InvalidArgument("explained_variance: k out of range");
  const double total = space.eigenvalues.sum();
  if (space.degenerate || !(total > 0)) return 1.0;
  if (k == space.joint_count()) return 1.0;
  return std::min(1.0, space.eigenvalues.head(k).sum() / total);
}

void save_synergy_space(const SynergySpace& space, const std::filesystem::path& path) {
  space.validate();
  Container c;
  c.kind = kSynergyKind;
  c.meta = {{"hand_id", space.hand_id},
            {"q", space.joint_count()},
            {"l", space.synergy_count()},
            {"grasp_count", space.grasp_count},
            {"degenerate", space.degenerate}};
  c.add("mean", space.mean);
  c.add("basis", space.basis);
  c.add("eigenvalues", space.eigenvalues);
  save_container(c, path);
}

SynergySpace load_synergy_space(const std::filesystem::path& path) {
  const Container c = load_container(path, kSynergyKind);
  SynergySpace s;
  try {
    const auto q = c.meta.at("q").get<Eigen::Index>(), l = c.meta.at("l").get<Eigen::Index>();
    s.hand_id = c.meta.at("hand_id").get<std::string>();
    s.grasp_count = c.meta.at("grasp_count").get<int>();
    s.degenerate = c.meta.at("degenerate").get<bool>();
    s.mean = c.get("mean", q, 1);
    s.basis = c.get("basis", q, l);
    s.eigenvalues = c.get("eigenvalues", q, 1);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad synergy-space header: " + e.what());
  }
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return s;
}

}  // namespace synergrasp
