#include "synergrasp/modelgen.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "synergrasp/error.hpp"

namespace synergrasp {

namespace {

struct KindInfo {
  OpKind kind;
  const char* name;
};

constexpr KindInfo kKinds[] = {
    {OpKind::GlobalScale, "global-scale"},   {OpKind::XScale, "x-scale"},
    {OpKind::YScale, "y-scale"},             {OpKind::ZScale, "z-scale"},
    {OpKind::XYScale, "xy-scale"},           {OpKind::XZScale, "xz-scale"},
    {OpKind::YZScale, "yz-scale"},           {OpKind::XYProjective, "xy-projective"},
    {OpKind::XZProjective, "xz-projective"}, {OpKind::YZProjective, "yz-projective"},
};

// Axes multiplied by a scale op.
std::array<bool, 3> scaled_axes(OpKind k) {
  switch (k) {
    case OpKind::GlobalScale: return {true, true, true};
    case OpKind::XScale: return {true, false, false};
    case OpKind::YScale: return {false, true, false};
    case OpKind::ZScale: return {false, false, true};
    case OpKind::XYScale: return {true, true, false};
    case OpKind::XZScale: return {true, false, true};
    case OpKind::YZScale: return {false, true, true};
    default: return {false, false, false};
  }
}

// (tapered, driving) axes of a projective op.
std::pair<int, int> projective_axes(OpKind k) {
  switch (k) {
    case OpKind::XYProjective: return {0, 1};
    case OpKind::XZProjective: return {0, 2};
    case OpKind::YZProjective: return {1, 2};
    default: throw InvalidArgument("not a projective op");
  }
}

}  // namespace

std::string to_string(OpKind kind) {
  for (const auto& k : kKinds)
    if (k.kind == kind) return k.name;
  throw InvalidArgument("unknown op kind");
}

OpKind parse_op_kind(const std::string& name) {
  for (const auto& k : kKinds)
    if (name == k.name) return k.kind;
  throw InvalidArgument("unknown shape op '" + name + "'");
}

bool is_projective(OpKind kind) {
  return kind == OpKind::XYProjective || kind == OpKind::XZProjective || kind == OpKind::YZProjective;
}

bool ShapeOp::valid() const {
  if (!std::isfinite(activation)) return false;
  return is_projective(kind) ? std::abs(activation) < 1.0 : activation > 0.0;
}

ShapeFrame ShapeFrame::of(const PointCloud& cloud) {
  validate_cloud(cloud, "shape frame");
  ShapeFrame f;
  f.center = centroid(cloud);
  f.half_extent = (cloud.points.rowwise() - f.center.transpose()).cwiseAbs().colwise().maxCoeff().transpose();
  for (int d = 0; d < 3; ++d)
    if (!(f.half_extent[d] > 0)) f.half_extent[d] = 1.0;
  return f;
}

PointCloud apply_shape_op(const PointCloud& cloud, const ShapeOp& op) {
  return apply_shape_op(cloud, op, ShapeFrame::of(cloud));
}

PointCloud apply_shape_op(const PointCloud& cloud, const ShapeOp& op, const ShapeFrame& frame) {
  if (!op.valid()) {
    std::ostringstream os;
    os << "apply_shape_op: activation " << op.activation << " out of bounds for " << to_string(op.kind)
       << (is_projective(op.kind) ? " (|k| < 1 required)" : " (> 0 required)");
    throw InvalidArgument(os.str());
  }
  PointCloud out = cloud;
  if (!is_projective(op.kind)) {
    const auto axes = scaled_axes(op.kind);
    for (int d = 0; d < 3; ++d)
      if (axes[static_cast<std::size_t>(d)])
        out.points.col(d) = (out.points.col(d).array() - frame.center[d]) * op.activation + frame.center[d];
    return out;
  }
  const auto [a, b] = projective_axes(op.kind);
  const double k = op.activation;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double ua = (out.points(i, a) - frame.center[a]) / frame.half_extent[a];
    const double ub = (out.points(i, b) - frame.center[b]) / frame.half_extent[b];
    const double w = 1.0 + k * ub;
    if (!(w > 0))
      throw InvalidArgument("apply_shape_op: projective activation folds point " + std::to_string(i) +
                            " (outside the frame's box)");
    out.points(i, a) = frame.center[a] + frame.half_extent[a] * ua / w;
    out.points(i, b) = frame.center[b] + frame.half_extent[b] * ub / w;
  }
  return out;
}

void ShapeConstraints::validate() const {
  for (int d = 0; d < 3; ++d) {
    if (!std::isfinite(min_size[d]) || !std::isfinite(max_size[d]))
      throw InvalidArgument("shape constraints: size bounds must be finite");
    if (!(min_size[d] < max_size[d])) throw InvalidArgument("shape constraints: min size must be below max size");
  }
  for (double r : max_aspect)
    if (!(r >= 1.0) || !std::isfinite(r)) throw InvalidArgument("shape constraints: aspect ratio bounds must be >= 1");
}

std::optional<std::string> check_constraints(const PointCloud& cloud, const ShapeConstraints& c) {
  const Vec3 size = (cloud.points.colwise().maxCoeff() - cloud.points.colwise().minCoeff()).transpose();
  static const char* axis = "xyz";
  std::ostringstream os;
  for (int d = 0; d < 3; ++d) {
    if (size[d] < c.min_size[d] || size[d] > c.max_size[d]) {
      os << axis[d] << "-size " << size[d] << " outside [" << c.min_size[d] << ", " << c.max_size[d] << "]";
      return os.str();
    }
  }
  static const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (int p = 0; p < 3; ++p) {
    const double s0 = size[pairs[p][0]], s1 = size[pairs[p][1]];
    const double ratio = std::max(s0, s1) / std::max(std::min(s0, s1), 1e-300);
    if (ratio > c.max_aspect[static_cast<std::size_t>(p)]) {
      os << axis[pairs[p][0]] << axis[pairs[p][1]] << "-aspect " << ratio << " above "
         << c.max_aspect[static_cast<std::size_t>(p)];
      return os.str();
    }
  }
  return std::nullopt;
}

int GenerationSpec::activation_count() const {
  std::size_t n = ops.size();
  for (const auto& p : parts) n += p.ops.size();
  return static_cast<int>(n);
}

void GenerationSpec::validate(Eigen::Index model_size) const {
  const int n = activation_count();
  if (n == 0) throw InvalidArgument("generation spec: no operations enabled");
  if (mean.size() != n || covariance.rows() != n || covariance.cols() != n)
    throw InvalidArgument("generation spec: mean/covariance size does not match the " + std::to_string(n) +
                          " enabled operations");
  if (!mean.allFinite() || !covariance.allFinite()) throw InvalidArgument("generation spec: non-finite distribution");
  const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw InvalidArgument("generation spec: covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance);
  if (es.eigenvalues().minCoeff() < -1e-12 * scale)
    throw InvalidArgument("generation spec: covariance is not positive semi-definite");
  constraints.validate();
  if (max_rejections && *max_rejections < 0) throw InvalidArgument("generation spec: negative rejection budget");
  for (const auto& p : parts) {
    if (p.indices.empty()) throw InvalidArgument("generation spec: part '" + p.name + "' selects no points");
    if (model_size > 0)
      for (auto i : p.indices)
        if (i < 0 || i >= model_size)
          throw InvalidArgument("generation spec: part '" + p.name + "' index " + std::to_string(i) +
                                " outside the model");
  }
}

PointCloud apply_activations(const PointCloud& canonical, const GenerationSpec& spec, const Eigen::VectorXd& a) {
  if (a.size() != spec.activation_count()) throw InvalidArgument("apply_activations: activation count mismatch");
  PointCloud out = canonical;
  int k = 0;
  for (OpKind kind : spec.ops) out = apply_shape_op(out, {kind, a[k++]});
  for (const auto& part : spec.parts) {
    Points sub(static_cast<Eigen::Index>(part.indices.size()), 3);
    for (std::size_t i = 0; i < part.indices.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = out.points.row(part.indices[i]);
    PointCloud piece(std::move(sub));
    for (OpKind kind : part.ops) piece = apply_shape_op(piece, {kind, a[k++]});
    for (std::size_t i = 0; i < part.indices.size(); ++i)
      out.points.row(part.indices[i]) = piece.points.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

GenerationResult generate_instances(const PointCloud& canonical, const GenerationSpec& spec, int count,
                                    std::uint64_t seed, const InstanceFilter& filter) {
  validate_cloud(canonical, "generate_instances (canonical)");
  if (count < 1) throw InvalidArgument("generate_instances: count must be at least 1");
  spec.validate(canonical.size());
  const int n = spec.activation_count();
  const int budget = spec.max_rejections ? *spec.max_rejections : 50 * count;

  // Square root of the covariance via its eigendecomposition (handles singular covariances).
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec.covariance);
  const Eigen::MatrixXd root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  GenerationResult res;
  std::map<std::string, int> reasons;
  while (static_cast<int>(res.instances.size()) < count && res.rejected <= budget) {
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = normal(rng);
    const Eigen::VectorXd a = spec.mean + root * z;
    ++res.attempts;

    std::string reason;
    std::optional<PointCloud> inst;
    try {
      inst = apply_activations(canonical, spec, a);
    } catch (const InvalidArgument&) {
      reason = "activation out of bounds";
    }
    if (inst) {
      if (auto v = check_constraints(*inst, spec.constraints)) {
        // Group by the violated quantity, not its value.
        reason = v->substr(0, v->find(' '));
      } else if (filter && !filter(*inst)) {
        reason = "filter";
      }
    }
    if (!reason.empty()) {
      ++res.rejected;
      ++reasons[reason];
      continue;
    }
    inst->label = spec.category;
    res.instances.push_back(std::move(*inst));
    res.activations.push_back(a);
  }
  res.exhausted = static_cast<int>(res.instances.size()) < count;

  std::ostringstream os;
  os << res.instances.size() << "/" << count << " accepted after " << res.attempts << " draws (acceptance rate "
     << res.acceptance_rate() * 100.0 << "%)";
  if (!reasons.empty()) {
    const auto top = std::max_element(reasons.begin(), reasons.end(),
                                      [](const auto& x, const auto& y) { return x.second < y.second; });
    os << "; most frequent rejection: " << top->first << " (" << top->second << ")";
  }
  if (res.exhausted) os << "; rejection budget " << budget << " exhausted";
  res.diagnostic = os.str();
  return res;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Eigen::MatrixXd mat_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols)
      throw InvalidArgument("generation spec: ragged covariance matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

std::vector<OpKind> ops_from_json(const nlohmann::json& j) {
  std::vector<OpKind> ops;
  for (const auto& e : j) ops.push_back(parse_op_kind(e.get<std::string>()));
  return ops;
}

nlohmann::json ops_to_json(const std::vector<OpKind>& ops) {
  nlohmann::json j = nlohmann::json::array();
  for (OpKind k : ops) j.push_back(to_string(k));
  return j;
}

Vec3 vec3_from_json(const nlohmann::json& j) {
  if (j.size() != 3) throw InvalidArgument("generation spec: expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

GenerationSpec generation_spec_from_json(const nlohmann::json& j, const PointCloud* canonical) {
  GenerationSpec s;
  try {
    s.category = j.value("category", std::string{});
    s.ops = ops_from_json(j.value("ops", nlohmann::json::array()));
    s.mean = vec_from_json(j.at("mean"));
    s.covariance = mat_from_json(j.at("covariance"));
    if (j.contains("constraints")) {
      const auto& c = j.at("constraints");
      if (c.contains("min_size")) s.constraints.min_size = vec3_from_json(c.at("min_size"));
      if (c.contains("max_size")) s.constraints.max_size = vec3_from_json(c.at("max_size"));
      if (c.contains("max_aspect")) {
        const auto& a = c.at("max_aspect");
        const char* keys[3] = {"xy", "xz", "yz"};
        for (std::size_t p = 0; p < 3; ++p)
          if (a.contains(keys[p])) s.constraints.max_aspect[p] = a.at(keys[p]).get<double>();
      }
    }
    if (j.contains("max_rejections")) s.max_rejections = j.at("max_rejections").get<int>();
    for (const auto& pj : j.value("parts", nlohmann::json::array())) {
      PartSpec p;
      p.name = pj.value("name", std::string{});
      p.ops = ops_from_json(pj.at("ops"));
      if (pj.contains("indices")) {
        p.indices = pj.at("indices").get<std::vector<Eigen::Index>>();
      } else if (pj.contains("box")) {
        // Canonical points inside an axis-aligned box select the part.
        if (!canonical) throw InvalidArgument("generation spec: part box selection needs the canonical model");
        const Vec3 lo = vec3_from_json(pj.at("box").at("min")), hi = vec3_from_json(pj.at("box").at("max"));
        for (Eigen::Index i = 0; i < canonical->size(); ++i) {
          const Vec3 q = canonical->point(i);
          if ((q.array() >= lo.array()).all() && (q.array() <= hi.array()).all()) p.indices.push_back(i);
        }
      } else {
        throw InvalidArgument("generation spec: part '" + p.name + "' needs 'indices' or 'box'");
      }
      s.parts.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("generation spec: ") + e.what());
  }
  s.validate(canonical ? canonical->size() : 0);
  return s;
}

nlohmann::json generation_spec_to_json(const GenerationSpec& s) {
  nlohmann::json j;
  j["category"] = s.category;
  j["ops"] = ops_to_json(s.ops);
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index r = 0; r < s.covariance.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < s.covariance.cols(); ++c) row.push_back(s.covariance(r, c));
    cov.push_back(row);
  }
  j["covariance"] = cov;
  auto v3 = [](const Vec3& v) { return nlohmann::json::array({v[0], v[1], v[2]}); };
  nlohmann::json c;
  c["min_size"] = v3(s.constraints.min_size);
  c["max_size"] = v3(s.constraints.max_size);
  c["max_aspect"] = {{"xy", s.constraints.max_aspect[0]},
                     {"xz", s.constraints.max_aspect[1]},
                     {"yz", s.constraints.max_aspect[2]}};
  j["constraints"] = c;
  if (s.max_rejections) j["max_rejections"] = *s.max_rejections;
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : s.parts) parts.push_back({{"name", p.name}, {"indices", p.indices}, {"ops", ops_to_json(p.ops)}});
  j["parts"] = parts;
  return j;
}

}  // namespace synergrasp
