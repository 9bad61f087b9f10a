#include "synergrasp/cloudio.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <system_error>
#include <unordered_map>
#include <unordered_set>

#include "synergrasp/error.hpp"
#include "synergrasp/fileutil.hpp"

namespace synergrasp {

// ---------------------------------------------------------------------------
// Rotations

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return S;
}

Mat3 exp_so3(const Vec3& w) {
  const double th2 = w.squaredNorm();
  const Mat3 W = skew(w);
  double a, b;
  if (th2 < 1e-12) {
    a = 1.0 - th2 / 6.0;
    b = 0.5 - th2 / 24.0;
  } else {
    const double th = std::sqrt(th2);
    a = std::sin(th) / th;
    b = (1.0 - std::cos(th)) / th2;
  }
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 log_so3(const Mat3& R) {
  const double c = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double th = std::acos(c);
  const Vec3 v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (th < 1e-6) return 0.5 * (1.0 + th * th / 6.0) * v;
  if (std::numbers::pi - th > 1e-6) return th / (2.0 * std::sin(th)) * v;
  // Near π the antisymmetric part vanishes; read the axis from R + I.
  const Mat3 B = 0.5 * (R + Mat3::Identity());
  Eigen::Index k;
  B.diagonal().maxCoeff(&k);
  Vec3 axis = B.col(k) / std::sqrt(std::max(B(k, k), 1e-300));
  axis.normalize();
  if (axis.dot(v) < 0) axis = -axis;
  return th * axis;
}

Mat3 right_jacobian_so3(const Vec3& w) {
  const double th2 = w.squaredNorm();
  const Mat3 W = skew(w);
  double a, b;
  if (th2 < 1e-10) {
    a = 0.5 - th2 / 24.0;
    b = 1.0 / 6.0 - th2 / 120.0;
  } else {
    const double th = std::sqrt(th2);
    a = (1.0 - std::cos(th)) / th2;
    b = (th - std::sin(th)) / (th2 * th);
  }
  return Mat3::Identity() - a * W + b * W * W;
}

Mat3 RigidParams::matrix() const { return exp_so3(rotation); }

Vec3 RigidParams::apply(const Vec3& p) const { return matrix() * p + translation; }

PointCloud RigidParams::apply(const PointCloud& c) const {
  const Mat3 R = matrix();
  Points out = (c.points * R.transpose()).rowwise() + translation.transpose();
  return PointCloud(std::move(out), c.label);
}

RigidParams RigidParams::compose(const RigidParams& other) const {
  const Mat3 R = matrix();
  RigidParams out;
  out.rotation = log_so3(R * other.matrix());
  out.translation = R * other.translation + translation;
  return out;
}

RigidParams RigidParams::inverse() const {
  RigidParams out;
  out.rotation = -rotation;
  out.translation = -(exp_so3(-rotation) * translation);
  return out;
}

// ---------------------------------------------------------------------------
// Basic cloud queries

Vec3 centroid(const PointCloud& c) {
  if (c.empty()) throw InvalidArgument("centroid of an empty cloud");
  return c.points.colwise().mean().transpose();
}

double diameter(const PointCloud& c) {
  if (c.empty()) return 0.0;
  const Vec3 lo = c.points.colwise().minCoeff().transpose();
  const Vec3 hi = c.points.colwise().maxCoeff().transpose();
  return (hi - lo).norm();
}

void validate_cloud(const PointCloud& c, const char* what) {
  if (c.empty()) throw InvalidArgument(std::string(what) + ": cloud is empty");
  if (!c.points.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite coordinate");
}

// ---------------------------------------------------------------------------
// PLY

namespace {

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<std::string> properties;  // scalar property names; "list:<name>" for lists
};

struct PlyHeader {
  std::vector<PlyElement> elements;
  std::size_t lines = 0;
};

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_double(std::string_view tok, std::size_t line) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("invalid number '" + std::string(tok) + "'", line);
  if (!std::isfinite(v)) throw ParseError("non-finite coordinate '" + std::string(tok) + "'", line);
  return v;
}

long long parse_int(std::string_view tok, std::size_t line) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("invalid integer '" + std::string(tok) + "'", line);
  return v;
}

PlyHeader read_header(std::istream& in, const std::string& name) {
  PlyHeader h;
  std::string line;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++h.lines;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || line != "ply") throw ParseError(name + ": missing 'ply' magic", h.lines);
  bool format_seen = false;
  for (;;) {
    if (!next()) throw ParseError(name + ": header not terminated by end_header", h.lines);
    auto tok = split_ws(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii")
        throw ParseError(name + ": only ASCII PLY is supported", h.lines);
      format_seen = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError(name + ": malformed element line", h.lines);
      const long long n = parse_int(tok[2], h.lines);
      if (n < 0) throw ParseError(name + ": negative element count", h.lines);
      h.elements.push_back({std::string(tok[1]), static_cast<std::size_t>(n), {}});
    } else if (tok[0] == "property") {
      if (h.elements.empty()) throw ParseError(name + ": property before element", h.lines);
      if (tok.size() == 5 && tok[1] == "list")
        h.elements.back().properties.push_back("list:" + std::string(tok[4]));
      else if (tok.size() == 3)
        h.elements.back().properties.emplace_back(tok[2]);
      else
        throw ParseError(name + ": malformed property line", h.lines);
    } else {
      throw ParseError(name + ": unknown header keyword '" + std::string(tok[0]) + "'", h.lines);
    }
  }
  if (!format_seen) throw ParseError(name + ": missing format line", h.lines);
  return h;
}

struct PlyData {
  Points vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
};

PlyData read_ply(const std::filesystem::path& path, bool want_faces) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string name = path.string();
  PlyHeader h = read_header(in, name);
  std::size_t lineno = h.lines;

  PlyData out;
  bool have_vertex = false;
  std::string line;
  for (const auto& el : h.elements) {
    int ix = -1, iy = -1, iz = -1;
    if (el.name == "vertex") {
      for (std::size_t k = 0; k < el.properties.size(); ++k) {
        if (el.properties[k].starts_with("list:"))
          throw ParseError(name + ": list property in vertex element");
        if (el.properties[k] == "x") ix = static_cast<int>(k);
        if (el.properties[k] == "y") iy = static_cast<int>(k);
        if (el.properties[k] == "z") iz = static_cast<int>(k);
      }
      if (ix < 0 || iy < 0 || iz < 0) throw ParseError(name + ": vertex element lacks x/y/z");
      have_vertex = true;
      out.vertices.resize(static_cast<Eigen::Index>(el.count), 3);
    }
    for (std::size_t r = 0; r < el.count; ++r) {
      if (!std::getline(in, line)) throw ParseError(name + ": unexpected end of file", lineno + 1);
      ++lineno;
      auto tok = split_ws(line);
      if (el.name == "vertex") {
        if (tok.size() < el.properties.size())
          throw ParseError(name + ": expected " + std::to_string(el.properties.size()) +
                               " values per vertex",
                           lineno);
        const auto i = static_cast<Eigen::Index>(r);
        out.vertices(i, 0) = parse_double(tok[ix], lineno);
        out.vertices(i, 1) = parse_double(tok[iy], lineno);
        out.vertices(i, 2) = parse_double(tok[iz], lineno);
      } else if (el.name == "face" && want_faces) {
        if (tok.empty()) throw ParseError(name + ": empty face line", lineno);
        const long long n = parse_int(tok[0], lineno);
        if (n != 3 || tok.size() < 4) throw ParseError(name + ": only triangle faces are supported", lineno);
        std::array<std::uint32_t, 3> f{};
        for (int k = 0; k < 3; ++k) {
          const long long v = parse_int(tok[1 + k], lineno);
          if (v < 0) throw ParseError(name + ": negative face index", lineno);
          f[k] = static_cast<std::uint32_t>(v);
        }
        out.faces.push_back(f);
      }
    }
  }
  if (!have_vertex) throw ParseError(name + ": no vertex element");
  return out;
}

}  // namespace

PointCloud load_cloud(const std::filesystem::path& path) {
  PlyData d = read_ply(path, false);
  return PointCloud(std::move(d.vertices), path.stem().string());
}

TriMesh load_mesh(const std::filesystem::path& path) {
  PlyData d = read_ply(path, true);
  TriMesh m;
  m.vertices.reserve(static_cast<std::size_t>(d.vertices.rows()));
  for (Eigen::Index i = 0; i < d.vertices.rows(); ++i) m.vertices.emplace_back(d.vertices.row(i).transpose());
  for (const auto& f : d.faces) {
    for (auto v : f)
      if (v >= m.vertices.size()) throw ParseError(path.string() + ": face index out of range");
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw ParseError(path.string() + ": degenerate face");
  }
  m.faces = std::move(d.faces);
  return m;
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\n";
  if (!cloud.label.empty()) os << "comment label " << cloud.label << "\n";
  os << "element vertex " << cloud.size() << "\n"
     << "property double x\nproperty double y\nproperty double z\nend_header\n";
  char buf[160];
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", cloud.points(i, 0), cloud.points(i, 1),
                  cloud.points(i, 2));
    os << buf;
  }
  write_file_atomic(path, os.str());
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << mesh.vertices.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nelement face " << mesh.faces.size()
     << "\nproperty list uchar int vertex_indices\nend_header\n";
  char buf[160];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    os << buf;
  }
  for (const auto& f : mesh.faces) os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  write_file_atomic(path, os.str());
}

// ---------------------------------------------------------------------------
// Filters

namespace {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

CellKey cell_of(const Vec3& p, double leaf) {
  return {static_cast<std::int64_t>(std::floor(p.x() / leaf)),
          static_cast<std::int64_t>(std::floor(p.y() / leaf)),
          static_cast<std::int64_t>(std::floor(p.z() / leaf))};
}

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double leaf) {
  if (!(leaf > 0)) throw InvalidArgument("voxel_downsample: leaf must be positive");
  std::unordered_map<CellKey, std::size_t, CellHash> index;
  std::vector<Vec3> sums;
  std::vector<int> counts;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const Vec3 p = cloud.point(i);
    auto [it, inserted] = index.try_emplace(cell_of(p, leaf), sums.size());
    if (inserted) {
      sums.push_back(Vec3::Zero());
      counts.push_back(0);
    }
    sums[it->second] += p;
    ++counts[it->second];
  }
  Points out(static_cast<Eigen::Index>(sums.size()), 3);
  for (std::size_t k = 0; k < sums.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = (sums[k] / counts[k]).transpose();
  return PointCloud(std::move(out), cloud.label);
}

namespace {

Eigen::Vector4d refit_plane(const PointCloud& cloud, const std::vector<Eigen::Index>& idx) {
  Vec3 mu = Vec3::Zero();
  for (auto i : idx) mu += cloud.point(i);
  mu /= static_cast<double>(idx.size());
  Mat3 cov = Mat3::Zero();
  for (auto i : idx) {
    const Vec3 d = cloud.point(i) - mu;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const Vec3 n = es.eigenvectors().col(0);
  return {n.x(), n.y(), n.z(), -n.dot(mu)};
}

std::vector<Eigen::Index> plane_inliers(const PointCloud& cloud, const Eigen::Vector4d& pl,
                                        double thresh) {
  std::vector<Eigen::Index> in;
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    if (std::abs(pl.head<3>().dot(cloud.point(i)) + pl[3]) <= thresh) in.push_back(i);
  return in;
}

}  // namespace

PlaneFit fit_dominant_plane(const PointCloud& cloud, double dist_thresh, int iterations,
                            std::uint64_t seed) {
  if (cloud.size() < 3) throw InvalidArgument("remove_dominant_plane: fewer than 3 points");
  if (!(dist_thresh > 0)) throw InvalidArgument("remove_dominant_plane: threshold must be positive");
  if (iterations < 1) throw InvalidArgument("remove_dominant_plane: iterations must be positive");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, cloud.size() - 1);
  PlaneFit best;
  std::size_t best_count = 0;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::Index a = pick(rng), b = pick(rng), c = pick(rng);
    const Vec3 pa = cloud.point(a);
    Vec3 n = (cloud.point(b) - pa).cross(cloud.point(c) - pa);
    const double nn = n.norm();
    if (nn < 1e-12) continue;
    n /= nn;
    const Eigen::Vector4d pl(n.x(), n.y(), n.z(), -n.dot(pa));
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < cloud.size(); ++i)
      if (std::abs(n.dot(cloud.point(i)) + pl[3]) <= dist_thresh) ++count;
    if (count > best_count) {
      best_count = count;
      best.plane = pl;
    }
  }
  if (best_count == 0) return best;  // all samples degenerate (collinear cloud)
  best.inliers = plane_inliers(cloud, best.plane, dist_thresh);
  if (best.inliers.size() >= 3) {
    const Eigen::Vector4d refit = refit_plane(cloud, best.inliers);
    auto refit_in = plane_inliers(cloud, refit, dist_thresh);
    if (refit_in.size() >= best.inliers.size()) {
      best.plane = refit;
      best.inliers = std::move(refit_in);
    }
  }
  return best;
}

PointCloud remove_dominant_plane(const PointCloud& cloud, double dist_thresh, int iterations,
                                 std::uint64_t seed) {
  const PlaneFit fit = fit_dominant_plane(cloud, dist_thresh, iterations, seed);
  std::vector<char> drop(static_cast<std::size_t>(cloud.size()), 0);
  for (auto i : fit.inliers) drop[static_cast<std::size_t>(i)] = 1;
  Points out(cloud.size() - static_cast<Eigen::Index>(fit.inliers.size()), 3);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    if (!drop[static_cast<std::size_t>(i)]) out.row(k++) = cloud.points.row(i);
  return PointCloud(std::move(out), cloud.label);
}

// ---------------------------------------------------------------------------
// Mesh sampling

TriMesh icosphere(int subdivisions, double radius, const Vec3& center) {
  if (subdivisions < 0) throw InvalidArgument("icosphere: negative subdivisions");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<std::uint32_t, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::unordered_map<std::uint64_t, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const std::uint64_t key = (static_cast<std::uint64_t>(std::min(a, b)) << 32) | std::max(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const auto id = static_cast<std::uint32_t>(v.size() - 1);
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<std::uint32_t, 3>> nf;
    nf.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const auto a = midpoint(tri[0], tri[1]);
      const auto b = midpoint(tri[1], tri[2]);
      const auto c = midpoint(tri[2], tri[0]);
      nf.push_back({tri[0], a, c});
      nf.push_back({tri[1], b, a});
      nf.push_back({tri[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  TriMesh m;
  m.vertices.reserve(v.size());
  for (const auto& p : v) m.vertices.push_back(center + radius * p);
  m.faces = std::move(f);
  return m;
}

namespace {

struct Triangle {
  Vec3 a, e1, e2;
};

// Möller–Trumbore, two-sided. Returns ray parameter or +inf.
double intersect(const Vec3& o, const Vec3& d, const Triangle& tri) {
  constexpr double kEps = 1e-14;
  const Vec3 p = d.cross(tri.e2);
  const double det = tri.e1.dot(p);
  if (std::abs(det) < kEps) return std::numeric_limits<double>::infinity();
  const double inv = 1.0 / det;
  const Vec3 s = o - tri.a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::numeric_limits<double>::infinity();
  const Vec3 q = s.cross(tri.e1);
  const double v = d.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::numeric_limits<double>::infinity();
  const double t = tri.e2.dot(q) * inv;
  return t > 1e-12 ? t : std::numeric_limits<double>::infinity();
}

}  // namespace

PointCloud mesh_to_cloud(const TriMesh& mesh, int subdivisions, int rays_per_view) {
  if (mesh.vertices.empty() || mesh.faces.empty()) throw InvalidArgument("mesh_to_cloud: empty mesh");
  if (subdivisions < 0) throw InvalidArgument("mesh_to_cloud: negative subdivisions");
  if (rays_per_view < 1) throw InvalidArgument("mesh_to_cloud: rays_per_view must be positive");

  Vec3 lo = mesh.vertices.front(), hi = mesh.vertices.front();
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 center = 0.5 * (lo + hi);
  double radius = 0;
  for (const auto& v : mesh.vertices) radius = std::max(radius, (v - center).norm());
  if (radius <= 0) throw InvalidArgument("mesh_to_cloud: mesh has zero extent");

  std::vector<Triangle> tris;
  tris.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    for (auto k : f)
      if (k >= mesh.vertices.size()) throw InvalidArgument("mesh_to_cloud: face index out of range");
    const Vec3& a = mesh.vertices[f[0]];
    tris.push_back({a, mesh.vertices[f[1]] - a, mesh.vertices[f[2]] - a});
  }

  const TriMesh views = icosphere(subdivisions, 2.0 * radius, center);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  constexpr double kMerge = 1e-6;

  std::vector<Vec3> hits;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> grid;
  auto add_hit = [&](const Vec3& p) {
    const CellKey c = cell_of(p, kMerge);
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == grid.end()) continue;
          for (auto k : it->second)
            if ((hits[k] - p).norm() <= kMerge) return;
        }
    grid[c].push_back(hits.size());
    hits.push_back(p);
  };

  for (const auto& eye : views.vertices) {
    const Vec3 fwd = (center - eye).normalized();
    const Vec3 helper = std::abs(fwd.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 u = fwd.cross(helper).normalized();
    const Vec3 w = fwd.cross(u);
    for (int k = 0; k < rays_per_view; ++k) {
      const double r = radius * std::sqrt((k + 0.5) / rays_per_view);
      const double phi = golden * k;
      const Vec3 target = center + r * (std::cos(phi) * u + std::sin(phi) * w);
      const Vec3 dir = (target - eye).normalized();
      double best = std::numeric_limits<double>::infinity();
      for (const auto& tri : tris) best = std::min(best, intersect(eye, dir, tri));
      if (std::isfinite(best)) add_hit(eye + best * dir);
    }
  }
  Points out(static_cast<Eigen::Index>(hits.size()), 3);
  for (std::size_t i = 0; i < hits.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = hits[i].transpose();
  return PointCloud(std::move(out));
}

// ---------------------------------------------------------------------------
// Coarse alignment

namespace {

struct Frame {
  Vec3 mean;
  Mat3 axes;  // columns, descending variance
  bool degenerate = false;
};

Frame principal_frame(const PointCloud& c) {
  Frame f;
  f.mean = centroid(c);
  const Points d = c.points.rowwise() - f.mean.transpose();
  const Mat3 cov = d.transpose() * d / static_cast<double>(c.size());
  if (cov.trace() <= 1e-24) {
    f.axes.setIdentity();
    f.degenerate = true;
    return f;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  Vec3 skewness;
  for (int k = 0; k < 3; ++k) {
    f.axes.col(k) = es.eigenvectors().col(2 - k);
    const Eigen::VectorXd proj = d * f.axes.col(k);
    const double sd = std::sqrt(std::max(es.eigenvalues()[2 - k], 1e-300));
    skewness[k] = proj.array().cube().mean() / (sd * sd * sd);
    if (skewness[k] < 0) {
      f.axes.col(k) = -f.axes.col(k);
      skewness[k] = -skewness[k];
    }
  }
  if (f.axes.determinant() < 0) {
    Eigen::Index weakest;
    skewness.minCoeff(&weakest);
    f.axes.col(weakest) = -f.axes.col(weakest);
  }
  return f;
}

}  // namespace

RigidParams coarse_align(const PointCloud& cloud, const PointCloud& reference) {
  validate_cloud(cloud, "coarse_align");
  validate_cloud(reference, "coarse_align");
  const Frame fc = principal_frame(cloud);
  const Frame fr = principal_frame(reference);
  Mat3 R = Mat3::Identity();
  if (!fc.degenerate && !fr.degenerate) R = fr.axes * fc.axes.transpose();
  RigidParams out;
  out.rotation = log_so3(R);
  // Translation from the exponentiated rotation so apply() maps the centroid exactly.
  out.translation = fr.mean - exp_so3(out.rotation) * fc.mean;
  return out;
}

}  // namespace synergrasp
