#include "synergrasp/shapespace.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "synergrasp/container.hpp"
#include "synergrasp/error.hpp"
#include "synergrasp/kdtree.hpp"

namespace synergrasp {

namespace {

using RowPoints = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

Eigen::VectorXd vectorize(const Eigen::MatrixXd& W) {
  Eigen::VectorXd v(W.rows() * 3);
  for (Eigen::Index m = 0; m < W.rows(); ++m)
    for (int d = 0; d < 3; ++d) v[3 * m + d] = W(m, d);
  return v;
}

Points unvectorize(const Eigen::VectorXd& v) {
  return Eigen::Map<const RowPoints>(v.data(), v.size() / 3, 3);
}

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& A) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  return qr.householderQ() * Eigen::MatrixXd::Identity(A.rows(), A.cols());
}

// Deterministic sign: largest-magnitude entry of each column positive.
void fix_signs(Eigen::MatrixXd& B) {
  for (Eigen::Index j = 0; j < B.cols(); ++j) {
    Eigen::Index i;
    B.col(j).cwiseAbs().maxCoeff(&i);
    if (B(i, j) < 0) B.col(j) *= -1.0;
  }
}

}  // namespace

PcaResult pca_em(const Eigen::MatrixXd& Y, int L, int max_iterations, double tolerance, std::uint64_t seed) {
  const Eigen::Index dim = Y.rows(), n = Y.cols();
  if (L < 1 || L > std::min(dim, n))
    throw InvalidArgument("pca_em: L=" + std::to_string(L) + " must lie in [1, min(rows, cols)=" +
                          std::to_string(std::min(dim, n)) + "]");
  if (max_iterations < 1) throw InvalidArgument("pca_em: max_iterations must be positive");
  if (!Y.allFinite()) throw InvalidArgument("pca_em: non-finite entries");
  const double denom = static_cast<double>(std::max<Eigen::Index>(n - 1, 1));

  PcaResult r;
  if (Y.squaredNorm() <= 1e-300) {
    r.basis = Eigen::MatrixXd::Identity(dim, L);
    r.eigenvalues = Eigen::VectorXd::Zero(L);
    r.degenerate = true;
    r.converged = true;
    return r;
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd C(dim, L);
  for (Eigen::Index j = 0; j < L; ++j)
    for (Eigen::Index i = 0; i < dim; ++i) C(i, j) = normal(rng);
  Eigen::MatrixXd Q = orthonormalize(C);

  const double ridge = 1e-14 * Y.squaredNorm();
  for (int it = 0; it < max_iterations; ++it) {
    // E-step: with orthonormal loadings the projection is X = Q^T Y.
    const Eigen::MatrixXd X = Q.transpose() * Y;
    Eigen::MatrixXd XXt = X * X.transpose();
    XXt.diagonal().array() += ridge;
    // M-step: C = Y X^T (X X^T)^-1.
    const Eigen::MatrixXd YXt = Y * X.transpose();
    C = XXt.ldlt().solve(YXt.transpose()).transpose();
    const Eigen::MatrixXd Qn = orthonormalize(C);
    // Half the squared Frobenius distance between the two projectors.
    const double change = std::max(0.0, static_cast<double>(L) - (Q.transpose() * Qn).squaredNorm());
    Q = Qn;
    r.iterations = it + 1;
    if (change < tolerance) {
      r.converged = true;
      break;
    }
  }

  // Rotate inside the subspace onto the principal axes.
  const Eigen::MatrixXd Z = Q.transpose() * Y;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Z * Z.transpose() / denom);
  r.basis.resize(dim, L);
  r.eigenvalues.resize(L);
  for (Eigen::Index j = 0; j < L; ++j) {
    r.basis.col(j) = Q * es.eigenvectors().col(L - 1 - j);
    r.eigenvalues[j] = std::max(0.0, es.eigenvalues()[L - 1 - j]);
  }
  fix_signs(r.basis);
  return r;
}

double CategoryShapeSpace::explained_variance(int k) const {
  if (k < 0 || k > spectrum.size()) throw InvalidArgument("explained_variance: k out of range");
  if (!(total_variance > 0)) return 0.0;
  return std::min(1.0, spectrum.head(k).sum() / total_variance);
}

void CategoryShapeSpace::finalize() {
  mean_shape = canonical.points + kernel.entries * unvectorize(field_mean);
  modes.clear();
  for (Eigen::Index l = 0; l < basis.cols(); ++l) {
    const Eigen::VectorXd v = field_scale.cwiseProduct(basis.col(l));
    modes.push_back(kernel.entries * unvectorize(v));
  }
}

void CategoryShapeSpace::validate() const {
  const Eigen::Index m = canonical.size();
  const Eigen::Index md = 3 * m;
  validate_cloud(canonical, "shape space canonical model");
  if (kernel.size() != m) throw InvalidArgument("shape space: kernel size does not match canonical model");
  if (field_mean.size() != md || field_scale.size() != md || basis.rows() != md)
    throw InvalidArgument("shape space: field statistics do not match 3 x model size");
  if ((field_scale.array() <= 0).any()) throw InvalidArgument("shape space: field scale must be positive");
  const Eigen::Index L = basis.cols();
  if (L < 1 || L > training_count || L > md) throw InvalidArgument("shape space: invalid latent dimension");
  if (eigenvalues.size() != L) throw InvalidArgument("shape space: eigenvalue count does not match basis");
  const double err = (basis.transpose() * basis - Eigen::MatrixXd::Identity(L, L)).cwiseAbs().maxCoeff();
  if (err > 1e-8) throw InvalidArgument("shape space: basis columns are not orthonormal");
}

CategoryShapeSpace build_shape_space(const PointCloud& canonical, const std::vector<PointCloud>& training,
                                     const ShapeSpaceOptions& options, const std::string& category,
                                     ShapeSpaceReport* report) {
  options.cpd.validate();
  validate_cloud(canonical, "build_shape_space (canonical)");
  const auto n = static_cast<Eigen::Index>(training.size());
  if (n < 2) throw InvalidArgument("build_shape_space: at least 2 training clouds required");
  if (!(options.variance_target > 0 && options.variance_target <= 1))
    throw InvalidArgument("build_shape_space: variance target must lie in (0, 1]");
  const Eigen::Index m = canonical.size(), md = 3 * m;
  if (options.latent_dim && (*options.latent_dim < 1 || *options.latent_dim > std::min(n, md)))
    throw InvalidArgument("build_shape_space: explicit latent dimension must lie in [1, min(N, 3M)]");

  CategoryShapeSpace s;
  s.category = category;
  s.canonical = canonical;
  s.cpd = options.cpd;
  s.cpd.beta = options.cpd.resolve_beta(canonical);
  s.kernel = gaussian_kernel(canonical, *s.cpd.beta);
  s.training_count = static_cast<int>(n);

  ShapeSpaceReport rep;
  rep.registrations.resize(static_cast<std::size_t>(n));
  std::vector<DeformationField> fields(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(n));
  std::atomic<Eigen::Index> next{0};
  auto worker = [&] {
    for (Eigen::Index i; (i = next.fetch_add(1)) < n;) {
      const auto k = static_cast<std::size_t>(i);
      try {
        CpdReport cr;
        fields[k] = register_nonrigid(canonical, training[k], s.cpd, &cr, &s.kernel);
        rep.registrations[k].sigma2 = fields[k].sigma2;
        rep.registrations[k].iterations = cr.iterations;
        rep.registrations[k].residual = chamfer(apply_deformation(canonical, s.kernel, fields[k]), training[k]);
      } catch (...) {
        failures[k] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(options.threads, 1, static_cast<int>(n));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!failures[static_cast<std::size_t>(i)]) continue;
    const std::string prefix = "build_shape_space: registration of training sample " + std::to_string(i) + " failed: ";
    try {
      std::rethrow_exception(failures[static_cast<std::size_t>(i)]);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(prefix + e.what());
    } catch (const std::exception& e) {
      throw NumericalError(prefix + e.what());
    }
  }

  Eigen::MatrixXd Y(md, n);
  for (Eigen::Index i = 0; i < n; ++i) Y.col(i) = vectorize(fields[static_cast<std::size_t>(i)].W);
  s.field_mean = Y.rowwise().mean();
  Y.colwise() -= s.field_mean;
  s.field_scale = (Y.rowwise().squaredNorm() / static_cast<double>(n - 1)).cwiseSqrt();
  constexpr double kMinScale = 1e-12;
  for (Eigen::Index j = 0; j < md; ++j) {
    if (!(s.field_scale[j] >= kMinScale)) {
      s.field_scale[j] = kMinScale;
      ++rep.clamped_coordinates;
    }
  }
  if (rep.clamped_coordinates > 0)
    rep.warnings.push_back(std::to_string(rep.clamped_coordinates) +
                           " zero-variance field coordinates; scale clamped at 1e-12");
  Y = s.field_scale.cwiseInverse().asDiagonal() * Y;
  s.total_variance = Y.squaredNorm() / static_cast<double>(n - 1);

  const int l_run = options.latent_dim ? *options.latent_dim
                                       : static_cast<int>(std::max<Eigen::Index>(1, std::min(n - 1, md)));
  rep.pca = pca_em(Y, l_run, options.pca_max_iterations, options.pca_tolerance, options.seed);
  if (!rep.pca.converged) rep.warnings.push_back("PCA-EM did not converge; using the last iterate");
  s.spectrum = rep.pca.eigenvalues;
  s.degenerate = rep.pca.degenerate || !(s.total_variance > 1e-24);
  if (s.degenerate) rep.warnings.push_back("training deformations have (near) zero variance");

  int L = l_run;
  if (!options.latent_dim) {
    L = 1;
    if (!s.degenerate) {
      while (L < l_run && s.explained_variance(L) < options.variance_target) ++L;
    }
  }
  s.basis = rep.pca.basis.leftCols(L);
  s.eigenvalues = rep.pca.eigenvalues.head(L);
  s.training_latents = (s.basis.transpose() * Y).transpose();
  s.finalize();
  s.validate();
  if (report) *report = std::move(rep);
  return s;
}

DeformationField latent_to_field(const CategoryShapeSpace& space, const LatentDescriptor& x) {
  if (x.x.size() != space.latent_dim())
    throw InvalidArgument("latent_to_field: latent has " + std::to_string(x.x.size()) + " entries, space has " +
                          std::to_string(space.latent_dim()));
  if (!x.x.allFinite()) throw InvalidArgument("latent_to_field: non-finite latent");
  DeformationField f;
  f.W = unvectorize(space.field_mean + space.field_scale.cwiseProduct(space.basis * x.x));
  f.beta = space.kernel.beta;
  return f;
}

LatentDescriptor field_to_latent(const CategoryShapeSpace& space, const DeformationField& field) {
  if (field.W.rows() != space.model_size() || field.W.cols() != 3)
    throw InvalidArgument("field_to_latent: field does not match the canonical model");
  LatentDescriptor out;
  out.category = space.category;
  // Least squares in field units: min |w - mean - scale .* (B x)|.
  const Eigen::MatrixXd SB = space.field_scale.asDiagonal() * space.basis;
  out.x = SB.colPivHouseholderQr().solve(vectorize(field.W) - space.field_mean);
  return out;
}

PointCloud reconstruct(const CategoryShapeSpace& space, const Eigen::VectorXd& x) {
  if (x.size() != space.latent_dim()) throw InvalidArgument("reconstruct: latent dimension mismatch");
  Points p = space.mean_shape;
  for (Eigen::Index l = 0; l < x.size(); ++l) p += x[l] * space.modes[static_cast<std::size_t>(l)];
  return PointCloud(std::move(p), space.category);
}

namespace {
constexpr const char* kShapeSpaceKind = "shape-space";
}

void save_shape_space(const CategoryShapeSpace& space, const std::filesystem::path& path) {
  space.validate();
  Container c;
  c.kind = kShapeSpaceKind;
  c.meta = {{"category", space.category},
            {"M", space.model_size()},
            {"D", 3},
            {"L", space.latent_dim()},
            {"N", space.training_count},
            {"beta", space.kernel.beta},
            {"total_variance", space.total_variance},
            {"degenerate", space.degenerate},
            {"cpd",
             {{"beta", space.kernel.beta},
              {"lambda", space.cpd.lambda},
              {"outlier_weight", space.cpd.outlier_weight},
              {"max_iterations", space.cpd.max_iterations},
              {"tolerance", space.cpd.tolerance}}}};
  c.add("canonical", space.canonical.points);
  c.add("G", space.kernel.entries);
  c.add("mean", space.field_mean);
  c.add("scale", space.field_scale);
  c.add("basis", space.basis);
  c.add("eigenvalues", space.eigenvalues);
  c.add("spectrum", space.spectrum);
  c.add("training_latents", space.training_latents);
  save_container(c, path);
}

CategoryShapeSpace load_shape_space(const std::filesystem::path& path) {
  const Container c = load_container(path, kShapeSpaceKind);
  CategoryShapeSpace s;
  try {
    const auto m = c.meta.at("M").get<Eigen::Index>();
    const auto L = c.meta.at("L").get<Eigen::Index>();
    s.category = c.meta.at("category").get<std::string>();
    s.training_count = c.meta.at("N").get<int>();
    s.total_variance = c.meta.at("total_variance").get<double>();
    s.degenerate = c.meta.at("degenerate").get<bool>();
    const auto& cp = c.meta.at("cpd");
    s.cpd.beta = cp.at("beta").get<double>();
    s.cpd.lambda = cp.at("lambda").get<double>();
    s.cpd.outlier_weight = cp.at("outlier_weight").get<double>();
    s.cpd.max_iterations = cp.at("max_iterations").get<int>();
    s.cpd.tolerance = cp.at("tolerance").get<double>();
    s.canonical = PointCloud(c.get("canonical", m, 3), s.category);
    s.kernel.entries = c.get("G", m, m);
    s.kernel.beta = c.meta.at("beta").get<double>();
    s.field_mean = c.get("mean", 3 * m, 1);
    s.field_scale = c.get("scale", 3 * m, 1);
    s.basis = c.get("basis", 3 * m, L);
    s.eigenvalues = c.get("eigenvalues", L, 1);
    s.spectrum = c.get("spectrum");
    s.training_latents = c.get("training_latents", -1, L);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad shape-space header: " + e.what());
  }
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  s.finalize();
  return s;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw InvalidArgument("chamfer: empty cloud");
  auto one_way = [](const PointCloud& s, const PointCloud& t) {
    const KdTree tree(t.points);
    double acc = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) acc += std::sqrt(tree.nearest(s.point(i)).second);
    return acc / static_cast<double>(s.size());
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

// ---------------------------------------------------------------------------

void InferenceParams::validate() const {
  if (max_iterations < 1) throw InvalidArgument("inference: max_iterations must be positive");
  if (!(armijo > 0 && armijo < 1)) throw InvalidArgument("inference: Armijo constant must lie in (0, 1)");
  if (!(backtrack > 0 && backtrack < 1)) throw InvalidArgument("inference: backtracking factor must lie in (0, 1)");
  if (max_backtracks < 0) throw InvalidArgument("inference: max_backtracks must be non-negative");
  if (initial_sigma2 && !(*initial_sigma2 > 0)) throw InvalidArgument("inference: initial sigma2 must be positive");
  if (!(sigma2_decay > 0 && sigma2_decay <= 1)) throw InvalidArgument("inference: sigma2 decay must lie in (0, 1]");
  if (!(sigma2_floor > 0)) throw InvalidArgument("inference: sigma2 floor must be positive");
  if (!(tolerance > 0)) throw InvalidArgument("inference: tolerance must be positive");
  if (!(max_latent_sigma > 0)) throw InvalidArgument("inference: max_latent_sigma must be positive");
}

LatentObjective::LatentObjective(const CategoryShapeSpace& space, const PointCloud& observation)
    : space_(space), obs_(observation), latent_dim_(space.latent_dim()) {
  validate_cloud(observation, "infer_latent (observation)");
  if (static_cast<int>(space.modes.size()) != latent_dim_ || space.mean_shape.rows() != space.model_size())
    throw InvalidArgument("infer_latent: shape space is not finalized");
}

Eigen::VectorXd LatentObjective::pack(const Eigen::VectorXd& x, const RigidParams& pose) {
  Eigen::VectorXd p(x.size() + 6);
  p << x, pose.rotation, pose.translation;
  return p;
}

RigidParams LatentObjective::pose(const Eigen::VectorXd& params) const {
  RigidParams r;
  r.rotation = params.segment<3>(latent_dim_);
  r.translation = params.segment<3>(latent_dim_ + 3);
  return r;
}

Points LatentObjective::shape(const Eigen::VectorXd& x) const {
  Points p = space_.mean_shape;
  for (int l = 0; l < latent_dim_; ++l) p += x[l] * space_.modes[static_cast<std::size_t>(l)];
  return p;
}

Points LatentObjective::posed(const Eigen::VectorXd& params) const {
  const RigidParams rp = pose(params);
  Points z = shape(latent(params)) * rp.matrix().transpose();
  z.rowwise() += rp.translation.transpose();
  return z;
}

namespace {

// Columns of the returned block hold, for observations [begin, end), the
// softmax over model points of -|O_n - z_m|^2 / (2 sigma2).
Eigen::MatrixXd weight_block(const Points& Z, const Eigen::VectorXd& zz, const Points& O, Eigen::Index begin,
                             Eigen::Index end, double sigma2) {
  const auto ob = O.middleRows(begin, end - begin);
  Eigen::MatrixXd P = Z * ob.transpose();
  P *= -2.0;
  P.colwise() += zz;
  P.rowwise() += ob.rowwise().squaredNorm().transpose();
  P = P.cwiseMax(0.0) * (-0.5 / sigma2);
  for (Eigen::Index j = 0; j < P.cols(); ++j) {
    auto col = P.col(j);
    col = (col.array() - col.maxCoeff()).exp();
    col /= col.sum();
  }
  return P;
}

constexpr Eigen::Index kBlock = 256;

}  // namespace

LatentObjective::Assignment LatentObjective::assign(const Eigen::VectorXd& params, double sigma2) const {
  if (!(sigma2 > 0)) throw InvalidArgument("LatentObjective: sigma2 must be positive");
  const Points Z = posed(params);
  const Eigen::VectorXd zz = Z.rowwise().squaredNorm();
  const Eigen::Index m = Z.rows(), n = obs_.size();
  Assignment a;
  a.mass = Eigen::VectorXd::Zero(m);
  Points po = Points::Zero(m, 3);
  Eigen::VectorXd poo = Eigen::VectorXd::Zero(m);
  const Eigen::VectorXd oo = obs_.points.rowwise().squaredNorm();
  for (Eigen::Index b = 0; b < n; b += kBlock) {
    const Eigen::Index e = std::min(n, b + kBlock);
    const Eigen::MatrixXd P = weight_block(Z, zz, obs_.points, b, e, sigma2);
    a.mass += P.rowwise().sum();
    po += P * obs_.points.middleRows(b, e - b);
    poo += P * oo.segment(b, e - b);
  }
  a.target = Points::Zero(m, 3);
  a.offset = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (a.mass[i] > 0) {
      a.target.row(i) = po.row(i) / a.mass[i];
      a.offset += poo[i] - po.row(i).squaredNorm() / a.mass[i];
    }
  }
  a.offset = std::max(0.0, a.offset);
  return a;
}

Eigen::MatrixXd LatentObjective::weights(const Eigen::VectorXd& params, double sigma2) const {
  if (!(sigma2 > 0)) throw InvalidArgument("LatentObjective: sigma2 must be positive");
  const Points Z = posed(params);
  return weight_block(Z, Z.rowwise().squaredNorm(), obs_.points, 0, obs_.size(), sigma2);
}

double LatentObjective::cost(const Eigen::VectorXd& params, const Assignment& a) const {
  const Points Z = posed(params);
  return (Z - a.target).rowwise().squaredNorm().dot(a.mass) + a.offset;
}

double LatentObjective::evaluate(const Eigen::VectorXd& params, const Assignment& a, Eigen::VectorXd* gradient,
                                 Eigen::MatrixXd* gauss_newton) const {
  const RigidParams rp = pose(params);
  const Mat3 R = rp.matrix();
  const Points Y = shape(latent(params));
  Points Z = Y * R.transpose();
  Z.rowwise() += rp.translation.transpose();
  const Points diff = Z - a.target;
  const double E = diff.rowwise().squaredNorm().dot(a.mass) + a.offset;
  if (!gradient && !gauss_newton) return E;

  const Eigen::Index m = Z.rows();
  const int L = latent_dim_, dim = L + 6;
  const Mat3 Jr = right_jacobian_so3(rp.rotation);
  if (gradient) {
    const Points g = (2.0 * a.mass).asDiagonal() * diff;  // dE/dZ
    const Points gl = g * R;                               // rows R^T g_m
    gradient->resize(dim);
    for (int l = 0; l < L; ++l) (*gradient)[l] = space_.modes[static_cast<std::size_t>(l)].cwiseProduct(gl).sum();
    Vec3 torque = Vec3::Zero();
    for (Eigen::Index i = 0; i < m; ++i) torque += Y.row(i).transpose().cross(gl.row(i).transpose());
    gradient->segment<3>(L) = Jr.transpose() * torque;
    gradient->segment<3>(L + 3) = g.colwise().sum().transpose();
  }
  if (gauss_newton) {
    gauss_newton->setZero(dim, dim);
    Eigen::MatrixXd J(3, dim);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double w = a.mass[i];
      if (!(w > 0)) continue;
      for (int l = 0; l < L; ++l) J.col(l) = R * space_.modes[static_cast<std::size_t>(l)].row(i).transpose();
      // dZ/dr = -R [y]x Jr
      J.block<3, 3>(0, L) = -R * skew(Y.row(i).transpose()) * Jr;
      J.block<3, 3>(0, L + 3).setIdentity();
      gauss_newton->noalias() += (2.0 * w) * J.transpose() * J;
    }
  }
  return E;
}

double LatentObjective::mean_pair_sigma2(const Eigen::VectorXd& params) const {
  const Points Z = posed(params);
  const auto m = static_cast<double>(Z.rows()), n = static_cast<double>(obs_.size());
  const double s = m * obs_.points.squaredNorm() + n * Z.squaredNorm() -
                   2.0 * obs_.points.colwise().sum().dot(Z.colwise().sum());
  return std::max(0.0, s) / (3.0 * m * n);
}

InferenceResult infer_latent(const CategoryShapeSpace& space, const PointCloud& observation,
                             const RigidParams& init_pose, const InferenceParams& params, InferenceTrace* trace) {
  params.validate();
  const LatentObjective obj(space, observation);
  const int L = obj.latent_dim(), dim = obj.dim();
  Eigen::VectorXd p = LatentObjective::pack(Eigen::VectorXd::Zero(L), init_pose);
  if (!p.allFinite()) throw InvalidArgument("infer_latent: non-finite initial pose");

  const double diam = diameter(space.canonical);
  const double floor = params.sigma2_floor * std::max(diam * diam, 1e-300);
  double sigma2 = params.initial_sigma2 ? *params.initial_sigma2 : obj.mean_pair_sigma2(p);
  sigma2 = std::max(sigma2, floor);
  const int active = params.fix_pose ? L : dim;

  InferenceResult res;
  LatentObjective::Assignment a;
  double cost = 0;
  int it = 0;
  for (; it < params.max_iterations; ++it) {
    a = obj.assign(p, sigma2);
    Eigen::VectorXd g;
    Eigen::MatrixXd H;
    const double E0 = obj.evaluate(p, a, &g, &H);
    cost = E0;
    if (!std::isfinite(E0) || !g.allFinite())
      throw DivergenceError("infer_latent: non-finite cost or gradient at iteration " + std::to_string(it));

    // Gauss-Newton-preconditioned descent direction on the active block.
    const Eigen::VectorXd ga = g.head(active);
    Eigen::MatrixXd Ha = H.topLeftCorner(active, active);
    Ha.diagonal().array() += 1e-10 * std::max(Ha.diagonal().maxCoeff(), 1e-300);
    Eigen::VectorXd d = -Ha.ldlt().solve(ga);
    if (!d.allFinite() || d.dot(ga) >= 0) d = -ga;
    const double slope = d.dot(ga);

    double alpha = 1.0, E1 = E0;
    bool accepted = false;
    Eigen::VectorXd trial = p;
    for (int k = 0; k <= params.max_backtracks; ++k, alpha *= params.backtrack) {
      trial.head(active) = p.head(active) + alpha * d;
      E1 = obj.cost(trial, a);
      if (std::isfinite(E1) && E1 <= E0 + params.armijo * alpha * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted && !std::isfinite(E1)) {
      std::ostringstream os;
      os << "infer_latent: cost diverged at iteration " << it << " (cost " << E0 << ", minimal step gives " << E1
         << ", sigma2 " << sigma2 << ")";
      throw DivergenceError(os.str());
    }
    if (accepted) {
      p = trial;
      p.segment<3>(L) = log_so3(exp_so3(p.segment<3>(L)));
    } else {
      E1 = E0;
    }
    cost = E1;
    if (trace) {
      trace->cost_before.push_back(E0);
      trace->cost_after.push_back(E1);
      trace->sigma2.push_back(sigma2);
    }

    // Keep the latent inside the region the training data supports.
    double maha = 0;
    for (int l = 0; l < L; ++l)
      if (space.eigenvalues[l] > 1e-12 * std::max(space.eigenvalues[0], 1e-300))
        maha += p[l] * p[l] / space.eigenvalues[l];
    if (std::sqrt(maha) > params.max_latent_sigma) {
      std::ostringstream os;
      os << "infer_latent: latent left the training distribution at iteration " << it << " (Mahalanobis norm "
         << std::sqrt(maha) << " > " << params.max_latent_sigma << ", cost " << E1 << ", sigma2 " << sigma2 << ")";
      throw DivergenceError(os.str());
    }

    // Decrease relative to the cost, or to the cost of every observation
    // sitting one floor deviation away once the fit is (near) exact.
    const double ref = std::max(std::abs(E0), static_cast<double>(observation.size()) * floor);
    if (sigma2 <= floor && E0 - E1 < params.tolerance * ref) {
      ++it;
      break;
    }
    sigma2 = std::max(sigma2 * params.sigma2_decay, floor);
  }

  res.latent.x = obj.latent(p);
  res.latent.category = space.category;
  res.pose = obj.pose(p);
  res.reconstructed = PointCloud(obj.posed(p), space.category);
  res.cost = cost;
  res.iterations = it;
  return res;
}

}  // namespace synergrasp
