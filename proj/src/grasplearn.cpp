#include "synergrasp/grasplearn.hpp"

#include <Eigen/Cholesky>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "synergrasp/container.hpp"
#include "synergrasp/error.hpp"

namespace synergrasp {

namespace {

constexpr const char* kLearnerKind = "grasp-learner";
constexpr double kMinJitter = 1e-10;
constexpr double kMaxJitter = 1e-4;

struct Factor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0;
  bool ok = false;
};

Factor factorize(const Eigen::MatrixXd& K, double noise, double signal) {
  Factor f;
  const Eigen::Index n = K.rows();
  for (double rel = 0; rel <= kMaxJitter; rel = rel == 0 ? kMinJitter : rel * 10) {
    const double jitter = rel * signal;
    f.llt.compute(K + (noise + jitter) * Eigen::MatrixXd::Identity(n, n));
    if (f.llt.info() == Eigen::Success && f.llt.matrixLLT().diagonal().minCoeff() > 0 &&
        f.llt.matrixLLT().allFinite()) {
      f.jitter = jitter;
      f.ok = true;
      return f;
    }
  }
  return f;
}

Eigen::VectorXd pack(const GpHyperparams& h) {
  Eigen::VectorXd t(h.lengthscales.size() + 2);
  t.head(h.lengthscales.size()) = h.lengthscales.array().log();
  t[t.size() - 2] = std::log(h.signal_variance);
  t[t.size() - 1] = std::log(h.noise_variance);
  return t;
}

GpHyperparams unpack(const Eigen::VectorXd& t) {
  GpHyperparams h;
  const Eigen::Index L = t.size() - 2;
  h.lengthscales = t.head(L).array().exp();
  h.signal_variance = std::exp(t[L]);
  h.noise_variance = std::exp(t[L + 1]);
  return h;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

void GpHyperparams::validate(Eigen::Index input_dim) const {
  if (lengthscales.size() != input_dim)
    throw InvalidArgument("gp: expected " + std::to_string(input_dim) + " lengthscales, got " +
                          std::to_string(lengthscales.size()));
  if (!(lengthscales.array() > 0).all() || !lengthscales.allFinite()) throw InvalidArgument("gp: lengthscales must be positive");
  if (!(signal_variance > 0) || !std::isfinite(signal_variance)) throw InvalidArgument("gp: signal variance must be positive");
  if (!(noise_variance > 0) || !std::isfinite(noise_variance)) throw InvalidArgument("gp: noise variance must be positive");
}

double rbf_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const GpHyperparams& h) {
  return h.signal_variance * std::exp(-0.5 * ((a - b).array() / h.lengthscales.array()).square().sum());
}

Eigen::MatrixXd rbf_kernel_matrix(const Eigen::MatrixXd& X, const GpHyperparams& h) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = h.signal_variance;
    for (Eigen::Index j = 0; j < i; ++j) K(i, j) = K(j, i) = rbf_kernel(X.row(i).transpose(), X.row(j).transpose(), h);
  }
  return K;
}

double log_marginal_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpHyperparams& h,
                               Eigen::VectorXd* gradient) {
  h.validate(X.cols());
  if (y.size() != X.rows()) throw InvalidArgument("gp: target count does not match inputs");
  const Eigen::Index n = X.rows(), L = X.cols();
  const Eigen::MatrixXd K = rbf_kernel_matrix(X, h);
  const Factor f = factorize(K, h.noise_variance, h.signal_variance);
  if (!f.ok) return -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd alpha = f.llt.solve(y);
  const double lml = -0.5 * y.dot(alpha) - f.llt.matrixLLT().diagonal().array().log().sum() -
                     0.5 * static_cast<double>(n) * std::log(2 * std::numbers::pi);
  if (gradient) {
    // d lml / d theta = 1/2 tr((alpha alpha^T - K^-1) dK/dtheta)
    const Eigen::MatrixXd W = alpha * alpha.transpose() - f.llt.solve(Eigen::MatrixXd::Identity(n, n));
    gradient->resize(L + 2);
    for (Eigen::Index d = 0; d < L; ++d) {
      double acc = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
          const double diff = (X(i, d) - X(j, d)) / h.lengthscales[d];
          acc += W(i, j) * K(i, j) * diff * diff;
        }
      (*gradient)[d] = 0.5 * acc;
    }
    (*gradient)[L] = 0.5 * (W.array() * K.array()).sum();
    (*gradient)[L + 1] = 0.5 * h.noise_variance * W.trace();
  }
  return lml;
}

GaussianProcess fit_gp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpHyperparams& h) {
  h.validate(X.cols());
  if (y.size() != X.rows()) throw InvalidArgument("gp: target count does not match inputs");
  if (!X.allFinite() || !y.allFinite()) throw InvalidArgument("gp: non-finite training data");
  const Eigen::MatrixXd K = rbf_kernel_matrix(X, h);
  const Factor f = factorize(K, h.noise_variance, h.signal_variance);
  if (!f.ok)
    throw NumericalError("gp: kernel matrix is too ill-conditioned to factorize even with jitter " +
                         std::to_string(kMaxJitter) + " x signal variance");
  GaussianProcess gp;
  gp.hyper = h;
  gp.targets = y;
  gp.cholesky = f.llt.matrixL();
  gp.alpha = f.llt.solve(y);
  gp.jitter = f.jitter;
  gp.log_likelihood = -0.5 * y.dot(gp.alpha) - gp.cholesky.diagonal().array().log().sum() -
                      0.5 * static_cast<double>(X.rows()) * std::log(2 * std::numbers::pi);
  return gp;
}

GpHyperparams optimize_hyperparams(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const HyperparamSearch& search) {
  if (X.rows() < 2) throw InvalidArgument("gp: at least 2 training points required");
  if (search.restarts < 1 || search.max_iterations < 1) throw InvalidArgument("gp: restarts and iterations must be positive");
  const Eigen::Index L = X.cols(), P = L + 2;
  const double mean_y = y.mean();
  double var_y = (y.array() - mean_y).square().sum() / static_cast<double>(y.size());
  var_y = std::max(var_y, y.squaredNorm() / static_cast<double>(y.size()));
  if (!(var_y > 1e-300)) var_y = 1.0;

  GpHyperparams start;
  start.lengthscales.resize(L);
  Eigen::VectorXd lo(P), hi(P);
  for (Eigen::Index d = 0; d < L; ++d) {
    const Eigen::VectorXd c = X.col(d);
    double sd = std::sqrt((c.array() - c.mean()).square().sum() / static_cast<double>(c.size()));
    if (!(sd > 1e-300)) sd = 1.0;
    start.lengthscales[d] = sd;
    lo[d] = std::log(1e-3 * sd);
    hi[d] = std::log(1e3 * sd);
  }
  start.signal_variance = var_y;
  start.noise_variance = 1e-2 * var_y;
  lo[L] = std::log(1e-4 * var_y);
  hi[L] = std::log(1e4 * var_y);
  lo[L + 1] = std::log(1e-8 * var_y);
  hi[L + 1] = std::log(10 * var_y);

  auto project = [&](Eigen::VectorXd t) { return t.cwiseMax(lo).cwiseMin(hi); };
  auto objective = [&](const Eigen::VectorXd& t, Eigen::VectorXd* g) {
    Eigen::VectorXd grad;
    const double v = log_marginal_likelihood(X, y, unpack(t), g ? &grad : nullptr);
    if (g) *g = -grad;
    return -v;
  };

  std::mt19937_64 rng(search.seed);
  std::uniform_real_distribution<double> shift(-2.0, 2.0);
  Eigen::VectorXd best_t = pack(start);
  double best = objective(best_t, nullptr);
  for (int r = 0; r < search.restarts; ++r) {
    Eigen::VectorXd t = pack(start);
    if (r > 0)
      for (Eigen::Index i = 0; i < P; ++i) t[i] += shift(rng);
    t = project(t);
    Eigen::VectorXd g;
    double f = objective(t, &g);
    if (!std::isfinite(f)) continue;
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(P, P);
    for (int it = 0; it < search.max_iterations; ++it) {
      Eigen::VectorXd dir = -Hinv * g;
      if (dir.dot(g) >= 0) {
        Hinv.setIdentity();
        dir = -g;
      }
      double step = 1.0;
      bool moved = false;
      Eigen::VectorXd tn, gn;
      double fn = f;
      for (int b = 0; b < 40; ++b, step *= 0.5) {
        tn = project(t + step * dir);
        const double decrease = g.dot(tn - t);
        if (decrease >= 0) continue;
        fn = objective(tn, &gn);
        if (std::isfinite(fn) && fn <= f + 1e-4 * decrease) {
          moved = true;
          break;
        }
      }
      if (!moved) break;
      const Eigen::VectorXd s = tn - t, yv = gn - g;
      const double sy = s.dot(yv);
      if (sy > 1e-12) {
        const double rho = 1.0 / sy;
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(P, P);
        Hinv = (I - rho * s * yv.transpose()) * Hinv * (I - rho * yv * s.transpose()) + rho * s * s.transpose();
      }
      const bool small = std::abs(f - fn) <= 1e-12 * (1 + std::abs(f));
      t = tn;
      f = fn;
      g = gn;
      if (small) break;
    }
    if (f < best) {
      best = f;
      best_t = t;
    }
  }
  if (!std::isfinite(best)) throw NumericalError("gp: no hyperparameter start gave a factorizable kernel matrix");
  return unpack(best_t);
}

GraspLearner train_learner(const std::vector<LatentDescriptor>& latents, const Eigen::MatrixXd& synergies,
                           const LearnerOptions& options, const std::string& hand_id) {
  const auto n = static_cast<Eigen::Index>(latents.size());
  if (n < 2) throw InvalidArgument("train_learner: at least 2 training pairs required");
  if (synergies.rows() != n)
    throw InvalidArgument("train_learner: " + std::to_string(synergies.rows()) + " synergy rows for " +
                          std::to_string(n) + " latents");
  if (synergies.cols() < 1) throw InvalidArgument("train_learner: empty synergy vectors");
  const Eigen::Index L = latents.front().x.size();
  if (L < 1) throw InvalidArgument("train_learner: empty latent descriptors");
  GraspLearner learner;
  learner.category = latents.front().category;
  learner.hand_id = hand_id;
  learner.inputs.resize(n, L);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& d = latents[static_cast<std::size_t>(i)];
    if (d.x.size() != L)
      throw InvalidArgument("train_learner: latent " + std::to_string(i) + " has dimension " + std::to_string(d.x.size()) +
                            ", expected " + std::to_string(L));
    if (d.category != learner.category)
      throw InvalidArgument("train_learner: latent " + std::to_string(i) + " has category '" + d.category +
                            "', expected '" + learner.category + "'");
    learner.inputs.row(i) = d.x.transpose();
  }
  if (!learner.inputs.allFinite() || !synergies.allFinite()) throw InvalidArgument("train_learner: non-finite training data");
  for (Eigen::Index k = 0; k < synergies.cols(); ++k) {
    const Eigen::VectorXd y = synergies.col(k);
    GpHyperparams h;
    if (options.hyper) {
      h = *options.hyper;
    } else {
      HyperparamSearch search = options.search;
      search.seed = options.search.seed + static_cast<std::uint64_t>(k);
      h = optimize_hyperparams(learner.inputs, y, search);
    }
    learner.gps.push_back(fit_gp(learner.inputs, y, h));
  }
  return learner;
}

SynergyPrediction predict(const GraspLearner& learner, const LatentDescriptor& x) {
  if (x.x.size() != learner.latent_dim())
    throw InvalidArgument("predict: latent has dimension " + std::to_string(x.x.size()) + ", learner expects " +
                          std::to_string(learner.latent_dim()));
  if (!x.x.allFinite()) throw InvalidArgument("predict: non-finite latent");
  SynergyPrediction out;
  out.mean.resize(learner.synergy_count());
  out.variance.resize(learner.synergy_count());
  const Eigen::Index n = learner.inputs.rows();
  for (int k = 0; k < learner.synergy_count(); ++k) {
    const auto& gp = learner.gps[static_cast<std::size_t>(k)];
    Eigen::VectorXd ks(n);
    for (Eigen::Index i = 0; i < n; ++i) ks[i] = rbf_kernel(learner.inputs.row(i).transpose(), x.x, gp.hyper);
    out.mean[k] = ks.dot(gp.alpha);
    const Eigen::VectorXd v = gp.cholesky.triangularView<Eigen::Lower>().solve(ks);
    out.variance[k] = std::max(0.0, gp.hyper.signal_variance - v.squaredNorm());
  }
  return out;
}

void save_learner(const GraspLearner& learner, const std::filesystem::path& path) {
  Container c;
  c.kind = kLearnerKind;
  c.meta = {{"category", learner.category},
            {"hand_id", learner.hand_id},
            {"L", learner.latent_dim()},
            {"l", learner.synergy_count()},
            {"N", learner.training_count()}};
  c.add("inputs", learner.inputs);
  Eigen::MatrixXd targets(learner.training_count(), learner.synergy_count());
  Eigen::MatrixXd hyper(learner.latent_dim() + 2, learner.synergy_count());
  for (int k = 0; k < learner.synergy_count(); ++k) {
    const auto& gp = learner.gps[static_cast<std::size_t>(k)];
    targets.col(k) = gp.targets;
    hyper.col(k) << gp.hyper.lengthscales, gp.hyper.signal_variance, gp.hyper.noise_variance;
  }
  c.add("targets", targets);
  c.add("hyperparams", hyper);
  save_container(c, path);
}

GraspLearner load_learner(const std::filesystem::path& path) {
  const Container c = load_container(path, kLearnerKind);
  GraspLearner learner;
  Eigen::MatrixXd targets, hyper;
  try {
    learner.category = c.meta.at("category").get<std::string>();
    learner.hand_id = c.meta.at("hand_id").get<std::string>();
    const auto L = c.meta.at("L").get<Eigen::Index>(), l = c.meta.at("l").get<Eigen::Index>(),
               N = c.meta.at("N").get<Eigen::Index>();
    learner.inputs = c.get("inputs", N, L);
    targets = c.get("targets", N, l);
    hyper = c.get("hyperparams", L + 2, l);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad grasp-learner header: " + e.what());
  }
  try {
    const Eigen::Index L = learner.inputs.cols();
    for (Eigen::Index k = 0; k < targets.cols(); ++k) {
      GpHyperparams h;
      h.lengthscales = hyper.col(k).head(L);
      h.signal_variance = hyper(L, k);
      h.noise_variance = hyper(L + 1, k);
      learner.gps.push_back(fit_gp(learner.inputs, targets.col(k), h));
    }
  } catch (const InvalidArgument& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return learner;
}

GraspInference infer_grasp(const CategoryShapeSpace& space, const GraspLearner& learner, const SynergySpace& synergies,
                           const HandModel& hand, const PointCloud& observation, const GraspInferenceOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  auto mismatch = [](const std::string& what) { throw StageError("validation", what); };
  if (learner.category != space.category)
    mismatch("learner category '" + learner.category + "' does not match shape space '" + space.category + "'");
  if (learner.latent_dim() != space.latent_dim())
    mismatch("learner expects " + std::to_string(learner.latent_dim()) + " latent dimensions, shape space has " +
             std::to_string(space.latent_dim()));
  if (learner.synergy_count() != synergies.synergy_count())
    mismatch("learner predicts " + std::to_string(learner.synergy_count()) + " synergies, synergy space has " +
             std::to_string(synergies.synergy_count()));
  if (!learner.hand_id.empty() && learner.hand_id != synergies.hand_id)
    mismatch("learner hand '" + learner.hand_id + "' does not match synergy space hand '" + synergies.hand_id + "'");
  if (!synergies.hand_id.empty() && synergies.hand_id != hand.id())
    mismatch("synergy space hand '" + synergies.hand_id + "' does not match hand '" + hand.id() + "'");
  if (hand.actuated_count() != synergies.joint_count())
    mismatch("hand has " + std::to_string(hand.actuated_count()) + " actuated joints, synergy space has " +
             std::to_string(synergies.joint_count()));

  GraspInference out;
  auto& diag = out.diagnostics;
  auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  };

  auto t = std::chrono::steady_clock::now();
  const InferenceResult shape = stage("shape-inference", [&] {
    RigidParams init;
    if (options.initial_pose) {
      init = *options.initial_pose;
    } else if (options.pose_init == PoseInit::PrincipalAxes) {
      init = coarse_align(PointCloud(space.mean_shape), observation);
    } else {
      init.translation = centroid(observation) - centroid(PointCloud(space.mean_shape));
    }
    return infer_latent(space, observation, init, options.inference);
  });
  diag.shape_ms = elapsed_ms(t);
  diag.shape_iterations = shape.iterations;
  diag.shape_cost = shape.cost;
  out.latent = shape.latent;
  out.pose = shape.pose;
  out.reconstruction = shape.reconstructed;

  t = std::chrono::steady_clock::now();
  const SynergyPrediction pred = stage("synergy-prediction", [&] { return predict(learner, shape.latent); });
  diag.predict_ms = elapsed_ms(t);
  diag.synergy_variance = pred.variance;
  out.raw_synergy = pred.mean;

  t = std::chrono::steady_clock::now();
  out.synergy = stage("collision-correction", [&] {
    const Eigen::VectorXd q_raw = to_joints(synergies, pred.mean);
    diag.raw_limit_violations = hand.limit_violations(q_raw);
    const auto report = self_collision_depths(hand, q_raw);
    diag.raw_penetration = report.pairs.empty() ? 0.0 : std::max(0.0, report.max_depth());
    if (diag.raw_penetration <= options.ik.penetration_tolerance && diag.raw_limit_violations.empty())
      return Eigen::VectorXd(pred.mean);
    diag.corrected = true;
    const IkResult ik = solve_collision_free(synergies, hand, pred.mean, options.ik);
    diag.correction_converged = ik.converged;
    diag.correction_diagnostic = ik.diagnostic;
    diag.correction_distance = (ik.s - pred.mean).norm();
    return ik.s;
  });
  diag.correction_ms = elapsed_ms(t);

  out.joints = stage("joint-mapping", [&] { return to_joints(synergies, out.synergy); });
  diag.final_limit_violations = hand.limit_violations(out.joints);
  const auto final_report = self_collision_depths(hand, out.joints);
  diag.final_penetration = final_report.pairs.empty() ? 0.0 : std::max(0.0, final_report.max_depth());
  diag.total_ms = elapsed_ms(t0);
  return out;
}

}  // namespace synergrasp
