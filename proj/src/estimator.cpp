#include "tio/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "tio/geometry.hpp"

namespace tio {

void SolverConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string("solver config: ") + name + " must be positive");
  };
  if (window_size < 4) throw std::invalid_argument("solver config: window_size must be at least 4");
  if (max_iterations < 1) throw std::invalid_argument("solver config: max_iterations must be positive");
  positive(lambda_init, "lambda_init");
  if (!(lambda_scale > 1.0)) throw std::invalid_argument("solver config: lambda_scale must exceed 1");
  positive(reprojection_sigma, "reprojection_sigma");
  positive(huber_threshold, "huber_threshold");
  positive(cost_tolerance, "cost_tolerance");
  positive(absolute_cost_floor, "absolute_cost_floor");
  positive(min_parallax_deg, "min_parallax_deg");
  positive(keyframe_parallax, "keyframe_parallax");
  positive(keyframe_track_ratio, "keyframe_track_ratio");
  positive(prior_eigen_floor, "prior_eigen_floor");
}

ReprojectionResult reprojectionResidual(const FrameState& state, const Eigen::Vector3d& l_w, const Eigen::Vector2d& obs,
                                        const CameraModel& cam) {
  ReprojectionResult out;
  const Eigen::Matrix3d R = state.q.toRotationMatrix();
  const Eigen::Matrix3d A = cam.R_bc.transpose() * R.transpose();
  const Eigen::Vector3d d = l_w - state.p;
  const Eigen::Vector3d pc = A * d - cam.R_bc.transpose() * cam.t_bc;
  if (!(pc.z() > 0.0)) return out;
  const double fx = cam.intrinsics.fx, fy = cam.intrinsics.fy;
  const double iz = 1.0 / pc.z();
  out.residual = obs - Eigen::Vector2d(fx * pc.x() * iz + cam.intrinsics.cx, fy * pc.y() * iz + cam.intrinsics.cy);
  Eigen::Matrix<double, 2, 3> dproj;
  dproj << fx * iz, 0.0, -fx * pc.x() * iz * iz,
           0.0, fy * iz, -fy * pc.y() * iz * iz;
  out.d_landmark = -dproj * A;
  out.d_pose.leftCols<3>() = dproj * A;
  out.d_pose.rightCols<3>() = -dproj * A * skew(d);
  out.valid = true;
  return out;
}

Vector15d stateDifference(const FrameState& x, const FrameState& x_lin) {
  Vector15d d;
  d.segment<3>(kDp) = x.p - x_lin.p;
  d.segment<3>(kDtheta) = logQuat<double>(x.q * x_lin.q.conjugate());
  d.segment<3>(kDv) = x.v - x_lin.v;
  d.segment<3>(kDba) = x.ba - x_lin.ba;
  d.segment<3>(kDbg) = x.bg - x_lin.bg;
  return d;
}

namespace {

// d stateDifference / d perturbation of x
Matrix15d differenceJacobian(const FrameState& x, const FrameState& x_lin) {
  Matrix15d J = Matrix15d::Identity();
  const Eigen::Vector3d phi = logQuat<double>(x.q * x_lin.q.conjugate());
  J.block<3, 3>(kDtheta, kDtheta) = rightJacobianInverse(Eigen::Vector3d(-phi));
  return J;
}

}  // namespace

MarginalizationPrior makeStatePrior(int frame, const FrameState& state, const Vector15d& sigmas) {
  MarginalizationPrior p;
  p.frames = {frame};
  p.linearization = {state};
  int rows = 0;
  for (int i = 0; i < kStateDim; ++i) rows += sigmas(i) > 0.0;
  p.factor.J = Eigen::MatrixXd::Zero(rows, kStateDim);
  p.factor.r = Eigen::VectorXd::Zero(rows);
  int row = 0;
  for (int i = 0; i < kStateDim; ++i)
    if (sigmas(i) > 0.0) p.factor.J(row++, i) = 1.0 / sigmas(i);
  return p;
}

int SlidingWindow::indexOf(int frame_id) const {
  for (int i = 0; i < size(); ++i)
    if (frame_ids[i] == frame_id) return i;
  return -1;
}

void SlidingWindow::addKeyframe(int frame_id, const FrameState& state, const PreintegratedDelta& delta) {
  if (indexOf(frame_id) >= 0) throw std::invalid_argument("sliding window: duplicate keyframe id");
  if (!states.empty()) deltas.push_back(delta);
  frame_ids.push_back(frame_id);
  states.push_back(state);
}

void SlidingWindow::addObservation(int landmark_id, int frame_id, const Eigen::Vector2d& pixel) {
  auto [it, inserted] = landmarks.try_emplace(landmark_id);
  if (inserted) it->second.id = landmark_id;
  it->second.observations.push_back({frame_id, pixel});
}

std::optional<Eigen::Vector3d> triangulate(const std::vector<LandmarkObservation>& observations,
                                           const SlidingWindow& window, const SolverConfig& cfg) {
  if (observations.size() < 2) return std::nullopt;
  const auto& cam = window.camera;
  std::vector<Eigen::Matrix<double, 3, 4>> poses;
  std::vector<Eigen::Vector3d> rays;
  std::vector<Eigen::Vector2d> normalized;
  for (const auto& o : observations) {
    const int k = window.indexOf(o.frame);
    if (k < 0) return std::nullopt;
    const FrameState& s = window.states[k];
    const Eigen::Matrix3d R_wb = s.q.toRotationMatrix();
    const Eigen::Matrix3d R_cw = cam.R_bc.transpose() * R_wb.transpose();
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = R_cw;
    P.col(3) = -R_cw * s.p - cam.R_bc.transpose() * cam.t_bc;
    poses.push_back(P);
    const Eigen::Vector3d ray = backProject(cam.intrinsics, o.pixel);
    normalized.push_back(ray.head<2>());
    rays.push_back((R_cw.transpose() * ray).normalized());
  }

  double max_angle = 0.0;
  for (size_t i = 0; i < rays.size(); ++i)
    for (size_t j = i + 1; j < rays.size(); ++j)
      max_angle = std::max(max_angle, std::acos(std::clamp(rays[i].dot(rays[j]), -1.0, 1.0)));
  if (max_angle * 180.0 / M_PI < cfg.min_parallax_deg) return std::nullopt;

  Eigen::MatrixXd A(2 * poses.size(), 4);
  for (size_t i = 0; i < poses.size(); ++i) {
    A.row(2 * i) = normalized[i].x() * poses[i].row(2) - poses[i].row(0);
    A.row(2 * i + 1) = normalized[i].y() * poses[i].row(2) - poses[i].row(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-12) return std::nullopt;
  const Eigen::Vector3d l = h.head<3>() / h(3);
  if (!l.allFinite()) return std::nullopt;

  const double gate = 3.0 * cfg.reprojection_sigma;
  for (const auto& o : observations) {
    const auto r = reprojectionResidual(window.states[window.indexOf(o.frame)], l, o.pixel, cam);
    if (!r.valid || r.residual.norm() >= gate) return std::nullopt;
  }
  return l;
}

int triangulatePending(SlidingWindow& window, const SolverConfig& cfg) {
  int count = 0;
  for (auto& [id, lm] : window.landmarks) {
    if (lm.status != LandmarkStatus::kPending || lm.observations.size() < 2) continue;
    if (const auto l = triangulate(lm.observations, window, cfg)) {
      lm.position = *l;
      lm.status = LandmarkStatus::kTriangulated;
      ++count;
    }
  }
  return count;
}

namespace {

struct HuberTerm {
  double cost;
  double weight;
};

// s is the whitened residual norm, k the threshold in the same units
HuberTerm huber(double s, double k) {
  if (s <= k) return {s * s, 1.0};
  return {2.0 * k * s - k * k, k / s};
}

// Information of the IMU residual: the delta covariance with its rotation block
// carried into the frame where the rotation residual is expressed.
Matrix15d imuInformation(const PreintegratedDelta& delta) {
  Matrix15d T = Matrix15d::Identity();
  T.block<3, 3>(kTheta, kTheta) = delta.gamma().toRotationMatrix();
  return T * weightMatrix(delta.covariance()) * T.transpose();
}

bool observable(const Landmark& lm, const SlidingWindow& w) {
  return lm.status == LandmarkStatus::kTriangulated && lm.observations.size() >= 2 &&
         std::all_of(lm.observations.begin(), lm.observations.end(),
                     [&](const LandmarkObservation& o) { return w.indexOf(o.frame) >= 0; });
}

struct LandmarkBlock {
  int id = 0;
  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  std::vector<std::pair<int, Eigen::Matrix<double, 15, 3>>> coupling;  // (state index, H_sl)
};

struct System {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  std::vector<LandmarkBlock> landmarks;
};

double priorCost(const SlidingWindow& w, System* sys) {
  const auto& prior = w.prior;
  if (prior.empty()) return 0.0;
  const int n = static_cast<int>(prior.frames.size());
  Eigen::VectorXd dx(kStateDim * n);
  Eigen::MatrixXd Jd = Eigen::MatrixXd::Zero(kStateDim * n, kStateDim * n);
  std::vector<int> index(n);
  for (int i = 0; i < n; ++i) {
    index[i] = w.indexOf(prior.frames[i]);
    if (index[i] < 0) throw std::logic_error("marginalization prior refers to a frame outside the window");
    dx.segment<kStateDim>(kStateDim * i) = stateDifference(w.states[index[i]], prior.linearization[i]);
    if (sys)
      Jd.block<kStateDim, kStateDim>(kStateDim * i, kStateDim * i) =
          differenceJacobian(w.states[index[i]], prior.linearization[i]);
  }
  const Eigen::VectorXd e = prior.factor.r + prior.factor.J * dx;
  if (sys) {
    const Eigen::MatrixXd J = prior.factor.J * Jd;
    const Eigen::MatrixXd H = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * e;
    for (int a = 0; a < n; ++a) {
      sys->g.segment<kStateDim>(kStateDim * index[a]) += g.segment<kStateDim>(kStateDim * a);
      for (int b = 0; b < n; ++b)
        sys->H.block<kStateDim, kStateDim>(kStateDim * index[a], kStateDim * index[b]) +=
            H.block<kStateDim, kStateDim>(kStateDim * a, kStateDim * b);
    }
  }
  return e.squaredNorm();
}

// Cost of the window; with `sys` also the Gauss-Newton system at the current estimate.
CostBreakdown evaluate(const SlidingWindow& w, const SolverConfig& cfg, System* sys) {
  CostBreakdown cost;
  const int n = w.size();
  if (sys) {
    sys->H = Eigen::MatrixXd::Zero(kStateDim * n, kStateDim * n);
    sys->g = Eigen::VectorXd::Zero(kStateDim * n);
    sys->landmarks.clear();
  }

  const double sigma = cfg.reprojection_sigma;
  const double k = cfg.huber_threshold / sigma;
  for (const auto& [id, lm] : w.landmarks) {
    if (!observable(lm, w)) continue;
    LandmarkBlock block;
    block.id = id;
    for (const auto& o : lm.observations) {
      const int j = w.indexOf(o.frame);
      const auto r = reprojectionResidual(w.states[j], lm.position, o.pixel, w.camera);
      if (!r.valid) continue;  // cheirality: zero weight this iteration
      const Eigen::Vector2d e = r.residual / sigma;
      const HuberTerm h = huber(e.norm(), k);
      cost.reprojection += h.cost;
      if (!sys) continue;
      const Eigen::Matrix<double, 2, 6> Jp = r.d_pose / sigma;
      const Eigen::Matrix<double, 2, 3> Jl = r.d_landmark / sigma;
      sys->H.block<6, 6>(kStateDim * j, kStateDim * j) += h.weight * Jp.transpose() * Jp;
      sys->g.segment<6>(kStateDim * j) += h.weight * Jp.transpose() * e;
      block.H += h.weight * Jl.transpose() * Jl;
      block.g += h.weight * Jl.transpose() * e;
      Eigen::Matrix<double, 15, 3> Hsl = Eigen::Matrix<double, 15, 3>::Zero();
      Hsl.topRows<6>() = h.weight * Jp.transpose() * Jl;
      block.coupling.emplace_back(j, Hsl);
    }
    if (sys && !block.coupling.empty()) sys->landmarks.push_back(std::move(block));
  }

  for (int i = 0; i + 1 < n; ++i) {
    const Matrix15d W = imuInformation(w.deltas[i]);
    if (!sys) {
      const Vector15d r = imuResidual(w.states[i], w.states[i + 1], w.deltas[i], w.gravity);
      cost.imu += r.dot(W * r);
      continue;
    }
    const ImuJacobians J = imuResidualJacobians(w.states[i], w.states[i + 1], w.deltas[i], w.gravity);
    cost.imu += J.residual.dot(W * J.residual);
    const int a = kStateDim * i, b = kStateDim * (i + 1);
    const Matrix15d WJ0 = W * J.d_state0, WJ1 = W * J.d_state1;
    sys->H.block<15, 15>(a, a) += J.d_state0.transpose() * WJ0;
    sys->H.block<15, 15>(a, b) += J.d_state0.transpose() * WJ1;
    sys->H.block<15, 15>(b, a) += J.d_state1.transpose() * WJ0;
    sys->H.block<15, 15>(b, b) += J.d_state1.transpose() * WJ1;
    sys->g.segment<15>(a) += WJ0.transpose() * J.residual;
    sys->g.segment<15>(b) += WJ1.transpose() * J.residual;
  }

  cost.prior = priorCost(w, sys);
  return cost;
}

// First frame position and yaw (world-z rotation under the left perturbation).
constexpr int kGauge[] = {kDp, kDp + 1, kDp + 2, kDtheta + 2};

void fixGauge(System& sys) {
  for (int i : kGauge) {
    sys.H.row(i).setZero();
    sys.H.col(i).setZero();
    sys.H(i, i) = 1.0;
    sys.g(i) = 0.0;
  }
  for (auto& lm : sys.landmarks)
    for (auto& [j, Hsl] : lm.coupling)
      if (j == 0)
        for (int i : kGauge) Hsl.row(i).setZero();
}

struct Step {
  Eigen::VectorXd states;
  std::vector<Eigen::Vector3d> landmarks;
};

std::optional<Step> solveDamped(const System& sys, double lambda, bool schur) {
  const int ns = static_cast<int>(sys.H.rows());
  Eigen::MatrixXd A = sys.H;
  A.diagonal() += lambda * sys.H.diagonal().cwiseMax(1e-9);
  std::vector<Eigen::Matrix3d> Hll;
  for (const auto& lm : sys.landmarks) {
    Eigen::Matrix3d H = lm.H;
    H.diagonal() += lambda * lm.H.diagonal().cwiseMax(1e-9);
    Hll.push_back(H);
  }

  Step step;
  if (schur) {
    Eigen::VectorXd b = sys.g;
    std::vector<Eigen::Matrix3d> inv(Hll.size());
    for (size_t l = 0; l < Hll.size(); ++l) {
      Eigen::LDLT<Eigen::Matrix3d> ldlt(Hll[l]);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
      inv[l] = ldlt.solve(Eigen::Matrix3d::Identity());
      const auto& cp = sys.landmarks[l].coupling;
      for (const auto& [a, Ha] : cp) {
        b.segment<15>(kStateDim * a) -= Ha * inv[l] * sys.landmarks[l].g;
        for (const auto& [c, Hc] : cp) A.block<15, 15>(kStateDim * a, kStateDim * c) -= Ha * inv[l] * Hc.transpose();
      }
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success) return std::nullopt;
    step.states = ldlt.solve(-b);
    for (size_t l = 0; l < Hll.size(); ++l) {
      Eigen::Vector3d rhs = -sys.landmarks[l].g;
      for (const auto& [a, Ha] : sys.landmarks[l].coupling) rhs -= Ha.transpose() * step.states.segment<15>(kStateDim * a);
      step.landmarks.push_back(inv[l] * rhs);
    }
  } else {
    const int nl = static_cast<int>(Hll.size());
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(ns + 3 * nl, ns + 3 * nl);
    Eigen::VectorXd b(ns + 3 * nl);
    F.topLeftCorner(ns, ns) = A;
    b.head(ns) = sys.g;
    for (int l = 0; l < nl; ++l) {
      const int o = ns + 3 * l;
      F.block<3, 3>(o, o) = Hll[l];
      b.segment<3>(o) = sys.landmarks[l].g;
      for (const auto& [a, Ha] : sys.landmarks[l].coupling) {
        F.block<15, 3>(kStateDim * a, o) = Ha;
        F.block<3, 15>(o, kStateDim * a) = Ha.transpose();
      }
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(F);
    if (ldlt.info() != Eigen::Success) return std::nullopt;
    const Eigen::VectorXd x = ldlt.solve(-b);
    step.states = x.head(ns);
    for (int l = 0; l < nl; ++l) step.landmarks.push_back(x.segment<3>(ns + 3 * l));
  }
  if (!step.states.allFinite()) return std::nullopt;
  for (const auto& dl : step.landmarks)
    if (!dl.allFinite()) return std::nullopt;
  return step;
}

// Decrease of the Gauss-Newton model |e + J dx|^2 along the step.
double modelDecrease(const System& sys, const Step& step) {
  double d = -2.0 * sys.g.dot(step.states) - step.states.dot(sys.H * step.states);
  for (size_t l = 0; l < sys.landmarks.size(); ++l) {
    const auto& lm = sys.landmarks[l];
    const Eigen::Vector3d& dl = step.landmarks[l];
    d -= 2.0 * lm.g.dot(dl) + dl.dot(lm.H * dl);
    for (const auto& [a, Ha] : lm.coupling) d -= 2.0 * step.states.segment<15>(kStateDim * a).dot(Ha * dl);
  }
  return d;
}

void applyStep(SlidingWindow& w, const System& sys, const Step& step) {
  for (int i = 0; i < w.size(); ++i) {
    const auto d = step.states.segment<kStateDim>(kStateDim * i);
    FrameState& s = w.states[i];
    s.p += d.segment<3>(kDp);
    s.q = (expQuat(Eigen::Vector3d(d.segment<3>(kDtheta))) * s.q).normalized();
    s.v += d.segment<3>(kDv);
    s.ba += d.segment<3>(kDba);
    s.bg += d.segment<3>(kDbg);
  }
  for (size_t l = 0; l < sys.landmarks.size(); ++l) w.landmarks.at(sys.landmarks[l].id).position += step.landmarks[l];
}

}  // namespace

CostBreakdown windowCost(const SlidingWindow& window, const SolverConfig& cfg) {
  return evaluate(window, cfg, nullptr);
}

SolveReport solveWindow(SlidingWindow& window, const SolverConfig& cfg) {
  SolveReport report;
  if (window.states.empty()) throw std::invalid_argument("solveWindow: empty window");
  if (static_cast<int>(window.deltas.size()) != window.size() - 1)
    throw std::invalid_argument("solveWindow: expected one delta per consecutive keyframe pair");

  const SlidingWindow backup = window;
  double cost = evaluate(window, cfg, nullptr).total();
  report.initial_cost = report.final_cost = cost;
  if (!std::isfinite(cost)) {
    report.diverged = true;
    return report;
  }

  double lambda = cfg.lambda_init;
  while (report.iterations < cfg.max_iterations) {
    if (cost < cfg.absolute_cost_floor) {
      report.converged = true;
      break;
    }
    System sys;
    evaluate(window, cfg, &sys);
    fixGauge(sys);

    bool accepted = false;
    while (lambda < 1e12) {
      const auto step = solveDamped(sys, lambda, cfg.use_schur);
      if (!step) {
        lambda *= cfg.lambda_scale;
        continue;
      }
      if (lambda <= cfg.lambda_init && modelDecrease(sys, *step) < cfg.cost_tolerance * cost) {
        report.converged = true;
        break;
      }
      SlidingWindow candidate = window;
      applyStep(candidate, sys, *step);
      const double next = evaluate(candidate, cfg, nullptr).total();
      if (!std::isfinite(next)) {
        window = backup;
        report.diverged = true;
        report.final_cost = report.initial_cost;
        return report;
      }
      if (next < cost) {
        const double decrease = (cost - next) / cost;
        window = std::move(candidate);
        cost = next;
        lambda = std::max(lambda / cfg.lambda_scale, 1e-12);
        accepted = true;
        ++report.iterations;
        if (decrease < cfg.cost_tolerance) report.converged = true;
        break;
      }
      lambda *= cfg.lambda_scale;
    }
    if (report.converged) break;
    if (!accepted) {
      // no descent direction left at any damping: a stationary point
      report.converged = true;
      break;
    }
    if (report.converged) break;
  }
  report.final_cost = cost;
  return report;
}

int repropagateDeltas(SlidingWindow& window, double max_dba, double max_dbg) {
  int count = 0;
  for (size_t k = 0; k < window.deltas.size(); ++k) {
    auto& d = window.deltas[k];
    const FrameState& s = window.states[k];
    if ((s.ba - d.ba()).norm() > max_dba || (s.bg - d.bg()).norm() > max_dbg) {
      d.repropagate(s.ba, s.bg);
      ++count;
    }
  }
  return count;
}

void marginalizeOldest(SlidingWindow& w, const SolverConfig& cfg) {
  if (w.size() < 2) throw std::invalid_argument("marginalizeOldest: need at least two keyframes");

  // Variables: the oldest state, then every other state tied to it by a factor.
  std::vector<int> kept{1};
  for (int f : w.prior.frames) {
    const int k = w.indexOf(f);
    if (k > 1 && std::find(kept.begin(), kept.end(), k) == kept.end()) kept.push_back(k);
  }
  std::sort(kept.begin(), kept.end());
  std::vector<int> order{0};
  order.insert(order.end(), kept.begin(), kept.end());
  const int nv = static_cast<int>(order.size());
  auto local = [&](int k) { return static_cast<int>(std::find(order.begin(), order.end(), k) - order.begin()); };

  NormalSystem sys{Eigen::MatrixXd::Zero(kStateDim * nv, kStateDim * nv), Eigen::VectorXd::Zero(kStateDim * nv)};

  {
    const ImuJacobians J = imuResidualJacobians(w.states[0], w.states[1], w.deltas[0], w.gravity);
    const Matrix15d W = imuInformation(w.deltas[0]);
    Eigen::Matrix<double, 15, 30> Jc;
    Jc << J.d_state0, J.d_state1;
    const int b = kStateDim * local(1);
    const Eigen::Matrix<double, 30, 30> H = Jc.transpose() * W * Jc;
    const Eigen::Matrix<double, 30, 1> g = Jc.transpose() * W * J.residual;
    sys.H.block<15, 15>(0, 0) += H.block<15, 15>(0, 0);
    sys.H.block<15, 15>(0, b) += H.block<15, 15>(0, 15);
    sys.H.block<15, 15>(b, 0) += H.block<15, 15>(15, 0);
    sys.H.block<15, 15>(b, b) += H.block<15, 15>(15, 15);
    sys.g.segment<15>(0) += g.head<15>();
    sys.g.segment<15>(b) += g.tail<15>();
  }

  if (!w.prior.empty()) {
    // Reuse the window evaluation of the prior on a copy restricted to its frames.
    SlidingWindow sub;
    sub.prior = w.prior;
    for (int f : w.prior.frames) {
      sub.frame_ids.push_back(f);
      sub.states.push_back(w.states[w.indexOf(f)]);
    }
    System ps{Eigen::MatrixXd::Zero(kStateDim * sub.size(), kStateDim * sub.size()),
              Eigen::VectorXd::Zero(kStateDim * sub.size()), {}};
    priorCost(sub, &ps);
    for (int a = 0; a < sub.size(); ++a) {
      const int la = kStateDim * local(w.indexOf(sub.frame_ids[a]));
      sys.g.segment<15>(la) += ps.g.segment<15>(kStateDim * a);
      for (int c = 0; c < sub.size(); ++c) {
        const int lc = kStateDim * local(w.indexOf(sub.frame_ids[c]));
        sys.H.block<15, 15>(la, lc) += ps.H.block<15, 15>(kStateDim * a, kStateDim * c);
      }
    }
  }

  // Landmarks seen only by the oldest frame carry no information once the
  // landmark itself is eliminated (two residuals, three unknowns); their
  // observations in shared landmarks are dropped.
  const NormalSystem reduced = schurEliminate(sys, kStateDim, cfg.prior_eigen_floor);
  MarginalizationPrior prior;
  prior.factor = sqrtPrior(reduced, cfg.prior_eigen_floor);
  for (int k : kept) {
    prior.frames.push_back(w.frame_ids[k]);
    prior.linearization.push_back(w.states[k]);
  }

  const int gone = w.frame_ids.front();
  w.frame_ids.erase(w.frame_ids.begin());
  w.states.erase(w.states.begin());
  w.deltas.erase(w.deltas.begin());
  w.prior = std::move(prior);
  for (auto it = w.landmarks.begin(); it != w.landmarks.end();) {
    auto& obs = it->second.observations;
    obs.erase(std::remove_if(obs.begin(), obs.end(), [&](const LandmarkObservation& o) { return o.frame == gone; }),
              obs.end());
    if (obs.empty()) {
      it = w.landmarks.erase(it);
      continue;
    }
    if (obs.size() < 2) it->second.status = LandmarkStatus::kPending;
    ++it;
  }
}

int rejectOutliers(SlidingWindow& window, double threshold) {
  int removed = 0;
  for (auto& [id, lm] : window.landmarks) {
    if (lm.status != LandmarkStatus::kTriangulated) continue;
    auto& obs = lm.observations;
    const size_t before = obs.size();
    obs.erase(std::remove_if(obs.begin(), obs.end(),
                             [&](const LandmarkObservation& o) {
                               const int k = window.indexOf(o.frame);
                               if (k < 0) return true;
                               const auto r = reprojectionResidual(window.states[k], lm.position, o.pixel, window.camera);
                               return !r.valid || r.residual.norm() > threshold;
                             }),
              obs.end());
    removed += static_cast<int>(before - obs.size());
    if (obs.size() < 2) lm.status = LandmarkStatus::kPending;
  }
  return removed;
}

bool selectKeyframe(double mean_parallax, int tracked, int budget, const SolverConfig& cfg) {
  return mean_parallax > cfg.keyframe_parallax || tracked < cfg.keyframe_track_ratio * budget;
}

}  // namespace tio
