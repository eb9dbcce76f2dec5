#include "tio/imu.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/AutoDiff>

namespace tio {

void ImuNoiseParams::validate() const {
  if (gyro_noise < 0 || accel_noise < 0 || gyro_bias_rw < 0 || accel_bias_rw < 0 || !(gravity >= 0))
    throw std::invalid_argument("imu noise: parameters must be non-negative");
}

PreintegratedDelta::PreintegratedDelta(const Eigen::Vector3d& ba, const Eigen::Vector3d& bg, const ImuNoiseParams& noise,
                                       IntegrationScheme scheme)
    : ba_(ba), bg_(bg), noise_(noise), scheme_(scheme) {}

void PreintegratedDelta::integrate(const ImuSample& a, const ImuSample& b) {
  if (!(b.t > a.t)) throw std::invalid_argument("integrate: second timestamp must be after the first");
  step(a, b);
  intervals_.emplace_back(a, b);
}

void PreintegratedDelta::step(const ImuSample& a, const ImuSample& b) {
  const double dt = b.t - a.t;
  const double c0 = scheme_ == IntegrationScheme::kMidpoint ? 0.5 : 1.0;
  const double c1 = 1.0 - c0;

  const Eigen::Vector3d w = c0 * a.gyro + c1 * b.gyro - bg_;
  const Eigen::Vector3d phi = w * dt;
  const Eigen::Matrix3d E = expSO3(phi);
  const Eigen::Matrix3d Jr = rightJacobian(phi);
  const Eigen::Matrix3d R0 = gamma_.toRotationMatrix();
  const Eigen::Matrix3d R1 = R0 * E;
  const Eigen::Vector3d f0 = a.accel - ba_;
  const Eigen::Vector3d f1 = b.accel - ba_;
  const Eigen::Vector3d acc = c0 * R0 * f0 + c1 * R1 * f1;

  // linearized transition of the error state
  const Eigen::Matrix3d R1f1 = R1 * skew(f1);
  const Eigen::Matrix3d dacc_dtheta = -c0 * R0 * skew(f0) - c1 * R1f1 * E.transpose();
  const Eigen::Matrix3d dacc_dba = -c0 * R0 - c1 * R1;
  const Eigen::Matrix3d dacc_dbg = c1 * R1f1 * Jr * dt;
  Matrix15d F = Matrix15d::Identity();
  F.block<3, 3>(kAlpha, kBeta) = Eigen::Matrix3d::Identity() * dt;
  F.block<3, 3>(kAlpha, kTheta) = 0.5 * dt * dt * dacc_dtheta;
  F.block<3, 3>(kAlpha, kBa) = 0.5 * dt * dt * dacc_dba;
  F.block<3, 3>(kAlpha, kBg) = 0.5 * dt * dt * dacc_dbg;
  F.block<3, 3>(kBeta, kTheta) = dt * dacc_dtheta;
  F.block<3, 3>(kBeta, kBa) = dt * dacc_dba;
  F.block<3, 3>(kBeta, kBg) = dt * dacc_dbg;
  F.block<3, 3>(kTheta, kTheta) = E.transpose();
  F.block<3, 3>(kTheta, kBg) = -Jr * dt;

  // noise: (n_a0, n_w0, n_a1, n_w1, n_ba, n_bg)
  Eigen::Matrix<double, 15, 18> G = Eigen::Matrix<double, 15, 18>::Zero();
  const Eigen::Matrix3d dtheta_dnw = -Jr * dt;
  const Eigen::Matrix3d dacc_dna0 = c0 * R0;
  const Eigen::Matrix3d dacc_dna1 = c1 * R1;
  const Eigen::Matrix3d dacc_dnw = -c1 * R1f1 * dtheta_dnw;
  const double cw[2] = {c0, c1};
  for (int e = 0; e < 2; ++e) {
    const Eigen::Matrix3d da = e == 0 ? dacc_dna0 : dacc_dna1;
    const int ca = 6 * e;
    const int cwc = 6 * e + 3;
    G.block<3, 3>(kAlpha, ca) = 0.5 * dt * dt * da;
    G.block<3, 3>(kBeta, ca) = dt * da;
    G.block<3, 3>(kAlpha, cwc) = 0.5 * dt * dt * cw[e] * dacc_dnw;
    G.block<3, 3>(kBeta, cwc) = dt * cw[e] * dacc_dnw;
    G.block<3, 3>(kTheta, cwc) = cw[e] * dtheta_dnw;
  }
  G.block<3, 3>(kBa, 12).setIdentity();
  G.block<3, 3>(kBg, 15).setIdentity();
  Eigen::Matrix<double, 18, 1> q;
  q << Eigen::Vector3d::Constant(noise_.accel_noise * noise_.accel_noise / dt),
      Eigen::Vector3d::Constant(noise_.gyro_noise * noise_.gyro_noise / dt),
      Eigen::Vector3d::Constant(noise_.accel_noise * noise_.accel_noise / dt),
      Eigen::Vector3d::Constant(noise_.gyro_noise * noise_.gyro_noise / dt),
      Eigen::Vector3d::Constant(noise_.accel_bias_rw * noise_.accel_bias_rw * dt),
      Eigen::Vector3d::Constant(noise_.gyro_bias_rw * noise_.gyro_bias_rw * dt);

  cov_ = F * cov_ * F.transpose() + G * q.asDiagonal() * G.transpose();
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
  jac_ = F * jac_;

  alpha_ += beta_ * dt + 0.5 * acc * dt * dt;
  beta_ += acc * dt;
  gamma_ = (gamma_ * expQuat(phi)).normalized();
  dt_ += dt;
}

CorrectedDelta PreintegratedDelta::corrected(const Eigen::Vector3d& ba, const Eigen::Vector3d& bg) const {
  const Eigen::Vector3d dba = ba - ba_;
  const Eigen::Vector3d dbg = bg - bg_;
  return {alpha_ + dAlphaDba() * dba + dAlphaDbg() * dbg, beta_ + dBetaDba() * dba + dBetaDbg() * dbg,
          (gamma_ * smallAngleQuat(Eigen::Vector3d(dGammaDbg() * dbg))).normalized()};
}

void PreintegratedDelta::repropagate(const Eigen::Vector3d& ba, const Eigen::Vector3d& bg) {
  ba_ = ba;
  bg_ = bg;
  alpha_.setZero();
  beta_.setZero();
  gamma_.setIdentity();
  dt_ = 0.0;
  cov_.setZero();
  jac_.setIdentity();
  for (const auto& [a, b] : intervals_) step(a, b);
}

void PreintegratedDelta::append(const PreintegratedDelta& next) {
  for (const auto& [a, b] : next.intervals_) integrate(a, b);
}

ImuSample interpolate(const ImuSample& a, const ImuSample& b, double t) {
  const double s = (t - a.t) / (b.t - a.t);
  return {t, a.gyro + s * (b.gyro - a.gyro), a.accel + s * (b.accel - a.accel)};
}

std::vector<ImuSample> samplesBetween(const std::vector<ImuSample>& stream, double t0, double t1) {
  if (!(t1 > t0)) throw std::invalid_argument("samplesBetween: empty interval");
  if (stream.size() < 2 || stream.front().t > t0 + 1e-12 || stream.back().t < t1 - 1e-12)
    throw std::invalid_argument("samplesBetween: IMU stream does not cover the interval");
  auto after = [&](double t) {
    return std::upper_bound(stream.begin(), stream.end(), t, [](double v, const ImuSample& s) { return v < s.t; });
  };
  auto sampleAt = [&](double t) {
    auto it = after(t);
    if (it == stream.begin()) return stream.front();
    if (it == stream.end()) return stream.back();
    const ImuSample& lo = *(it - 1);
    if (std::abs(lo.t - t) < 1e-12) return lo;
    return interpolate(lo, *it, t);
  };
  std::vector<ImuSample> out{sampleAt(t0)};
  out.front().t = t0;
  for (auto it = after(t0); it != stream.end() && it->t < t1 - 1e-12; ++it)
    if (it->t > out.back().t + 1e-12) out.push_back(*it);
  ImuSample end = sampleAt(t1);
  end.t = t1;
  out.push_back(end);
  return out;
}

PreintegratedDelta preintegrate(const std::vector<ImuSample>& stream, double t0, double t1, const Eigen::Vector3d& ba,
                                const Eigen::Vector3d& bg, const ImuNoiseParams& noise, IntegrationScheme scheme) {
  PreintegratedDelta d(ba, bg, noise, scheme);
  const auto s = samplesBetween(stream, t0, t1);
  for (std::size_t i = 0; i + 1 < s.size(); ++i) d.integrate(s[i], s[i + 1]);
  return d;
}

Matrix15d weightMatrix(const Matrix15d& covariance, double min_eigenvalue) {
  const Eigen::SelfAdjointEigenSolver<Matrix15d> eig(0.5 * (covariance + covariance.transpose()));
  const Vector15d inv = eig.eigenvalues().cwiseMax(min_eigenvalue).cwiseInverse();
  Matrix15d W = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (W + W.transpose());
}

namespace {

void requireUnit(const Eigen::Quaterniond& q) {
  if (std::abs(q.norm() - 1.0) > 1e-6) throw std::invalid_argument("imu residual: orientation is not a unit quaternion");
}

using Ad = Eigen::AutoDiffScalar<Eigen::Matrix<double, 30, 1>>;

Vec3<Ad> adVector(const Eigen::Vector3d& value, int offset) {
  Vec3<Ad> v;
  for (int i = 0; i < 3; ++i) v(i) = Ad(value(i), 30, offset + i);
  return v;
}

// q = Exp(dtheta) q0 to first order, with dtheta the AD variables
Quat<Ad> adRotation(const Eigen::Quaterniond& q0, int offset) {
  const Vec3<Ad> d = adVector(Eigen::Vector3d::Zero(), offset);
  return smallAngleQuat(d) * q0.cast<Ad>();
}

}  // namespace

Vector15d imuResidual(const FrameState& s0, const FrameState& s1, const PreintegratedDelta& delta,
                      const Eigen::Vector3d& g_w) {
  requireUnit(s0.q);
  requireUnit(s1.q);
  const CorrectedDelta c = delta.corrected(s0.ba, s0.bg);
  return imuResidual<double>(s0.p, s0.q, s0.v, s0.ba, s0.bg, s1.p, s1.q, s1.v, s1.ba, s1.bg, c.alpha, c.beta, c.gamma,
                             delta.dt(), g_w);
}

ImuJacobians imuResidualJacobians(const FrameState& s0, const FrameState& s1, const PreintegratedDelta& delta,
                                  const Eigen::Vector3d& g_w) {
  requireUnit(s0.q);
  requireUnit(s1.q);
  const Vec3<Ad> p0 = adVector(s0.p, 0);
  const Quat<Ad> q0 = adRotation(s0.q, 3);
  const Vec3<Ad> v0 = adVector(s0.v, 6);
  const Vec3<Ad> ba0 = adVector(s0.ba, 9);
  const Vec3<Ad> bg0 = adVector(s0.bg, 12);
  const Vec3<Ad> p1 = adVector(s1.p, 15);
  const Quat<Ad> q1 = adRotation(s1.q, 18);
  const Vec3<Ad> v1 = adVector(s1.v, 21);
  const Vec3<Ad> ba1 = adVector(s1.ba, 24);
  const Vec3<Ad> bg1 = adVector(s1.bg, 27);

  const Vec3<Ad> dba = ba0 - delta.ba().cast<Ad>();
  const Vec3<Ad> dbg = bg0 - delta.bg().cast<Ad>();
  const Vec3<Ad> alpha = delta.alpha().cast<Ad>() + delta.dAlphaDba().cast<Ad>() * dba + delta.dAlphaDbg().cast<Ad>() * dbg;
  const Vec3<Ad> beta = delta.beta().cast<Ad>() + delta.dBetaDba().cast<Ad>() * dba + delta.dBetaDbg().cast<Ad>() * dbg;
  const Vec3<Ad> dtheta = delta.dGammaDbg().cast<Ad>() * dbg;
  const Quat<Ad> gamma = (delta.gamma().cast<Ad>() * smallAngleQuat(dtheta)).normalized();

  const auto r = imuResidual<Ad>(p0, q0, v0, ba0, bg0, p1, q1, v1, ba1, bg1, alpha, beta, gamma, delta.dt(), g_w);
  ImuJacobians out;
  for (int i = 0; i < 15; ++i) {
    out.residual(i) = r(i).value();
    out.d_state0.row(i) = r(i).derivatives().head<15>().transpose();
    out.d_state1.row(i) = r(i).derivatives().tail<15>().transpose();
  }
  return out;
}

InitResult initializeFromStatic(const std::vector<ImuSample>& samples, double gravity, double window,
                                double max_accel_std, double max_gyro_std) {
  if (samples.empty()) throw std::invalid_argument("initialize: no IMU samples");
  const double t_end = samples.front().t + window;
  Eigen::Vector3d sum_a = Eigen::Vector3d::Zero(), sum_g = Eigen::Vector3d::Zero();
  int n = 0;
  for (const auto& s : samples) {
    if (s.t > t_end + 1e-12) break;
    sum_a += s.accel;
    sum_g += s.gyro;
    ++n;
  }
  if (n < 2) throw std::invalid_argument("initialize: fewer than two samples in the window");
  const Eigen::Vector3d mean_a = sum_a / n, mean_g = sum_g / n;
  double var_a = 0.0, var_g = 0.0;
  for (int i = 0; i < n; ++i) {
    var_a += (samples[static_cast<std::size_t>(i)].accel - mean_a).squaredNorm();
    var_g += (samples[static_cast<std::size_t>(i)].gyro - mean_g).squaredNorm();
  }
  var_a /= n;
  var_g /= n;
  if (std::sqrt(var_a) > max_accel_std || std::sqrt(var_g) > max_gyro_std)
    throw NotStationaryError("initialize: device not stationary during the initialization window");

  const double roll = std::atan2(mean_a.y(), mean_a.z());
  const double pitch = std::atan2(-mean_a.x(), std::hypot(mean_a.y(), mean_a.z()));
  InitResult out;
  out.state.t = samples.front().t;
  out.state.q = Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) * Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX());
  out.state.bg = mean_g;
  out.gravity_w = Eigen::Vector3d(0.0, 0.0, -gravity);
  return out;
}

FrameState propagateState(const FrameState& s0, const PreintegratedDelta& delta, const Eigen::Vector3d& g_w) {
  const CorrectedDelta c = delta.corrected(s0.ba, s0.bg);
  const double dt = delta.dt();
  const Eigen::Matrix3d R0 = s0.q.toRotationMatrix();
  FrameState s1 = s0;
  s1.t = s0.t + dt;
  s1.p = s0.p + s0.v * dt + 0.5 * g_w * dt * dt + R0 * c.alpha;
  s1.v = s0.v + g_w * dt + R0 * c.beta;
  s1.q = (s0.q * c.gamma).normalized();
  return s1;
}

}  // namespace tio
