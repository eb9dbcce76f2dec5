#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tio/geometry.hpp"

namespace tio {

struct ImuSample {
  double t = 0.0;
  Eigen::Vector3d gyro = Eigen::Vector3d::Zero();   // rad/s, body frame
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();  // specific force, m/s^2
};

struct ImuNoiseParams {
  double gyro_noise = 1.7e-4;     // rad/s/sqrt(Hz)
  double accel_noise = 2.0e-3;    // m/s^2/sqrt(Hz)
  double gyro_bias_rw = 1.9e-5;   // rad/s^2/sqrt(Hz)
  double accel_bias_rw = 3.0e-3;  // m/s^3/sqrt(Hz)
  double gravity = 9.81;

  void validate() const;
};

struct FrameState {
  double t = 0.0;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();  // body to world
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d ba = Eigen::Vector3d::Zero();
  Eigen::Vector3d bg = Eigen::Vector3d::Zero();
};

enum class IntegrationScheme { kMidpoint, kEuler };

using Matrix15d = Eigen::Matrix<double, 15, 15>;
using Vector15d = Eigen::Matrix<double, 15, 1>;

// Error-state layout shared by covariance, Jacobians and residuals.
inline constexpr int kAlpha = 0;
inline constexpr int kBeta = 3;
inline constexpr int kTheta = 6;
inline constexpr int kBa = 9;
inline constexpr int kBg = 12;

struct CorrectedDelta {
  Eigen::Vector3d alpha;
  Eigen::Vector3d beta;
  Eigen::Quaterniond gamma;
};

/// Body-frame motion summary between two instants, gravity excluded.
class PreintegratedDelta {
 public:
  PreintegratedDelta() = default;
  PreintegratedDelta(const Eigen::Vector3d& ba, const Eigen::Vector3d& bg, const ImuNoiseParams& noise,
                     IntegrationScheme scheme = IntegrationScheme::kMidpoint);

  /// Advances by one sample interval. Throws std::invalid_argument when b.t <= a.t.
  void integrate(const ImuSample& a, const ImuSample& b);

  /// First-order bias correction through the stored Jacobians.
  CorrectedDelta corrected(const Eigen::Vector3d& ba, const Eigen::Vector3d& bg) const;

  /// Re-integrates the stored samples about new linearization biases.
  void repropagate(const Eigen::Vector3d& ba, const Eigen::Vector3d& bg);

  /// Appends another delta that starts where this one ends (same biases and noise).
  void append(const PreintegratedDelta& next);

  const Eigen::Vector3d& alpha() const { return alpha_; }
  const Eigen::Vector3d& beta() const { return beta_; }
  const Eigen::Quaterniond& gamma() const { return gamma_; }
  double dt() const { return dt_; }
  const Eigen::Vector3d& ba() const { return ba_; }
  const Eigen::Vector3d& bg() const { return bg_; }
  const Matrix15d& covariance() const { return cov_; }
  const Matrix15d& jacobian() const { return jac_; }
  Eigen::Matrix3d dAlphaDba() const { return jac_.block<3, 3>(kAlpha, kBa); }
  Eigen::Matrix3d dAlphaDbg() const { return jac_.block<3, 3>(kAlpha, kBg); }
  Eigen::Matrix3d dBetaDba() const { return jac_.block<3, 3>(kBeta, kBa); }
  Eigen::Matrix3d dBetaDbg() const { return jac_.block<3, 3>(kBeta, kBg); }
  Eigen::Matrix3d dGammaDbg() const { return jac_.block<3, 3>(kTheta, kBg); }
  const std::vector<std::pair<ImuSample, ImuSample>>& intervals() const { return intervals_; }
  const ImuNoiseParams& noise() const { return noise_; }

 private:
  void step(const ImuSample& a, const ImuSample& b);

  Eigen::Vector3d alpha_ = Eigen::Vector3d::Zero();
  Eigen::Vector3d beta_ = Eigen::Vector3d::Zero();
  Eigen::Quaterniond gamma_ = Eigen::Quaterniond::Identity();
  double dt_ = 0.0;
  Eigen::Vector3d ba_ = Eigen::Vector3d::Zero();
  Eigen::Vector3d bg_ = Eigen::Vector3d::Zero();
  Matrix15d cov_ = Matrix15d::Zero();
  Matrix15d jac_ = Matrix15d::Identity();
  ImuNoiseParams noise_;
  IntegrationScheme scheme_ = IntegrationScheme::kMidpoint;
  std::vector<std::pair<ImuSample, ImuSample>> intervals_;
};

/// Linear interpolation of a sample pair at time t.
ImuSample interpolate(const ImuSample& a, const ImuSample& b, double t);

/// Samples covering [t0, t1] with endpoints interpolated exactly at t0 and t1.
/// Throws std::invalid_argument when the stream does not cover the interval.
std::vector<ImuSample> samplesBetween(const std::vector<ImuSample>& stream, double t0, double t1);

PreintegratedDelta preintegrate(const std::vector<ImuSample>& stream, double t0, double t1, const Eigen::Vector3d& ba,
                                const Eigen::Vector3d& bg, const ImuNoiseParams& noise,
                                IntegrationScheme scheme = IntegrationScheme::kMidpoint);

/// Information matrix: inverse of the covariance with eigenvalues floored at min_eigenvalue.
Matrix15d weightMatrix(const Matrix15d& covariance, double min_eigenvalue = 1e-12);

/// The 15-vector (position, velocity, rotation, accel bias, gyro bias) for a
/// delta already corrected to state_k's biases; g_w is world gravity, e.g. (0,0,-9.81).
template <typename T>
Eigen::Matrix<T, 15, 1> imuResidual(const Vec3<T>& p0, const Quat<T>& q0, const Vec3<T>& v0, const Vec3<T>& ba0,
                                    const Vec3<T>& bg0, const Vec3<T>& p1, const Quat<T>& q1, const Vec3<T>& v1,
                                    const Vec3<T>& ba1, const Vec3<T>& bg1, const Vec3<T>& alpha, const Vec3<T>& beta,
                                    const Quat<T>& gamma, double dt, const Eigen::Vector3d& g_w) {
  const Vec3<T> g = g_w.cast<T>();
  const Mat3<T> Rt = q0.toRotationMatrix().transpose();
  Eigen::Matrix<T, 15, 1> r;
  r.template segment<3>(kAlpha) = Rt * (p1 - p0 - v0 * T(dt) - T(0.5 * dt * dt) * g) - alpha;
  r.template segment<3>(kBeta) = Rt * (v1 - v0 - g * T(dt)) - beta;
  r.template segment<3>(kTheta) = T(2) * (q0.conjugate() * q1 * gamma.conjugate()).vec();
  r.template segment<3>(kBa) = ba1 - ba0;
  r.template segment<3>(kBg) = bg1 - bg0;
  return r;
}

/// Residual of two frame states against a delta, applying the first-order bias
/// correction at state_k's biases. Throws std::invalid_argument on non-unit quaternions.
Vector15d imuResidual(const FrameState& s0, const FrameState& s1, const PreintegratedDelta& delta,
                      const Eigen::Vector3d& g_w);

struct ImuJacobians {
  Vector15d residual;
  Eigen::Matrix<double, 15, 15> d_state0;  // w.r.t. (dp, dtheta, dv, dba, dbg) of state k
  Eigen::Matrix<double, 15, 15> d_state1;
};

/// Residual plus Jacobians w.r.t. the local perturbations p += dp,
/// q = Exp(dtheta) q (world frame), v += dv, ba += dba, bg += dbg.
ImuJacobians imuResidualJacobians(const FrameState& s0, const FrameState& s1, const PreintegratedDelta& delta,
                                  const Eigen::Vector3d& g_w);

struct InitResult {
  FrameState state;
  Eigen::Vector3d gravity_w;
};

class NotStationaryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Static alignment from the first `window` seconds: gyro bias from the mean
/// rate, roll/pitch from the mean specific force, yaw 0, p = v = 0.
InitResult initializeFromStatic(const std::vector<ImuSample>& samples, double gravity, double window = 0.5,
                                double max_accel_std = 0.1, double max_gyro_std = 0.05);

/// Forward kinematics of a noise-free state under a delta: the state that zeroes imuResidual.
FrameState propagateState(const FrameState& s0, const PreintegratedDelta& delta, const Eigen::Vector3d& g_w);

}  // namespace tio
