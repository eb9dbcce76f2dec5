#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

// Small SO(3) toolbox shared by preintegration, estimation and simulation.
// Quaternions are Hamilton, body-to-world, stored scalar-first when
// serialized (Eigen keeps xyzw internally; use coeffs() with care).

namespace tio {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Quat = Eigen::Quaternion<Scalar>;

using Vector3d = Eigen::Vector3d;
using Matrix3d = Eigen::Matrix3d;
using Quaterniond = Eigen::Quaterniond;

template <typename Derived>
Mat3<typename Derived::Scalar> skew(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  Mat3<S> m;
  m << S(0), -v(2), v(1),
       v(2), S(0), -v(0),
       -v(1), v(0), S(0);
  return m;
}

/// Rotation vector -> unit quaternion (exact exponential map).
template <typename Derived>
Quat<typename Derived::Scalar> expQuat(const Eigen::MatrixBase<Derived>& phi) {
  using S = typename Derived::Scalar;
  const S theta = phi.norm();
  if (theta < S(1e-8)) {
    // second-order Taylor keeps the map smooth through zero
    Quat<S> q(S(1) - theta * theta / S(8), phi(0) / S(2), phi(1) / S(2), phi(2) / S(2));
    q.normalize();
    return q;
  }
  const S half = theta / S(2);
  const Vec3<S> axis = phi / theta;
  const S s = std::sin(half);
  return Quat<S>(std::cos(half), axis(0) * s, axis(1) * s, axis(2) * s);
}

/// Unit quaternion -> rotation vector in (-pi, pi].
template <typename S>
Vec3<S> logQuat(const Quat<S>& q_in) {
  Quat<S> q = q_in.normalized();
  if (q.w() < S(0)) q.coeffs() *= S(-1);
  const Vec3<S> v = q.vec();
  const S n = v.norm();
  if (n < S(1e-10)) return S(2) * v / q.w();
  return S(2) * std::atan2(n, q.w()) * v / n;
}

template <typename Derived>
Mat3<typename Derived::Scalar> expSO3(const Eigen::MatrixBase<Derived>& phi) {
  return expQuat(phi).toRotationMatrix();
}

/// Right Jacobian of SO(3): Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d).
template <typename Derived>
Mat3<typename Derived::Scalar> rightJacobian(const Eigen::MatrixBase<Derived>& phi) {
  using S = typename Derived::Scalar;
  const S theta = phi.norm();
  const Mat3<S> K = skew(phi);
  if (theta < S(1e-6)) return Mat3<S>::Identity() - S(0.5) * K + K * K / S(6);
  const S t2 = theta * theta;
  return Mat3<S>::Identity() - (S(1) - std::cos(theta)) / t2 * K +
         (theta - std::sin(theta)) / (t2 * theta) * K * K;
}

/// Inverse right Jacobian of SO(3).
template <typename Derived>
Mat3<typename Derived::Scalar> rightJacobianInverse(const Eigen::MatrixBase<Derived>& phi) {
  using S = typename Derived::Scalar;
  const S theta = phi.norm();
  const Mat3<S> K = skew(phi);
  if (theta < S(1e-6)) return Mat3<S>::Identity() + S(0.5) * K + K * K / S(12);
  const S t2 = theta * theta;
  return Mat3<S>::Identity() + S(0.5) * K +
         (S(1) / t2 - (S(1) + std::cos(theta)) / (S(2) * theta * std::sin(theta))) * K * K;
}

/// Small-angle quaternion used for first-order bias correction: [1, v/2] normalized.
template <typename Derived>
Quat<typename Derived::Scalar> smallAngleQuat(const Eigen::MatrixBase<Derived>& theta) {
  using S = typename Derived::Scalar;
  Quat<S> q(S(1), theta(0) / S(2), theta(1) / S(2), theta(2) / S(2));
  q.normalize();
  return q;
}

/// Angle of the relative rotation between two quaternions.
template <typename S>
S angularDistance(const Quat<S>& a, const Quat<S>& b) {
  return logQuat<S>(a.conjugate() * b).norm();
}

template <typename S>
S yawOf(const Mat3<S>& R) {
  return std::atan2(R(1, 0), R(0, 0));
}

}  // namespace tio
