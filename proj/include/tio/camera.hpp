#pragma once

#include <optional>
#include <stdexcept>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace tio {

struct PinholeIntrinsics {
  double fx = 400.0;
  double fy = 400.0;
  double cx = 0.0;
  double cy = 0.0;

  Eigen::Matrix3d K() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }
};

/// Intrinsics plus the camera-to-body transform T_b^c (p_b = R_bc p_c + t_bc).
struct CameraModel {
  PinholeIntrinsics intrinsics;
  Eigen::Matrix3d R_bc = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t_bc = Eigen::Vector3d::Zero();
  int width = 0;
  int height = 0;

  /// Throws std::invalid_argument when fx/fy are not positive or R_bc is not a rotation.
  void validate() const;
};

/// Pinhole projection of a camera-frame point; nullopt when z <= 0.
template <typename Derived>
std::optional<Eigen::Matrix<typename Derived::Scalar, 2, 1>> project(const PinholeIntrinsics& k,
                                                                    const Eigen::MatrixBase<Derived>& p_c) {
  using S = typename Derived::Scalar;
  if (!(p_c(2) > S(0))) return std::nullopt;
  return Eigen::Matrix<S, 2, 1>(S(k.fx) * p_c(0) / p_c(2) + S(k.cx), S(k.fy) * p_c(1) / p_c(2) + S(k.cy));
}

/// Unit-depth ray (x, y, 1) through a pixel.
inline Eigen::Vector3d backProject(const PinholeIntrinsics& k, const Eigen::Vector2d& px) {
  return {(px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy, 1.0};
}

/// World point into the camera frame of a body pose (R_wb, p_wb).
template <typename S>
Eigen::Matrix<S, 3, 1> worldToCamera(const CameraModel& cam, const Eigen::Matrix<S, 3, 3>& R_wb,
                                     const Eigen::Matrix<S, 3, 1>& p_wb, const Eigen::Matrix<S, 3, 1>& l_w) {
  const Eigen::Matrix<S, 3, 1> p_b = R_wb.transpose() * (l_w - p_wb);
  return cam.R_bc.cast<S>().transpose() * (p_b - cam.t_bc.cast<S>());
}

}  // namespace tio
