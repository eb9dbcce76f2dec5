#include "tio/camera.hpp"

#include <cmath>

namespace tio {

void CameraModel::validate() const {
  if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0))
    throw std::invalid_argument("camera: focal lengths must be positive");
  const double orth = (R_bc.transpose() * R_bc - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (orth > 1e-9 || std::abs(R_bc.determinant() - 1.0) > 1e-9)
    throw std::invalid_argument("camera: extrinsic rotation is not orthonormal with det 1");
}

}  // namespace tio
