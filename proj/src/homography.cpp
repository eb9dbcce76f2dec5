#include "tio/homography.hpp"

#include <algorithm>
#include <cmath>

namespace tio {

std::optional<Eigen::Vector2d> applyHomography(const Eigen::Matrix3d& H, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = H * p.homogeneous();
  if (q.z() <= 1e-12) return std::nullopt;
  return q.hnormalized();
}

Eigen::Matrix3d centeredScale(int width, int height, double s) {
  const double cx = 0.5 * (width - 1);
  const double cy = 0.5 * (height - 1);
  Eigen::Matrix3d H;
  H << s, 0.0, cx * (1.0 - s),
       0.0, s, cy * (1.0 - s),
       0.0, 0.0, 1.0;
  return H;
}

Eigen::Matrix3d sampleHomography(int width, int height, const HomographyMagnitudes& mag, std::mt19937_64& rng) {
  const double cx = 0.5 * (width - 1);
  const double cy = 0.5 * (height - 1);
  const double hw = 0.5 * width;
  const double hh = 0.5 * height;
  auto uniform = [&rng](double m) { return m > 0.0 ? std::uniform_real_distribution<double>(-m, m)(rng) : 0.0; };
  for (;;) {
    const double angle = uniform(mag.rotation);
    const double s = 1.0 + uniform(mag.scale);
    const double px = uniform(mag.perspective);
    const double py = uniform(mag.perspective);
    const double tx = uniform(mag.translation) * width;
    const double ty = uniform(mag.translation) * height;

    // Work in coordinates centered on the image and scaled by the half size,
    // so the perspective magnitudes are resolution independent.
    Eigen::Matrix3d to_norm;
    to_norm << 1.0 / hw, 0.0, -cx / hw, 0.0, 1.0 / hh, -cy / hh, 0.0, 0.0, 1.0;
    Eigen::Matrix3d from_norm = to_norm.inverse();
    Eigen::Matrix3d P = Eigen::Matrix3d::Identity();
    P(2, 0) = px;
    P(2, 1) = py;
    Eigen::Matrix3d SR = Eigen::Matrix3d::Identity();
    const double c = std::cos(angle), sn = std::sin(angle);
    SR(0, 0) = s * c;
    SR(0, 1) = -s * sn * hh / hw;
    SR(1, 0) = s * sn * hw / hh;
    SR(1, 1) = s * c;
    Eigen::Matrix3d T = Eigen::Matrix3d::Identity();
    T(0, 2) = tx;
    T(1, 2) = ty;
    Eigen::Matrix3d H = T * from_norm * P * SR * to_norm;
    H /= H(2, 2);
    if (std::abs(H.determinant()) >= 1e-6) return H;
  }
}

RadiometricImage warpImage(const RadiometricImage& src, const Eigen::Matrix3d& H) {
  const Eigen::Matrix3d Hinv = H.inverse();
  const int w = src.width();
  const int h = src.height();
  ImageArray out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector3d q = Hinv * Eigen::Vector3d(x, y, 1.0);
      double sx = q.z() > 1e-12 ? q.x() / q.z() : -1.0;
      double sy = q.z() > 1e-12 ? q.y() / q.z() : -1.0;
      sx = std::clamp(sx, 0.0, w - 1.0);
      sy = std::clamp(sy, 0.0, h - 1.0);
      out(y, x) = bilinearUnchecked(src.data(), sx, sy);
    }
  }
  return RadiometricImage(std::move(out), src.timestamp());
}

Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> warpValidMask(int width, int height,
                                                                                  const Eigen::Matrix3d& H) {
  const Eigen::Matrix3d Hinv = H.inverse();
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mask(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto p = applyHomography(Hinv, Eigen::Vector2d(x, y));
      mask(y, x) = p.has_value() && insideImage(width, height, p->x(), p->y());
    }
  }
  return mask;
}

}  // namespace tio
