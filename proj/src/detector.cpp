#include "tio/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tio/homography.hpp"

namespace tio {

namespace {

constexpr double kNormEpsilon = 1e-12;

struct Interp {
  int i0, i1;
  double a;
};

// Fine pixel -> coarse coordinate with pixel-center alignment.
Interp coarseCoordinate(int fine, int coarse_size) {
  double v = (fine + 0.5) / kCell - 0.5;
  v = std::clamp(v, 0.0, static_cast<double>(coarse_size - 1));
  Interp r;
  r.i0 = static_cast<int>(std::floor(v));
  r.i1 = std::min(r.i0 + 1, coarse_size - 1);
  r.a = v - r.i0;
  return r;
}

}  // namespace

Tensor normalizeInput(const RadiometricImage& image) {
  Tensor t(1, image.height(), image.width());
  t.data = Eigen::Map<const Eigen::RowVectorXd>(image.data().data(), image.data().size()) / kMaxCount;
  return t;
}

ImageArray depthToSpace(const Tensor& cells) {
  if (cells.channels != kCell * kCell) throw std::invalid_argument("depthToSpace: expected 64 channels");
  ImageArray out(cells.height * kCell, cells.width * kCell);
  for (int i = 0; i < cells.height; ++i) {
    for (int j = 0; j < cells.width; ++j) {
      for (int c = 0; c < kCell * kCell; ++c) {
        out(i * kCell + c / kCell, j * kCell + c % kCell) = cells.data(c, i * cells.width + j);
      }
    }
  }
  return out;
}

Tensor spaceToDepth(const ImageArray& pixels) {
  if (pixels.rows() % kCell != 0 || pixels.cols() % kCell != 0) {
    throw std::invalid_argument("spaceToDepth: size not divisible by 8");
  }
  Tensor t(kCell * kCell, static_cast<int>(pixels.rows()) / kCell, static_cast<int>(pixels.cols()) / kCell);
  for (int i = 0; i < t.height; ++i) {
    for (int j = 0; j < t.width; ++j) {
      for (int c = 0; c < kCell * kCell; ++c) {
        t.data(c, i * t.width + j) = pixels(i * kCell + c / kCell, j * kCell + c % kCell);
      }
    }
  }
  return t;
}

ConfidenceHeatmap heatmapFromLogits(const Tensor& logits, CellActivation activation) {
  Tensor probs = logits;
  if (activation == CellActivation::kSigmoid) {
    probs.data = (1.0 / (1.0 + (-logits.data.array()).exp())).matrix();
  } else {
    for (int k = 0; k < probs.data.cols(); ++k) {
      const double m = logits.data.col(k).maxCoeff();
      Eigen::VectorXd e = (logits.data.col(k).array() - m).exp();
      probs.data.col(k) = e / e.sum();
    }
  }
  return ConfidenceHeatmap{depthToSpace(probs)};
}

DescriptorMap upsampleDescriptors(const Tensor& raw, int height, int width) {
  DescriptorMap m;
  m.height = height;
  m.width = width;
  m.data.resize(raw.channels, static_cast<Eigen::Index>(height) * width);
  for (int y = 0; y < height; ++y) {
    const Interp iy = coarseCoordinate(y, raw.height);
    for (int x = 0; x < width; ++x) {
      const Interp ix = coarseCoordinate(x, raw.width);
      Eigen::VectorXd v = (1 - iy.a) * ((1 - ix.a) * raw.data.col(iy.i0 * raw.width + ix.i0) +
                                        ix.a * raw.data.col(iy.i0 * raw.width + ix.i1)) +
                          iy.a * ((1 - ix.a) * raw.data.col(iy.i1 * raw.width + ix.i0) +
                                  ix.a * raw.data.col(iy.i1 * raw.width + ix.i1));
      m.data.col(y * width + x) = v / std::sqrt(v.squaredNorm() + kNormEpsilon);
    }
  }
  return m;
}

std::vector<Eigen::Vector2i> cellCenters(int height, int width) {
  std::vector<Eigen::Vector2i> c;
  for (int i = 0; i < height / kCell; ++i) {
    for (int j = 0; j < width / kCell; ++j) c.emplace_back(j * kCell + kCell / 2, i * kCell + kCell / 2);
  }
  return c;
}

SampledDescriptors sampleDescriptors(const Tensor& coarse, int height, int width,
                                     const std::vector<Eigen::Vector2i>& pixels) {
  (void)height;
  (void)width;
  SampledDescriptors s;
  s.raw.resize(coarse.channels, static_cast<Eigen::Index>(pixels.size()));
  s.unit.resize(coarse.channels, static_cast<Eigen::Index>(pixels.size()));
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    const Interp ix = coarseCoordinate(pixels[k].x(), coarse.width);
    const Interp iy = coarseCoordinate(pixels[k].y(), coarse.height);
    const auto col = [&](int i, int j) { return coarse.data.col(i * coarse.width + j); };
    Eigen::VectorXd v = (1 - iy.a) * ((1 - ix.a) * col(iy.i0, ix.i0) + ix.a * col(iy.i0, ix.i1)) +
                        iy.a * ((1 - ix.a) * col(iy.i1, ix.i0) + ix.a * col(iy.i1, ix.i1));
    s.raw.col(static_cast<Eigen::Index>(k)) = v;
    s.unit.col(static_cast<Eigen::Index>(k)) = v / std::sqrt(v.squaredNorm() + kNormEpsilon);
  }
  return s;
}

Tensor sampleDescriptorsBackward(const Tensor& coarse, int height, int width, const std::vector<Eigen::Vector2i>& pixels,
                                 const SampledDescriptors& sampled, const Eigen::MatrixXd& d_unit) {
  (void)height;
  (void)width;
  Tensor d(coarse.channels, coarse.height, coarse.width);
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    const Eigen::Index kk = static_cast<Eigen::Index>(k);
    const Eigen::VectorXd& g = d_unit.col(kk);
    if (g.isZero(0.0)) continue;
    const Eigen::VectorXd v = sampled.raw.col(kk);
    const double norm = std::sqrt(v.squaredNorm() + kNormEpsilon);
    // d(v/|v|)/dv = (I - v v^T / |v|^2) / |v| with the epsilon-regularized norm
    const Eigen::VectorXd dv = (g - v * (v.dot(g)) / (norm * norm)) / norm;
    const Interp ix = coarseCoordinate(pixels[k].x(), coarse.width);
    const Interp iy = coarseCoordinate(pixels[k].y(), coarse.height);
    d.data.col(iy.i0 * coarse.width + ix.i0) += (1 - iy.a) * (1 - ix.a) * dv;
    d.data.col(iy.i0 * coarse.width + ix.i1) += (1 - iy.a) * ix.a * dv;
    d.data.col(iy.i1 * coarse.width + ix.i0) += iy.a * (1 - ix.a) * dv;
    d.data.col(iy.i1 * coarse.width + ix.i1) += iy.a * ix.a * dv;
  }
  return d;
}

DetectorOutput detect(const NetworkWeights& weights, const RadiometricImage& image, bool include_descriptors,
                      CellActivation activation) {
  const NetOutputs net = forwardNet(weights, normalizeInput(image), include_descriptors);
  DetectorOutput out;
  out.heatmap = heatmapFromLogits(net.detector_logits, activation);
  if (include_descriptors) out.descriptors = upsampleDescriptors(net.descriptor_raw, image.height(), image.width());
  return out;
}

std::vector<Keypoint> decodeKeypoints(const ConfidenceHeatmap& heatmap, double threshold, int nms_radius,
                                      int max_points) {
  const int w = heatmap.width();
  const int h = heatmap.height();
  std::vector<int> candidates;
  for (int i = 0; i < w * h; ++i) {
    if (heatmap.prob(i / w, i % w) >= threshold && heatmap.prob(i / w, i % w) > 0.0) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    return heatmap.prob(a / w, a % w) > heatmap.prob(b / w, b % w);
  });
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> blocked =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(h, w, false);
  std::vector<Keypoint> out;
  for (int idx : candidates) {
    if (static_cast<int>(out.size()) >= max_points) break;
    const int y = idx / w;
    const int x = idx % w;
    if (blocked(y, x)) continue;
    out.push_back(Keypoint{Eigen::Vector2d(x, y), heatmap.prob(y, x)});
    for (int yy = std::max(0, y - nms_radius); yy <= std::min(h - 1, y + nms_radius); ++yy) {
      for (int xx = std::max(0, x - nms_radius); xx <= std::min(w - 1, x + nms_radius); ++xx) blocked(yy, xx) = true;
    }
  }
  return out;
}

DetectorLoss detectorLoss(const ConfidenceHeatmap& heatmap, const LabelMap& label) {
  if (heatmap.width() != label.width() || heatmap.height() != label.height()) {
    throw DimensionError("detectorLoss: heatmap and label sizes differ");
  }
  const double n = static_cast<double>(heatmap.prob.size());
  DetectorLoss out;
  out.d_logits.resize(heatmap.height(), heatmap.width());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < heatmap.prob.size(); ++i) {
    const double raw = heatmap.prob(i);
    const double c = std::clamp(raw, kProbEpsilon, 1.0 - kProbEpsilon);
    const double l = label.data(i) != 0 ? 1.0 : 0.0;
    sum += -std::log(c) * l - std::log(1.0 - c) * (1.0 - l);
    const bool clamped = raw < kProbEpsilon || raw > 1.0 - kProbEpsilon;
    out.d_logits(i) = clamped ? 0.0 : (c - l) / n;
  }
  out.value = sum / n;
  return out;
}

DescriptorLoss descriptorLossCells(const Eigen::MatrixXd& desc_a, const Eigen::MatrixXd& desc_b,
                                   const std::vector<Eigen::Vector2i>& centers_a,
                                   const std::vector<Eigen::Vector2i>& centers_b, const Eigen::Matrix3d& homography,
                                   const DescriptorLossConfig& cfg) {
  if (std::abs(homography.determinant()) < 1e-12) throw std::invalid_argument("descriptorLoss: singular homography");
  if (desc_a.rows() != desc_b.rows()) throw std::invalid_argument("descriptorLoss: descriptor dims differ");
  const Eigen::Index na = desc_a.cols();
  const Eigen::Index nb = desc_b.cols();
  const Eigen::MatrixXd dots = desc_a.transpose() * desc_b;  // na x nb
  Eigen::MatrixXd d_dots = Eigen::MatrixXd::Zero(na, nb);
  const double scale = 1.0 / static_cast<double>(na * nb);
  const double r2 = cfg.correspondence_radius * cfg.correspondence_radius;
  double sum = 0.0;
  for (Eigen::Index a = 0; a < na; ++a) {
    const auto warped = applyHomography(homography, centers_a[static_cast<std::size_t>(a)].cast<double>());
    for (Eigen::Index b = 0; b < nb; ++b) {
      const bool positive =
          warped.has_value() && (*warped - centers_b[static_cast<std::size_t>(b)].cast<double>()).squaredNorm() <= r2;
      const double d = dots(a, b);
      if (positive) {
        const double h = cfg.positive_margin - d;
        if (h > 0.0) {
          sum += cfg.positive_weight * h;
          d_dots(a, b) = -cfg.positive_weight * scale;
        }
      } else {
        const double h = d - cfg.negative_margin;
        if (h > 0.0) {
          sum += h;
          d_dots(a, b) = scale;
        }
      }
    }
  }
  DescriptorLoss out;
  out.value = sum * scale;
  out.d_a = desc_b * d_dots.transpose();
  out.d_b = desc_a * d_dots;
  return out;
}

DescriptorLoss descriptorLoss(const DescriptorMap& a, const DescriptorMap& b, const Eigen::Matrix3d& homography,
                              const DescriptorLossConfig& cfg) {
  if (a.dim() != b.dim() || a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("descriptorLoss: descriptor maps differ in shape");
  }
  const auto centers = cellCenters(a.height, a.width);
  Eigen::MatrixXd da(a.dim(), static_cast<Eigen::Index>(centers.size()));
  Eigen::MatrixXd db(b.dim(), static_cast<Eigen::Index>(centers.size()));
  for (std::size_t k = 0; k < centers.size(); ++k) {
    da.col(static_cast<Eigen::Index>(k)) = a.at(centers[k].x(), centers[k].y());
    db.col(static_cast<Eigen::Index>(k)) = b.at(centers[k].x(), centers[k].y());
  }
  DescriptorLoss cells = descriptorLossCells(da, db, centers, centers, homography, cfg);
  DescriptorLoss out;
  out.value = cells.value;
  out.d_a = Eigen::MatrixXd::Zero(a.dim(), a.data.cols());
  out.d_b = Eigen::MatrixXd::Zero(b.dim(), b.data.cols());
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const Eigen::Index col = centers[k].y() * a.width + centers[k].x();
    out.d_a.col(col) = cells.d_a.col(static_cast<Eigen::Index>(k));
    out.d_b.col(col) = cells.d_b.col(static_cast<Eigen::Index>(k));
  }
  return out;
}

ImageArray salientResponse(const RadiometricImage& image, const std::vector<int>& radii) {
  const int w = image.width();
  const int h = image.height();
  // integral image with a zero row/column in front
  Eigen::ArrayXXd integral = Eigen::ArrayXXd::Zero(h + 1, w + 1);
  for (int y = 0; y < h; ++y) {
    double row = 0.0;
    for (int x = 0; x < w; ++x) {
      row += image(x, y);
      integral(y + 1, x + 1) = integral(y, x + 1) + row;
    }
  }
  auto boxMean = [&](int cx, int cy, int r) {
    const int x0 = std::max(0, cx - r), x1 = std::min(w - 1, cx + r);
    const int y0 = std::max(0, cy - r), y1 = std::min(h - 1, cy + r);
    const double s = integral(y1 + 1, x1 + 1) - integral(y0, x1 + 1) - integral(y1 + 1, x0) + integral(y0, x0);
    return s / ((x1 - x0 + 1) * (y1 - y0 + 1));
  };
  ImageArray response = ImageArray::Zero(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double best = 0.0;
      for (int r : radii) best = std::max(best, std::abs(boxMean(x, y, r) - boxMean(x, y, 3 * r)));
      response(y, x) = best;
    }
  }
  return response;
}

ConfidenceHeatmap salientHeatmap(const RadiometricImage& image, const SalientPointConfig& cfg) {
  ImageArray r = salientResponse(image, cfg.radii);
  const int w = image.width(), h = image.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (x < cfg.border || y < cfg.border || x >= w - cfg.border || y >= h - cfg.border) r(y, x) = 0.0;
    }
  }
  const double peak = r.maxCoeff();
  if (peak < cfg.min_response) return ConfidenceHeatmap{ImageArray::Zero(h, w)};
  const double floor = std::max(cfg.min_response, cfg.relative_threshold * peak);
  return ConfidenceHeatmap{(r >= floor).select(r / peak, 0.0)};
}

std::vector<Keypoint> salientPoints(const RadiometricImage& image, const SalientPointConfig& cfg) {
  const ConfidenceHeatmap heat = salientHeatmap(image, cfg);
  return decodeKeypoints(heat, 1e-12, cfg.nms_radius, cfg.max_points);
}

LabelMap labelsFromKeypoints(int width, int height, const std::vector<Keypoint>& points) {
  LabelMap m{LabelArray::Zero(height, width)};
  for (const auto& p : points) {
    const int x = static_cast<int>(std::lround(p.position.x()));
    const int y = static_cast<int>(std::lround(p.position.y()));
    if (x >= 0 && y >= 0 && x < width && y < height) m.data(y, x) = 1;
  }
  return m;
}

LabelMap generatePseudoLabels(const RadiometricImage& image, const NetworkWeights* base_weights,
                              const PseudoLabelConfig& cfg) {
  std::vector<Keypoint> points = salientPoints(image, cfg.salient);
  if (base_weights != nullptr) {
    const auto out = detect(*base_weights, image, false);
    const auto base = decodeKeypoints(out.heatmap, cfg.base_threshold, cfg.base_nms_radius, cfg.base_max_points);
    points.insert(points.end(), base.begin(), base.end());
  }
  return labelsFromKeypoints(image.width(), image.height(), points);
}

}  // namespace tio
