#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tio/image.hpp"
#include "tio/net.hpp"

namespace tio {

inline constexpr int kCell = 8;

/// Per-pixel keypoint probability, same size as the input image.
struct ConfidenceHeatmap {
  ImageArray prob;

  int width() const { return static_cast<int>(prob.cols()); }
  int height() const { return static_cast<int>(prob.rows()); }
};

struct Keypoint {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double score = 0.0;
};

using LabelArray = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Binary keypoint labels.
struct LabelMap {
  LabelArray data;

  int width() const { return static_cast<int>(data.cols()); }
  int height() const { return static_cast<int>(data.rows()); }
  int count() const { return static_cast<int>(data.cast<int>().sum()); }
};

/// Dense unit-norm descriptors; data is dim x (height * width).
struct DescriptorMap {
  int height = 0;
  int width = 0;
  Eigen::MatrixXd data;

  int dim() const { return static_cast<int>(data.rows()); }
  Eigen::VectorXd at(int x, int y) const { return data.col(y * width + x); }
};

enum class CellActivation { kSigmoid, kSoftmax };

struct DetectorOutput {
  ConfidenceHeatmap heatmap;
  DescriptorMap descriptors;  // empty unless requested
};

/// counts / 65535 as a 1-channel tensor.
Tensor normalizeInput(const RadiometricImage& image);

/// Channel c of cell (i, j) lands on pixel (8i + c / 8, 8j + c % 8).
ImageArray depthToSpace(const Tensor& cells);
Tensor spaceToDepth(const ImageArray& pixels);

/// Full inference pass. Throws std::invalid_argument when the image size is
/// not a multiple of 8, ShapeError on inconsistent weights.
DetectorOutput detect(const NetworkWeights& weights, const RadiometricImage& image, bool include_descriptors,
                      CellActivation activation = CellActivation::kSigmoid);

ConfidenceHeatmap heatmapFromLogits(const Tensor& logits, CellActivation activation);

/// Greedy NMS in descending score order. Returned points are pairwise more than
/// nms_radius apart (Chebyshev), all scores >= threshold, at most max_points.
std::vector<Keypoint> decodeKeypoints(const ConfidenceHeatmap& heatmap, double threshold, int nms_radius,
                                      int max_points);

// ---- descriptors ----------------------------------------------------------

/// Bilinear 8x upsampling of the coarse descriptor tensor followed by per-pixel
/// L2 normalization.
DescriptorMap upsampleDescriptors(const Tensor& raw, int height, int width);

/// Pixels used as cell centers by the descriptor loss: (8j + 4, 8i + 4).
std::vector<Eigen::Vector2i> cellCenters(int height, int width);

/// Normalized descriptors at the given pixels (dim x N) and, for backprop, the
/// pre-normalization vectors.
struct SampledDescriptors {
  Eigen::MatrixXd unit;
  Eigen::MatrixXd raw;
};
SampledDescriptors sampleDescriptors(const Tensor& coarse, int height, int width,
                                     const std::vector<Eigen::Vector2i>& pixels);

/// Gradient w.r.t. the coarse tensor given gradients of the sampled unit descriptors.
Tensor sampleDescriptorsBackward(const Tensor& coarse, int height, int width, const std::vector<Eigen::Vector2i>& pixels,
                                 const SampledDescriptors& sampled, const Eigen::MatrixXd& d_unit);

// ---- losses ---------------------------------------------------------------

inline constexpr double kProbEpsilon = 1e-7;

struct DetectorLoss {
  double value = 0.0;
  ImageArray d_logits;  // per-pixel gradient w.r.t. the pre-sigmoid logits
};

/// Mean per-pixel binary logistic loss with C clamped to [eps, 1 - eps].
/// Throws DimensionError on size mismatch.
DetectorLoss detectorLoss(const ConfidenceHeatmap& heatmap, const LabelMap& label);

struct DescriptorLossConfig {
  double positive_margin = 1.0;
  double negative_margin = 0.2;
  double positive_weight = 1.0;
  double correspondence_radius = 8.0;
};

struct DescriptorLoss {
  double value = 0.0;
  Eigen::MatrixXd d_a;  // same shape as the input descriptor matrices
  Eigen::MatrixXd d_b;
};

/// Hinge contrastive loss over all (a, b) cell pairs, averaged over pairs.
/// `homography` maps pixels of A into B. Cell descriptors are dim x N.
DescriptorLoss descriptorLossCells(const Eigen::MatrixXd& desc_a, const Eigen::MatrixXd& desc_b,
                                   const std::vector<Eigen::Vector2i>& centers_a,
                                   const std::vector<Eigen::Vector2i>& centers_b, const Eigen::Matrix3d& homography,
                                   const DescriptorLossConfig& cfg = {});

/// Dense-map form: samples both maps at their cell centers. Gradients are dense
/// (dim x HW) and zero away from cell centers. Throws std::invalid_argument for
/// a singular homography or mismatched maps.
DescriptorLoss descriptorLoss(const DescriptorMap& a, const DescriptorMap& b, const Eigen::Matrix3d& homography,
                              const DescriptorLossConfig& cfg = {});

/// Weight of the descriptor term in the total training loss.
inline double descriptorLossWeight() { return 0.0001 * kCell * kCell; }

// ---- pseudo labels ---------------------------------------------------------

/// Multi-scale difference-of-boxes detector used as the handcrafted label source.
struct SalientPointConfig {
  std::vector<int> radii{1, 2, 3};  // inner box radius r; outer radius 3r
  double relative_threshold = 0.2;  // fraction of the strongest response
  double min_response = 25.0;       // counts
  int nms_radius = 4;
  int max_points = 1000;
  int border = 4;
};

/// max_r |mean(inner box) - mean(outer box)| per pixel, in counts.
ImageArray salientResponse(const RadiometricImage& image, const std::vector<int>& radii);

/// Response scaled to [0,1] by its maximum; pixels below the thresholds are zero.
ConfidenceHeatmap salientHeatmap(const RadiometricImage& image, const SalientPointConfig& cfg = {});

std::vector<Keypoint> salientPoints(const RadiometricImage& image, const SalientPointConfig& cfg = {});

struct PseudoLabelConfig {
  SalientPointConfig salient;
  double base_threshold = 0.5;
  int base_nms_radius = 4;
  int base_max_points = 1000;
};

/// Union of base-detector keypoints (when weights are given) and handcrafted points.
LabelMap generatePseudoLabels(const RadiometricImage& image, const NetworkWeights* base_weights,
                              const PseudoLabelConfig& cfg = {});

LabelMap labelsFromKeypoints(int width, int height, const std::vector<Keypoint>& points);

}  // namespace tio
