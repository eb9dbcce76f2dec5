#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "tio/detector.hpp"
#include "tio/homography.hpp"
#include "tio/image.hpp"
#include "tio/net.hpp"

namespace tio {

struct LabeledImage {
  RadiometricImage image;
  LabelMap label;
};

enum class Optimizer { kGradientDescent, kAdam };

struct TrainConfig {
  AugmentationConfig augment;
  HomographyMagnitudes homography;
  DescriptorLossConfig descriptor;
  double descriptor_weight = descriptorLossWeight();
  bool train_descriptor = true;
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 1e-3;
};

struct LossBreakdown {
  double detector = 0.0;    // detector loss of the original plus the warped copy
  double descriptor = 0.0;  // unweighted descriptor loss
  double total = 0.0;
};

struct LossAndGradient {
  LossBreakdown loss;  // batch means
  NetworkGradient grad;
};

/// Total training loss of a batch and its gradient w.r.t. every parameter.
/// All randomness (homographies, augmentation) derives from `seed`, so the
/// loss is a deterministic function of the weights for a fixed seed.
LossAndGradient totalLossAndGradient(const NetworkWeights& weights, std::span<const LabeledImage> batch,
                                     const TrainConfig& cfg, std::uint64_t seed, const FpnBank* bank = nullptr);

/// Maps label points through H (rounded to the nearest pixel, dropped outside the image).
LabelMap warpLabels(const LabelMap& label, const Eigen::Matrix3d& H);

struct StepReport {
  LossBreakdown loss;
  bool diverged = false;  // non-finite loss or gradient; weights left untouched
};

struct TrainStepResult {
  NetworkWeights weights;
  StepReport report;
};

/// One plain gradient-descent step. Throws std::invalid_argument on an empty
/// batch or mixed image sizes.
TrainStepResult trainStep(const NetworkWeights& weights, std::span<const LabeledImage> batch,
                          const HomographyMagnitudes& homography, const AugmentationConfig& augment,
                          double learning_rate, std::uint64_t seed, const FpnBank* bank = nullptr);

/// Stateful trainer; owns the weights and optimizer moments.
class Trainer {
 public:
  Trainer(NetworkWeights weights, TrainConfig cfg, std::uint64_t seed, const FpnBank* bank = nullptr);

  StepReport step(std::span<const LabeledImage> batch);

  const NetworkWeights& weights() const { return weights_; }
  const TrainConfig& config() const { return cfg_; }
  int steps() const { return steps_; }

 private:
  NetworkWeights weights_;
  TrainConfig cfg_;
  const FpnBank* bank_;
  std::mt19937_64 rng_;
  NetworkGradient m_;
  NetworkGradient v_;
  int steps_ = 0;
};

/// Square crop of an image and its labels with the top-left corner at (x, y).
LabeledImage cropLabeled(const LabeledImage& sample, int x, int y, int size);

struct DetectorTrainingConfig {
  TrainConfig train;
  int steps = 1000;
  int batch_size = 4;
  int crop = 64;  // multiple of 8

  void validate() const;
};

/// Desk-scale training on random crops of the corpus. Diverged steps are
/// skipped. `progress` sees every step report.
NetworkWeights trainDetector(const NetworkWeights& initial, const std::vector<LabeledImage>& corpus,
                             const DetectorTrainingConfig& cfg, std::uint64_t seed, const FpnBank* bank = nullptr,
                             const std::function<void(int, const StepReport&)>& progress = {});

}  // namespace tio
