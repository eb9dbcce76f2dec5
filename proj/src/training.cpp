#include "tio/training.hpp"

#include <cmath>
#include <stdexcept>

namespace tio {

namespace {

void checkBatch(std::span<const LabeledImage> batch) {
  if (batch.empty()) throw std::invalid_argument("train: empty batch");
  const int w = batch.front().image.width();
  const int h = batch.front().image.height();
  for (const auto& s : batch) {
    if (s.image.width() != w || s.image.height() != h) throw std::invalid_argument("train: images differ in size");
    if (s.label.width() != w || s.label.height() != h) throw std::invalid_argument("train: label size mismatch");
  }
}

bool finiteGradient(const NetworkGradient& g) {
  for (const auto& l : g) {
    if (!l.kernel.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

// Forward + detector loss + backward for one image; returns the loss and
// leaves the descriptor tensor in `net` for the caller.
struct SampleEval {
  ForwardCache cache;
  NetOutputs net;
  DetectorLoss det;
};

SampleEval evalImage(const NetworkWeights& weights, const RadiometricImage& image, const LabelMap& label,
                     bool with_descriptor) {
  SampleEval e;
  e.net = forwardNet(weights, normalizeInput(image), with_descriptor, &e.cache);
  e.det = detectorLoss(heatmapFromLogits(e.net.detector_logits, CellActivation::kSigmoid), label);
  return e;
}

}  // namespace

LabelMap warpLabels(const LabelMap& label, const Eigen::Matrix3d& H) {
  LabelMap out{LabelArray::Zero(label.height(), label.width())};
  for (int y = 0; y < label.height(); ++y) {
    for (int x = 0; x < label.width(); ++x) {
      if (label.data(y, x) == 0) continue;
      const auto p = applyHomography(H, Eigen::Vector2d(x, y));
      if (!p) continue;
      const long px = std::lround(p->x());
      const long py = std::lround(p->y());
      if (px >= 0 && py >= 0 && px < label.width() && py < label.height()) out.data(py, px) = 1;
    }
  }
  return out;
}

LossAndGradient totalLossAndGradient(const NetworkWeights& weights, std::span<const LabeledImage> batch,
                                     const TrainConfig& cfg, std::uint64_t seed, const FpnBank* bank) {
  checkBatch(batch);
  LossAndGradient out;
  out.grad = zeroGradient(weights);
  const bool with_desc = cfg.train_descriptor && cfg.descriptor_weight > 0.0;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  std::mt19937_64 rng(seed);

  for (const LabeledImage& sample : batch) {
    const int w = sample.image.width();
    const int h = sample.image.height();
    const Eigen::Matrix3d H = sampleHomography(w, h, cfg.homography, rng);
    const RadiometricImage warped = warpImage(sample.image, H);
    const LabelMap warped_label = warpLabels(sample.label, H);
    const auto aug_a = photometricAugment(sample.image, cfg.augment, rng(), bank);
    const auto aug_b = photometricAugment(warped, cfg.augment, rng(), bank);

    SampleEval ea = evalImage(weights, aug_a.image, sample.label, with_desc);
    SampleEval eb = evalImage(weights, aug_b.image, warped_label, with_desc);
    out.loss.detector += (ea.det.value + eb.det.value) * inv_batch;

    Tensor dla = spaceToDepth(ea.det.d_logits * inv_batch);
    Tensor dlb = spaceToDepth(eb.det.d_logits * inv_batch);
    if (with_desc) {
      const auto centers = cellCenters(h, w);
      const SampledDescriptors sa = sampleDescriptors(ea.net.descriptor_raw, h, w, centers);
      const SampledDescriptors sb = sampleDescriptors(eb.net.descriptor_raw, h, w, centers);
      const DescriptorLoss dl = descriptorLossCells(sa.unit, sb.unit, centers, centers, H, cfg.descriptor);
      out.loss.descriptor += dl.value * inv_batch;
      const double k = cfg.descriptor_weight * inv_batch;
      const Tensor dra = sampleDescriptorsBackward(ea.net.descriptor_raw, h, w, centers, sa, dl.d_a * k);
      const Tensor drb = sampleDescriptorsBackward(eb.net.descriptor_raw, h, w, centers, sb, dl.d_b * k);
      backwardNet(weights, ea.cache, &dla, &dra, out.grad);
      backwardNet(weights, eb.cache, &dlb, &drb, out.grad);
    } else {
      backwardNet(weights, ea.cache, &dla, nullptr, out.grad);
      backwardNet(weights, eb.cache, &dlb, nullptr, out.grad);
    }
  }
  out.loss.total = out.loss.detector + (with_desc ? cfg.descriptor_weight * out.loss.descriptor : 0.0);
  return out;
}

TrainStepResult trainStep(const NetworkWeights& weights, std::span<const LabeledImage> batch,
                          const HomographyMagnitudes& homography, const AugmentationConfig& augment,
                          double learning_rate, std::uint64_t seed, const FpnBank* bank) {
  TrainConfig cfg;
  cfg.homography = homography;
  cfg.augment = augment;
  cfg.optimizer = Optimizer::kGradientDescent;
  cfg.learning_rate = learning_rate;
  LossAndGradient lg = totalLossAndGradient(weights, batch, cfg, seed, bank);
  TrainStepResult r{weights, {lg.loss, false}};
  if (!std::isfinite(lg.loss.total) || !finiteGradient(lg.grad)) {
    r.report.diverged = true;
    return r;
  }
  if (learning_rate == 0.0) return r;
  for (std::size_t i = 0; i < r.weights.layers.size(); ++i) {
    r.weights.layers[i].kernel -= learning_rate * lg.grad[i].kernel;
    r.weights.layers[i].bias -= learning_rate * lg.grad[i].bias;
  }
  roundToFloat(r.weights);
  return r;
}

Trainer::Trainer(NetworkWeights weights, TrainConfig cfg, std::uint64_t seed, const FpnBank* bank)
    : weights_(std::move(weights)), cfg_(std::move(cfg)), bank_(bank), rng_(seed) {
  weights_.validate();
  cfg_.augment.validate();
  m_ = zeroGradient(weights_);
  v_ = zeroGradient(weights_);
}

StepReport Trainer::step(std::span<const LabeledImage> batch) {
  LossAndGradient lg = totalLossAndGradient(weights_, batch, cfg_, rng_(), bank_);
  StepReport report{lg.loss, false};
  if (!std::isfinite(lg.loss.total) || !finiteGradient(lg.grad)) {
    report.diverged = true;
    return report;
  }
  ++steps_;
  const double lr = cfg_.learning_rate;
  if (lr == 0.0) return report;
  if (cfg_.optimizer == Optimizer::kGradientDescent) {
    for (std::size_t i = 0; i < weights_.layers.size(); ++i) {
      weights_.layers[i].kernel -= lr * lg.grad[i].kernel;
      weights_.layers[i].bias -= lr * lg.grad[i].bias;
    }
  } else {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    const double c1 = 1.0 - std::pow(kBeta1, steps_);
    const double c2 = 1.0 - std::pow(kBeta2, steps_);
    for (std::size_t i = 0; i < weights_.layers.size(); ++i) {
      auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = kBeta1 * m + (1.0 - kBeta1) * g;
        v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
      };
      update(weights_.layers[i].kernel, m_[i].kernel, v_[i].kernel, lg.grad[i].kernel);
      update(weights_.layers[i].bias, m_[i].bias, v_[i].bias, lg.grad[i].bias);
    }
  }
  roundToFloat(weights_);
  return report;
}

LabeledImage cropLabeled(const LabeledImage& sample, int x, int y, int size) {
  const int w = sample.image.width(), h = sample.image.height();
  if (size < 1 || x < 0 || y < 0 || x + size > w || y + size > h)
    throw std::invalid_argument("cropLabeled: crop leaves the image");
  LabeledImage out{RadiometricImage(ImageArray(sample.image.data().block(y, x, size, size)), sample.image.timestamp()),
                   LabelMap{sample.label.data.block(y, x, size, size)}};
  return out;
}

void DetectorTrainingConfig::validate() const {
  train.augment.validate();
  if (steps < 0) throw std::invalid_argument("detector training: steps must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("detector training: batch size must be positive");
  if (crop < 8 || crop % 8 != 0) throw std::invalid_argument("detector training: crop must be a positive multiple of 8");
}

NetworkWeights trainDetector(const NetworkWeights& initial, const std::vector<LabeledImage>& corpus,
                             const DetectorTrainingConfig& cfg, std::uint64_t seed, const FpnBank* bank,
                             const std::function<void(int, const StepReport&)>& progress) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("detector training: empty corpus");
  for (const auto& s : corpus)
    if (s.image.width() < cfg.crop || s.image.height() < cfg.crop)
      throw std::invalid_argument("detector training: corpus image smaller than the crop");
  Trainer trainer(initial, cfg.train, seed, bank);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<LabeledImage> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int step = 0; step < cfg.steps; ++step) {
    for (auto& b : batch) {
      const auto& src = corpus[std::uniform_int_distribution<std::size_t>(0, corpus.size() - 1)(rng)];
      const int x = std::uniform_int_distribution<int>(0, src.image.width() - cfg.crop)(rng);
      const int y = std::uniform_int_distribution<int>(0, src.image.height() - cfg.crop)(rng);
      b = cropLabeled(src, x, y, cfg.crop);
    }
    const StepReport report = trainer.step(batch);
    if (progress) progress(step, report);
  }
  return trainer.weights();
}

}  // namespace tio
