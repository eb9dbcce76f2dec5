#include "tio/image.hpp"

#include <algorithm>
#include <cmath>

namespace tio {

RadiometricImage::RadiometricImage(ImageArray data, double timestamp)
    : data_(std::move(data)), timestamp_(timestamp) {
  if (data_.rows() == 0 || data_.cols() == 0) {
    throw std::invalid_argument("RadiometricImage: empty image");
  }
  if (!data_.allFinite() || data_.minCoeff() < 0.0 || data_.maxCoeff() > kMaxCount) {
    throw std::invalid_argument("RadiometricImage: values outside [0, 65535]");
  }
}

RadiometricImage RadiometricImage::constant(int width, int height, double value, double timestamp) {
  return RadiometricImage(ImageArray::Constant(height, width, value), timestamp);
}

RadiometricImage RadiometricImage::clamped(const ImageArray& data, double timestamp) {
  return RadiometricImage(data.max(0.0).min(kMaxCount), timestamp);
}

RadiometricImage RadiometricImage::withTimestamp(double t) const {
  RadiometricImage out = *this;
  out.timestamp_ = t;
  return out;
}

void AugmentationConfig::validate() const {
  if (gain.lo > gain.hi || offset.lo > offset.hi) {
    throw std::invalid_argument("AugmentationConfig: empty interval");
  }
  if (gain.lo < 0.0) throw std::invalid_argument("AugmentationConfig: negative gain");
  if (!(fpn_probability >= 0.0 && fpn_probability <= 1.0)) {
    throw std::invalid_argument("AugmentationConfig: fpn probability outside [0,1]");
  }
  if (noise_sigma < 0.0 || fpn_amplitude < 0.0) {
    throw std::invalid_argument("AugmentationConfig: negative sigma or amplitude");
  }
}

FpnBank::FpnBank(std::vector<FpnPattern> patterns) : patterns_(std::move(patterns)) {}

const FpnPattern& FpnBank::sample(std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, patterns_.size() - 1);
  return patterns_[pick(rng)];
}

RadiometricImage applyFpn(const RadiometricImage& image, const FpnPattern& pattern) {
  if (pattern.width() != image.width() || pattern.height() != image.height()) {
    throw DimensionError("applyFpn: pattern " + std::to_string(pattern.width()) + "x" +
                         std::to_string(pattern.height()) + " does not match image " +
                         std::to_string(image.width()) + "x" + std::to_string(image.height()));
  }
  return RadiometricImage::clamped(image.data() + pattern.offsets, image.timestamp());
}

FpnPattern synthesizeColumnFpn(int width, int height, double amplitude, std::uint64_t seed) {
  if (amplitude < 0.0) throw std::invalid_argument("synthesizeColumnFpn: negative amplitude");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  Eigen::RowVectorXd columns(width);
  for (int j = 0; j < width; ++j) columns(j) = amplitude > 0.0 ? u(rng) : 0.0;
  columns.array() -= columns.mean();
  FpnPattern p;
  p.offsets = columns.replicate(height, 1).array();
  return p;
}

FpnPattern synthesizeSmoothFpn(int width, int height, double amplitude, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(0.2, 1.5);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> weight(-1.0, 1.0);
  ImageArray field = ImageArray::Zero(height, width);
  constexpr int kModes = 4;
  for (int m = 0; m < kModes; ++m) {
    const double fx = freq(rng) * 2.0 * M_PI / width;
    const double fy = freq(rng) * 2.0 * M_PI / height;
    const double ph = phase(rng);
    const double w = weight(rng);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) field(y, x) += w * std::cos(fx * x + fy * y + ph);
    }
  }
  field -= field.mean();
  const double peak = field.abs().maxCoeff();
  if (peak > 0.0) field *= amplitude / peak;
  return FpnPattern{field};
}

FpnPattern synthesizeFlatField(int width, int height, double amplitude, std::uint64_t seed) {
  FpnPattern columns = synthesizeColumnFpn(width, height, amplitude, seed);
  FpnPattern smooth = synthesizeSmoothFpn(width, height, 0.5 * amplitude, seed ^ 0x9e3779b97f4a7c15ULL);
  return FpnPattern{columns.offsets + smooth.offsets};
}

FpnPattern patternFromFlatField(const RadiometricImage& flat_field) {
  return FpnPattern{flat_field.data() - flat_field.mean()};
}

AugmentResult photometricAugment(const RadiometricImage& image, const AugmentationConfig& cfg,
                                 std::uint64_t seed, const FpnBank* bank) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  AugmentResult out;
  out.gain = cfg.gain.lo == cfg.gain.hi
                 ? cfg.gain.lo
                 : std::uniform_real_distribution<double>(cfg.gain.lo, cfg.gain.hi)(rng);
  out.offset = cfg.offset.lo == cfg.offset.hi
                   ? cfg.offset.lo
                   : std::uniform_real_distribution<double>(cfg.offset.lo, cfg.offset.hi)(rng);

  const double mean = image.mean();
  ImageArray data = out.gain * (image.data() - mean) + mean + out.offset;
  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (Eigen::Index i = 0; i < data.size(); ++i) data(i) += noise(rng);
  }
  out.before_fpn = RadiometricImage::clamped(data, image.timestamp());

  const bool add_fpn = cfg.fpn_probability > 0.0 &&
                       std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.fpn_probability;
  if (add_fpn) {
    if (bank != nullptr && !bank->empty()) {
      out.pattern = bank->sample(rng);
    } else {
      out.pattern = synthesizeFlatField(image.width(), image.height(), cfg.fpn_amplitude, rng());
    }
    out.image = applyFpn(out.before_fpn, *out.pattern);
  } else {
    out.image = out.before_fpn;
  }
  return out;
}

Rescaled8 rescaleTo8bit(const RadiometricImage& image) {
  Rescaled8 out;
  const double lo = image.data().minCoeff();
  const double hi = image.data().maxCoeff();
  if (hi <= lo) {
    out.pixels = Image8Array::Zero(image.height(), image.width());
    out.degenerate = true;
    return out;
  }
  out.pixels = (255.0 * (image.data() - lo) / (hi - lo)).round().cast<std::uint8_t>();
  return out;
}

std::optional<double> bilinearSample(const RadiometricImage& image, double x, double y) {
  if (!insideImage(image.width(), image.height(), x, y)) return std::nullopt;
  if (image.width() == 1 || image.height() == 1) {
    // degenerate strips: interpolate along the single axis
    const ImageArray& d = image.data();
    if (image.width() == 1 && image.height() == 1) return d(0, 0);
    if (image.width() == 1) {
      const int y0 = std::min(static_cast<int>(y), image.height() - 2);
      const double a = y - y0;
      return (1.0 - a) * d(y0, 0) + a * d(y0 + 1, 0);
    }
    const int x0 = std::min(static_cast<int>(x), image.width() - 2);
    const double a = x - x0;
    return (1.0 - a) * d(0, x0) + a * d(0, x0 + 1);
  }
  return bilinearUnchecked(image.data(), x, y);
}

RadiometricImage downsample2x(const RadiometricImage& image) {
  const int w = image.width();
  const int h = image.height();
  const int ow = (w + 1) / 2;
  const int oh = (h + 1) / 2;
  const ImageArray& in = image.data();
  ImageArray out(oh, ow);
  for (int y = 0; y < oh; ++y) {
    const int y0 = 2 * y;
    const int y1 = std::min(2 * y + 1, h - 1);
    for (int x = 0; x < ow; ++x) {
      const int x0 = 2 * x;
      const int x1 = std::min(2 * x + 1, w - 1);
      double sum = 0.0;
      int n = 0;
      for (int yy = y0; yy <= y1; ++yy) {
        for (int xx = x0; xx <= x1; ++xx) {
          sum += in(yy, xx);
          ++n;
        }
      }
      out(y, x) = sum / n;
    }
  }
  return RadiometricImage(std::move(out), image.timestamp());
}

ImagePyramid buildPyramid(const RadiometricImage& image, int levels, int min_level_size) {
  if (levels < 1) throw std::invalid_argument("buildPyramid: levels must be >= 1");
  int w = image.width();
  int h = image.height();
  for (int k = 1; k < levels; ++k) {
    w = (w + 1) / 2;
    h = (h + 1) / 2;
  }
  if (w < min_level_size || h < min_level_size) {
    throw std::invalid_argument("buildPyramid: " + std::to_string(levels) + " levels leave a " +
                                std::to_string(w) + "x" + std::to_string(h) +
                                " coarsest level (minimum " + std::to_string(min_level_size) + ")");
  }
  ImagePyramid pyr;
  pyr.levels.reserve(static_cast<std::size_t>(levels));
  pyr.levels.push_back(image);
  for (int k = 1; k < levels; ++k) pyr.levels.push_back(downsample2x(pyr.levels.back()));
  return pyr;
}

}  // namespace tio
