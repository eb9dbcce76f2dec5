#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace tio {

/// Row-major pixel grid; rows index y, columns index x.
using ImageArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Image8Array = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kMaxCount = 65535.0;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// 16-bit radiometric frame held as real numbers. Immutable once built.
class RadiometricImage {
 public:
  RadiometricImage() = default;
  /// Throws std::invalid_argument on empty data or values outside [0, 65535].
  explicit RadiometricImage(ImageArray data, double timestamp = 0.0);

  static RadiometricImage constant(int width, int height, double value, double timestamp = 0.0);
  /// Clamps into [0, 65535] instead of rejecting.
  static RadiometricImage clamped(const ImageArray& data, double timestamp = 0.0);

  int width() const { return static_cast<int>(data_.cols()); }
  int height() const { return static_cast<int>(data_.rows()); }
  bool empty() const { return data_.size() == 0; }
  double timestamp() const { return timestamp_; }
  const ImageArray& data() const { return data_; }
  double operator()(int x, int y) const { return data_(y, x); }
  double mean() const { return data_.mean(); }

  RadiometricImage withTimestamp(double t) const;

 private:
  ImageArray data_;
  double timestamp_ = 0.0;
};

/// Additive fixed-pattern offsets, zero mean.
struct FpnPattern {
  ImageArray offsets;

  int width() const { return static_cast<int>(offsets.cols()); }
  int height() const { return static_cast<int>(offsets.rows()); }
};

struct ImagePyramid {
  std::vector<RadiometricImage> levels;  // levels[0] is full resolution

  int size() const { return static_cast<int>(levels.size()); }
  const RadiometricImage& operator[](int k) const { return levels[static_cast<std::size_t>(k)]; }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentationConfig {
  Interval gain{1.0, 1.0};
  Interval offset{0.0, 0.0};
  double fpn_probability = 0.0;
  double noise_sigma = 0.0;
  /// Column amplitude used when no FPN bank is supplied.
  double fpn_amplitude = 400.0;

  /// Throws std::invalid_argument when an interval is inverted or the probability is out of [0,1].
  void validate() const;
};

/// Collection of flat-field offset patterns sampled during augmentation.
class FpnBank {
 public:
  FpnBank() = default;
  explicit FpnBank(std::vector<FpnPattern> patterns);

  bool empty() const { return patterns_.empty(); }
  std::size_t size() const { return patterns_.size(); }
  const FpnPattern& operator[](std::size_t i) const { return patterns_[i]; }
  const FpnPattern& sample(std::mt19937_64& rng) const;

 private:
  std::vector<FpnPattern> patterns_;
};

/// out = clamp(image + pattern); throws DimensionError on size mismatch.
RadiometricImage applyFpn(const RadiometricImage& image, const FpnPattern& pattern);

/// Per-column constant offsets drawn from U[-amplitude, amplitude], de-meaned.
FpnPattern synthesizeColumnFpn(int width, int height, double amplitude, std::uint64_t seed);

/// Low-frequency 2-D offset field (a few random cosine modes), de-meaned; max |offset| <= amplitude.
FpnPattern synthesizeSmoothFpn(int width, int height, double amplitude, std::uint64_t seed);

/// Column stripes plus a smooth field, the default synthetic flat-field.
FpnPattern synthesizeFlatField(int width, int height, double amplitude, std::uint64_t seed);

/// Removes the mean of a captured flat-field frame so it can be used as an offset pattern.
FpnPattern patternFromFlatField(const RadiometricImage& flat_field);

struct AugmentResult {
  RadiometricImage image;
  RadiometricImage before_fpn;
  std::optional<FpnPattern> pattern;
  double gain = 1.0;
  double offset = 0.0;
};

/// Contrast/brightness/noise augmentation followed, with cfg.fpn_probability,
/// by an FPN pattern from `bank` (or a synthesized flat field when the bank is empty).
AugmentResult photometricAugment(const RadiometricImage& image, const AugmentationConfig& cfg,
                                 std::uint64_t seed, const FpnBank* bank = nullptr);

struct Rescaled8 {
  Image8Array pixels;
  bool degenerate = false;  // constant input, output forced to zero
};

Rescaled8 rescaleTo8bit(const RadiometricImage& image);

/// Bilinear interpolation; std::nullopt when (x, y) leaves [0, w-1] x [0, h-1].
std::optional<double> bilinearSample(const RadiometricImage& image, double x, double y);

/// Unchecked bilinear interpolation for hot loops; caller guarantees bounds.
inline double bilinearUnchecked(const ImageArray& img, double x, double y) {
  const int w = static_cast<int>(img.cols());
  const int h = static_cast<int>(img.rows());
  int x0 = static_cast<int>(x);
  int y0 = static_cast<int>(y);
  if (x0 >= w - 1) x0 = w - 2;
  if (y0 >= h - 1) y0 = h - 2;
  if (x0 < 0) x0 = 0;
  if (y0 < 0) y0 = 0;
  const double ax = x - x0;
  const double ay = y - y0;
  const double* r0 = img.data() + static_cast<std::ptrdiff_t>(y0) * w + x0;
  const double* r1 = r0 + w;
  return (1.0 - ay) * ((1.0 - ax) * r0[0] + ax * r0[1]) + ay * ((1.0 - ax) * r1[0] + ax * r1[1]);
}

inline bool insideImage(int width, int height, double x, double y) {
  return x >= 0.0 && y >= 0.0 && x <= width - 1.0 && y <= height - 1.0;
}

/// One 2x2 box-filter + 2x decimation step; odd edges average the pixels available.
RadiometricImage downsample2x(const RadiometricImage& image);

/// Throws std::invalid_argument when levels < 1 or the coarsest level would be
/// smaller than min_level_size in either dimension.
ImagePyramid buildPyramid(const RadiometricImage& image, int levels, int min_level_size = 16);

}  // namespace tio
