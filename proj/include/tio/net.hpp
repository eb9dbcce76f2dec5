#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace tio {

/// Feature tensor in channel-major layout: data is channels x (height * width),
/// column index y * width + x.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  Eigen::MatrixXd data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(Eigen::MatrixXd::Zero(c, h * w)) {}
  int spatial() const { return height * width; }
};

enum class LayerKind : std::uint8_t { kStandard = 0, kDepthwise = 1, kPointwise = 2 };
enum class Activation : std::uint8_t { kNone = 0, kRelu = 1 };

using KernelMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One convolution. Kernel rows are output channels; columns run over
/// (input channel, ky, kx) in row-major order. Depthwise layers have one
/// input channel per group, so their kernel is channels x (kh * kw).
///
/// Parameters are kept float32-representable (rounded at init and after every
/// optimizer update) so the on-disk float32 format round-trips bit-exactly.
struct Layer {
  LayerKind kind = LayerKind::kStandard;
  int stride = 1;
  Activation activation = Activation::kRelu;
  int out_channels = 0;
  int in_channels = 0;  // per group; 1 for depthwise
  int kernel_h = 1;
  int kernel_w = 1;
  KernelMatrix kernel;
  Eigen::VectorXd bias;

  /// Channels consumed from the previous tensor.
  int inputChannels() const { return kind == LayerKind::kDepthwise ? out_channels : in_channels; }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Layer list = encoder, detection head, descriptor head. The two heads have
/// equal length, are stride 1, and end in the only activation-free layers of
/// the network; every other layer uses ReLU.
struct NetworkWeights {
  std::vector<Layer> layers;

  struct Split {
    int encoder_end = 0;   // first detection-head layer
    int detector_end = 0;  // first descriptor-head layer
  };

  /// Throws ShapeError naming the offending layer when shapes do not chain,
  /// the encoder does not downsample by exactly 8, or the detection head
  /// does not emit 64 channels.
  Split split() const;
  void validate() const { (void)split(); }

  int descriptorDim() const;
  std::size_t parameterCount() const;
};

/// Per-layer gradients, same shapes as the weights.
struct LayerGradient {
  KernelMatrix kernel;
  Eigen::VectorXd bias;
};
using NetworkGradient = std::vector<LayerGradient>;

NetworkGradient zeroGradient(const NetworkWeights& weights);

/// Stem 3x3 conv 1->16, depthwise-separable blocks 16->32(s2), 32->32, 32->64(s2),
/// 64->64, 64->128(s2); detection and descriptor heads 3x3 128->128 + 1x1 128->64.
NetworkWeights makeThermalPointNet(std::uint64_t seed);

/// Small net for gradient checks and quick experiments: one strided 3x3 encoder
/// conv (stride 8), one 1x1 detection layer, one 1x1 descriptor layer.
NetworkWeights makeToyNet(int encoder_channels, int descriptor_dim, std::uint64_t seed);

/// Rounds every parameter to the nearest float32 value.
void roundToFloat(NetworkWeights& weights);

Tensor runLayer(const Layer& layer, const Tensor& input);

/// Intermediate values kept for backpropagation.
struct ForwardCache {
  std::vector<Tensor> inputs;          // input of each evaluated layer
  std::vector<Tensor> outputs;         // post-activation output of each evaluated layer
  std::vector<Eigen::MatrixXd> cols;   // im2col buffers of standard convolutions
};

struct NetOutputs {
  Tensor detector_logits;  // 64 x Hc x Wc
  Tensor descriptor_raw;   // D x Hc x Wc; empty when not requested
};

/// Throws DimensionError-like std::invalid_argument when H or W is not divisible by 8.
NetOutputs forwardNet(const NetworkWeights& weights, const Tensor& input, bool with_descriptor,
                      ForwardCache* cache = nullptr);

/// Accumulates dLoss/dparams into `grad` given gradients at the head outputs.
/// Either head gradient may be null.
void backwardNet(const NetworkWeights& weights, const ForwardCache& cache, const Tensor* d_detector_logits,
                 const Tensor* d_descriptor_raw, NetworkGradient& grad);

// Weights file: "TPNW", u32 version, u32 layer count; per layer u8 kind, u8 stride,
// u8 activation, u32 dims (out, in, kh, kw), then kernel and bias as little-endian float32.
void saveWeights(const std::filesystem::path& path, const NetworkWeights& weights);
NetworkWeights loadWeights(const std::filesystem::path& path);

/// Errors from loadWeights; the message names the layer index or missing byte count.
class WeightsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tio
