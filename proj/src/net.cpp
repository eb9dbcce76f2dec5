#include "tio/net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace tio {

namespace {

constexpr int kCellSize = 8;
constexpr int kDetectorChannels = 64;

int outSize(int in, int kernel, int stride) {
  const int pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

Layer makeLayer(LayerKind kind, int in, int out, int k, int stride, Activation act, double gain,
                std::mt19937_64& rng) {
  Layer l;
  l.kind = kind;
  l.stride = stride;
  l.activation = act;
  l.out_channels = out;
  l.in_channels = kind == LayerKind::kDepthwise ? 1 : in;
  l.kernel_h = k;
  l.kernel_w = k;
  const int fan_in = l.in_channels * k * k;
  std::normal_distribution<double> n(0.0, gain * std::sqrt(2.0 / fan_in));
  l.kernel.resize(out, fan_in);
  for (Eigen::Index i = 0; i < l.kernel.size(); ++i) l.kernel.data()[i] = n(rng);
  l.bias = Eigen::VectorXd::Zero(out);
  return l;
}

Eigen::MatrixXd im2col(const Tensor& x, int k, int stride, int oh, int ow) {
  const int pad = k / 2;
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(x.channels * k * k, oh * ow);
  for (int c = 0; c < x.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= x.height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= x.width) continue;
            cols(row, oy * ow + ox) = x.data(c, iy * x.width + ix);
          }
        }
      }
    }
  }
  return cols;
}

void col2imAdd(const Eigen::MatrixXd& dcols, int k, int stride, int oh, int ow, Tensor& dx) {
  const int pad = k / 2;
  for (int c = 0; c < dx.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= dx.height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= dx.width) continue;
            dx.data(c, iy * dx.width + ix) += dcols(row, oy * ow + ox);
          }
        }
      }
    }
  }
}

Tensor subsample(const Tensor& x, int stride) {
  if (stride == 1) return x;
  const int oh = outSize(x.height, 1, stride);
  const int ow = outSize(x.width, 1, stride);
  Tensor out(x.channels, oh, ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) out.data.col(oy * ow + ox) = x.data.col(oy * stride * x.width + ox * stride);
  }
  return out;
}

// Evaluates one layer; `cols` receives the im2col buffer for standard convs.
Tensor layerForward(const Layer& l, const Tensor& x, Eigen::MatrixXd* cols_out) {
  const int oh = outSize(x.height, l.kernel_h, l.stride);
  const int ow = outSize(x.width, l.kernel_w, l.stride);
  Tensor y(l.out_channels, oh, ow);
  switch (l.kind) {
    case LayerKind::kStandard: {
      Eigen::MatrixXd cols = im2col(x, l.kernel_h, l.stride, oh, ow);
      y.data.noalias() = l.kernel * cols;
      if (cols_out != nullptr) *cols_out = std::move(cols);
      break;
    }
    case LayerKind::kPointwise: {
      if (l.stride == 1) {
        y.data.noalias() = l.kernel * x.data;
      } else {
        y.data.noalias() = l.kernel * subsample(x, l.stride).data;
      }
      break;
    }
    case LayerKind::kDepthwise: {
      const int k = l.kernel_h;
      const int pad = k / 2;
      for (int c = 0; c < l.out_channels; ++c) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            double acc = 0.0;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * l.stride + ky - pad;
              if (iy < 0 || iy >= x.height) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * l.stride + kx - pad;
                if (ix < 0 || ix >= x.width) continue;
                acc += l.kernel(c, ky * k + kx) * x.data(c, iy * x.width + ix);
              }
            }
            y.data(c, oy * ow + ox) = acc;
          }
        }
      }
      break;
    }
  }
  y.data.colwise() += l.bias;
  if (l.activation == Activation::kRelu) y.data = y.data.cwiseMax(0.0);
  return y;
}

// dy is the gradient at the post-activation output; returns the input gradient.
Tensor layerBackward(const Layer& l, const Tensor& x, const Tensor& y, const Eigen::MatrixXd* cols,
                     Eigen::MatrixXd dz, LayerGradient& g) {
  if (l.activation == Activation::kRelu) dz = dz.cwiseProduct((y.data.array() > 0.0).cast<double>().matrix());
  g.bias += dz.rowwise().sum();
  Tensor dx(x.channels, x.height, x.width);
  const int oh = y.height;
  const int ow = y.width;
  switch (l.kind) {
    case LayerKind::kStandard: {
      g.kernel.noalias() += dz * cols->transpose();
      const Eigen::MatrixXd dcols = l.kernel.transpose() * dz;
      col2imAdd(dcols, l.kernel_h, l.stride, oh, ow, dx);
      break;
    }
    case LayerKind::kPointwise: {
      if (l.stride == 1) {
        g.kernel.noalias() += dz * x.data.transpose();
        dx.data.noalias() = l.kernel.transpose() * dz;
      } else {
        const Tensor xs = subsample(x, l.stride);
        g.kernel.noalias() += dz * xs.data.transpose();
        const Eigen::MatrixXd dxs = l.kernel.transpose() * dz;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            dx.data.col(oy * l.stride * x.width + ox * l.stride) += dxs.col(oy * ow + ox);
          }
        }
      }
      break;
    }
    case LayerKind::kDepthwise: {
      const int k = l.kernel_h;
      const int pad = k / 2;
      for (int c = 0; c < l.out_channels; ++c) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const double d = dz(c, oy * ow + ox);
            if (d == 0.0) continue;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * l.stride + ky - pad;
              if (iy < 0 || iy >= x.height) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * l.stride + kx - pad;
                if (ix < 0 || ix >= x.width) continue;
                const int idx = iy * x.width + ix;
                g.kernel(c, ky * k + kx) += d * x.data(c, idx);
                dx.data(c, idx) += d * l.kernel(c, ky * k + kx);
              }
            }
          }
        }
      }
      break;
    }
  }
  return dx;
}

std::string layerName(std::size_t i) { return "layer " + std::to_string(i); }

}  // namespace

NetworkWeights::Split NetworkWeights::split() const {
  if (layers.size() < 3) throw ShapeError("network needs encoder, detection and descriptor layers");
  std::vector<std::size_t> heads_end;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.stride < 1) throw ShapeError(layerName(i) + ": stride must be >= 1");
    if (l.kernel_h != l.kernel_w || l.kernel_h % 2 == 0) throw ShapeError(layerName(i) + ": kernel must be odd and square");
    if (l.kind == LayerKind::kPointwise && l.kernel_h != 1) throw ShapeError(layerName(i) + ": pointwise kernel must be 1x1");
    if (l.kind == LayerKind::kDepthwise && l.in_channels != 1) throw ShapeError(layerName(i) + ": depthwise layer must have 1 input channel per group");
    if (l.kernel.rows() != l.out_channels || l.kernel.cols() != l.in_channels * l.kernel_h * l.kernel_w) {
      throw ShapeError(layerName(i) + ": kernel storage does not match declared dimensions");
    }
    if (l.bias.size() != l.out_channels) throw ShapeError(layerName(i) + ": bias length mismatch");
    if (l.activation == Activation::kNone) heads_end.push_back(i);
  }
  if (heads_end.size() != 2 || heads_end[1] != layers.size() - 1) {
    throw ShapeError("network must end each head with exactly one activation-free layer");
  }
  const int det_last = static_cast<int>(heads_end[0]);
  const int head_len = static_cast<int>(layers.size()) - 1 - det_last;
  Split s;
  s.detector_end = det_last + 1;
  s.encoder_end = det_last + 1 - head_len;
  if (s.encoder_end < 1) throw ShapeError("network has no encoder layers");

  int channels = 1;
  int stride = 1;
  for (int i = 0; i < s.encoder_end; ++i) {
    const Layer& l = layers[static_cast<std::size_t>(i)];
    if (l.inputChannels() != channels) {
      throw ShapeError(layerName(static_cast<std::size_t>(i)) + ": expects " + std::to_string(l.inputChannels()) +
                       " input channels, previous layer gives " + std::to_string(channels));
    }
    channels = l.out_channels;
    stride *= l.stride;
  }
  if (stride != kCellSize) throw ShapeError("encoder downsamples by " + std::to_string(stride) + ", expected 8");
  const int encoder_channels = channels;
  for (int head = 0; head < 2; ++head) {
    const int begin = head == 0 ? s.encoder_end : s.detector_end;
    channels = encoder_channels;
    for (int i = begin; i < begin + head_len; ++i) {
      const Layer& l = layers[static_cast<std::size_t>(i)];
      if (l.inputChannels() != channels) {
        throw ShapeError(layerName(static_cast<std::size_t>(i)) + ": expects " + std::to_string(l.inputChannels()) +
                         " input channels, previous layer gives " + std::to_string(channels));
      }
      if (l.stride != 1) throw ShapeError(layerName(static_cast<std::size_t>(i)) + ": head layers must have stride 1");
      channels = l.out_channels;
    }
    if (head == 0 && channels != kDetectorChannels) {
      throw ShapeError(layerName(static_cast<std::size_t>(det_last)) + ": detection head must output 64 channels");
    }
  }
  return s;
}

int NetworkWeights::descriptorDim() const { return layers.back().out_channels; }

std::size_t NetworkWeights::parameterCount() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.kernel.size() + l.bias.size());
  return n;
}

NetworkGradient zeroGradient(const NetworkWeights& weights) {
  NetworkGradient g(weights.layers.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i].kernel = KernelMatrix::Zero(weights.layers[i].kernel.rows(), weights.layers[i].kernel.cols());
    g[i].bias = Eigen::VectorXd::Zero(weights.layers[i].bias.size());
  }
  return g;
}

void roundToFloat(NetworkWeights& weights) {
  for (auto& l : weights.layers) {
    l.kernel = l.kernel.cast<float>().cast<double>();
    l.bias = l.bias.cast<float>().cast<double>();
  }
}

NetworkWeights makeThermalPointNet(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  using LK = LayerKind;
  const auto relu = Activation::kRelu;
  NetworkWeights w;
  auto& L = w.layers;
  L.push_back(makeLayer(LK::kStandard, 1, 16, 3, 1, relu, 1.0, rng));
  struct Block { int in, out, stride; };
  for (const Block b : {Block{16, 32, 2}, Block{32, 32, 1}, Block{32, 64, 2}, Block{64, 64, 1}, Block{64, 128, 2}}) {
    L.push_back(makeLayer(LK::kDepthwise, b.in, b.in, 3, b.stride, relu, 1.0, rng));
    L.push_back(makeLayer(LK::kPointwise, b.in, b.out, 1, 1, relu, 1.0, rng));
  }
  L.push_back(makeLayer(LK::kStandard, 128, 128, 3, 1, relu, 1.0, rng));
  L.push_back(makeLayer(LK::kPointwise, 128, 64, 1, 1, Activation::kNone, 0.1, rng));
  const std::size_t det_head = L.size() - 1;
  L.push_back(makeLayer(LK::kStandard, 128, 128, 3, 1, relu, 1.0, rng));
  L.push_back(makeLayer(LK::kPointwise, 128, 64, 1, 1, Activation::kNone, 1.0, rng));
  // inputs are raw counts / 65535: texture is ~1% on a large DC level, so the
  // stem starts as zero-mean filters with a large gain
  auto& stem = L.front().kernel;
  for (Eigen::Index r = 0; r < stem.rows(); ++r) stem.row(r).array() -= stem.row(r).mean();
  stem *= 50.0;
  L[det_head].bias.setConstant(-5.0);  // logit of a sparse keypoint prior
  roundToFloat(w);
  return w;
}

NetworkWeights makeToyNet(int encoder_channels, int descriptor_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NetworkWeights w;
  w.layers.push_back(makeLayer(LayerKind::kStandard, 1, encoder_channels, 3, 8, Activation::kRelu, 1.0, rng));
  w.layers.push_back(makeLayer(LayerKind::kPointwise, encoder_channels, 64, 1, 1, Activation::kNone, 1.0, rng));
  w.layers.push_back(makeLayer(LayerKind::kPointwise, encoder_channels, descriptor_dim, 1, 1, Activation::kNone, 1.0, rng));
  // small random biases so ReLUs are not all active at once
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& l : w.layers) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = n(rng);
  }
  roundToFloat(w);
  return w;
}

Tensor runLayer(const Layer& layer, const Tensor& input) { return layerForward(layer, input, nullptr); }

NetOutputs forwardNet(const NetworkWeights& weights, const Tensor& input, bool with_descriptor, ForwardCache* cache) {
  if (input.height % kCellSize != 0 || input.width % kCellSize != 0 || input.height == 0 || input.width == 0) {
    throw std::invalid_argument("forward: image " + std::to_string(input.width) + "x" + std::to_string(input.height) +
                                " is not divisible by 8");
  }
  if (input.channels != 1) throw std::invalid_argument("forward: expected a single-channel input");
  const auto split = weights.split();
  const std::size_t n = weights.layers.size();
  if (cache != nullptr) {
    cache->inputs.assign(n, Tensor());
    cache->outputs.assign(n, Tensor());
    cache->cols.assign(n, Eigen::MatrixXd());
  }
  auto run = [&](std::size_t i, const Tensor& x) {
    Eigen::MatrixXd* cols = cache != nullptr ? &cache->cols[i] : nullptr;
    Tensor y = layerForward(weights.layers[i], x, cols);
    if (cache != nullptr) {
      cache->inputs[i] = x;
      cache->outputs[i] = y;
    }
    return y;
  };
  Tensor x = input;
  for (int i = 0; i < split.encoder_end; ++i) x = run(static_cast<std::size_t>(i), x);
  const Tensor encoded = x;
  NetOutputs out;
  for (int i = split.encoder_end; i < split.detector_end; ++i) x = run(static_cast<std::size_t>(i), x);
  out.detector_logits = std::move(x);
  if (with_descriptor) {
    x = encoded;
    for (std::size_t i = static_cast<std::size_t>(split.detector_end); i < n; ++i) x = run(i, x);
    out.descriptor_raw = std::move(x);
  }
  return out;
}

void backwardNet(const NetworkWeights& weights, const ForwardCache& cache, const Tensor* d_detector_logits,
                 const Tensor* d_descriptor_raw, NetworkGradient& grad) {
  const auto split = weights.split();
  const std::size_t n = weights.layers.size();
  auto back = [&](std::size_t i, const Eigen::MatrixXd& dy) {
    const Eigen::MatrixXd* cols = cache.cols[i].size() > 0 ? &cache.cols[i] : nullptr;
    return layerBackward(weights.layers[i], cache.inputs[i], cache.outputs[i], cols, dy, grad[i]);
  };
  const std::size_t enc_end = static_cast<std::size_t>(split.encoder_end);
  const Tensor& encoded = cache.outputs[enc_end - 1];
  Eigen::MatrixXd d_encoded = Eigen::MatrixXd::Zero(encoded.channels, encoded.spatial());
  if (d_detector_logits != nullptr) {
    Eigen::MatrixXd d = d_detector_logits->data;
    for (std::size_t i = static_cast<std::size_t>(split.detector_end); i-- > enc_end;) d = back(i, d).data;
    d_encoded += d;
  }
  if (d_descriptor_raw != nullptr) {
    if (cache.outputs[n - 1].channels == 0) throw std::logic_error("backward: descriptor head was not evaluated");
    Eigen::MatrixXd d = d_descriptor_raw->data;
    for (std::size_t i = n; i-- > static_cast<std::size_t>(split.detector_end);) d = back(i, d).data;
    d_encoded += d;
  }
  Eigen::MatrixXd d = std::move(d_encoded);
  for (std::size_t i = enc_end; i-- > 0;) d = back(i, d).data;
}

namespace {

void putU32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}
void putF32(std::ofstream& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  putU32(out, bits);
}

class Reader {
 public:
  Reader(std::vector<unsigned char> bytes, std::string name) : buf_(std::move(bytes)), name_(std::move(name)) {}
  void need(std::size_t n, const std::string& what) {
    if (pos_ + n > buf_.size()) {
      throw WeightsFormatError(name_ + ": truncated while reading " + what + ", missing " +
                               std::to_string(pos_ + n - buf_.size()) + " bytes");
    }
  }
  std::uint8_t u8(const std::string& what) {
    need(1, what);
    return buf_[pos_++];
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  double f32(const std::string& what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::vector<unsigned char> buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kWeightsVersion = 1;

}  // namespace

void saveWeights(const std::filesystem::path& path, const NetworkWeights& weights) {
  weights.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("TPNW", 4);
  putU32(out, kWeightsVersion);
  putU32(out, static_cast<std::uint32_t>(weights.layers.size()));
  for (const Layer& l : weights.layers) {
    const unsigned char header[3] = {static_cast<unsigned char>(l.kind), static_cast<unsigned char>(l.stride),
                                     static_cast<unsigned char>(l.activation)};
    out.write(reinterpret_cast<const char*>(header), 3);
    putU32(out, static_cast<std::uint32_t>(l.out_channels));
    putU32(out, static_cast<std::uint32_t>(l.in_channels));
    putU32(out, static_cast<std::uint32_t>(l.kernel_h));
    putU32(out, static_cast<std::uint32_t>(l.kernel_w));
    for (Eigen::Index r = 0; r < l.kernel.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.kernel.cols(); ++c) putF32(out, l.kernel(r, c));
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) putF32(out, l.bias(i));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

NetworkWeights loadWeights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightsFormatError("cannot open " + path.string());
  Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}), path.string());
  r.need(4, "magic");
  std::string magic;
  for (int i = 0; i < 4; ++i) magic.push_back(static_cast<char>(r.u8("magic")));
  if (magic != "TPNW") throw WeightsFormatError(path.string() + ": bad magic '" + magic + "'");
  const std::uint32_t version = r.u32("version");
  if (version != kWeightsVersion) throw WeightsFormatError(path.string() + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32("layer count");
  if (count > 4096) throw WeightsFormatError(path.string() + ": implausible layer count " + std::to_string(count));
  NetworkWeights w;
  w.layers.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "layer " + std::to_string(i);
    Layer& l = w.layers[i];
    const std::uint8_t kind = r.u8(where + " kind");
    if (kind > 2) throw WeightsFormatError(where + ": unknown kind " + std::to_string(kind));
    l.kind = static_cast<LayerKind>(kind);
    l.stride = r.u8(where + " stride");
    const std::uint8_t act = r.u8(where + " activation");
    if (act > 1) throw WeightsFormatError(where + ": unknown activation " + std::to_string(act));
    l.activation = static_cast<Activation>(act);
    const std::uint32_t dims[4] = {r.u32(where + " dims"), r.u32(where + " dims"), r.u32(where + " dims"),
                                   r.u32(where + " dims")};
    const std::uint64_t kernel_count = static_cast<std::uint64_t>(dims[0]) * dims[1] * dims[2] * dims[3];
    if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0 || dims[3] == 0 || kernel_count > (1u << 26)) {
      throw WeightsFormatError(where + ": invalid kernel shape");
    }
    if ((kernel_count + dims[0]) * 4 > r.remaining()) {
      throw WeightsFormatError(where + ": declared shape " + std::to_string(dims[0]) + "x" + std::to_string(dims[1]) +
                               "x" + std::to_string(dims[2]) + "x" + std::to_string(dims[3]) + " needs " +
                               std::to_string((kernel_count + dims[0]) * 4) + " bytes, missing " +
                               std::to_string((kernel_count + dims[0]) * 4 - r.remaining()) + " bytes");
    }
    l.out_channels = static_cast<int>(dims[0]);
    l.in_channels = static_cast<int>(dims[1]);
    l.kernel_h = static_cast<int>(dims[2]);
    l.kernel_w = static_cast<int>(dims[3]);
    l.kernel.resize(l.out_channels, l.in_channels * l.kernel_h * l.kernel_w);
    for (Eigen::Index rr = 0; rr < l.kernel.rows(); ++rr) {
      for (Eigen::Index c = 0; c < l.kernel.cols(); ++c) l.kernel(rr, c) = r.f32(where + " kernel");
    }
    l.bias.resize(l.out_channels);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias(k) = r.f32(where + " bias");
  }
  if (r.remaining() != 0) throw WeightsFormatError(path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes");
  try {
    w.validate();
  } catch (const ShapeError& e) {
    throw WeightsFormatError(path.string() + ": " + e.what());
  }
  return w;
}

}  // namespace tio
