#include "tio/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "tio/dataset.hpp"
#include "tio/geometry.hpp"
#include "tio/image_io.hpp"
#include "tio/settings.hpp"

namespace tio {

// ---- scene -----------------------------------------------------------------

namespace {

constexpr double kBlobCutoff = 6.0;  // sigmas

double blobValue(const HotBlob& b, double u, double v) {
  const double du = u - b.u, dv = v - b.v;
  const double r2 = du * du + dv * dv;
  if (r2 >= kBlobCutoff * kBlobCutoff * b.sigma * b.sigma) return 0.0;
  return b.amplitude * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
}

double cosineValue(const CosineTerm& c, double u, double v) { return c.amplitude * std::cos(c.ku * u + c.kv * v + c.phase); }

}  // namespace

double TextureField::value(double u, double v) const {
  double s = base;
  for (const auto& c : cosines) s += cosineValue(c, u, v);
  for (const auto& b : blobs) s += blobValue(b, u, v);
  return s;
}

TexturedPlane TexturedPlane::rasterize(const Eigen::Vector3d& origin, const Eigen::Vector3d& u_axis,
                                       const Eigen::Vector3d& v_axis, double width, double height, double texel,
                                       const TextureField& field) {
  if (!(texel > 0.0) || !(width > 0.0) || !(height > 0.0))
    throw std::invalid_argument("textured plane: extent and texel must be positive");
  TexturedPlane p;
  p.origin = origin;
  p.u_axis = u_axis.normalized();
  p.v_axis = v_axis.normalized();
  p.width = width;
  p.height = height;
  p.texel = texel;
  const int nu = static_cast<int>(std::ceil(width / texel));
  const int nv = static_cast<int>(std::ceil(height / texel));
  p.texture = ImageArray::Constant(nv, nu, field.base);
  for (int j = 0; j < nv; ++j)
    for (int i = 0; i < nu; ++i) {
      const double u = (i + 0.5) * texel, v = (j + 0.5) * texel;
      for (const auto& c : field.cosines) p.texture(j, i) += cosineValue(c, u, v);
    }
  // blobs are splatted over their support only
  for (const auto& b : field.blobs) {
    const double r = kBlobCutoff * b.sigma;
    const int i0 = std::max(0, static_cast<int>(std::floor((b.u - r) / texel - 0.5)));
    const int i1 = std::min(nu - 1, static_cast<int>(std::ceil((b.u + r) / texel - 0.5)));
    const int j0 = std::max(0, static_cast<int>(std::floor((b.v - r) / texel - 0.5)));
    const int j1 = std::min(nv - 1, static_cast<int>(std::ceil((b.v + r) / texel - 0.5)));
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) p.texture(j, i) += blobValue(b, (i + 0.5) * texel, (j + 0.5) * texel);
  }
  return p;
}

double TexturedPlane::sample(double u, double v) const {
  const double x = std::clamp(u / texel - 0.5, 0.0, static_cast<double>(texture.cols() - 1));
  const double y = std::clamp(v / texel - 0.5, 0.0, static_cast<double>(texture.rows() - 1));
  return bilinearUnchecked(texture, x, y);
}

namespace {

TextureField randomTexture(const RoomConfig& cfg, double width, double height, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  TextureField f;
  f.base = cfg.base + 600.0 * (U(rng) - 0.5);
  auto addCosines = [&](int n, double min_wavelength, double max_wavelength, double amplitude) {
    for (int i = 0; i < n; ++i) {
      const double lambda = min_wavelength * std::pow(max_wavelength / min_wavelength, U(rng));
      const double dir = 2.0 * M_PI * U(rng);
      const double k = 2.0 * M_PI / lambda;
      f.cosines.push_back({amplitude * (0.5 + 0.5 * U(rng)), k * std::cos(dir), k * std::sin(dir), 2.0 * M_PI * U(rng)});
    }
  };
  addCosines(4, 1.5, 6.0, cfg.smooth_amplitude / 4.0);
  addCosines(10, 0.15, 0.6, cfg.detail_amplitude / 3.0);
  const int blobs = static_cast<int>(std::lround(cfg.blob_density * width * height));
  for (int i = 0; i < blobs; ++i) {
    const double sigma = cfg.min_blob_sigma * std::pow(cfg.max_blob_sigma / cfg.min_blob_sigma, U(rng));
    const bool hot = U(rng) < 0.75;
    const double amp = (0.3 + 0.7 * U(rng)) * (hot ? cfg.blob_amplitude : -0.5 * cfg.blob_amplitude);
    f.blobs.push_back({U(rng) * width, U(rng) * height, sigma, amp});
  }
  return f;
}

}  // namespace

SceneModel makeRoomScene(const RoomConfig& cfg, std::uint64_t seed) {
  if (!(cfg.length > 0 && cfg.width > 0 && cfg.height > 0)) throw std::invalid_argument("room: extents must be positive");
  std::mt19937_64 rng(seed);
  const double L = cfg.length, W = cfg.width, H = cfg.height;
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX(), ey = Eigen::Vector3d::UnitY(), ez = Eigen::Vector3d::UnitZ();
  struct Spec {
    Eigen::Vector3d origin, u, v;
    double w, h;
  };
  const Spec specs[] = {
      {{-L / 2, -W / 2, 0.0}, ex, ey, L, W},  // floor
      {{-L / 2, -W / 2, H}, ex, ey, L, W},    // ceiling
      {{-L / 2, -W / 2, 0.0}, ex, ez, L, H},  // south wall
      {{-L / 2, W / 2, 0.0}, ex, ez, L, H},   // north wall
      {{-L / 2, -W / 2, 0.0}, ey, ez, W, H},  // west wall
      {{L / 2, -W / 2, 0.0}, ey, ez, W, H},   // east wall
  };
  SceneModel scene;
  scene.ambient = cfg.base;
  for (const auto& s : specs)
    scene.planes.push_back(
        TexturedPlane::rasterize(s.origin, s.u, s.v, s.w, s.h, cfg.texel, randomTexture(cfg, s.w, s.h, rng)));
  return scene;
}

std::optional<RayHit> castRay(const SceneModel& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  std::optional<RayHit> best;
  constexpr double kEdge = 1e-9;
  for (int i = 0; i < static_cast<int>(scene.planes.size()); ++i) {
    const auto& p = scene.planes[i];
    const Eigen::Vector3d n = p.u_axis.cross(p.v_axis);
    const double denom = n.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const double s = n.dot(p.origin - origin) / denom;
    if (!(s > 1e-9) || (best && s >= best->distance)) continue;
    const Eigen::Vector3d x = origin + s * dir - p.origin;
    const double u = x.dot(p.u_axis), v = x.dot(p.v_axis);
    if (u < -kEdge || v < -kEdge || u > p.width + kEdge || v > p.height + kEdge) continue;
    best = RayHit{s, p.sample(u, v), i};
  }
  return best;
}

// ---- trajectory ------------------------------------------------------------

namespace {

// quintic smoothstep, its derivatives and its integral on [0, 1]
double smooth(double x) { return x * x * x * (10.0 + x * (-15.0 + 6.0 * x)); }
double smooth1(double x) { return 30.0 * x * x * (1.0 - x) * (1.0 - x); }
double smooth2(double x) { return 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x); }
double smoothIntegral(double x) { return x * x * x * x * (2.5 + x * (-3.0 + x)); }

}  // namespace

void LoopTrajectory::validate() const {
  if (!(duration > 0.0)) throw std::invalid_argument("trajectory: duration must be positive");
  if (rest < 0.0 || ramp < 0.0) throw std::invalid_argument("trajectory: rest and ramp must be non-negative");
  if (2.0 * rest + 2.0 * ramp > duration + 1e-12)
    throw std::invalid_argument("trajectory: rest and ramps exceed the duration");
  if (!(semi_x > 0.0 && semi_y > 0.0)) throw std::invalid_argument("trajectory: semi-axes must be positive");
}

LoopTrajectory::Phase LoopTrajectory::phase(double t) const {
  const double t0 = rest, t1 = duration - rest;
  const double moving = t1 - t0;
  const double total = ramp > 0.0 ? moving - ramp : moving;
  const double rate = total > 0.0 ? 2.0 * M_PI * loops / total : 0.0;
  Phase p{start_angle, 0.0, 0.0, 0.0, 0.0, 0.0};
  double W = 0.0;
  if (t < t0) {
    W = 0.0;
  } else if (t > t1) {
    W = total;
  } else if (ramp > 0.0 && t < t0 + ramp) {
    const double x = (t - t0) / ramp;
    p.w = smooth(x);
    p.dw = smooth1(x) / ramp;
    p.ddw = smooth2(x) / (ramp * ramp);
    W = ramp * smoothIntegral(x);
  } else if (ramp > 0.0 && t > t1 - ramp) {
    const double x = (t1 - t) / ramp;
    p.w = smooth(x);
    p.dw = -smooth1(x) / ramp;
    p.ddw = smooth2(x) / (ramp * ramp);
    W = total - ramp * smoothIntegral(x);
  } else {
    p.w = 1.0;
    W = (ramp > 0.0 ? 0.5 * ramp : 0.0) + (t - t0 - ramp);
  }
  p.phi = start_angle + rate * W;
  p.dphi = rate * p.w;
  p.ddphi = rate * p.dw;
  return p;
}

Eigen::Vector3d LoopTrajectory::position(double t) const {
  const Phase p = phase(t);
  const double tau = t - rest, wb = 2.0 * M_PI * bob_frequency;
  return {center.x() + semi_x * std::cos(p.phi), center.y() + semi_y * std::sin(p.phi),
          height + bob_amplitude * p.w * std::sin(wb * tau)};
}

Eigen::Vector3d LoopTrajectory::velocity(double t) const {
  const Phase p = phase(t);
  const double tau = t - rest, wb = 2.0 * M_PI * bob_frequency;
  return {-semi_x * std::sin(p.phi) * p.dphi, semi_y * std::cos(p.phi) * p.dphi,
          bob_amplitude * (p.dw * std::sin(wb * tau) + p.w * wb * std::cos(wb * tau))};
}

Eigen::Vector3d LoopTrajectory::acceleration(double t) const {
  const Phase p = phase(t);
  const double tau = t - rest, wb = 2.0 * M_PI * bob_frequency;
  const double s = std::sin(p.phi), c = std::cos(p.phi);
  return {-semi_x * (c * p.dphi * p.dphi + s * p.ddphi), semi_y * (-s * p.dphi * p.dphi + c * p.ddphi),
          bob_amplitude * (p.ddw * std::sin(wb * tau) + 2.0 * p.dw * wb * std::cos(wb * tau) -
                           p.w * wb * wb * std::sin(wb * tau))};
}

Eigen::Vector3d LoopTrajectory::euler(double t, Eigen::Vector3d* rates) const {
  const Phase p = phase(t);
  const double a = semi_x, b = semi_y;
  const double s = std::sin(p.phi), c = std::cos(p.phi);
  const double yaw = std::atan2(b * c, -a * s);
  const double dyaw = a * b / (a * a * s * s + b * b * c * c) * p.dphi;
  const double tau = t - rest;
  const double wp = 2.0 * M_PI * sway_frequency, wr = 1.3 * wp;
  const double pitch = sway_amplitude * p.w * std::sin(wp * tau);
  const double dpitch = sway_amplitude * (p.dw * std::sin(wp * tau) + p.w * wp * std::cos(wp * tau));
  const double roll = 0.7 * sway_amplitude * p.w * std::sin(wr * tau + 1.0);
  const double droll = 0.7 * sway_amplitude * (p.dw * std::sin(wr * tau + 1.0) + p.w * wr * std::cos(wr * tau + 1.0));
  if (rates) *rates = {dyaw, dpitch, droll};
  return {yaw, pitch, roll};
}

Eigen::Quaterniond LoopTrajectory::orientation(double t) const {
  const Eigen::Vector3d e = euler(t, nullptr);
  return (Eigen::AngleAxisd(e(0), Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(e(1), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(e(2), Eigen::Vector3d::UnitX()))
      .normalized();
}

Eigen::Vector3d LoopTrajectory::angularVelocityBody(double t) const {
  Eigen::Vector3d r;
  const Eigen::Vector3d e = euler(t, &r);
  const Eigen::Matrix3d Ry = Eigen::AngleAxisd(e(1), Eigen::Vector3d::UnitY()).toRotationMatrix();
  const Eigen::Matrix3d Rx = Eigen::AngleAxisd(e(2), Eigen::Vector3d::UnitX()).toRotationMatrix();
  return (Ry * Rx).transpose() * Eigen::Vector3d(0.0, 0.0, r(0)) + Rx.transpose() * Eigen::Vector3d(0.0, r(1), 0.0) +
         Eigen::Vector3d(r(2), 0.0, 0.0);
}

FrameState LoopTrajectory::state(double t) const {
  FrameState s;
  s.t = t;
  s.p = position(t);
  s.q = orientation(t);
  s.v = velocity(t);
  return s;
}

double LoopTrajectory::pathLength(int steps) const {
  const double h = duration / steps;
  double sum = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    sum += w * velocity(i * h).head<2>().norm();
  }
  return sum * h / 3.0;
}

// ---- sensors ---------------------------------------------------------------

CameraModel SimConfig::defaultCamera() {
  CameraModel cam;
  cam.intrinsics = {300.0, 300.0, 159.5, 127.5};
  cam.R_bc << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  cam.t_bc = Eigen::Vector3d(0.05, 0.0, 0.03);
  cam.width = 320;
  cam.height = 256;
  return cam;
}

bool SimConfig::suspended(double t) const {
  for (const auto& g : nuc_gaps)
    if (t >= g.start - 1e-9 && t < g.start + g.duration - 1e-9) return true;
  return false;
}

int SimConfig::frameCount() const { return static_cast<int>(std::llround(duration * camera_rate)); }

void SimConfig::validate() const {
  if (!(duration > 0.0)) throw std::invalid_argument("sim config: duration must be positive");
  if (!(camera_rate > 0.0)) throw std::invalid_argument("sim config: camera_rate must be positive");
  if (!(imu_rate >= 10.0 * camera_rate)) throw std::invalid_argument("sim config: imu_rate must be at least 10x camera_rate");
  if (fpn_amplitude < 0.0 || shot_noise < 0.0) throw std::invalid_argument("sim config: noise levels must be non-negative");
  for (const auto& g : nuc_gaps)
    if (!(g.duration > 0.0) || g.duration > 0.5 + 1e-12)
      throw std::invalid_argument("sim config: NUC gap durations must lie in (0, 0.5] s");
  camera.validate();
  if (camera.width <= 0 || camera.height <= 0) throw std::invalid_argument("sim config: camera resolution must be positive");
  imu.validate();
}

RenderedFrame renderFrame(const SceneModel& scene, const LoopTrajectory& trajectory, double t, const SimConfig& cfg,
                          const FpnPattern* fpn, std::uint64_t noise_seed) {
  if (t < -1e-12 || t > trajectory.duration + 1e-12) throw std::invalid_argument("renderFrame: time outside trajectory");
  if (cfg.suspended(t)) throw FrameSuspended("frame suspended at t=" + formatDouble(t) + " (NUC gap)");
  const auto& cam = cfg.camera;
  if (fpn && (fpn->width() != cam.width || fpn->height() != cam.height))
    throw DimensionError("renderFrame: FPN pattern size differs from the camera");
  RenderedFrame out;
  out.pose = trajectory.state(t);
  const Eigen::Matrix3d R_wc = out.pose.q.toRotationMatrix() * cam.R_bc;
  const Eigen::Vector3d origin = out.pose.p + out.pose.q * cam.t_bc;

  ImageArray img(cam.height, cam.width);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Eigen::Vector3d dir = R_wc * backProject(cam.intrinsics, Eigen::Vector2d(x, y));
      const auto hit = castRay(scene, origin, dir);
      img(y, x) = hit ? hit->value : scene.ambient;
    }
  if (fpn) img += fpn->offsets;
  if (cfg.shot_noise > 0.0) {
    std::seed_seq seq{static_cast<std::uint32_t>(noise_seed), static_cast<std::uint32_t>(noise_seed >> 32), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> n(0.0, cfg.shot_noise);
    for (int i = 0; i < img.size(); ++i) img.data()[i] += n(rng);
  }
  out.image = RadiometricImage::clamped(img, t);
  return out;
}

ImuSequence synthesizeImu(const LoopTrajectory& trajectory, const SimConfig& cfg, std::uint64_t seed,
                          const Eigen::Vector3d& gravity_w) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x1a0u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> n(0.0, 1.0);
  auto gauss = [&] { return Eigen::Vector3d(n(rng), n(rng), n(rng)); };
  const double dt = 1.0 / cfg.imu_rate;
  const int count = static_cast<int>(std::llround(trajectory.duration * cfg.imu_rate));
  const auto& p = cfg.imu;
  ImuSequence out;
  Eigen::Vector3d ba = cfg.accel_bias, bg = cfg.gyro_bias;
  for (int k = 0; k <= count; ++k) {
    const double t = k * dt;
    ImuSample s;
    s.t = t;
    s.gyro = trajectory.angularVelocityBody(t) + bg + p.gyro_noise / std::sqrt(dt) * gauss();
    s.accel = trajectory.orientation(t).conjugate() * (trajectory.acceleration(t) - gravity_w) + ba +
              p.accel_noise / std::sqrt(dt) * gauss();
    out.samples.push_back(s);
    out.accel_bias.push_back(ba);
    out.gyro_bias.push_back(bg);
    ba += p.accel_bias_rw * std::sqrt(dt) * gauss();
    bg += p.gyro_bias_rw * std::sqrt(dt) * gauss();
  }
  return out;
}

FpnPattern sessionFpn(const SimConfig& cfg, std::uint64_t seed) {
  if (cfg.fpn_amplitude <= 0.0) return {ImageArray::Zero(cfg.camera.height, cfg.camera.width)};
  return synthesizeFlatField(cfg.camera.width, cfg.camera.height, cfg.fpn_amplitude, seed ^ 0xf9a3c1d5ull);
}

SequenceSummary generateSequence(const SceneModel& scene, const LoopTrajectory& trajectory, const SimConfig& cfg,
                                 std::uint64_t seed, const std::filesystem::path& out_dir, const Config& manifest_extra) {
  cfg.validate();
  trajectory.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create " + out_dir.string());

  Config manifest = simToConfig(cfg);
  manifest.merge(trajectoryToConfig(trajectory));
  manifest.merge(manifest_extra);
  manifest.set("seed", std::to_string(seed));
  manifest.save(out_dir / "sim_manifest");

  const FpnPattern fpn = sessionFpn(cfg, seed);
  SequenceSummary summary;
  std::vector<FrameEntry> index;
  std::vector<StampedPose> truth;
  for (int k = 0; k < cfg.frameCount(); ++k) {
    const double t = cfg.frameTime(k);
    const FrameState s = trajectory.state(t);
    truth.push_back({t, s.p, s.q});
    if (cfg.suspended(t)) {
      ++summary.frames_suspended;
      continue;
    }
    const auto frame = renderFrame(scene, trajectory, t, cfg, &fpn, seed * 1000003ull + static_cast<std::uint64_t>(k));
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06d.pgm", k);
    writePgm16(out_dir / name, frame.image);
    index.push_back({t, name});
    ++summary.frames_written;
  }
  writeFrameIndex(out_dir, index);
  const ImuSequence imu = synthesizeImu(trajectory, cfg, seed);
  writeImuCsv(out_dir / "imu.csv", imu.samples);
  summary.imu_samples = static_cast<int>(imu.samples.size());
  writeTum(out_dir / "groundtruth.txt", truth);
  return summary;
}

// ---- homography pairs ------------------------------------------------------

std::vector<HomographyPair> generateHomographyPairs(const std::vector<RadiometricImage>& corpus,
                                                    const HomographyMagnitudes& magnitudes, std::uint64_t seed,
                                                    const AugmentationConfig* augment) {
  if (corpus.empty()) throw std::invalid_argument("generateHomographyPairs: empty corpus");
  std::mt19937_64 rng(seed);
  std::vector<HomographyPair> out;
  out.reserve(corpus.size());
  for (const auto& a : corpus) {
    HomographyPair p;
    p.a = a;
    p.H = sampleHomography(a.width(), a.height(), magnitudes, rng);
    p.b = warpImage(a, p.H);
    if (augment) p.b = photometricAugment(p.b, *augment, rng()).image;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace tio
