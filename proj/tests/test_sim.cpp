#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tio/dataset.hpp"
#include "tio/geometry.hpp"
#include "tio/sim.hpp"

using namespace tio;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tio_sim_" + name);
  std::filesystem::remove_all(p);
  return p;
}

LoopTrajectory stationary() {
  LoopTrajectory t;
  t.duration = 2.0;
  t.rest = 1.0;
  t.ramp = 0.0;
  t.bob_amplitude = 0.0;
  t.sway_amplitude = 0.0;
  return t;
}

SimConfig quietConfig() {
  SimConfig cfg;
  cfg.fpn_amplitude = 0.0;
  cfg.shot_noise = 0.0;
  cfg.nuc_gaps.clear();
  cfg.imu.gyro_noise = cfg.imu.accel_noise = cfg.imu.gyro_bias_rw = cfg.imu.accel_bias_rw = 0.0;
  return cfg;
}

SimConfig smallCamera(SimConfig cfg) {
  cfg.camera.width = 80;
  cfg.camera.height = 64;
  cfg.camera.intrinsics = {75.0, 75.0, 39.5, 31.5};
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

// ---- trajectory -------------------------------------------------------------

TEST(Trajectory, DerivativesMatchFiniteDifferences) {
  LoopTrajectory traj;
  traj.duration = 20.0;
  const double h = 1e-4;
  for (double t : {0.5, 1.3, 2.2, 2.9, 7.0, 12.5, 17.4, 18.6, 19.5}) {
    const Eigen::Vector3d dv = (traj.position(t + h) - traj.position(t - h)) / (2 * h);
    EXPECT_LT((dv - traj.velocity(t)).norm(), 1e-6) << t;
    const Eigen::Vector3d da = (traj.velocity(t + h) - traj.velocity(t - h)) / (2 * h);
    EXPECT_LT((da - traj.acceleration(t)).norm(), 1e-5) << t;
    const Eigen::Quaterniond rel = traj.orientation(t - h).conjugate() * traj.orientation(t + h);
    const Eigen::Vector3d w = logQuat(rel) / (2 * h);
    EXPECT_LT((w - traj.angularVelocityBody(t)).norm(), 1e-6) << t;
  }
}

TEST(Trajectory, ContinuousAcrossRampBoundaries) {
  LoopTrajectory traj;
  const double eps = 1e-9;
  for (double tb : {traj.rest, traj.rest + traj.ramp, traj.duration - traj.rest - traj.ramp, traj.duration - traj.rest}) {
    EXPECT_LT((traj.velocity(tb - eps) - traj.velocity(tb + eps)).norm(), 1e-6) << tb;
    EXPECT_LT((traj.acceleration(tb - eps) - traj.acceleration(tb + eps)).norm(), 1e-6) << tb;
  }
}

TEST(Trajectory, RestsAtBothEnds) {
  LoopTrajectory traj;
  for (double t : {0.0, 0.5, 59.5, 60.0}) {
    EXPECT_LT(traj.velocity(t).norm(), 1e-12);
    EXPECT_LT(traj.angularVelocityBody(t).norm(), 1e-12);
  }
  EXPECT_LT((traj.position(0.0) - traj.position(60.0)).norm(), 1e-9);
}

TEST(Trajectory, DefaultLoopLength) {
  LoopTrajectory traj;
  // Ramanujan's ellipse perimeter for the 7.5 x 4.5 m loop.
  const double a = traj.semi_x, b = traj.semi_y;
  const double ramanujan = M_PI * (3 * (a + b) - std::sqrt((3 * a + b) * (a + 3 * b)));
  EXPECT_NEAR(traj.pathLength(), ramanujan, 1e-3);
  EXPECT_GT(traj.pathLength(), 35.0);
  EXPECT_LT(traj.pathLength(), 45.0);
}

TEST(Trajectory, OrientationIsUnit) {
  LoopTrajectory traj;
  for (double t = 0.0; t <= 60.0; t += 0.37) EXPECT_NEAR(traj.orientation(t).norm(), 1.0, 1e-12);
}

TEST(Trajectory, Validation) {
  LoopTrajectory t;
  t.rest = 20.0;
  t.ramp = 15.0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = LoopTrajectory{};
  t.semi_y = 0.0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
}

// ---- rendering --------------------------------------------------------------

TEST(Render, FrontoParallelMatchesAnalyticTexture) {
  TextureField field;
  field.base = 15000.0;
  field.cosines = {{1000.0, 2.0, 0.0, 0.3}, {800.0, 0.0, 3.0, 1.1}, {400.0, 1.5, -2.5, 0.0}};
  SceneModel scene;
  // wall at x = 5 facing the camera, u along +y, v along +z
  scene.planes.push_back(TexturedPlane::rasterize({5.0, -10.0, -5.0}, Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitZ(),
                                                  20.0, 10.0, 0.02, field));
  const LoopTrajectory traj = stationary();
  const SimConfig cfg = quietConfig();
  const auto frame = renderFrame(scene, traj, 0.5, cfg, nullptr, 1);
  ASSERT_LT(angularDistance(frame.pose.q, Eigen::Quaterniond::Identity()), 1e-12);

  // bilinear interpolation error bound h^2/8 (|f_uu| + |f_vv|) summed over terms
  double bound = 0.0;
  for (const auto& c : field.cosines) bound += c.amplitude * (c.ku * c.ku + c.kv * c.kv) * 0.02 * 0.02 / 8.0;

  const auto& cam = cfg.camera;
  const Eigen::Vector3d origin = frame.pose.p + cam.t_bc;
  double worst = 0.0;
  for (int y = 0; y < cam.height; y += 7)
    for (int x = 0; x < cam.width; x += 5) {
      const Eigen::Vector3d dir = cam.R_bc * backProject(cam.intrinsics, Eigen::Vector2d(x, y));
      const double s = (5.0 - origin.x()) / dir.x();
      const Eigen::Vector3d hit = origin + s * dir;
      const double expected = field.value(hit.y() + 10.0, hit.z() + 5.0);
      worst = std::max(worst, std::abs(frame.image(x, y) - expected));
    }
  EXPECT_LE(worst, bound);
  EXPECT_GT(bound, 0.0);
}

TEST(Render, DeterministicPerSeed) {
  const SceneModel scene = makeRoomScene({}, 3);
  const LoopTrajectory traj;
  const SimConfig cfg = smallCamera(SimConfig{});
  const FpnPattern fpn = sessionFpn(cfg, 3);
  const auto a = renderFrame(scene, traj, 12.3, cfg, &fpn, 42);
  const auto b = renderFrame(scene, traj, 12.3, cfg, &fpn, 42);
  const auto c = renderFrame(scene, traj, 12.3, cfg, &fpn, 43);
  EXPECT_TRUE((a.image.data() == b.image.data()).all());
  EXPECT_FALSE((a.image.data() == c.image.data()).all());
}

TEST(Render, SuspendedInsideGap) {
  const SceneModel scene = makeRoomScene({}, 3);
  const LoopTrajectory traj;
  const SimConfig cfg = smallCamera(SimConfig{});
  EXPECT_THROW(renderFrame(scene, traj, 30.2, cfg, nullptr, 1), FrameSuspended);
  EXPECT_NO_THROW(renderFrame(scene, traj, 29.95, cfg, nullptr, 1));
  EXPECT_NO_THROW(renderFrame(scene, traj, 30.5, cfg, nullptr, 1));
  EXPECT_THROW(renderFrame(scene, traj, 61.0, cfg, nullptr, 1), std::invalid_argument);
}

TEST(Render, RoomAlwaysInView) {
  const SceneModel scene = makeRoomScene({}, 5);
  const LoopTrajectory traj;
  const CameraModel cam = SimConfig::defaultCamera();
  for (double t = 0.0; t <= traj.duration; t += 0.5) {
    const FrameState s = traj.state(t);
    const auto hit = castRay(scene, s.p + s.q * cam.t_bc, s.q * cam.R_bc * Eigen::Vector3d::UnitZ());
    ASSERT_TRUE(hit.has_value()) << t;
    EXPECT_GT(hit->distance, 0.5) << t;
    EXPECT_GE(hit->value, 0.0);
    EXPECT_LE(hit->value, kMaxCount);
  }
}

TEST(Render, FpnIsFixedAcrossFrames) {
  const SceneModel scene = makeRoomScene({}, 9);
  const LoopTrajectory traj = stationary();
  SimConfig cfg = smallCamera(quietConfig());
  cfg.fpn_amplitude = 300.0;
  const FpnPattern fpn = sessionFpn(cfg, 9);
  const auto a = renderFrame(scene, traj, 0.1, cfg, &fpn, 1);
  const auto b = renderFrame(scene, traj, 1.9, cfg, &fpn, 2);
  const auto clean = renderFrame(scene, traj, 0.1, cfg, nullptr, 1);
  EXPECT_EQ((a.image.data() - b.image.data()).abs().maxCoeff(), 0.0);
  EXPECT_LT((a.image.data() - clean.image.data() - fpn.offsets).abs().maxCoeff(), 1e-9);
  EXPECT_GT(fpn.offsets.abs().maxCoeff(), 10.0);

  const FpnPattern same = sessionFpn(cfg, 9), other = sessionFpn(cfg, 10);
  EXPECT_TRUE((same.offsets == fpn.offsets).all());
  EXPECT_FALSE((other.offsets == fpn.offsets).all());
}

// ---- IMU --------------------------------------------------------------------

TEST(Imu, StationaryReadsGravityOnly) {
  const LoopTrajectory traj = stationary();
  SimConfig cfg = quietConfig();
  cfg.accel_bias.setZero();
  cfg.gyro_bias.setZero();
  const auto seq = synthesizeImu(traj, cfg, 1);
  ASSERT_EQ(seq.samples.size(), 401u);
  for (const auto& s : seq.samples) {
    EXPECT_LT(s.gyro.norm(), 1e-12);
    EXPECT_LT((s.accel - Eigen::Vector3d(0, 0, 9.81)).norm(), 1e-12);
  }
}

TEST(Imu, CircularMotionCentripetal) {
  LoopTrajectory traj;
  traj.semi_x = traj.semi_y = 3.0;
  traj.rest = traj.ramp = 0.0;
  traj.duration = 20.0;
  traj.bob_amplitude = traj.sway_amplitude = 0.0;
  SimConfig cfg = quietConfig();
  cfg.accel_bias.setZero();
  cfg.gyro_bias.setZero();
  cfg.duration = 20.0;
  const double w = 2 * M_PI / 20.0;
  const auto seq = synthesizeImu(traj, cfg, 1);
  for (size_t k = 10; k + 10 < seq.samples.size(); k += 97) {
    const auto& s = seq.samples[k];
    EXPECT_NEAR(s.accel.head<2>().norm(), 3.0 * w * w, 1e-9);
    EXPECT_NEAR(s.accel.z(), 9.81, 1e-9);
    // heading follows the tangent: centripetal force points along body +y (left turn)
    EXPECT_NEAR(s.accel.y(), 3.0 * w * w, 1e-9);
    EXPECT_NEAR(s.gyro.z(), w, 1e-9);
  }
}

TEST(Imu, BiasesConstantWithoutRandomWalk) {
  SimConfig cfg = quietConfig();
  const auto seq = synthesizeImu(LoopTrajectory{}, cfg, 4);
  for (size_t k = 0; k < seq.samples.size(); ++k) {
    EXPECT_EQ(seq.accel_bias[k], cfg.accel_bias);
    EXPECT_EQ(seq.gyro_bias[k], cfg.gyro_bias);
  }
}

TEST(Imu, NoiseStatisticsAndDeterminism) {
  SimConfig cfg;
  const LoopTrajectory traj = stationary();
  const auto a = synthesizeImu(traj, cfg, 11), b = synthesizeImu(traj, cfg, 11);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (size_t k = 0; k < a.samples.size(); ++k) EXPECT_EQ(a.samples[k].gyro, b.samples[k].gyro);

  SimConfig c2 = cfg;
  c2.imu.gyro_bias_rw = c2.imu.accel_bias_rw = 0.0;
  LoopTrajectory long_rest = traj;
  long_rest.duration = 400.0;
  long_rest.rest = 200.0;
  const auto n = synthesizeImu(long_rest, c2, 12);
  double ss = 0.0;
  for (const auto& s : n.samples) ss += (s.gyro.x() - c2.gyro_bias.x()) * (s.gyro.x() - c2.gyro_bias.x());
  const double sigma = std::sqrt(ss / n.samples.size());
  const double expected = c2.imu.gyro_noise * std::sqrt(c2.imu_rate);
  EXPECT_NEAR(sigma / expected, 1.0, 0.02);
}

// Integrates the noise-free stream with RK4 (step = two samples, midpoint from the
// middle sample) and compares with the analytic poses the renderer uses.
TEST(Imu, ConsistentWithRenderedPoses) {
  LoopTrajectory traj;
  traj.duration = 10.0;
  SimConfig cfg = quietConfig();
  cfg.duration = 10.0;
  cfg.imu_rate = 2000.0;
  const Eigen::Vector3d g(0, 0, -9.81);
  const auto seq = synthesizeImu(traj, cfg, 1);

  struct S {
    Eigen::Vector3d p, v;
    Eigen::Vector4d q;  // w x y z
  };
  auto quat = [](const Eigen::Vector4d& v) { return Eigen::Quaterniond(v(0), v(1), v(2), v(3)).normalized(); };
  auto deriv = [&](const S& s, size_t k) {
    const Eigen::Vector3d w = seq.samples[k].gyro - seq.gyro_bias[k];
    const Eigen::Vector3d f = seq.samples[k].accel - seq.accel_bias[k];
    const Eigen::Quaterniond q = quat(s.q);
    const Eigen::Quaterniond dq = Eigen::Quaterniond(s.q(0), s.q(1), s.q(2), s.q(3)) * Eigen::Quaterniond(0, w.x(), w.y(), w.z());
    return S{s.v, q * f + g, 0.5 * Eigen::Vector4d(dq.w(), dq.x(), dq.y(), dq.z())};
  };
  auto axpy = [](const S& s, double a, const S& d) { return S{s.p + a * d.p, s.v + a * d.v, s.q + a * d.q}; };

  const FrameState s0 = traj.state(0.0);
  S s{s0.p, s0.v, {s0.q.w(), s0.q.x(), s0.q.y(), s0.q.z()}};
  const double h = 2.0 / cfg.imu_rate;
  double worst_p = 0.0, worst_q = 0.0;
  for (size_t k = 0; k + 2 < seq.samples.size(); k += 2) {
    const S k1 = deriv(s, k);
    const S k2 = deriv(axpy(s, h / 2, k1), k + 1);
    const S k3 = deriv(axpy(s, h / 2, k2), k + 1);
    const S k4 = deriv(axpy(s, h, k3), k + 2);
    s = S{s.p + h / 6 * (k1.p + 2 * k2.p + 2 * k3.p + k4.p), s.v + h / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v),
          s.q + h / 6 * (k1.q + 2 * k2.q + 2 * k3.q + k4.q)};
    s.q.normalize();
    const size_t next = k + 2;
    if (next % 100 == 0) {  // every camera frame at 20 Hz
      const FrameState truth = traj.state(seq.samples[next].t);
      worst_p = std::max(worst_p, (s.p - truth.p).norm());
      worst_q = std::max(worst_q, angularDistance(quat(s.q), truth.q));
    }
  }
  EXPECT_LT(worst_p, 1e-6);
  EXPECT_LT(worst_q, 1e-7);
}

// ---- sequences --------------------------------------------------------------

TEST(Sequence, GapSkipsFramesAndRegeneratesIdentically) {
  const SceneModel scene = makeRoomScene({}, 21);
  LoopTrajectory traj;
  traj.duration = 10.0;
  SimConfig cfg = smallCamera(SimConfig{});
  cfg.duration = 10.0;
  cfg.nuc_gaps = {{5.0, 0.5}};
  const auto dir_a = scratch("seq_a"), dir_b = scratch("seq_b");
  const auto sum = generateSequence(scene, traj, cfg, 21, dir_a);
  EXPECT_EQ(sum.frames_written, 190);
  EXPECT_EQ(sum.frames_suspended, 10);
  generateSequence(scene, traj, cfg, 21, dir_b);

  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir_a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(dir_b / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 190 + 4);

  const Dataset d = loadDataset(dir_a);
  ASSERT_EQ(d.frames.size(), 190u);
  EXPECT_EQ(d.groundtruth.size(), 200u);
  EXPECT_DOUBLE_EQ(d.imu.front().t, 0.0);
  EXPECT_NEAR(d.imu.back().t, 10.0, 1e-12);
  EXPECT_EQ(d.imu.size(), 2001u);
  for (const auto& f : d.frames) EXPECT_FALSE(f.timestamp >= 5.0 - 1e-9 && f.timestamp < 5.5 - 1e-9);
  EXPECT_EQ(d.frame(0).width(), 80);

  const Config manifest = Config::load(dir_a / "sim_manifest");
  EXPECT_EQ(manifest.getString("seed", ""), "21");
  EXPECT_EQ(manifest.getString("sim.nuc_gaps", ""), "5:0.5");
  EXPECT_DOUBLE_EQ(manifest.getDouble("camera.fx", 0.0), 75.0);

  const auto dir_c = scratch("seq_c");
  generateSequence(scene, traj, cfg, 22, dir_c);
  EXPECT_NE(slurp(dir_a / "frame_000050.pgm"), slurp(dir_c / "frame_000050.pgm"));
  EXPECT_NE(slurp(dir_a / "imu.csv"), slurp(dir_c / "imu.csv"));
  for (const auto& p : {dir_a, dir_b, dir_c}) std::filesystem::remove_all(p);
}

TEST(Sequence, UnwritableDirectoryNamesPath) {
  const auto blocker = scratch("blocker");
  { std::ofstream(blocker) << "x"; }
  LoopTrajectory traj;
  traj.duration = 10.0;
  SimConfig cfg = smallCamera(SimConfig{});
  cfg.duration = 10.0;
  cfg.nuc_gaps.clear();
  try {
    generateSequence(makeRoomScene({}, 1), traj, cfg, 1, blocker / "sub");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("blocker"), std::string::npos);
  }
  std::filesystem::remove(blocker);
}

TEST(SimConfig, Validation) {
  SimConfig cfg;
  cfg.imu_rate = 100.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SimConfig{};
  cfg.nuc_gaps = {{10.0, 0.6}};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SimConfig{};
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.frameCount(), 1200);
}

// ---- homography pairs -------------------------------------------------------

namespace {

std::vector<RadiometricImage> blobCorpus(int n, double min_sigma = 8.0) {
  std::vector<RadiometricImage> out;
  for (int i = 0; i < n; ++i)
    out.push_back(tio::testing::BlobField(96, 72, 30, 100 + i, 15000.0, 2000.0, min_sigma, 16.0).render(96, 72));
  return out;
}

}  // namespace

TEST(HomographyPairs, ZeroMagnitudesGiveIdentity) {
  const auto pairs = generateHomographyPairs(blobCorpus(3), HomographyMagnitudes{}, 5);
  ASSERT_EQ(pairs.size(), 3u);
  for (const auto& p : pairs) {
    EXPECT_LT((p.H - Eigen::Matrix3d::Identity()).norm(), 1e-15);
    EXPECT_LT((p.a.data() - p.b.data()).abs().maxCoeff(), 1e-9);
  }
}

TEST(HomographyPairs, DoubleScaleCorners) {
  const int w = 65, h = 33;
  const Eigen::Matrix3d H = centeredScale(w, h, 2.0);
  EXPECT_EQ(*applyHomography(H, {0.0, 0.0}), Eigen::Vector2d(-32.0, -16.0));
  EXPECT_EQ(*applyHomography(H, {64.0, 32.0}), Eigen::Vector2d(96.0, 48.0));
  EXPECT_EQ(*applyHomography(H, {32.0, 16.0}), Eigen::Vector2d(32.0, 16.0));
  const auto a = tio::testing::BlobField(w, h, 10, 3).render(w, h);
  const auto b = warpImage(a, H);
  EXPECT_DOUBLE_EQ(b(0, 0), a(16, 8));
  EXPECT_DOUBLE_EQ(b(64, 32), a(48, 24));
}

TEST(HomographyPairs, GroundTruthWarpIsConsistent) {
  HomographyMagnitudes mag;
  mag.rotation = 0.3;
  mag.scale = 0.2;
  mag.perspective = 0.1;
  mag.translation = 0.05;
  const int n = 4;
  std::vector<tio::testing::BlobField> fields;
  for (int i = 0; i < n; ++i) fields.emplace_back(96, 72, 30, 100 + i, 15000.0, 2000.0, 8.0, 16.0);
  const auto pairs = generateHomographyPairs(blobCorpus(n), mag, 17);
  // Gaussian curvature <= A / sigma^2, bilinear error <= h^2/8 (|f_xx| + |f_yy|)
  const double bound = 30 * 2000.0 / 64.0 * 2.0 / 8.0;
  for (int i = 0; i < n; ++i) {
    const auto& p = pairs[i];
    EXPECT_GT(std::abs(p.H.determinant()), 1e-6);
    EXPECT_GT((p.H - Eigen::Matrix3d::Identity()).norm(), 1e-3);
    const Eigen::Matrix3d Hinv = p.H.inverse();
    int checked = 0;
    double worst = 0.0;
    for (int y = 0; y < 72; y += 3)
      for (int x = 0; x < 96; x += 3) {
        const auto src = applyHomography(Hinv, Eigen::Vector2d(x, y));
        if (!src || src->x() < 0 || src->y() < 0 || src->x() > 95 || src->y() > 71) continue;
        worst = std::max(worst, std::abs(p.b(x, y) - fields[i].value(src->x(), src->y())));
        ++checked;
      }
    EXPECT_GT(checked, 200);
    EXPECT_LE(worst, bound);
  }
}

TEST(HomographyPairs, EmptyCorpusRejected) {
  EXPECT_THROW(generateHomographyPairs({}, HomographyMagnitudes{}, 1), std::invalid_argument);
}
