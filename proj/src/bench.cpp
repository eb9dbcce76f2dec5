#include "tio/bench.hpp"

#include <algorithm>

namespace tio {

BenchConfig BenchConfig::defaults() {
  BenchConfig c;
  c.trajectory.duration = c.sim.duration;
  c.odometry.camera = c.sim.camera;
  c.odometry.imu = c.sim.imu;
  return c;
}

void BenchConfig::validate() const {
  sim.validate();
  trajectory.validate();
  odometry.validate();
  if (repeatability_pairs < 0) throw std::invalid_argument("bench: repeatability pairs must be non-negative");
}

namespace {

std::vector<Eigen::Vector2d> positions(const std::vector<Keypoint>& points) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(points.size());
  for (const auto& k : points) out.push_back(k.position);
  return out;
}

std::optional<double> benchRepeatability(const SceneModel& scene, const BenchConfig& cfg, const std::vector<int>& frames,
                                         std::uint64_t seed, const NetworkWeights* weights) {
  const int n = std::min<int>(cfg.repeatability_pairs, static_cast<int>(frames.size()));
  if (n == 0) return std::nullopt;
  std::vector<RadiometricImage> images;
  for (int i = 0; i < n; ++i) {
    const int k = frames[static_cast<std::size_t>(i) * frames.size() / static_cast<std::size_t>(n)];
    images.push_back(renderFrame(scene, cfg.trajectory, cfg.sim.frameTime(k), cfg.sim, nullptr,
                                 seed * 1000003ull + static_cast<std::uint64_t>(k))
                         .image);
  }
  AugmentationConfig noise;
  noise.noise_sigma = 20.0;
  const auto pairs = generateHomographyPairs(images, {0.1, 0.1, 0.0005, 0.05}, seed, &noise);
  const RepeatabilityConfig rc;
  const auto detectPoints = [&](const RadiometricImage& image) {
    if (weights) return positions(decodeKeypoints(detect(*weights, image, false).heatmap, 0.01, rc.nms_radius, rc.max_points));
    SalientPointConfig sc = cfg.odometry.salient;
    sc.nms_radius = rc.nms_radius;
    sc.max_points = rc.max_points;
    return positions(salientPoints(image, sc));
  };
  double sum = 0.0;
  int count = 0;
  for (const auto& p : pairs)
    if (const auto r = repeatability(detectPoints(p.a), detectPoints(p.b), p.H, p.a.width(), p.a.height(), rc.epsilon)) {
      sum += *r;
      ++count;
    }
  if (count == 0) return std::nullopt;
  return sum / count;
}

}  // namespace

BenchResult runBench(const BenchConfig& cfg, std::uint64_t seed, const NetworkWeights* weights) {
  cfg.validate();
  const SceneModel scene = makeRoomScene(cfg.room, seed);
  const ImuSequence imu = synthesizeImu(cfg.trajectory, cfg.sim, seed, Eigen::Vector3d(0.0, 0.0, -cfg.sim.imu.gravity));
  const FpnPattern fpn = sessionFpn(cfg.sim, seed);

  BenchResult out;
  std::vector<int> frames;
  for (int k = 0; k < cfg.sim.frameCount(); ++k) {
    const double t = cfg.sim.frameTime(k);
    const FrameState s = cfg.trajectory.state(t);
    out.truth.push_back({t, s.p, s.q});
    if (!cfg.sim.suspended(t)) frames.push_back(k);
  }
  out.path_length = cfg.trajectory.pathLength();

  out.odometry = runOdometry(
      cfg.odometry, imu.samples, static_cast<int>(frames.size()),
      [&](int i) {
        const int k = frames[static_cast<std::size_t>(i)];
        return renderFrame(scene, cfg.trajectory, cfg.sim.frameTime(k), cfg.sim, &fpn,
                           seed * 1000003ull + static_cast<std::uint64_t>(k))
            .image;
      },
      weights);

  const auto& est = out.odometry.trajectory;
  out.ate = ate(est, out.truth);
  const auto& last = out.ate.pairs.back();
  out.final_error = (out.ate.alignment(est[last.first].p) - out.truth[last.second].p).norm();
  out.rpe = rpe(est, out.truth, 1);
  out.rpe_1s = rpeSeconds(est, out.truth, 1.0);
  out.repeatability = benchRepeatability(scene, cfg, frames, seed, weights);
  return out;
}

std::vector<MetricRow> BenchResult::metrics() const {
  const double percent = 100.0 / path_length;
  std::vector<MetricRow> rows{
      {"path_length", "value", path_length, "m"},
      {"ate", "rmse", ate.position.rmse, "m"},
      {"ate", "max", ate.position.max, "m"},
      {"ate", "rmse_path_percent", ate.position.rmse * percent, "%"},
      {"ate_z", "rmse", ate.z.rmse, "m"},
      {"ate_z", "rmse_path_percent", ate.z.rmse * percent, "%"},
      {"final_position_error", "value", final_error, "m"},
      {"final_position_error", "path_percent", final_error * percent, "%"},
      {"rpe_keyframe", "rmse", rpe.rmse, "m"},
      {"rpe_keyframe", "max", rpe.max, "m"},
      {"rpe_1s", "rmse", rpe_1s.rmse, "m"},
      {"rpe_1s", "max", rpe_1s.max, "m"},
      {"frames", "count", static_cast<double>(odometry.frames), "frames"},
      {"keyframes", "count", static_cast<double>(odometry.keyframes.size()), "frames"},
      {"diverged_solves", "count", static_cast<double>(odometry.diverged_solves), "solves"},
      {"finite", "flag", odometry.finite ? 1.0 : 0.0, "bool"},
      {"tracked_after_gap", "count", static_cast<double>(odometry.tracked_after_gap), "features"},
  };
  if (repeatability) rows.push_back({"repeatability", "mean", *repeatability, "ratio"});
  return rows;
}

}  // namespace tio
