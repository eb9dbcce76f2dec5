#include "tio/odometry.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace tio {

namespace {

double secondsSince(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bool finiteState(const FrameState& s) {
  return s.p.allFinite() && s.v.allFinite() && s.q.coeffs().allFinite() && s.ba.allFinite() && s.bg.allFinite();
}

}  // namespace

void OdometryConfig::validate() const {
  camera.validate();
  imu.validate();
  tracker.validate();
  solver.validate();
  if (!(init_window > 0.0)) throw std::invalid_argument("odometry: init_window must be positive");
  if (!(outlier_threshold > 0.0)) throw std::invalid_argument("odometry: outlier_threshold must be positive");
  if (!(max_keyframe_interval > 0.0)) throw std::invalid_argument("odometry: max_keyframe_interval must be positive");
  if (!(replenish_ratio > 0.0 && replenish_ratio <= 1.0))
    throw std::invalid_argument("odometry: replenish_ratio must lie in (0, 1]");
}

// ---- front-end --------------------------------------------------------------

Frontend::Frontend(const OdometryConfig& cfg, const std::vector<ImuSample>& imu, const Eigen::Vector3d& gyro_bias,
                   const NetworkWeights* weights)
    : cfg_(cfg), imu_(imu), gyro_bias_(gyro_bias), weights_(weights) {}

ConfidenceHeatmap Frontend::heatmap(const RadiometricImage& image) const {
  if (weights_) return detect(*weights_, image, false).heatmap;
  return salientHeatmap(image, cfg_.salient);
}

FramePacket Frontend::process(const RadiometricImage& image, int frame) {
  FramePacket packet;
  packet.frame = frame;
  packet.t = image.timestamp();
  const auto start = std::chrono::steady_clock::now();
  const ImagePyramid pyramid = buildPyramid(image, cfg_.tracker.levels);

  if (last_t_) {
    const double dt = packet.t - *last_t_;
    if (!(dt > 0.0)) throw std::invalid_argument("frame timestamps must increase (frame " + std::to_string(frame) + ")");
    nominal_dt_ = nominal_dt_ > 0.0 ? std::min(nominal_dt_, dt) : dt;
    packet.after_gap = dt > 1.5 * nominal_dt_;
    std::optional<RotationPrior> prior;
    try {
      const auto delta = preintegrate(imu_, *last_t_, packet.t, Eigen::Vector3d::Zero(), gyro_bias_, cfg_.imu);
      prior = RotationPrior{delta.gamma(), cfg_.camera.R_bc, cfg_.camera.intrinsics.K()};
    } catch (const std::invalid_argument&) {
      prior.reset();
    }
    trackFrame(tracks_, pyramid, frame, prior, cfg_.tracker, packet.after_gap);
    pruneCulled(tracks_);
  }
  packet.track_seconds = secondsSince(start);

  if (liveTrackCount(tracks_) < cfg_.replenish_ratio * cfg_.tracker.max_features) {
    const auto t0 = std::chrono::steady_clock::now();
    replenishFeatures(tracks_, pyramid, heatmap(image), frame, next_id_, cfg_.tracker);
    packet.detect_seconds = secondsSince(t0);
  }
  last_t_ = packet.t;
  for (const auto& tf : tracks_)
    if (tf.track.status == TrackStatus::kAlive) packet.features.emplace_back(tf.track.id, tf.track.position());
  return packet;
}

// ---- back-end ---------------------------------------------------------------

OdometryBackend::OdometryBackend(const OdometryConfig& cfg, const std::vector<ImuSample>& imu, const FrameState& initial,
                                 const Eigen::Vector3d& gravity_w)
    : cfg_(cfg), imu_(imu) {
  cfg_.validate();
  window_.camera = cfg.camera;
  window_.gravity = gravity_w;
  window_.states.clear();
  keyframes_.push_back({-1, initial, 0, true, {}});  // placeholder until the first packet
}

bool OdometryBackend::isKeyframe(const FramePacket& packet) const {
  if (window_.size() == 0) return true;
  if (packet.features.empty()) return true;
  if (packet.t - last_keyframe_t_ >= cfg_.max_keyframe_interval - 1e-9) return true;
  double sum = 0.0;
  int common = 0;
  for (const auto& [id, px] : packet.features) {
    const auto it = last_keyframe_features_.find(id);
    if (it == last_keyframe_features_.end()) continue;
    sum += (px - it->second).norm();
    ++common;
  }
  if (common == 0) return true;
  return selectKeyframe(sum / common, common, cfg_.tracker.max_features, cfg_.solver);
}

void OdometryBackend::process(const FramePacket& packet) {
  if (window_.size() > 0 && packet.t <= window_.states.back().t)
    throw std::invalid_argument("packet timestamps must increase (frame " + std::to_string(packet.frame) + ")");
  if (isKeyframe(packet)) addKeyframe(packet);
}

void OdometryBackend::addKeyframe(const FramePacket& packet) {
  FrameState guess;
  PreintegratedDelta delta;
  {
    ScopedTimer timer(timing_, "preintegrate");
    const FrameState& last = window_.size() ? window_.states.back() : keyframes_.front().state;
    if (packet.t > last.t + 1e-12) {
      delta = preintegrate(imu_, last.t, packet.t, last.ba, last.bg, cfg_.imu);
      guess = propagateState(last, delta, window_.gravity);
    } else {
      guess = last;
    }
    guess.t = packet.t;
  }

  if (window_.size() == 0) {
    keyframes_.clear();
    window_.addKeyframe(packet.frame, guess, delta);
    Vector15d sigmas = Vector15d::Zero();  // position and yaw are gauge-fixed
    sigmas.segment<2>(kDtheta).setConstant(cfg_.prior_tilt);
    sigmas.segment<3>(kDv).setConstant(cfg_.prior_velocity);
    sigmas.segment<3>(kDba).setConstant(cfg_.prior_accel_bias);
    sigmas.segment<3>(kDbg).setConstant(cfg_.prior_gyro_bias);
    window_.prior = makeStatePrior(packet.frame, guess, sigmas);
  } else {
    window_.addKeyframe(packet.frame, guess, delta);
  }
  for (const auto& [id, px] : packet.features) window_.addObservation(id, packet.frame, px);

  KeyframeRecord record{packet.frame, guess, static_cast<int>(packet.features.size()), packet.features.empty(), {}};
  if (window_.size() >= 2) {
    ScopedTimer timer(timing_, "solve");
    repropagateDeltas(window_);
    triangulatePending(window_, cfg_.solver);
    record.report = solveWindow(window_, cfg_.solver);
    if (rejectOutliers(window_, cfg_.outlier_threshold) > 0) {
      triangulatePending(window_, cfg_.solver);
      const SolveReport again = solveWindow(window_, cfg_.solver);
      record.report.final_cost = again.final_cost;
      record.report.iterations += again.iterations;
      record.report.converged = again.converged;
      record.report.diverged = record.report.diverged || again.diverged;
    }
    if (record.report.diverged) ++diverged_;
  }
  keyframes_.push_back(record);

  // refresh every keyframe still in the window
  for (int k = 0; k < window_.size(); ++k)
    for (auto it = keyframes_.rbegin(); it != keyframes_.rend(); ++it)
      if (it->frame == window_.frame_ids[k]) {
        it->state = window_.states[k];
        break;
      }

  if (window_.size() > cfg_.solver.window_size) {
    ScopedTimer timer(timing_, "marginalize");
    marginalizeOldest(window_, cfg_.solver);
  }
  last_keyframe_t_ = packet.t;
  last_keyframe_features_.clear();
  for (const auto& [id, px] : packet.features) last_keyframe_features_[id] = px;
}

std::vector<StampedPose> OdometryBackend::trajectory() const {
  std::vector<StampedPose> out;
  for (const auto& k : keyframes_)
    if (k.frame >= 0) out.push_back({k.state.t, k.state.p, k.state.q});
  return out;
}

bool OdometryBackend::finite() const {
  for (const auto& s : window_.states)
    if (!finiteState(s)) return false;
  for (const auto& k : keyframes_)
    if (!finiteState(k.state)) return false;
  return true;
}

// ---- pipeline ---------------------------------------------------------------

namespace {

// Single-producer single-consumer hand-off of immutable packets.
class PacketQueue {
 public:
  explicit PacketQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(std::optional<FramePacket> p) {
    std::unique_lock lock(m_);
    not_full_.wait(lock, [&] { return q_.size() < capacity_; });
    q_.push_back(std::move(p));
    not_empty_.notify_one();
  }
  std::optional<FramePacket> pop() {
    std::unique_lock lock(m_);
    not_empty_.wait(lock, [&] { return !q_.empty(); });
    auto p = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return p;
  }

 private:
  std::size_t capacity_;
  std::deque<std::optional<FramePacket>> q_;
  std::mutex m_;
  std::condition_variable not_empty_, not_full_;
};

}  // namespace

OdometryResult runOdometry(const OdometryConfig& cfg, const std::vector<ImuSample>& imu, int count,
                           const std::function<RadiometricImage(int)>& frames, const NetworkWeights* weights) {
  cfg.validate();
  if (imu.empty()) throw std::invalid_argument("odometry: empty IMU stream");
  const InitResult init = initializeFromStatic(imu, cfg.imu.gravity, cfg.init_window);
  FrameState initial = init.state;
  initial.t = imu.front().t;

  Frontend frontend(cfg, imu, initial.bg, weights);
  OdometryBackend backend(cfg, imu, initial, init.gravity_w);
  OdometryResult result;

  PacketQueue queue(4);
  std::exception_ptr error;
  std::thread producer([&] {
    try {
      for (int i = 0; i < count; ++i) queue.push(frontend.process(frames(i), i));
    } catch (...) {
      error = std::current_exception();
    }
    queue.push(std::nullopt);
  });

  try {
    while (auto packet = queue.pop()) {
      const auto start = std::chrono::steady_clock::now();
      if (packet->t < initial.t) continue;
      backend.process(*packet);
      ++result.frames;
      if (packet->after_gap && result.tracked_after_gap < 0)
        result.tracked_after_gap = static_cast<int>(packet->features.size());
      if (packet->detect_seconds >= 0.0) result.timing.record("detect", packet->detect_seconds);
      result.timing.record("track", packet->track_seconds);
      result.timing.record("frame", packet->track_seconds + std::max(packet->detect_seconds, 0.0) + secondsSince(start));
    }
  } catch (...) {
    // drain so the producer can finish
    while (queue.pop()) {
    }
    producer.join();
    throw;
  }
  producer.join();
  if (error) std::rethrow_exception(error);

  result.keyframes = backend.keyframes();
  result.trajectory = backend.trajectory();
  result.timing.merge(backend.timing());
  result.diverged_solves = backend.diverged_solves();
  result.finite = backend.finite();
  return result;
}

OdometryResult runOdometry(const OdometryConfig& cfg, const Dataset& dataset, const NetworkWeights* weights) {
  return runOdometry(cfg, dataset.imu, static_cast<int>(dataset.frames.size()),
                     [&](int i) { return dataset.frame(static_cast<std::size_t>(i)); }, weights);
}

}  // namespace tio
