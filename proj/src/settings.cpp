#include "tio/settings.hpp"

#include <sstream>

namespace tio {

namespace {

// Visits every field once for reading, writing or key listing.
class Binder {
 public:
  enum class Mode { kRead, kWrite, kKeys };
  Binder(Config& c, Mode m) : c_(c), mode_(m) {}

  void field(const std::string& key, double& v) {
    visit(key, [&] { v = c_.getDouble(key, v); }, [&] { c_.set(key, v); });
  }
  void field(const std::string& key, int& v) {
    visit(key, [&] { v = c_.getInt(key, v); }, [&] { c_.set(key, v); });
  }
  void field(const std::string& key, bool& v) {
    visit(key, [&] { v = c_.getBool(key, v); }, [&] { c_.set(key, v); });
  }
  template <int N>
  void field(const std::string& key, Eigen::Matrix<double, N, 1>& v) {
    visit(key, [&] { v = c_.getVector(key, Eigen::VectorXd(v)); }, [&] { c_.set(key, Eigen::VectorXd(v)); });
  }
  void field(const std::string& key, Eigen::Matrix3d& m) {
    visit(
        key,
        [&] {
          const Eigen::VectorXd flat = c_.getVector(key, Eigen::Map<const Eigen::Matrix<double, 9, 1>>(m.transpose().eval().data()));
          for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = flat(i);
        },
        [&] {
          Eigen::VectorXd flat(9);
          for (int i = 0; i < 9; ++i) flat(i) = m(i / 3, i % 3);
          c_.set(key, flat);
        });
  }
  template <typename Read, typename Write>
  void custom(const std::string& key, Read read, Write write) {
    visit(key, read, write);
  }

  std::set<std::string> keys;

 private:
  template <typename Read, typename Write>
  void visit(const std::string& key, Read read, Write write) {
    keys.insert(key);
    if (mode_ == Mode::kRead && c_.has(key)) read();
    if (mode_ == Mode::kWrite) write();
  }

  Config& c_;
  Mode mode_;
};

void bind(Binder& b, CameraModel& cam) {
  b.field("camera.fx", cam.intrinsics.fx);
  b.field("camera.fy", cam.intrinsics.fy);
  b.field("camera.cx", cam.intrinsics.cx);
  b.field("camera.cy", cam.intrinsics.cy);
  b.field("camera.width", cam.width);
  b.field("camera.height", cam.height);
  b.field("camera.R_bc", cam.R_bc);
  b.field("camera.t_bc", cam.t_bc);
}

void bind(Binder& b, ImuNoiseParams& p) {
  b.field("imu.gyro_noise", p.gyro_noise);
  b.field("imu.accel_noise", p.accel_noise);
  b.field("imu.gyro_bias_rw", p.gyro_bias_rw);
  b.field("imu.accel_bias_rw", p.accel_bias_rw);
  b.field("imu.gravity", p.gravity);
}

void bind(Binder& b, TrackerConfig& t, Config& c) {
  b.field("tracker.half_size", t.half_size);
  b.field("tracker.levels", t.levels);
  b.field("tracker.max_iterations", t.max_iterations);
  b.field("tracker.convergence", t.convergence);
  b.field("tracker.cull_threshold", t.cull_threshold);
  b.field("tracker.grid_cell", t.grid_cell);
  b.field("tracker.max_features", t.max_features);
  b.field("tracker.min_eigenvalue", t.min_eigenvalue);
  b.field("tracker.detection_threshold", t.detection_threshold);
  b.field("tracker.nms_radius", t.nms_radius);
  b.field("tracker.remove_column_offsets", t.remove_column_offsets);
  b.custom(
      "tracker.model",
      [&] {
        const std::string m = c.getString("tracker.model", "translation");
        if (m == "translation") t.model = WarpModel::kTranslation;
        else if (m == "se2") t.model = WarpModel::kSE2;
        else throw ConfigError("config key tracker.model: expected translation or se2, got '" + m + "'");
      },
      [&] { c.set("tracker.model", t.model == WarpModel::kSE2 ? "se2" : "translation"); });
}

void bind(Binder& b, SolverConfig& s) {
  b.field("solver.window_size", s.window_size);
  b.field("solver.max_iterations", s.max_iterations);
  b.field("solver.lambda_init", s.lambda_init);
  b.field("solver.lambda_scale", s.lambda_scale);
  b.field("solver.reprojection_sigma", s.reprojection_sigma);
  b.field("solver.huber_threshold", s.huber_threshold);
  b.field("solver.cost_tolerance", s.cost_tolerance);
  b.field("solver.absolute_cost_floor", s.absolute_cost_floor);
  b.field("solver.min_parallax_deg", s.min_parallax_deg);
  b.field("solver.keyframe_parallax", s.keyframe_parallax);
  b.field("solver.keyframe_track_ratio", s.keyframe_track_ratio);
  b.field("solver.prior_eigen_floor", s.prior_eigen_floor);
  b.field("solver.use_schur", s.use_schur);
}

std::string gapsToString(const std::vector<NucGap>& gaps) {
  std::string s;
  for (size_t i = 0; i < gaps.size(); ++i)
    s += (i ? "," : "") + formatDouble(gaps[i].start) + ":" + formatDouble(gaps[i].duration);
  return s;
}

std::vector<NucGap> gapsFromString(const std::string& text) {
  std::vector<NucGap> gaps;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.find_first_not_of(' ') == std::string::npos) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("config key sim.nuc_gaps: expected start:duration, got '" + item + "'");
    Config tmp;
    tmp.set("a", item.substr(0, colon));
    tmp.set("b", item.substr(colon + 1));
    try {
      gaps.push_back({tmp.getDouble("a", 0), tmp.getDouble("b", 0)});
    } catch (const ConfigError&) {
      throw ConfigError("config key sim.nuc_gaps: bad entry '" + item + "'");
    }
  }
  return gaps;
}

void bind(Binder& b, SimConfig& s, Config& c) {
  b.field("sim.duration", s.duration);
  b.field("sim.camera_rate", s.camera_rate);
  b.field("sim.imu_rate", s.imu_rate);
  b.field("sim.accel_bias", s.accel_bias);
  b.field("sim.gyro_bias", s.gyro_bias);
  b.field("sim.fpn_amplitude", s.fpn_amplitude);
  b.field("sim.shot_noise", s.shot_noise);
  b.custom(
      "sim.nuc_gaps", [&] { s.nuc_gaps = gapsFromString(c.getString("sim.nuc_gaps", "")); },
      [&] { c.set("sim.nuc_gaps", gapsToString(s.nuc_gaps)); });
  bind(b, s.camera);
  bind(b, s.imu);
}

void bind(Binder& b, LoopTrajectory& t, Config& c) {
  b.field("trajectory.semi_x", t.semi_x);
  b.field("trajectory.semi_y", t.semi_y);
  b.field("trajectory.height", t.height);
  b.field("trajectory.start_angle", t.start_angle);
  b.field("trajectory.rest", t.rest);
  b.field("trajectory.ramp", t.ramp);
  b.field("trajectory.loops", t.loops);
  b.field("trajectory.bob_amplitude", t.bob_amplitude);
  b.field("trajectory.bob_frequency", t.bob_frequency);
  b.field("trajectory.sway_amplitude", t.sway_amplitude);
  b.field("trajectory.sway_frequency", t.sway_frequency);
  Eigen::Vector2d center = t.center;
  b.field("trajectory.center", center);
  t.center = center;
  b.custom("sim.duration", [&] { t.duration = c.getDouble("sim.duration", t.duration); }, [] {});
}

void bind(Binder& b, RoomConfig& r) {
  b.field("room.length", r.length);
  b.field("room.width", r.width);
  b.field("room.height", r.height);
  b.field("room.texel", r.texel);
  b.field("room.base", r.base);
  b.field("room.smooth_amplitude", r.smooth_amplitude);
  b.field("room.detail_amplitude", r.detail_amplitude);
  b.field("room.blob_density", r.blob_density);
  b.field("room.blob_amplitude", r.blob_amplitude);
  b.field("room.min_blob_sigma", r.min_blob_sigma);
  b.field("room.max_blob_sigma", r.max_blob_sigma);
}

void bind(Binder& b, OdometryConfig& o, Config& c) {
  b.field("odometry.init_window", o.init_window);
  b.field("odometry.outlier_threshold", o.outlier_threshold);
  b.field("odometry.max_keyframe_interval", o.max_keyframe_interval);
  b.field("odometry.replenish_ratio", o.replenish_ratio);
  b.field("odometry.prior_velocity", o.prior_velocity);
  b.field("odometry.prior_tilt", o.prior_tilt);
  b.field("odometry.prior_accel_bias", o.prior_accel_bias);
  b.field("odometry.prior_gyro_bias", o.prior_gyro_bias);
  b.field("odometry.salient_threshold", o.salient.relative_threshold);
  b.field("odometry.salient_min_response", o.salient.min_response);
  bind(b, o.camera);
  bind(b, o.imu);
  bind(b, o.tracker, c);
  bind(b, o.solver);
}

template <typename T, typename Bind>
Config write(const T& value, Bind bindFn) {
  Config c;
  T copy = value;
  Binder b(c, Binder::Mode::kWrite);
  bindFn(b, copy, c);
  return c;
}

template <typename T, typename Bind>
void read(const Config& src, T& value, Bind bindFn) {
  Config c = src;
  Binder b(c, Binder::Mode::kRead);
  bindFn(b, value, c);
}

auto plain = [](auto& b, auto& v, Config&) { bind(b, v); };
auto withConfig = [](auto& b, auto& v, Config& c) { bind(b, v, c); };

}  // namespace

Config cameraToConfig(const CameraModel& cam) { return write(cam, plain); }
void applyConfig(const Config& c, CameraModel& cam) {
  read(c, cam, plain);
  cam.validate();
}

Config imuToConfig(const ImuNoiseParams& p) { return write(p, plain); }
void applyConfig(const Config& c, ImuNoiseParams& p) {
  read(c, p, plain);
  p.validate();
}

Config trackerToConfig(const TrackerConfig& t) { return write(t, withConfig); }
void applyConfig(const Config& c, TrackerConfig& t) {
  read(c, t, withConfig);
  t.validate();
}

Config solverToConfig(const SolverConfig& s) { return write(s, plain); }
void applyConfig(const Config& c, SolverConfig& s) {
  read(c, s, plain);
  s.validate();
}

Config simToConfig(const SimConfig& s) { return write(s, withConfig); }
void applyConfig(const Config& c, SimConfig& s) {
  read(c, s, withConfig);
  s.validate();
}

Config trajectoryToConfig(const LoopTrajectory& t) { return write(t, withConfig); }
void applyConfig(const Config& c, LoopTrajectory& t) {
  read(c, t, withConfig);
  t.validate();
}

Config roomToConfig(const RoomConfig& r) { return write(r, plain); }
void applyConfig(const Config& c, RoomConfig& r) { read(c, r, plain); }

Config odometryToConfig(const OdometryConfig& o) { return write(o, withConfig); }
void applyConfig(const Config& c, OdometryConfig& o) {
  read(c, o, withConfig);
  o.validate();
}

std::set<std::string> moduleKeys() {
  Config c;
  Binder b(c, Binder::Mode::kKeys);
  CameraModel cam;
  ImuNoiseParams imu;
  TrackerConfig tracker;
  SolverConfig solver;
  SimConfig sim;
  LoopTrajectory traj;
  RoomConfig room;
  OdometryConfig odo;
  bind(b, odo, c);
  bind(b, cam);
  bind(b, imu);
  bind(b, tracker, c);
  bind(b, solver);
  bind(b, sim, c);
  bind(b, traj, c);
  bind(b, room);
  return b.keys;
}

}  // namespace tio
