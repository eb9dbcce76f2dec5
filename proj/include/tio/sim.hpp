#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tio/camera.hpp"
#include "tio/config.hpp"
#include "tio/homography.hpp"
#include "tio/image.hpp"
#include "tio/imu.hpp"

namespace tio {

// ---- scene -----------------------------------------------------------------

struct CosineTerm {
  double amplitude, ku, kv, phase;  // counts, rad/m, rad/m, rad
};

struct HotBlob {
  double u, v, sigma, amplitude;  // m, m, m, counts
};

/// Continuous radiometric texture over plane coordinates (u, v) in meters.
struct TextureField {
  double base = 15000.0;
  std::vector<CosineTerm> cosines;
  std::vector<HotBlob> blobs;

  double value(double u, double v) const;
};

/// Rectangle origin + u * u_axis + v * v_axis, (u, v) in [0, width] x [0, height],
/// carrying a rasterized texture sampled bilinearly.
struct TexturedPlane {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d u_axis = Eigen::Vector3d::UnitX();
  Eigen::Vector3d v_axis = Eigen::Vector3d::UnitY();
  double width = 1.0, height = 1.0;  // m
  double texel = 0.02;               // m
  ImageArray texture;                // rows along v, texel centers at (i + 0.5) * texel

  static TexturedPlane rasterize(const Eigen::Vector3d& origin, const Eigen::Vector3d& u_axis,
                                 const Eigen::Vector3d& v_axis, double width, double height, double texel,
                                 const TextureField& field);
  double sample(double u, double v) const;
};

struct SceneModel {
  std::vector<TexturedPlane> planes;
  double ambient = 15000.0;  // counts where a ray hits nothing
};

struct RoomConfig {
  double length = 18.0;  // x extent, m
  double width = 12.0;   // y extent, m
  double height = 3.0;   // m
  double texel = 0.02;
  double base = 15000.0;
  double smooth_amplitude = 600.0;   // low-frequency temperature field, counts
  double detail_amplitude = 150.0;   // mid-frequency surface variation, counts
  double blob_density = 4.0;         // per m^2
  double blob_amplitude = 2500.0;    // counts, hot blobs up to this, cold ones up to half
  double min_blob_sigma = 0.03, max_blob_sigma = 0.2;  // m
};

/// Closed room centered on the origin, floor at z = 0: four walls, floor and ceiling.
SceneModel makeRoomScene(const RoomConfig& cfg, std::uint64_t seed);

struct RayHit {
  double distance = 0.0;
  double value = 0.0;
  int plane = -1;
};

/// Nearest plane hit along origin + s * dir for s > 0.
std::optional<RayHit> castRay(const SceneModel& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir);

// ---- trajectory ------------------------------------------------------------

/// Elliptical loop with C2 speed ramps, walking bob and head sway. Heading follows
/// the ellipse tangent; body x forward, z up. All derivatives are analytic.
struct LoopTrajectory {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double semi_x = 7.5, semi_y = 4.5;  // m
  double height = 1.5;                // m
  double start_angle = -M_PI / 2;     // ellipse parameter at rest
  double duration = 60.0;             // s
  double rest = 1.0;                  // stationary lead-in and lead-out, s
  double ramp = 2.0;                  // speed ramp, s
  double loops = 1.0;
  double bob_amplitude = 0.02, bob_frequency = 1.8;    // m, Hz
  double sway_amplitude = 0.03, sway_frequency = 0.9;  // rad, Hz

  Eigen::Vector3d position(double t) const;
  Eigen::Vector3d velocity(double t) const;
  Eigen::Vector3d acceleration(double t) const;
  Eigen::Quaterniond orientation(double t) const;
  Eigen::Vector3d angularVelocityBody(double t) const;
  FrameState state(double t) const;
  /// Arc length of the horizontal path by numerical quadrature.
  double pathLength(int steps = 20000) const;

  void validate() const;

 private:
  struct Phase {
    double phi, dphi, ddphi;
    double w, dw, ddw;  // motion envelope
  };
  Phase phase(double t) const;
  Eigen::Vector3d euler(double t, Eigen::Vector3d* rates) const;  // (yaw, pitch, roll)
};

// ---- sensors ---------------------------------------------------------------

struct NucGap {
  double start = 0.0;
  double duration = 0.5;
};

struct SimConfig {
  double duration = 60.0;
  double camera_rate = 20.0;
  double imu_rate = 200.0;
  CameraModel camera = defaultCamera();
  ImuNoiseParams imu;
  Eigen::Vector3d accel_bias = Eigen::Vector3d(0.03, -0.02, 0.025);
  Eigen::Vector3d gyro_bias = Eigen::Vector3d(0.002, -0.0015, 0.001);
  double fpn_amplitude = 100.0;   // counts
  double shot_noise = 10.0;       // counts, per-pixel sigma
  std::vector<NucGap> nuc_gaps{{30.0, 0.5}};

  static CameraModel defaultCamera();
  bool suspended(double t) const;
  int frameCount() const;
  double frameTime(int k) const { return k / camera_rate; }
  void validate() const;
};

class FrameSuspended : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RenderedFrame {
  RadiometricImage image;
  FrameState pose;
};

/// Ray-cast rendering at time t with the session's FPN and per-frame shot
/// noise drawn from `noise_seed`. Throws FrameSuspended inside a NUC gap.
RenderedFrame renderFrame(const SceneModel& scene, const LoopTrajectory& trajectory, double t, const SimConfig& cfg,
                          const FpnPattern* fpn, std::uint64_t noise_seed);

struct ImuSequence {
  std::vector<ImuSample> samples;
  std::vector<Eigen::Vector3d> accel_bias;  // per sample
  std::vector<Eigen::Vector3d> gyro_bias;
};

ImuSequence synthesizeImu(const LoopTrajectory& trajectory, const SimConfig& cfg, std::uint64_t seed,
                          const Eigen::Vector3d& gravity_w = Eigen::Vector3d(0.0, 0.0, -9.81));

/// The session FPN pattern for a seed (column stripes plus a smooth field).
FpnPattern sessionFpn(const SimConfig& cfg, std::uint64_t seed);

struct SequenceSummary {
  int frames_written = 0;
  int frames_suspended = 0;
  int imu_samples = 0;
};

/// Writes frames.csv, frame_%06d.pgm, imu.csv, groundtruth.txt and sim_manifest.
SequenceSummary generateSequence(const SceneModel& scene, const LoopTrajectory& trajectory, const SimConfig& cfg,
                                 std::uint64_t seed, const std::filesystem::path& out_dir,
                                 const Config& manifest_extra = {});

// ---- homography pairs ------------------------------------------------------

struct HomographyPair {
  RadiometricImage a;
  RadiometricImage b;
  Eigen::Matrix3d H;  // maps pixels of a onto b
};

/// One random homography per corpus image; B = warp(A) optionally followed by
/// photometric/FPN augmentation.
std::vector<HomographyPair> generateHomographyPairs(const std::vector<RadiometricImage>& corpus,
                                                    const HomographyMagnitudes& magnitudes, std::uint64_t seed,
                                                    const AugmentationConfig* augment = nullptr);

}  // namespace tio
