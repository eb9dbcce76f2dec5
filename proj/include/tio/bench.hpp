#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tio/eval.hpp"
#include "tio/odometry.hpp"
#include "tio/sim.hpp"

namespace tio {

/// A simulated sequence and the odometry settings to run on it.
struct BenchConfig {
  SimConfig sim;
  LoopTrajectory trajectory;
  RoomConfig room;
  OdometryConfig odometry;
  int repeatability_pairs = 10;  // rendered homography pairs; 0 skips the metric

  /// Sim and odometry defaults with a shared camera and IMU model.
  static BenchConfig defaults();
  void validate() const;
};

struct BenchResult {
  OdometryResult odometry;
  std::vector<StampedPose> truth;  // at every camera time, gaps included
  double path_length = 0.0;
  AteResult ate;
  double final_error = 0.0;  // m, last keyframe after alignment
  ErrorStats rpe;            // consecutive keyframes
  ErrorStats rpe_1s;
  std::optional<double> repeatability;  // salient points, or the network when given

  /// Everything except wall-clock timing, so equal seeds give equal rows.
  std::vector<MetricRow> metrics() const;
};

/// Renders the sequence in memory and runs the odometry pipeline on it.
BenchResult runBench(const BenchConfig& cfg, std::uint64_t seed, const NetworkWeights* weights = nullptr);

}  // namespace tio
