#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tio/dataset.hpp"

namespace tio {

class EvalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---- repeatability ----------------------------------------------------------

struct RepeatabilityConfig {
  int max_points = 500;
  int nms_radius = 8;
  double epsilon = 3.0;  // px

  void validate() const;
};

/// Symmetric repeatability of point sets detected in images A and B (both
/// width x height) related by x_b = H x_a. Points whose mapping leaves the
/// other image do not count. Directions with nothing in view are skipped;
/// nullopt when neither direction is defined.
std::optional<double> repeatability(const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b,
                                    const Eigen::Matrix3d& H, int width, int height, double epsilon);

/// Uniformly random points with greedy radius suppression, the chance baseline.
std::vector<Eigen::Vector2d> randomPoints(int width, int height, int count, int nms_radius, std::uint64_t seed);

// ---- trajectories -----------------------------------------------------------

struct RigidTransform {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d operator()(const Eigen::Vector3d& p) const { return R * p + t; }
  StampedPose operator()(const StampedPose& p) const;
};

/// Index pairs (estimate, ground truth) with nearest timestamps within
/// max_dt, each ground-truth pose used at most once.
std::vector<std::pair<std::size_t, std::size_t>> associate(const std::vector<StampedPose>& estimate,
                                                           const std::vector<StampedPose>& truth,
                                                           double max_dt = 0.01);

/// Least-squares rotation and translation taking src onto dst.
RigidTransform alignRigid(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst);

struct ErrorStats {
  double rmse = 0.0;
  double max = 0.0;
  std::vector<double> errors;
};

ErrorStats errorStats(std::vector<double> errors);

struct AteResult {
  ErrorStats position;
  ErrorStats z;  // |z| residuals after alignment
  RigidTransform alignment;  // applied to the estimate
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

/// Throws EvalError when fewer than 3 pose pairs associate.
AteResult ate(const std::vector<StampedPose>& estimate, const std::vector<StampedPose>& truth, double max_dt = 0.01);

/// Translational relative-pose error over a separation of `delta` associated poses.
ErrorStats rpe(const std::vector<StampedPose>& estimate, const std::vector<StampedPose>& truth, int delta = 1,
               double max_dt = 0.01);

/// As rpe, pairing each pose with the first one at least `seconds` later.
ErrorStats rpeSeconds(const std::vector<StampedPose>& estimate, const std::vector<StampedPose>& truth, double seconds,
                      double max_dt = 0.01);

/// t, ground truth xyz, aligned estimate xyz per associated pair.
void writeTrajectoryPlotCsv(const std::filesystem::path& path, const std::vector<StampedPose>& estimate,
                            const std::vector<StampedPose>& truth, const AteResult& alignment);

// ---- timing -----------------------------------------------------------------

/// Wall times per named stage. The "frame" stage holds whole-frame totals.
class TimingLog {
 public:
  void record(const std::string& stage, double seconds) { samples_[stage].push_back(seconds); }
  const std::map<std::string, std::vector<double>>& samples() const { return samples_; }
  void merge(const TimingLog& other);

 private:
  std::map<std::string, std::vector<double>> samples_;
};

class ScopedTimer {
 public:
  ScopedTimer(TimingLog& log, std::string stage)
      : log_(log), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
  ~ScopedTimer() {
    log_.record(stage_, std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
  }

 private:
  TimingLog& log_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

struct StageStats {
  std::string stage;
  std::size_t count = 0;
  double mean = 0.0, p95 = 0.0, stddev = 0.0, max = 0.0;  // s
};

/// Stages with samples only: detect, track, preintegrate, solve, frame, then any others by name.
std::vector<StageStats> timingReport(const TimingLog& log);

// ---- metric CSV -------------------------------------------------------------

struct MetricRow {
  std::string metric;
  std::string statistic;
  double value = 0.0;
  std::string units;
};

std::string metricCsv(const std::vector<MetricRow>& rows);
void writeMetricCsv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> readMetricCsv(const std::filesystem::path& path);

std::vector<MetricRow> timingRows(const std::vector<StageStats>& stats);

}  // namespace tio
