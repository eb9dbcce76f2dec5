#pragma once

#include <set>
#include <string>

#include "tio/camera.hpp"
#include "tio/config.hpp"
#include "tio/estimator.hpp"
#include "tio/imu.hpp"
#include "tio/odometry.hpp"
#include "tio/sim.hpp"
#include "tio/tracker.hpp"

// Mapping between the module structs and flat config keys. Every apply*
// leaves fields whose keys are absent untouched and validates the result.

namespace tio {

Config cameraToConfig(const CameraModel& cam);
void applyConfig(const Config& c, CameraModel& cam);

Config imuToConfig(const ImuNoiseParams& p);
void applyConfig(const Config& c, ImuNoiseParams& p);

Config trackerToConfig(const TrackerConfig& t);
void applyConfig(const Config& c, TrackerConfig& t);

Config solverToConfig(const SolverConfig& s);
void applyConfig(const Config& c, SolverConfig& s);

/// Includes the camera and IMU keys.
Config simToConfig(const SimConfig& s);
void applyConfig(const Config& c, SimConfig& s);

/// Duration is taken from sim.duration.
Config trajectoryToConfig(const LoopTrajectory& t);
void applyConfig(const Config& c, LoopTrajectory& t);

Config roomToConfig(const RoomConfig& r);
void applyConfig(const Config& c, RoomConfig& r);

/// Includes the camera, IMU, tracker and solver keys.
Config odometryToConfig(const OdometryConfig& o);
void applyConfig(const Config& c, OdometryConfig& o);

/// Every key understood by the structs above.
std::set<std::string> moduleKeys();

}  // namespace tio
