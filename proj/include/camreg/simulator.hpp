#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "camreg/geometry.hpp"
#include "camreg/registration.hpp"

namespace camreg {

class InvalidConfig : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct NoiseConfig {
    double aruco_trans_sigma = 0.005;               // m
    double aruco_rot_sigma = 0.5 * M_PI / 180.0;    // rad
    double blob_pixel_sigma = 1.0;                  // px
    double timestamp_jitter_sigma = 0.0015;         // s
    double outlier_fraction = 0.0;
    // Per-keyframe odometry noise on the unscaled trajectory; zero means a
    // drift-free, loop-closed trajectory.
    double vo_trans_sigma = 0.0;
    double vo_rot_sigma = 0.0;

    static NoiseConfig zero() { return {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0}; }
};

struct TrajectoryConfig {
    /// Closed loop of (x, y) waypoints in meters; empty means a lawnmower
    /// sweep under every camera row.
    std::vector<Vec2> waypoints;
    double speed = 0.5;              // m/s
    double turn_rate = 0.5;          // rad/s, in-place turns at waypoints
    double keyframe_rate = 2.0;      // Hz
    double roll_pitch_excitation = 0.05;  // rad amplitude
    double robot_height = 0.4;       // m, fisheye height above the floor
    double start_time = 1.0;         // s, stamp of the first keyframe
};

struct ScenarioConfig {
    int n_cameras = 40;
    double ceiling_min = 3.0;
    double ceiling_max = 4.0;
    double area_x = 40.0;
    double area_y = 20.0;
    double grid_jitter = 0.5;                        // m, uniform +- around grid cells
    double camera_tilt_sigma = 3.0 * M_PI / 180.0;   // rad
    TrajectoryConfig trajectory;
    double true_scale = 2.5;
    Pose true_offset = default_offset();
    double aruco_fov_half_angle = 30.0 * M_PI / 180.0;
    NoiseConfig noise;
    FisheyeIntrinsics intrinsics = default_intrinsics();
    std::uint64_t seed = 1;
    /// Seeds measurement noise separately from scene layout; defaults to `seed`.
    std::optional<std::uint64_t> noise_seed;

    static Pose default_offset();
    static FisheyeIntrinsics default_intrinsics();
    std::uint64_t effective_noise_seed() const { return noise_seed.value_or(seed); }
};

/// Empty when valid, otherwise "<field>: <reason>".
std::optional<std::string> validate(const ScenarioConfig &cfg);

struct ScenarioGroundTruth {
    std::vector<std::pair<int, Pose>> camera_poses_world;
    Trajectory robot_trajectory_metric;
    Pose offset;
    double scale = 1.0;

    const Pose *camera(int id) const;
};

struct Dataset {
    Trajectory trajectory_unscaled;
    std::vector<ArucoDetection> arucos;
    std::vector<BlobDetection> blobs;
    /// Generating camera of blobs[i]; for oracle checks only.
    std::vector<int> blob_truth;
    FisheyeIntrinsics intrinsics;
};

struct Scenario {
    ScenarioGroundTruth truth;
    Dataset dataset;
};

/// Deterministic in the config. Throws InvalidConfig.
Scenario generate_scenario(const ScenarioConfig &cfg);

std::vector<ArucoDetection> simulate_aruco_detections(const ScenarioGroundTruth &gt, const ScenarioConfig &cfg);

struct SimulatedBlobs {
    std::vector<BlobDetection> blobs;
    std::vector<int> truth;
};

SimulatedBlobs simulate_blob_detections(const ScenarioGroundTruth &gt, const ScenarioConfig &cfg,
                                        const FisheyeIntrinsics &intr);

}  // namespace camreg
