#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "camreg/geometry.hpp"
#include "camreg/optimizer.hpp"

namespace camreg {

/// Marker pose T^{C_k}_M observed by environment camera `camera_id`.
struct ArucoDetection {
    int camera_id = 0;
    double stamp = 0.0;
    Pose pose_marker_in_camera;
};

/// Pixel observation of an environment camera in the fisheye image of a
/// robot keyframe. `camera_id` is empty until association.
struct BlobDetection {
    std::int64_t id = 0;
    std::int64_t keyframe_id = 0;
    Vec2 pixel = Vec2::Zero();
    std::optional<int> camera_id;
};

/// Paired relative motions for motion-based calibration: A is the fisheye
/// motion (unscaled translation) and B the marker motion seen by one camera.
struct MotionSegmentPair {
    Pose A;
    Pose B;
    double dt = 0.0;
    int camera_id = 0;
};

struct MinMotion {
    double min_trans = 0.02;
    double min_rot = 0.01;
};

struct ScaleOffsetEstimate {
    double scale = 1.0;
    Pose offset;  // T^F_M
    SolveReport report;
    /// Set when all rotation axes of the fisheye motion are parallel, leaving
    /// the offset translation along that axis unobservable.
    bool degenerate_motion = false;
    std::size_t n_segments = 0;
};

struct CameraEstimate {
    int camera_id = 0;
    Pose pose_world;  // T^W_{C_k}
    int n_aruco = 0;
    int n_blob = 0;
    bool refined = false;
    SolveReport report;
};

class InsufficientSegments : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class NoValidDetections : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class NonPositiveScale : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

enum class Stage { ScaleOffset, LookingDown, Association, Refinement };
std::string to_string(Stage s);

/// A stage failure inside run_pipeline; what() names the stage.
class PipelineError : public std::runtime_error {
  public:
    PipelineError(Stage stage, const std::string &detail);
    Stage stage() const { return stage_; }

  private:
    Stage stage_;
};

std::vector<MotionSegmentPair> build_motion_segments(const Trajectory &traj,
                                                     const std::vector<ArucoDetection> &detections,
                                                     const MinMotion &min_motion = {});

/// True when every rotation axis of the fisheye motions (segments rotating by
/// at least `min_rot`) lies within `tolerance_rad` of a common axis.
bool motion_is_degenerate(const std::vector<MotionSegmentPair> &pairs, double min_rot = 0.01,
                          double tolerance_rad = 2.0 * M_PI / 180.0);

struct ScaleOffsetOptions {
    double huber_delta = 1.0;
    std::size_t min_segments = 10;
    double min_rot = 0.01;
    SolverOptions solver;
};

/// Minimizes sum_i huber(|(A_i(s) X) (-) (X B_i)|^2) over the scale s and the
/// marker offset X = T^F_M. Throws InsufficientSegments below min_segments.
ScaleOffsetEstimate estimate_scale_and_offset(const std::vector<MotionSegmentPair> &pairs,
                                              const ScaleOffsetEstimate &init,
                                              const ScaleOffsetOptions &options = {});

/// Translations multiplied by s. Throws NonPositiveScale for s <= 0.
Trajectory apply_scale(const Trajectory &traj, double s);

/// T^W_C = T^W_F(t) T^F_M (T^C_M)^-1. Throws OutOfRange outside the trajectory.
Pose initialize_camera_pose(const ArucoDetection &det, const Trajectory &traj, const Pose &offset);

struct CameraPoseOptions {
    double huber_delta = 1.0;
    SolverOptions solver;
};

/// Looking-down estimate of one camera from its marker detections.
/// Detections outside the trajectory span are ignored; throws
/// NoValidDetections when none remain.
CameraEstimate estimate_camera_pose(int camera_id, const std::vector<ArucoDetection> &detections,
                                    const Trajectory &traj, const Pose &offset,
                                    const CameraPoseOptions &options = {});

/// Labels each blob with the nearest projected camera within `gate_px`,
/// greedy one-to-one per keyframe by ascending pixel distance. Blobs left
/// unmatched are dropped from the output.
std::vector<BlobDetection> associate_blobs(const std::vector<BlobDetection> &blobs,
                                           const std::vector<CameraEstimate> &cameras, const Trajectory &traj,
                                           const FisheyeIntrinsics &intr, double gate_px = 50.0);

struct RefinementOptions {
    double cauchy_scale = 1.0;
    /// Pixel residuals are divided by this before the loss is applied.
    double pixel_sigma = 2.0;
    int min_keyframes = 2;
    SolverOptions solver;
};

struct RefinementResult {
    std::vector<CameraEstimate> cameras;
    SolveReport report;
};

/// Looking-up refinement of camera positions from labeled blobs. Rotations
/// are never touched; cameras seen in fewer than `min_keyframes` distinct
/// keyframes keep their position and stay flagged unrefined.
RefinementResult refine_camera_positions(const std::vector<CameraEstimate> &cameras,
                                         const std::vector<BlobDetection> &labeled_blobs, const Trajectory &traj,
                                         const FisheyeIntrinsics &intr, const RefinementOptions &options = {});

struct PipelineOptions {
    MinMotion min_motion;
    double huber_delta = 1.0;
    double cauchy_scale = 1.0;
    double pixel_sigma = 2.0;
    double gate_px = 50.0;
    bool refine = true;
    SolverOptions solver;
};

struct CalibrationResult {
    ScaleOffsetEstimate scale_offset;
    /// Final estimates, sorted by camera id.
    std::vector<CameraEstimate> cameras;
    /// Looking-down estimates before refinement, same order as `cameras`.
    std::vector<CameraEstimate> looking_down;
    Trajectory scaled_trajectory;
    std::vector<BlobDetection> associated_blobs;
    SolveReport refinement_report;
    std::size_t dropped_aruco = 0;
    /// Wall-clock time per stage in milliseconds (not part of the result file).
    std::vector<std::pair<Stage, double>> stage_timings_ms;
};

CalibrationResult run_pipeline(const Trajectory &traj_unscaled, const std::vector<ArucoDetection> &arucos,
                               const std::vector<BlobDetection> &blobs, const FisheyeIntrinsics &intr,
                               const PipelineOptions &options = {});

}  // namespace camreg
