#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "camreg/geometry.hpp"
#include "camreg/registration.hpp"
#include "camreg/simulator.hpp"

namespace camreg {

class TooFewCorrespondences : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class DegenerateGeometry : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct ReprojectionResidual {
    std::int64_t blob_id = 0;
    std::int64_t keyframe_id = 0;
    int camera_id = 0;
    Vec2 observed = Vec2::Zero();
    Vec2 projected = Vec2::Zero();
};

struct ReprojectionReport {
    double rmse_px = 0.0;
    std::map<int, double> per_camera_rmse_px;
    std::size_t n_terms = 0;
    std::vector<ReprojectionResidual> residuals;
};

/// Plain (unrobustified) RMSE over labeled blobs whose camera projects into
/// the keyframe's field of view.
ReprojectionReport reprojection_rmse(const std::vector<CameraEstimate> &cameras,
                                     const std::vector<BlobDetection> &labeled_blobs, const Trajectory &traj,
                                     const FisheyeIntrinsics &intr);

struct AlignmentTransform {
    UnitQuaternion rotation;
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;

    Vec3 apply(const Vec3 &p) const { return scale * rotation.rotate(p) + translation; }
};

using IdPoint = std::pair<int, Vec3>;

/// Least-squares similarity (or rigid, scale = 1) transform mapping source
/// onto target over their common ids. Throws TooFewCorrespondences (< 3) and
/// DegenerateGeometry (collinear).
AlignmentTransform align_point_sets(const std::vector<IdPoint> &source, const std::vector<IdPoint> &target,
                                    bool with_scale);

struct PoseRmsdReport {
    Vec3 rot_rmsd_deg = Vec3::Zero();  // roll, pitch, yaw (ZYX)
    Vec3 trans_rmsd_m = Vec3::Zero();  // x, y, z
    std::size_t n_matched = 0;
};

/// RMSD between common cameras after rigidly aligning set_b onto set_a.
PoseRmsdReport pose_rmsd(const std::vector<CameraEstimate> &set_a, const std::vector<CameraEstimate> &set_b);

/// Same metric against the simulator ground truth; alignment optional since
/// simulated runs share the ground-truth gauge.
PoseRmsdReport compare_to_ground_truth(const std::vector<CameraEstimate> &est, const ScenarioGroundTruth &gt,
                                       bool align = false);

}  // namespace camreg
