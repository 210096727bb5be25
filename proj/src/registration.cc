#include "camreg/registration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <Eigen/Eigenvalues>

namespace camreg {

std::string to_string(Stage s) {
    switch (s) {
    case Stage::ScaleOffset:
        return "scale_offset";
    case Stage::LookingDown:
        return "looking_down";
    case Stage::Association:
        return "association";
    case Stage::Refinement:
        return "refinement";
    }
    return "unknown";
}

PipelineError::PipelineError(Stage stage, const std::string &detail)
    : std::runtime_error("stage " + to_string(stage) + " failed: " + detail), stage_(stage) {}

namespace {

std::map<int, std::vector<ArucoDetection>> group_by_camera(const std::vector<ArucoDetection> &detections,
                                                           const Trajectory &traj, std::size_t *dropped) {
    std::map<int, std::vector<ArucoDetection>> groups;
    for (const auto &d : detections) {
        if (!traj.covers(d.stamp)) {
            if (dropped) ++*dropped;
            continue;
        }
        groups[d.camera_id].push_back(d);
    }
    for (auto &[id, dets] : groups) {
        std::stable_sort(dets.begin(), dets.end(),
                         [](const ArucoDetection &a, const ArucoDetection &b) { return a.stamp < b.stamp; });
    }
    return groups;
}

Pose scale_translation(const Pose &p, double s) {
    Pose out = p;
    out.translation *= s;
    return out;
}

}  // namespace

std::vector<MotionSegmentPair> build_motion_segments(const Trajectory &traj,
                                                     const std::vector<ArucoDetection> &detections,
                                                     const MinMotion &min_motion) {
    std::vector<MotionSegmentPair> pairs;
    for (const auto &[camera_id, dets] : group_by_camera(detections, traj, nullptr)) {
        for (std::size_t i = 0; i + 1 < dets.size(); ++i) {
            const auto &d0 = dets[i];
            const auto &d1 = dets[i + 1];
            if (!(d1.stamp > d0.stamp)) continue;
            MotionSegmentPair pair;
            pair.B = inverse(d0.pose_marker_in_camera) * d1.pose_marker_in_camera;
            if (pair.B.translation.norm() < min_motion.min_trans && pair.B.rotation.angle() < min_motion.min_rot) {
                continue;
            }
            pair.A = inverse(interpolate_pose(traj, d0.stamp)) * interpolate_pose(traj, d1.stamp);
            pair.dt = d1.stamp - d0.stamp;
            pair.camera_id = camera_id;
            pairs.push_back(pair);
        }
    }
    return pairs;
}

bool motion_is_degenerate(const std::vector<MotionSegmentPair> &pairs, double min_rot, double tolerance_rad) {
    std::vector<Vec3> axes;
    Mat3 scatter = Mat3::Zero();
    for (const auto &p : pairs) {
        const Vec3 phi = p.A.rotation.log();
        if (phi.norm() < min_rot) continue;
        const Vec3 axis = phi.normalized();
        axes.push_back(axis);
        scatter += axis * axis.transpose();
    }
    if (axes.empty()) return true;
    Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
    const Vec3 principal = eig.eigenvectors().col(2);
    const double cos_tol = std::cos(tolerance_rad);
    return std::all_of(axes.begin(), axes.end(),
                       [&](const Vec3 &a) { return std::abs(a.dot(principal)) >= cos_tol; });
}

ScaleOffsetEstimate estimate_scale_and_offset(const std::vector<MotionSegmentPair> &pairs,
                                              const ScaleOffsetEstimate &init, const ScaleOffsetOptions &options) {
    if (pairs.size() < options.min_segments) {
        std::ostringstream msg;
        msg << "need at least " << options.min_segments << " motion segments, got " << pairs.size();
        throw InsufficientSegments(msg.str());
    }
    LeastSquaresProblem problem;
    const BlockId scale_id = problem.add_scalar_block(init.scale);
    const BlockId offset_id = problem.add_pose_block(init.offset);
    for (const auto &pair : pairs) {
        problem.add_residual_block(
            6,
            [A = pair.A, B = pair.B](const BlockValues &v) -> Eigen::VectorXd {
                const Pose X = v.pose(1);
                const Pose scaled_A = scale_translation(A, v.scalar(0));
                return ominus(scaled_A * X, X * B).vector();
            },
            {scale_id, offset_id}, RobustLoss::huber(options.huber_delta));
    }

    ScaleOffsetEstimate out;
    out.report = solve(problem, options.solver);
    out.scale = problem.scalar(scale_id);
    out.offset = problem.pose(offset_id);
    out.degenerate_motion = motion_is_degenerate(pairs, options.min_rot);
    out.n_segments = pairs.size();
    return out;
}

Trajectory apply_scale(const Trajectory &traj, double s) {
    if (!(s > 0.0) || !std::isfinite(s)) {
        std::ostringstream msg;
        msg << "scale must be positive, got " << s;
        throw NonPositiveScale(msg.str());
    }
    std::vector<TimedPose> samples = traj.samples();
    for (auto &sample : samples) sample.pose.translation *= s;
    return Trajectory(std::move(samples));
}

Pose initialize_camera_pose(const ArucoDetection &det, const Trajectory &traj, const Pose &offset) {
    return interpolate_pose(traj, det.stamp) * offset * inverse(det.pose_marker_in_camera);
}

CameraEstimate estimate_camera_pose(int camera_id, const std::vector<ArucoDetection> &detections,
                                    const Trajectory &traj, const Pose &offset, const CameraPoseOptions &options) {
    struct Observation {
        double stamp;
        Pose marker_in_camera;
        Pose marker_in_world;  // int T^W_F * T^F_M
    };
    std::vector<Observation> obs;
    for (const auto &d : detections) {
        if (d.camera_id != camera_id || !traj.covers(d.stamp)) continue;
        obs.push_back({d.stamp, d.pose_marker_in_camera, interpolate_pose(traj, d.stamp) * offset});
    }
    if (obs.empty()) {
        throw NoValidDetections("camera " + std::to_string(camera_id) + " has no detections inside the trajectory");
    }
    std::stable_sort(obs.begin(), obs.end(), [](const Observation &a, const Observation &b) { return a.stamp < b.stamp; });

    const RobustLoss loss = RobustLoss::huber(options.huber_delta);
    auto robust_cost = [&](const Pose &camera) {
        double c = 0.0;
        for (const auto &o : obs) c += loss.evaluate(ominus(camera * o.marker_in_camera, o.marker_in_world).squared_norm());
        return c;
    };

    // Start from the median-stamp detection unless another detection's
    // chained pose at least halves the robust cost (median may be an outlier).
    const std::size_t median = (obs.size() - 1) / 2;
    Pose init = obs[median].marker_in_world * inverse(obs[median].marker_in_camera);
    double best = robust_cost(init);
    for (std::size_t i = 0; i < obs.size(); ++i) {
        if (i == median) continue;
        const Pose candidate = obs[i].marker_in_world * inverse(obs[i].marker_in_camera);
        const double c = robust_cost(candidate);
        if (c < 0.5 * best) {
            best = c;
            init = candidate;
        }
    }

    LeastSquaresProblem problem;
    const BlockId cam = problem.add_pose_block(init);
    for (const auto &o : obs) {
        problem.add_residual_block(
            6,
            [o](const BlockValues &v) -> Eigen::VectorXd {
                return ominus(v.pose(0) * o.marker_in_camera, o.marker_in_world).vector();
            },
            {cam}, loss);
    }

    CameraEstimate est;
    est.camera_id = camera_id;
    est.report = solve(problem, options.solver);
    est.pose_world = problem.pose(cam);
    est.n_aruco = int(obs.size());
    return est;
}

std::vector<BlobDetection> associate_blobs(const std::vector<BlobDetection> &blobs,
                                           const std::vector<CameraEstimate> &cameras, const Trajectory &traj,
                                           const FisheyeIntrinsics &intr, double gate_px) {
    std::map<std::int64_t, std::vector<std::size_t>> by_keyframe;
    for (std::size_t i = 0; i < blobs.size(); ++i) by_keyframe[blobs[i].keyframe_id].push_back(i);

    std::vector<std::pair<std::size_t, int>> labels;  // (blob index, camera id)
    for (const auto &[keyframe_id, blob_indices] : by_keyframe) {
        const TimedPose *kf = traj.find_keyframe(keyframe_id);
        if (!kf) continue;

        std::vector<std::pair<std::size_t, Vec2>> projections;  // (camera index, pixel)
        for (std::size_t c = 0; c < cameras.size(); ++c) {
            if (auto px = project_fisheye(intr, kf->pose, cameras[c].pose_world.translation)) {
                projections.emplace_back(c, *px);
            }
        }

        std::vector<std::tuple<double, std::size_t, std::size_t>> candidates;  // (distance, blob, camera)
        for (std::size_t b : blob_indices) {
            for (const auto &[c, px] : projections) {
                const double d = (blobs[b].pixel - px).norm();
                if (d <= gate_px) candidates.emplace_back(d, b, c);
            }
        }
        std::sort(candidates.begin(), candidates.end());

        std::set<std::size_t> used_blobs, used_cameras;
        for (const auto &[d, b, c] : candidates) {
            if (used_blobs.count(b) || used_cameras.count(c)) continue;
            used_blobs.insert(b);
            used_cameras.insert(c);
            labels.emplace_back(b, cameras[c].camera_id);
        }
    }

    std::sort(labels.begin(), labels.end());
    std::vector<BlobDetection> out;
    out.reserve(labels.size());
    for (const auto &[b, camera_id] : labels) {
        BlobDetection labeled = blobs[b];
        labeled.camera_id = camera_id;
        out.push_back(labeled);
    }
    return out;
}

RefinementResult refine_camera_positions(const std::vector<CameraEstimate> &cameras,
                                         const std::vector<BlobDetection> &labeled_blobs, const Trajectory &traj,
                                         const FisheyeIntrinsics &intr, const RefinementOptions &options) {
    RefinementResult result;
    result.cameras = cameras;

    std::map<int, std::size_t> index_of;
    for (std::size_t i = 0; i < cameras.size(); ++i) index_of[cameras[i].camera_id] = i;

    struct Observation {
        Pose keyframe_pose;
        Vec2 pixel;
    };
    std::vector<std::vector<Observation>> per_camera(cameras.size());
    std::vector<std::set<std::int64_t>> keyframes(cameras.size());
    for (const auto &blob : labeled_blobs) {
        if (!blob.camera_id) continue;
        auto it = index_of.find(*blob.camera_id);
        if (it == index_of.end()) continue;
        const TimedPose *kf = traj.find_keyframe(blob.keyframe_id);
        if (!kf) continue;
        per_camera[it->second].push_back({kf->pose, blob.pixel});
        keyframes[it->second].insert(blob.keyframe_id);
    }

    LeastSquaresProblem problem;
    std::vector<std::pair<std::size_t, BlockId>> refined_blocks;
    const double inv_sigma = 1.0 / options.pixel_sigma;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        result.cameras[i].n_blob = int(per_camera[i].size());
        result.cameras[i].refined = false;
        if (int(keyframes[i].size()) < options.min_keyframes) continue;
        const BlockId block = problem.add_parameter_block(cameras[i].pose_world.translation);
        refined_blocks.emplace_back(i, block);
        for (const auto &o : per_camera[i]) {
            problem.add_residual_block(
                2,
                [o, &intr, inv_sigma](const BlockValues &v) -> Eigen::VectorXd {
                    const Vec3 p_cam = o.keyframe_pose.rotation.inverse().rotate(v.vec3(0) - o.keyframe_pose.translation);
                    const auto px = fisheye_distort(intr, p_cam);
                    if (!px) return Eigen::Vector2d::Constant(std::numeric_limits<double>::quiet_NaN());
                    return (o.pixel - *px) * inv_sigma;
                },
                {block}, RobustLoss::cauchy(options.cauchy_scale));
        }
    }

    result.report = solve(problem, options.solver);
    for (const auto &[i, block] : refined_blocks) {
        result.cameras[i].pose_world.translation = problem.value(block).head<3>();
        result.cameras[i].refined = true;
    }
    return result;
}

CalibrationResult run_pipeline(const Trajectory &traj_unscaled, const std::vector<ArucoDetection> &arucos,
                               const std::vector<BlobDetection> &blobs, const FisheyeIntrinsics &intr,
                               const PipelineOptions &options) {
    CalibrationResult result;
    using Clock = std::chrono::steady_clock;
    auto started = Clock::now();
    auto lap = [&](Stage s) {
        const auto now = Clock::now();
        result.stage_timings_ms.emplace_back(s, std::chrono::duration<double, std::milli>(now - started).count());
        started = now;
    };

    try {
        if (traj_unscaled.size() < 2) throw std::invalid_argument("trajectory needs at least two keyframes");
        if (arucos.empty()) throw std::invalid_argument("no marker detections");
        const auto pairs = build_motion_segments(traj_unscaled, arucos, options.min_motion);
        ScaleOffsetOptions so;
        so.huber_delta = options.huber_delta;
        so.min_rot = options.min_motion.min_rot;
        so.solver = options.solver;
        result.scale_offset = estimate_scale_and_offset(pairs, ScaleOffsetEstimate{}, so);
        result.scaled_trajectory = apply_scale(traj_unscaled, result.scale_offset.scale);
    } catch (const PipelineError &) {
        throw;
    } catch (const std::exception &e) {
        throw PipelineError(Stage::ScaleOffset, e.what());
    }
    lap(Stage::ScaleOffset);

    try {
        const auto groups = group_by_camera(arucos, result.scaled_trajectory, &result.dropped_aruco);
        CameraPoseOptions cp;
        cp.huber_delta = options.huber_delta;
        cp.solver = options.solver;
        for (const auto &[camera_id, dets] : groups) {
            result.cameras.push_back(
                estimate_camera_pose(camera_id, dets, result.scaled_trajectory, result.scale_offset.offset, cp));
        }
        if (result.cameras.empty()) throw NoValidDetections("no camera could be estimated");
    } catch (const std::exception &e) {
        throw PipelineError(Stage::LookingDown, e.what());
    }
    result.looking_down = result.cameras;
    lap(Stage::LookingDown);

    if (!options.refine || blobs.empty()) {
        return result;
    }

    try {
        result.associated_blobs =
            associate_blobs(blobs, result.cameras, result.scaled_trajectory, intr, options.gate_px);
    } catch (const std::exception &e) {
        throw PipelineError(Stage::Association, e.what());
    }
    lap(Stage::Association);

    try {
        RefinementOptions ro;
        ro.cauchy_scale = options.cauchy_scale;
        ro.pixel_sigma = options.pixel_sigma;
        ro.solver = options.solver;
        auto refined =
            refine_camera_positions(result.cameras, result.associated_blobs, result.scaled_trajectory, intr, ro);
        result.cameras = std::move(refined.cameras);
        result.refinement_report = refined.report;
    } catch (const std::exception &e) {
        throw PipelineError(Stage::Refinement, e.what());
    }
    lap(Stage::Refinement);
    return result;
}

}  // namespace camreg
