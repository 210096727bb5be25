#include "camreg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/SVD>

namespace camreg {

ReprojectionReport reprojection_rmse(const std::vector<CameraEstimate> &cameras,
                                     const std::vector<BlobDetection> &labeled_blobs, const Trajectory &traj,
                                     const FisheyeIntrinsics &intr) {
    std::map<int, const CameraEstimate *> by_id;
    for (const auto &c : cameras) by_id[c.camera_id] = &c;

    ReprojectionReport report;
    std::map<int, std::pair<double, std::size_t>> per_camera;
    double total = 0.0;
    for (const auto &blob : labeled_blobs) {
        if (!blob.camera_id) continue;
        auto it = by_id.find(*blob.camera_id);
        if (it == by_id.end()) continue;
        const TimedPose *kf = traj.find_keyframe(blob.keyframe_id);
        if (!kf) continue;
        const auto px = project_fisheye(intr, kf->pose, it->second->pose_world.translation);
        if (!px) continue;
        const double e2 = (blob.pixel - *px).squaredNorm();
        total += e2;
        auto &acc = per_camera[*blob.camera_id];
        acc.first += e2;
        ++acc.second;
        report.residuals.push_back({blob.id, blob.keyframe_id, *blob.camera_id, blob.pixel, *px});
    }
    report.n_terms = report.residuals.size();
    report.rmse_px = report.n_terms ? std::sqrt(total / double(report.n_terms)) : 0.0;
    for (const auto &[id, acc] : per_camera) report.per_camera_rmse_px[id] = std::sqrt(acc.first / double(acc.second));
    return report;
}

AlignmentTransform align_point_sets(const std::vector<IdPoint> &source, const std::vector<IdPoint> &target,
                                    bool with_scale) {
    std::map<int, Vec3> target_by_id(target.begin(), target.end());
    std::vector<std::pair<Vec3, Vec3>> matches;
    std::map<int, Vec3> source_by_id(source.begin(), source.end());
    for (const auto &[id, p] : source_by_id) {
        auto it = target_by_id.find(id);
        if (it != target_by_id.end()) matches.emplace_back(p, it->second);
    }
    if (matches.size() < 3) {
        std::ostringstream msg;
        msg << "need at least 3 common ids, got " << matches.size();
        throw TooFewCorrespondences(msg.str());
    }

    Eigen::Matrix3Xd src(3, matches.size()), dst(3, matches.size());
    for (std::size_t i = 0; i < matches.size(); ++i) {
        src.col(i) = matches[i].first;
        dst.col(i) = matches[i].second;
    }
    // Identical point sets align exactly; skip the decomposition round-off.
    if (std::all_of(matches.begin(), matches.end(), [](const auto &m) { return m.first == m.second; })) {
        return AlignmentTransform{};
    }

    const Eigen::Matrix3Xd centered = src.colwise() - src.rowwise().mean();
    const Eigen::Vector3d sv = Eigen::JacobiSVD<Mat3>(centered * centered.transpose()).singularValues();
    if (sv(0) <= 0.0 || sv(1) <= 1e-12 * sv(0)) throw DegenerateGeometry("source points are collinear");

    const Mat4 T = Eigen::umeyama(src, dst, with_scale);
    AlignmentTransform out;
    out.scale = with_scale ? T.topLeftCorner<3, 3>().col(0).norm() : 1.0;
    out.rotation = UnitQuaternion::from_matrix(T.topLeftCorner<3, 3>() / out.scale);
    out.translation = T.topRightCorner<3, 1>();
    return out;
}

namespace {

// ZYX decomposition R = Rz(yaw) Ry(pitch) Rx(roll), returned as (roll, pitch, yaw).
Vec3 roll_pitch_yaw(const Mat3 &R) {
    const double yaw = std::atan2(R(1, 0), R(0, 0));
    const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
    const double roll = std::atan2(R(2, 1), R(2, 2));
    return Vec3(roll, pitch, yaw);
}

using PosePairs = std::vector<std::pair<Pose, Pose>>;

PoseRmsdReport rmsd_of(const PosePairs &pairs, const AlignmentTransform &align_b_to_a) {
    PoseRmsdReport r;
    for (const auto &[a, b] : pairs) {
        const Vec3 dp = a.translation - align_b_to_a.apply(b.translation);
        // Raw product, no renormalization: identical inputs give an exact identity.
        const Eigen::Quaterniond qb = align_b_to_a.rotation.eigen() * b.rotation.eigen();
        const Mat3 dR = (a.rotation.eigen() * qb.conjugate()).toRotationMatrix();
        const Vec3 rpy = roll_pitch_yaw(dR) * (180.0 / M_PI);
        r.trans_rmsd_m += dp.cwiseAbs2();
        r.rot_rmsd_deg += rpy.cwiseAbs2();
    }
    r.n_matched = pairs.size();
    r.trans_rmsd_m = (r.trans_rmsd_m / double(pairs.size())).cwiseSqrt();
    r.rot_rmsd_deg = (r.rot_rmsd_deg / double(pairs.size())).cwiseSqrt();
    return r;
}

PosePairs match(const std::vector<std::pair<int, Pose>> &a, const std::vector<std::pair<int, Pose>> &b) {
    std::map<int, Pose> b_by_id(b.begin(), b.end());
    std::map<int, Pose> a_by_id(a.begin(), a.end());
    PosePairs out;
    for (const auto &[id, pose] : a_by_id) {
        auto it = b_by_id.find(id);
        if (it != b_by_id.end()) out.emplace_back(pose, it->second);
    }
    return out;
}

std::vector<std::pair<int, Pose>> as_pairs(const std::vector<CameraEstimate> &cams) {
    std::vector<std::pair<int, Pose>> out;
    for (const auto &c : cams) out.emplace_back(c.camera_id, c.pose_world);
    return out;
}

std::vector<IdPoint> positions(const std::vector<std::pair<int, Pose>> &poses) {
    std::vector<IdPoint> out;
    for (const auto &[id, p] : poses) out.emplace_back(id, p.translation);
    return out;
}

PoseRmsdReport compare(const std::vector<std::pair<int, Pose>> &a, const std::vector<std::pair<int, Pose>> &b,
                       bool align) {
    const PosePairs pairs = match(a, b);
    if (pairs.size() < 3) {
        std::ostringstream msg;
        msg << "need at least 3 common cameras, got " << pairs.size();
        throw TooFewCorrespondences(msg.str());
    }
    const AlignmentTransform t = align ? align_point_sets(positions(b), positions(a), false) : AlignmentTransform{};
    return rmsd_of(pairs, t);
}

}  // namespace

PoseRmsdReport pose_rmsd(const std::vector<CameraEstimate> &set_a, const std::vector<CameraEstimate> &set_b) {
    return compare(as_pairs(set_a), as_pairs(set_b), true);
}

PoseRmsdReport compare_to_ground_truth(const std::vector<CameraEstimate> &est, const ScenarioGroundTruth &gt,
                                       bool align) {
    return compare(gt.camera_poses_world, as_pairs(est), align);
}

}  // namespace camreg
