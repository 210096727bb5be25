#include "camreg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace camreg {

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw std::invalid_argument("UnitQuaternion: zero or non-finite quaternion");
    }
    w /= n;
    x /= n;
    y /= n;
    z /= n;
    bool flip = w < 0.0;
    if (w == 0.0) {
        flip = x < 0.0 || (x == 0.0 && (y < 0.0 || (y == 0.0 && z < 0.0)));
    }
    if (flip) {
        w = -w;
        x = -x;
        y = -y;
        z = -z;
    }
    q_ = Eigen::Quaterniond(w, x, y, z);
}

UnitQuaternion UnitQuaternion::from_matrix(const Mat3 &R) { return UnitQuaternion(Eigen::Quaterniond(R)); }

UnitQuaternion UnitQuaternion::exp(const Vec3 &phi) {
    const double theta = phi.norm();
    if (theta < 1e-12) {
        return UnitQuaternion(1.0, 0.5 * phi.x(), 0.5 * phi.y(), 0.5 * phi.z());
    }
    const double half = 0.5 * theta;
    const Vec3 v = phi * (std::sin(half) / theta);
    return UnitQuaternion(std::cos(half), v.x(), v.y(), v.z());
}

UnitQuaternion UnitQuaternion::from_axis_angle(const Vec3 &axis, double angle) {
    return exp(axis.normalized() * angle);
}

Vec3 UnitQuaternion::log() const {
    const Vec3 v = q_.vec();
    const double n = v.norm();
    const double w = q_.w();
    if (n < 1e-10) {
        // atan2(n, w) / n ~ (1 - n^2 / (3 w^2)) / w for small n
        return v * (2.0 / w) * (1.0 - n * n / (3.0 * w * w));
    }
    return v * (2.0 * std::atan2(n, w) / n);
}

double UnitQuaternion::angle() const { return 2.0 * std::atan2(q_.vec().norm(), q_.w()); }

Pose Pose::from_matrix(const Mat4 &T) {
    Pose p;
    p.rotation = UnitQuaternion::from_matrix(T.topLeftCorner<3, 3>());
    p.translation = T.topRightCorner<3, 1>();
    return p;
}

Mat4 Pose::matrix() const {
    Mat4 T = Mat4::Identity();
    T.topLeftCorner<3, 3>() = rotation.matrix();
    T.topRightCorner<3, 1>() = translation;
    return T;
}

bool Pose::is_finite() const {
    return translation.allFinite() && std::isfinite(rotation.w()) && std::isfinite(rotation.x()) &&
           std::isfinite(rotation.y()) && std::isfinite(rotation.z());
}

Pose compose(const Pose &a, const Pose &b) {
    Pose c;
    c.rotation = a.rotation * b.rotation;
    c.translation = a.rotation.rotate(b.translation) + a.translation;
    return c;
}

Pose inverse(const Pose &a) {
    Pose inv;
    inv.rotation = a.rotation.inverse();
    inv.translation = -inv.rotation.rotate(a.translation);
    return inv;
}

Tangent6 ominus(const Pose &a, const Pose &b) {
    const Pose d = compose(inverse(b), a);
    return Tangent6{d.translation, d.rotation.log()};
}

UnitQuaternion slerp(const UnitQuaternion &qa, const UnitQuaternion &qb, double alpha) {
    if (alpha <= 0.0) return qa;
    if (alpha >= 1.0) return qb;
    // Canonical w >= 0 of the relative rotation selects the shortest arc.
    const UnitQuaternion delta = qa.inverse() * qb;
    return qa * UnitQuaternion::exp(alpha * delta.log());
}

Trajectory::Trajectory(std::vector<TimedPose> samples) : samples_(std::move(samples)) {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const double t = samples_[i].stamp;
        if (!std::isfinite(t) || t < 0.0) {
            std::ostringstream msg;
            msg << "Trajectory: invalid timestamp at sample " << i;
            throw std::invalid_argument(msg.str());
        }
        if (i > 0 && !(t > samples_[i - 1].stamp)) {
            std::ostringstream msg;
            msg << "Trajectory: timestamps not strictly increasing at sample " << i;
            throw std::invalid_argument(msg.str());
        }
        id_index_.emplace_back(samples_[i].keyframe_id, i);
    }
    std::sort(id_index_.begin(), id_index_.end());
    for (std::size_t i = 1; i < id_index_.size(); ++i) {
        if (id_index_[i].first == id_index_[i - 1].first) {
            throw std::invalid_argument("Trajectory: duplicate keyframe id " + std::to_string(id_index_[i].first));
        }
    }
}

const TimedPose *Trajectory::find_keyframe(std::int64_t keyframe_id) const {
    auto it = std::lower_bound(id_index_.begin(), id_index_.end(), std::make_pair(keyframe_id, std::size_t{0}));
    if (it == id_index_.end() || it->first != keyframe_id) return nullptr;
    return &samples_[it->second];
}

Pose interpolate_pose(const Trajectory &traj, double t) {
    if (!traj.covers(t)) {
        std::ostringstream msg;
        msg << "interpolate_pose: t = " << t << " outside trajectory span";
        throw OutOfRange(msg.str());
    }
    const auto &s = traj.samples();
    auto upper = std::upper_bound(s.begin(), s.end(), t, [](double v, const TimedPose &p) { return v < p.stamp; });
    const auto &lo = *(upper - 1);
    if (lo.stamp == t || upper == s.end()) return lo.pose;
    const auto &hi = *upper;
    const double alpha = (t - lo.stamp) / (hi.stamp - lo.stamp);
    Pose out;
    out.translation = (1.0 - alpha) * lo.pose.translation + alpha * hi.pose.translation;
    out.rotation = slerp(lo.pose.rotation, hi.pose.rotation, alpha);
    return out;
}

std::optional<std::string> FisheyeIntrinsics::validate() const {
    if (!(fx > 0.0) || !std::isfinite(fx)) return "fx must be positive";
    if (!(fy > 0.0) || !std::isfinite(fy)) return "fy must be positive";
    if (width <= 0) return "width must be positive";
    if (height <= 0) return "height must be positive";
    if (!(cx >= 0.0 && cx < width)) return "cx must lie in [0, width)";
    if (!(cy >= 0.0 && cy < height)) return "cy must lie in [0, height)";
    if (!(max_fov > 0.0 && max_fov <= M_PI)) return "max_fov must lie in (0, pi]";
    for (double k : {k1, k2, k3, k4}) {
        if (!std::isfinite(k)) return "distortion coefficients must be finite";
    }
    return std::nullopt;
}

std::optional<Vec2> fisheye_distort(const FisheyeIntrinsics &intr, const Vec3 &p_cam) {
    const double rho = p_cam.head<2>().norm();
    if (rho == 0.0) {
        if (p_cam.z() > 0.0) return Vec2(intr.cx, intr.cy);
        return std::nullopt;
    }
    const double theta = std::atan2(rho, p_cam.z());
    const double t2 = theta * theta;
    const double rd = theta * (1.0 + t2 * (intr.k1 + t2 * (intr.k2 + t2 * (intr.k3 + t2 * intr.k4))));
    const double scale = rd / rho;
    return Vec2(intr.cx + intr.fx * p_cam.x() * scale, intr.cy + intr.fy * p_cam.y() * scale);
}

std::optional<Vec2> project_fisheye(const FisheyeIntrinsics &intr, const Pose &cam_pose_in_world,
                                    const Vec3 &point_world) {
    const Vec3 p_cam = cam_pose_in_world.rotation.inverse().rotate(point_world - cam_pose_in_world.translation);
    if (p_cam.squaredNorm() == 0.0) return std::nullopt;
    const double theta = std::atan2(p_cam.head<2>().norm(), p_cam.z());
    if (theta > 0.5 * intr.max_fov) return std::nullopt;
    return fisheye_distort(intr, p_cam);
}

}  // namespace camreg
