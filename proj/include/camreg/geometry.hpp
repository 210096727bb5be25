#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace camreg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Thrown when a time query falls outside the span of a trajectory.
class OutOfRange : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

/// Unit quaternion kept normalized and sign-canonical (w >= 0; if w == 0 the
/// first nonzero of x, y, z is positive), so equal rotations compare equal.
class UnitQuaternion {
  public:
    UnitQuaternion() : q_(1.0, 0.0, 0.0, 0.0) {}
    UnitQuaternion(double w, double x, double y, double z);
    explicit UnitQuaternion(const Eigen::Quaterniond &q) : UnitQuaternion(q.w(), q.x(), q.y(), q.z()) {}

    static UnitQuaternion identity() { return {}; }
    static UnitQuaternion from_matrix(const Mat3 &R);
    /// Exponential map of an axis-angle vector (radians).
    static UnitQuaternion exp(const Vec3 &phi);
    static UnitQuaternion from_axis_angle(const Vec3 &axis, double angle);

    double w() const { return q_.w(); }
    double x() const { return q_.x(); }
    double y() const { return q_.y(); }
    double z() const { return q_.z(); }
    const Eigen::Quaterniond &eigen() const { return q_; }

    Mat3 matrix() const { return q_.toRotationMatrix(); }
    UnitQuaternion inverse() const { return UnitQuaternion(q_.w(), -q_.x(), -q_.y(), -q_.z()); }
    Vec3 rotate(const Vec3 &v) const { return q_ * v; }

    /// Principal axis-angle vector, |phi| <= pi.
    Vec3 log() const;
    /// Rotation angle in [0, pi].
    double angle() const;

    friend UnitQuaternion operator*(const UnitQuaternion &a, const UnitQuaternion &b) {
        return UnitQuaternion(a.q_ * b.q_);
    }
    friend bool operator==(const UnitQuaternion &a, const UnitQuaternion &b) {
        return a.q_.coeffs() == b.q_.coeffs();
    }

  private:
    Eigen::Quaterniond q_;
};

/// Rigid transform T = [R(q) p; 0 1].
struct Pose {
    UnitQuaternion rotation;
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return {}; }
    static Pose from_matrix(const Mat4 &T);
    Mat4 matrix() const;
    Vec3 transform(const Vec3 &p) const { return rotation.rotate(p) + translation; }
    bool is_finite() const;
};

/// Manifold difference value: translation part rho (m) and rotation part phi (rad).
struct Tangent6 {
    Vec3 rho = Vec3::Zero();
    Vec3 phi = Vec3::Zero();

    Vec6 vector() const {
        Vec6 v;
        v << rho, phi;
        return v;
    }
    double squared_norm() const { return rho.squaredNorm() + phi.squaredNorm(); }
};

Pose compose(const Pose &a, const Pose &b);
Pose inverse(const Pose &a);
inline Pose operator*(const Pose &a, const Pose &b) { return compose(a, b); }

/// Difference of a and b as (translation, rotation log) of b^-1 a. Zero iff a == b.
Tangent6 ominus(const Pose &a, const Pose &b);

/// Constant angular speed interpolation along the shortest arc.
UnitQuaternion slerp(const UnitQuaternion &qa, const UnitQuaternion &qb, double alpha);

struct TimedPose {
    double stamp = 0.0;
    Pose pose;
    std::int64_t keyframe_id = 0;
};

/// Time-ordered keyframe poses of the fisheye camera in the world frame.
class Trajectory {
  public:
    Trajectory() = default;
    /// Throws std::invalid_argument unless stamps are finite, non-negative and
    /// strictly increasing and keyframe ids are unique.
    explicit Trajectory(std::vector<TimedPose> samples);

    const std::vector<TimedPose> &samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    double start_time() const { return samples_.front().stamp; }
    double end_time() const { return samples_.back().stamp; }
    bool covers(double t) const { return samples_.size() >= 2 && t >= start_time() && t <= end_time(); }

    /// Keyframe lookup by id; nullptr when absent.
    const TimedPose *find_keyframe(std::int64_t keyframe_id) const;

  private:
    std::vector<TimedPose> samples_;
    std::vector<std::pair<std::int64_t, std::size_t>> id_index_;  // sorted by id
};

/// Weighted translation average plus slerp over the bracketing keyframes.
/// Queries that hit a keyframe stamp return that keyframe's pose exactly.
/// Throws OutOfRange outside [start, end] or with fewer than two samples.
Pose interpolate_pose(const Trajectory &traj, double t);

struct FisheyeIntrinsics {
    double fx = 380.0;
    double fy = 380.0;
    double cx = 960.0;
    double cy = 540.0;
    double k1 = 0.0;
    double k2 = 0.0;
    double k3 = 0.0;
    double k4 = 0.0;
    int width = 1920;
    int height = 1080;
    double max_fov = 2.792526803190927;  // 160 deg

    /// Empty when valid, otherwise a message naming the offending field.
    std::optional<std::string> validate() const;
    bool in_image(const Vec2 &px) const {
        return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1.0 && px.y() <= height - 1.0;
    }
};

/// Equidistant projection with odd-polynomial distortion of a point given in
/// the camera frame. No field-of-view gating; nullopt only at the optical center.
std::optional<Vec2> fisheye_distort(const FisheyeIntrinsics &intr, const Vec3 &p_cam);

/// Projects a world point into the fisheye camera at `cam_pose_in_world`.
/// nullopt (not visible) beyond max_fov / 2 from the optical axis.
std::optional<Vec2> project_fisheye(const FisheyeIntrinsics &intr, const Pose &cam_pose_in_world,
                                    const Vec3 &point_world);

}  // namespace camreg
