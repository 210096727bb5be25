#pragma once
// Shared fixtures and independent oracles for the test binaries.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "camreg/geometry.hpp"
#include "camreg/registration.hpp"
#include "camreg/simulator.hpp"

namespace testsupport {

using namespace camreg;
using Rng = std::mt19937_64;

inline Vec3 random_vec(Rng &g, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    return Vec3(u(g), u(g), u(g));
}

// Uniform rotation (Shoemake), returned as raw coefficients.
inline UnitQuaternion random_rotation(Rng &g) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double u1 = u(g), u2 = u(g), u3 = u(g);
    const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    return UnitQuaternion(a * std::sin(2 * M_PI * u2), a * std::cos(2 * M_PI * u2), b * std::sin(2 * M_PI * u3),
                          b * std::cos(2 * M_PI * u3));
}

inline Pose random_pose(Rng &g, double trans_scale = 5.0) { return Pose{random_rotation(g), random_vec(g, trans_scale)}; }

// Rotation matrix written out from the quaternion coefficients by hand.
inline Mat3 rotation_oracle(const UnitQuaternion &q) {
    const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
    Mat3 R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

inline Mat4 dense_oracle(const Pose &p) {
    Mat4 T = Mat4::Identity();
    T.topLeftCorner<3, 3>() = rotation_oracle(p.rotation);
    T.topRightCorner<3, 1>() = p.translation;
    return T;
}

// Rotation-matrix logarithm from the trace and the skew part.
inline Vec3 rotation_log_oracle(const Mat3 &R) {
    const double c = std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0);
    const double angle = std::acos(c);
    const Vec3 v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    if (angle < 1e-12) return 0.5 * v;
    return angle / (2.0 * std::sin(angle)) * v;
}

// atan2 form: acos of the trace cannot resolve angles below ~1e-8.
inline double rotation_angle_oracle(const Mat3 &R) {
    const Vec3 v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    return std::atan2(0.5 * v.norm(), 0.5 * (R.trace() - 1.0));
}

inline Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }
inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }

inline Pose make_pose(const Mat3 &R, const Vec3 &t) { return Pose{UnitQuaternion::from_matrix(R), t}; }

inline double rotation_error(const Pose &a, const Pose &b) {
    return rotation_angle_oracle(a.rotation.matrix().transpose() * b.rotation.matrix());
}

inline ScenarioConfig zero_noise_config(std::uint64_t seed = 1) {
    ScenarioConfig cfg;
    cfg.noise = NoiseConfig::zero();
    cfg.seed = seed;
    return cfg;
}

// Trajectory whose translations are multiplied by c.
inline Trajectory scaled(const Trajectory &t, double c) {
    std::vector<TimedPose> s = t.samples();
    for (auto &p : s) p.pose.translation *= c;
    return Trajectory(std::move(s));
}

inline std::filesystem::path fresh_dir(const std::string &name) {
    const auto dir = std::filesystem::temp_directory_path() / ("camreg_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testsupport
