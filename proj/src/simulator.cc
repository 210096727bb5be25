#include "camreg/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace camreg {

Pose ScenarioConfig::default_offset() {
    Pose p;
    p.rotation = UnitQuaternion::from_axis_angle(Vec3::UnitZ(), 20.0 * M_PI / 180.0) *
                 UnitQuaternion::from_axis_angle(Vec3::UnitX(), 2.0 * M_PI / 180.0);
    p.translation = Vec3(0.25, -0.10, 0.12);
    return p;
}

FisheyeIntrinsics ScenarioConfig::default_intrinsics() {
    FisheyeIntrinsics intr;
    intr.k1 = -0.012;
    intr.k2 = 0.0021;
    intr.k3 = -0.0004;
    intr.k4 = 0.00002;
    return intr;
}

const Pose *ScenarioGroundTruth::camera(int id) const {
    for (const auto &[cid, pose] : camera_poses_world) {
        if (cid == id) return &pose;
    }
    return nullptr;
}

std::optional<std::string> validate(const ScenarioConfig &cfg) {
    auto bad = [](const std::string &field, const std::string &why) { return field + ": " + why; };
    const auto &n = cfg.noise;
    const auto &t = cfg.trajectory;
    if (cfg.n_cameras < 1) return bad("n_cameras", "must be >= 1");
    if (!(cfg.ceiling_min > 0.0) || !(cfg.ceiling_max >= cfg.ceiling_min)) {
        return bad("ceiling_height_range", "need 0 < min <= max");
    }
    if (!(cfg.area_x > 0.0) || !(cfg.area_y > 0.0)) return bad("area", "extents must be positive");
    if (!(cfg.grid_jitter >= 0.0)) return bad("grid_jitter", "must be >= 0");
    if (!(cfg.camera_tilt_sigma >= 0.0)) return bad("camera_tilt_sigma", "must be >= 0");
    if (!(t.speed > 0.0)) return bad("trajectory.speed", "must be positive");
    if (!(t.turn_rate > 0.0)) return bad("trajectory.turn_rate", "must be positive");
    if (!(t.keyframe_rate > 0.0)) return bad("trajectory.keyframe_rate", "must be positive");
    if (!(t.roll_pitch_excitation >= 0.0)) return bad("trajectory.roll_pitch_excitation", "must be >= 0");
    if (!(t.robot_height < cfg.ceiling_min)) return bad("trajectory.robot_height", "must be below the ceiling");
    if (!(t.start_time >= 0.0)) return bad("trajectory.start_time", "must be >= 0");
    if (t.waypoints.size() == 1) return bad("trajectory.waypoints", "need at least two waypoints");
    if (!(cfg.true_scale > 0.0) || !std::isfinite(cfg.true_scale)) return bad("true_scale", "must be positive");
    if (!cfg.true_offset.is_finite()) return bad("true_offset", "must be finite");
    if (!(cfg.aruco_fov_half_angle > 0.0 && cfg.aruco_fov_half_angle < M_PI / 2)) {
        return bad("aruco_fov_half_angle", "must lie in (0, pi/2)");
    }
    const std::pair<const char *, double> sigmas[] = {
        {"noise.aruco_trans_sigma", n.aruco_trans_sigma},
        {"noise.aruco_rot_sigma", n.aruco_rot_sigma},
        {"noise.blob_pixel_sigma", n.blob_pixel_sigma},
        {"noise.timestamp_jitter_sigma", n.timestamp_jitter_sigma},
        {"noise.vo_trans_sigma", n.vo_trans_sigma},
        {"noise.vo_rot_sigma", n.vo_rot_sigma},
    };
    for (const auto &[name, value] : sigmas) {
        if (!(value >= 0.0) || !std::isfinite(value)) return bad(name, "must be >= 0");
    }
    if (!(n.outlier_fraction >= 0.0 && n.outlier_fraction <= 1.0)) {
        return bad("noise.outlier_fraction", "must lie in [0, 1]");
    }
    if (auto err = cfg.intrinsics.validate()) return bad("intrinsics", *err);
    return std::nullopt;
}

namespace {

struct Grid {
    int rows;
    int cols;
    double dx;
    double dy;
};

Grid camera_grid(const ScenarioConfig &cfg) {
    Grid g;
    g.rows = std::max(1, int(std::lround(std::sqrt(cfg.n_cameras * cfg.area_y / cfg.area_x))));
    g.rows = std::min(g.rows, cfg.n_cameras);
    g.cols = (cfg.n_cameras + g.rows - 1) / g.rows;
    g.dx = cfg.area_x / g.cols;
    g.dy = cfg.area_y / g.rows;
    return g;
}

std::vector<Vec2> lawnmower(const ScenarioConfig &cfg) {
    const Grid g = camera_grid(cfg);
    const int used_rows = (cfg.n_cameras + g.cols - 1) / g.cols;
    const double x0 = 0.25 * g.dx;
    const double x1 = cfg.area_x - 0.25 * g.dx;
    std::vector<Vec2> wps;
    for (int r = 0; r < used_rows; ++r) {
        const double y = (r + 0.5) * g.dy;
        if (r % 2 == 0) {
            wps.emplace_back(x0, y);
            wps.emplace_back(x1, y);
        } else {
            wps.emplace_back(x1, y);
            wps.emplace_back(x0, y);
        }
    }
    return wps;
}

double wrap_angle(double a) { return std::atan2(std::sin(a), std::cos(a)); }

// Drive/turn schedule through a closed waypoint loop.
class GroundPath {
  public:
    GroundPath(const std::vector<Vec2> &wps, double speed, double turn_rate) {
        double yaw = heading(wps[0], wps[1 % wps.size()]);
        for (std::size_t i = 0; i < wps.size(); ++i) {
            const Vec2 &a = wps[i];
            const Vec2 &b = wps[(i + 1) % wps.size()];
            if ((b - a).norm() < 1e-9) continue;
            const double target = heading(a, b);
            const double turn = wrap_angle(target - yaw);
            if (std::abs(turn) > 1e-12) {
                segments_.push_back({duration_, std::abs(turn) / turn_rate, a, a, yaw, yaw + turn});
                duration_ += segments_.back().length;
                yaw += turn;
            }
            segments_.push_back({duration_, (b - a).norm() / speed, a, b, yaw, yaw});
            duration_ += segments_.back().length;
        }
    }

    double duration() const { return duration_; }

    void evaluate(double tau, Vec2 *xy, double *yaw) const {
        auto it = std::upper_bound(segments_.begin(), segments_.end(), tau,
                                   [](double v, const Segment &s) { return v < s.start; });
        const Segment &s = it == segments_.begin() ? segments_.front() : *(it - 1);
        const double u = std::clamp((tau - s.start) / s.length, 0.0, 1.0);
        *xy = (1.0 - u) * s.from + u * s.to;
        *yaw = (1.0 - u) * s.yaw_from + u * s.yaw_to;
    }

  private:
    struct Segment {
        double start;
        double length;
        Vec2 from, to;
        double yaw_from, yaw_to;
    };
    static double heading(const Vec2 &a, const Vec2 &b) { return std::atan2(b.y() - a.y(), b.x() - a.x()); }

    std::vector<Segment> segments_;
    double duration_ = 0.0;
};

Vec3 gaussian3(std::mt19937_64 &rng, double sigma) {
    std::normal_distribution<double> n(0.0, 1.0);
    const double a = n(rng), b = n(rng), c = n(rng);
    return sigma * Vec3(a, b, c);
}

UnitQuaternion random_rotation(std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
    const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    return UnitQuaternion(a * std::sin(2 * M_PI * u2), a * std::cos(2 * M_PI * u2), b * std::sin(2 * M_PI * u3),
                          b * std::cos(2 * M_PI * u3));
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t salt) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(salt)};
    return std::mt19937_64(seq);
}

bool in_view_cone(const Pose &camera, const Vec3 &point, double half_angle, double *distance = nullptr) {
    const Vec3 d = point - camera.translation;
    const double n = d.norm();
    if (distance) *distance = n;
    if (n == 0.0) return false;
    const Vec3 axis = camera.rotation.rotate(Vec3::UnitZ());
    return d.dot(axis) / n >= std::cos(half_angle);
}

}  // namespace

std::vector<ArucoDetection> simulate_aruco_detections(const ScenarioGroundTruth &gt, const ScenarioConfig &cfg) {
    std::mt19937_64 rng = stream(cfg.effective_noise_seed(), 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, 1.0);
    const auto &noise = cfg.noise;

    std::vector<ArucoDetection> out;
    for (const auto &kf : gt.robot_trajectory_metric.samples()) {
        const Pose marker_world = kf.pose * gt.offset;
        for (const auto &[camera_id, camera] : gt.camera_poses_world) {
            double distance = 0.0;
            if (!in_view_cone(camera, marker_world.translation, cfg.aruco_fov_half_angle, &distance)) continue;

            ArucoDetection det;
            det.camera_id = camera_id;
            det.stamp = kf.stamp + noise.timestamp_jitter_sigma * jitter(rng);
            if (unit(rng) < noise.outlier_fraction) {
                const double cos_theta = 1.0 - unit(rng) * (1.0 - std::cos(cfg.aruco_fov_half_angle));
                const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
                const double azimuth = 2.0 * M_PI * unit(rng);
                const double range = distance * (0.5 + 1.5 * unit(rng));
                det.pose_marker_in_camera.translation =
                    range * Vec3(sin_theta * std::cos(azimuth), sin_theta * std::sin(azimuth), cos_theta);
                det.pose_marker_in_camera.rotation = random_rotation(rng);
            } else {
                Pose m = inverse(camera) * marker_world;
                if (noise.aruco_trans_sigma > 0.0) m.translation += gaussian3(rng, noise.aruco_trans_sigma);
                if (noise.aruco_rot_sigma > 0.0) {
                    m.rotation = m.rotation * UnitQuaternion::exp(gaussian3(rng, noise.aruco_rot_sigma));
                }
                det.pose_marker_in_camera = m;
            }
            out.push_back(det);
        }
    }
    return out;
}

SimulatedBlobs simulate_blob_detections(const ScenarioGroundTruth &gt, const ScenarioConfig &cfg,
                                        const FisheyeIntrinsics &intr) {
    std::mt19937_64 rng = stream(cfg.effective_noise_seed(), 2);
    std::normal_distribution<double> n(0.0, 1.0);
    const double sigma = cfg.noise.blob_pixel_sigma;

    SimulatedBlobs out;
    std::int64_t next_id = 0;
    for (const auto &kf : gt.robot_trajectory_metric.samples()) {
        for (const auto &[camera_id, camera] : gt.camera_poses_world) {
            const auto px = project_fisheye(intr, kf.pose, camera.translation);
            if (!px || !intr.in_image(*px)) continue;
            Vec2 observed = *px;
            if (sigma > 0.0) {
                const double du = n(rng), dv = n(rng);
                observed += sigma * Vec2(du, dv);
                observed.x() = std::clamp(observed.x(), 0.0, intr.width - 1.0);
                observed.y() = std::clamp(observed.y(), 0.0, intr.height - 1.0);
            }
            out.blobs.push_back({next_id++, kf.keyframe_id, observed, std::nullopt});
            out.truth.push_back(camera_id);
        }
    }
    return out;
}

Scenario generate_scenario(const ScenarioConfig &cfg) {
    if (auto err = validate(cfg)) throw InvalidConfig(*err);

    Scenario sc;
    ScenarioGroundTruth &gt = sc.truth;
    gt.offset = cfg.true_offset;
    gt.scale = cfg.true_scale;

    std::mt19937_64 layout = stream(cfg.seed, 0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Grid grid = camera_grid(cfg);
    for (int k = 0; k < cfg.n_cameras; ++k) {
        const int row = k / grid.cols;
        const int col = k % grid.cols;
        const double jx = cfg.grid_jitter * (2.0 * unit(layout) - 1.0);
        const double jy = cfg.grid_jitter * (2.0 * unit(layout) - 1.0);
        const double z = cfg.ceiling_min + (cfg.ceiling_max - cfg.ceiling_min) * unit(layout);
        const double yaw = M_PI * (2.0 * unit(layout) - 1.0);
        const Vec3 tilt = gaussian3(layout, cfg.camera_tilt_sigma);
        Pose cam;
        cam.translation = Vec3((col + 0.5) * grid.dx + jx, (row + 0.5) * grid.dy + jy, z);
        cam.rotation = UnitQuaternion::from_axis_angle(Vec3::UnitZ(), yaw) *
                       UnitQuaternion::from_axis_angle(Vec3::UnitX(), M_PI) *
                       UnitQuaternion::exp(Vec3(tilt.x(), tilt.y(), 0.0));
        gt.camera_poses_world.emplace_back(k, cam);
    }

    const auto &tc = cfg.trajectory;
    const std::vector<Vec2> wps = tc.waypoints.empty() ? lawnmower(cfg) : tc.waypoints;
    std::vector<Vec2> loop = wps;
    if (loop.size() == 1) loop.push_back(loop.front());
    const GroundPath path(loop, tc.speed, tc.turn_rate);

    // The unscaled trajectory is generated first; the metric one is its exact
    // rescaling so that unscaled * scale reproduces it bit for bit.
    std::mt19937_64 vo = stream(cfg.effective_noise_seed(), 3);
    std::vector<TimedPose> unscaled, metric;
    const double a = tc.roll_pitch_excitation;
    const int n_keyframes = int(std::floor(path.duration() * tc.keyframe_rate)) + 1;
    for (int j = 0; j < n_keyframes; ++j) {
        const double tau = j / tc.keyframe_rate;
        Vec2 xy;
        double yaw;
        path.evaluate(tau, &xy, &yaw);
        const double roll = a * std::sin(2.0 * M_PI * 0.21 * tau);
        const double pitch = a * std::sin(2.0 * M_PI * 0.13 * tau + 1.0);

        TimedPose tp;
        tp.stamp = tc.start_time + tau;
        tp.keyframe_id = j;
        tp.pose.rotation = UnitQuaternion::from_axis_angle(Vec3::UnitZ(), yaw) *
                           UnitQuaternion::from_axis_angle(Vec3::UnitY(), pitch) *
                           UnitQuaternion::from_axis_angle(Vec3::UnitX(), roll);
        tp.pose.translation = Vec3(xy.x(), xy.y(), tc.robot_height);

        TimedPose m = tp;
        m.pose.translation = (tp.pose.translation / cfg.true_scale) * cfg.true_scale;
        metric.push_back(m);

        tp.pose.translation /= cfg.true_scale;
        if (cfg.noise.vo_trans_sigma > 0.0) tp.pose.translation += gaussian3(vo, cfg.noise.vo_trans_sigma);
        if (cfg.noise.vo_rot_sigma > 0.0) {
            tp.pose.rotation = tp.pose.rotation * UnitQuaternion::exp(gaussian3(vo, cfg.noise.vo_rot_sigma));
        }
        unscaled.push_back(tp);
    }
    gt.robot_trajectory_metric = Trajectory(std::move(metric));

    Dataset &ds = sc.dataset;
    ds.trajectory_unscaled = Trajectory(std::move(unscaled));
    ds.intrinsics = cfg.intrinsics;
    ds.arucos = simulate_aruco_detections(gt, cfg);
    auto blobs = simulate_blob_detections(gt, cfg, cfg.intrinsics);
    ds.blobs = std::move(blobs.blobs);
    ds.blob_truth = std::move(blobs.truth);
    return sc;
}

}  // namespace camreg
