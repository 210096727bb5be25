#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "camreg/evaluation.hpp"
#include "support.hpp"

using namespace camreg;
using namespace testsupport;

namespace {

// Detection of the marker carried by a robot at `robot` seen from `camera`.
ArucoDetection exact_detection(int camera_id, double stamp, const Pose &camera, const Pose &robot, const Pose &offset) {
    return {camera_id, stamp, inverse(camera) * robot * offset};
}

const Scenario &zero_noise_scenario() {
    static const Scenario sc = generate_scenario(zero_noise_config());
    return sc;
}

const Scenario &noisy_scenario() {
    static const Scenario sc = [] {
        ScenarioConfig cfg;
        cfg.seed = 3;
        return generate_scenario(cfg);
    }();
    return sc;
}

std::vector<CameraEstimate> truth_as_estimates(const ScenarioGroundTruth &gt) {
    std::vector<CameraEstimate> out;
    for (const auto &[id, pose] : gt.camera_poses_world) {
        CameraEstimate e;
        e.camera_id = id;
        e.pose_world = pose;
        e.n_aruco = 1;
        out.push_back(e);
    }
    return out;
}

std::vector<BlobDetection> truth_labeled(const Dataset &ds) {
    std::vector<BlobDetection> out = ds.blobs;
    for (std::size_t i = 0; i < out.size(); ++i) out[i].camera_id = ds.blob_truth[i];
    return out;
}

double max_position_error(const std::vector<CameraEstimate> &est, const ScenarioGroundTruth &gt) {
    double worst = 0.0;
    for (const auto &c : est) worst = std::max(worst, (c.pose_world.translation - gt.camera(c.camera_id)->translation).norm());
    return worst;
}

double max_rotation_error(const std::vector<CameraEstimate> &est, const ScenarioGroundTruth &gt) {
    double worst = 0.0;
    for (const auto &c : est) worst = std::max(worst, rotation_error(c.pose_world, *gt.camera(c.camera_id)));
    return worst;
}

}  // namespace

TEST_CASE("build_motion_segments filters stationary robots") {
    const Pose camera = make_pose(rot_x(M_PI), Vec3(0, 0, 3));
    std::vector<TimedPose> kf;
    for (int i = 0; i < 5; ++i) kf.push_back({double(i), Pose::identity(), i});
    const Trajectory traj(kf);
    std::vector<ArucoDetection> dets;
    for (int i = 0; i < 5; ++i) dets.push_back(exact_detection(0, i, camera, Pose::identity(), Pose::identity()));
    CHECK(build_motion_segments(traj, dets).empty());
}

TEST_CASE("build_motion_segments pairs adjacent detections") {
    const Pose camera = make_pose(rot_x(M_PI), Vec3(0.25, 0, 3));
    const Pose r0 = Pose::identity();
    const Pose r1{UnitQuaternion::identity(), Vec3(0.5, 0, 0)};
    const Trajectory traj({{0.0, r0, 0}, {1.0, r1, 1}});
    const std::vector<ArucoDetection> dets{exact_detection(4, 0.0, camera, r0, Pose::identity()),
                                           exact_detection(4, 1.0, camera, r1, Pose::identity())};
    const auto pairs = build_motion_segments(traj, dets);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].B.translation.norm() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pairs[0].dt == 1.0);
    CHECK(pairs[0].camera_id == 4);
}

TEST_CASE("zero-noise segments satisfy the hand-eye relation") {
    const auto &sc = zero_noise_scenario();
    const auto pairs = build_motion_segments(sc.dataset.trajectory_unscaled, sc.dataset.arucos);
    REQUIRE(pairs.size() > 100);
    const Pose X = sc.truth.offset;
    for (const auto &p : pairs) {
        Pose A = p.A;
        A.translation *= sc.truth.scale;
        const Mat4 lhs = dense_oracle(A) * dense_oracle(X);
        const Mat4 rhs = dense_oracle(X) * dense_oracle(p.B);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("scale and offset from zero-noise simulation") {
    const auto &sc = zero_noise_scenario();
    const auto pairs = build_motion_segments(sc.dataset.trajectory_unscaled, sc.dataset.arucos);
    const auto est = estimate_scale_and_offset(pairs, ScaleOffsetEstimate{});
    CHECK(est.report.converged);
    CHECK_FALSE(est.degenerate_motion);
    CHECK(std::abs(est.scale / sc.truth.scale - 1.0) < 1e-6);
    CHECK((est.offset.translation - sc.truth.offset.translation).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(rotation_error(est.offset, sc.truth.offset) < 1e-6);
    CHECK(est.report.final_cost < 1e-16);
}

TEST_CASE("scale and offset identity fixture") {
    Rng g(61);
    std::vector<MotionSegmentPair> pairs;
    for (int i = 0; i < 12; ++i) {
        const Pose m{UnitQuaternion::exp(random_vec(g, 0.5)), random_vec(g, 1.0)};
        pairs.push_back({m, m, 1.0, 0});
    }
    ScaleOffsetEstimate init;
    init.scale = 1.3;
    init.offset = Pose{UnitQuaternion::exp(Vec3(0.05, -0.02, 0.1)), Vec3(0.1, 0.0, -0.05)};
    const auto est = estimate_scale_and_offset(pairs, init);
    CHECK(std::abs(est.scale - 1.0) < 1e-8);
    CHECK(est.offset.translation.norm() < 1e-8);
    CHECK(est.offset.rotation.angle() < 1e-8);

    pairs.resize(9);
    CHECK_THROWS_AS(estimate_scale_and_offset(pairs, init), InsufficientSegments);
}

TEST_CASE("planar motion is flagged and leaves z unobservable") {
    ScenarioConfig cfg = zero_noise_config();
    cfg.trajectory.roll_pitch_excitation = 0.0;
    const Scenario sc = generate_scenario(cfg);
    const auto pairs = build_motion_segments(sc.dataset.trajectory_unscaled, sc.dataset.arucos);
    CHECK(motion_is_degenerate(pairs));
    const auto est = estimate_scale_and_offset(pairs, ScaleOffsetEstimate{});
    CHECK(est.degenerate_motion);
    const Vec3 err = est.offset.translation - sc.truth.offset.translation;
    CHECK(std::abs(err.x()) < 1e-4);
    CHECK(std::abs(err.y()) < 1e-4);
    CHECK(std::abs(err.z()) > 10.0 * std::max(std::abs(err.x()), std::abs(err.y())));
}

TEST_CASE("apply_scale") {
    Rng g(67);
    std::vector<TimedPose> kf;
    for (int i = 0; i < 4; ++i) kf.push_back({double(i), random_pose(g), i});
    kf[1].pose.translation = Vec3(1, 2, 3);
    const Trajectory t(kf);

    const Trajectory same = apply_scale(t, 1.0);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(same.samples()[i].pose.translation == t.samples()[i].pose.translation);

    const Trajectory twice = apply_scale(t, 2.0);
    CHECK(twice.samples()[1].pose.translation == Vec3(2, 4, 6));
    CHECK(twice.samples()[2].pose.rotation == t.samples()[2].pose.rotation);
    CHECK(twice.samples()[2].stamp == t.samples()[2].stamp);

    const Trajectory back = apply_scale(apply_scale(t, 0.37), 1.0 / 0.37);
    for (std::size_t i = 0; i < t.size(); ++i)
        CHECK((back.samples()[i].pose.translation - t.samples()[i].pose.translation).norm() < 1e-12);

    CHECK_THROWS_AS(apply_scale(t, 0.0), NonPositiveScale);
    CHECK_THROWS_AS(apply_scale(t, -1.0), NonPositiveScale);
}

TEST_CASE("initialize_camera_pose") {
    const Trajectory at_origin({{0.0, Pose::identity(), 0}, {1.0, Pose::identity(), 1}});

    // Camera 2 m above the marker, optical axis pointing down.
    const Mat3 R_cm = rot_x(M_PI);
    const ArucoDetection det{0, 0.5, make_pose(R_cm, Vec3(0, 0, 2))};
    const Pose cam = initialize_camera_pose(det, at_origin, Pose::identity());
    Mat4 T_cm = Mat4::Identity();
    T_cm.topLeftCorner<3, 3>() = R_cm;
    T_cm.topRightCorner<3, 1>() = Vec3(0, 0, 2);
    const Mat4 expected = Mat4::Identity() * Mat4::Identity() * T_cm.inverse();
    CHECK((cam.matrix() - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((cam.translation - Vec3(0, 0, 2)).norm() < 1e-12);
    CHECK((cam.rotation.rotate(Vec3::UnitZ()) - Vec3(0, 0, -1)).norm() < 1e-12);

    const ArucoDetection ident{0, 0.5, Pose::identity()};
    const Pose I = initialize_camera_pose(ident, at_origin, Pose::identity());
    CHECK(I.translation.norm() == 0.0);
    CHECK(I.rotation.angle() == 0.0);

    CHECK_THROWS_AS(initialize_camera_pose({0, 2.0, Pose::identity()}, at_origin, Pose::identity()), OutOfRange);

    const auto &sc = zero_noise_scenario();
    for (const auto &d : sc.dataset.arucos) {
        const Pose c = initialize_camera_pose(d, sc.truth.robot_trajectory_metric, sc.truth.offset);
        const Pose &truth = *sc.truth.camera(d.camera_id);
        CHECK((c.translation - truth.translation).norm() < 1e-10);
        CHECK(rotation_error(c, truth) < 1e-10);
    }
}

TEST_CASE("estimate_camera_pose") {
    Rng g(71);
    const Pose camera = make_pose(rot_x(M_PI) * rot_z(0.3), Vec3(1, 2, 3.5));
    const Pose offset{UnitQuaternion::exp(Vec3(0.01, -0.02, 0.3)), Vec3(0.2, -0.1, 0.1)};
    std::vector<TimedPose> kf;
    std::vector<ArucoDetection> dets;
    for (int i = 0; i < 50; ++i) {
        const Pose robot{UnitQuaternion::exp(Vec3(0.02, -0.03, 0.1 * i)), Vec3(1, 2, 0.4) + random_vec(g, 1.0)};
        kf.push_back({double(i), robot, i});
        dets.push_back(exact_detection(7, double(i), camera, robot, offset));
    }
    const Trajectory traj(kf);

    SUBCASE("single detection is exactly determined") {
        const auto est = estimate_camera_pose(7, {dets[10]}, traj, offset);
        const Pose init = initialize_camera_pose(dets[10], traj, offset);
        CHECK((est.pose_world.translation - init.translation).norm() < 1e-12);
        CHECK(rotation_error(est.pose_world, init) < 1e-12);
        CHECK(est.n_aruco == 1);
    }
    SUBCASE("fifty exact detections") {
        const auto est = estimate_camera_pose(7, dets, traj, offset);
        CHECK((est.pose_world.translation - camera.translation).norm() < 1e-8);
        CHECK(rotation_error(est.pose_world, camera) < 1e-9);
        CHECK(est.n_aruco == 50);
    }
    SUBCASE("no detections inside the trajectory") {
        CHECK_THROWS_AS(estimate_camera_pose(7, {{7, 100.0, Pose::identity()}}, traj, offset), NoValidDetections);
        CHECK_THROWS_AS(estimate_camera_pose(8, dets, traj, offset), NoValidDetections);
    }
}

TEST_CASE("estimate_camera_pose with noise and gross outliers") {
    ScenarioConfig cfg;
    cfg.noise.outlier_fraction = 0.05;
    cfg.seed = 5;
    const Scenario sc = generate_scenario(cfg);
    std::map<int, std::vector<ArucoDetection>> by_cam;
    for (const auto &d : sc.dataset.arucos) by_cam[d.camera_id].push_back(d);
    // Inlier residuals are a few cm (rotation noise over a ~3 m lever arm);
    // delta sits at about twice that so outliers fall in the linear region.
    CameraPoseOptions opt;
    opt.huber_delta = 0.05;
    double worst = 0.0;
    for (const auto &[id, dets] : by_cam) {
        const auto est = estimate_camera_pose(id, dets, sc.truth.robot_trajectory_metric, sc.truth.offset, opt);
        worst = std::max(worst, (est.pose_world.translation - sc.truth.camera(id)->translation).norm());
    }
    CHECK(by_cam.size() == 40);
    CHECK(worst < 0.03);
}

TEST_CASE("associate_blobs on zero-noise simulation") {
    const auto &sc = zero_noise_scenario();
    const auto labeled = associate_blobs(sc.dataset.blobs, truth_as_estimates(sc.truth),
                                         sc.truth.robot_trajectory_metric, sc.dataset.intrinsics);
    REQUIRE(labeled.size() == sc.dataset.blobs.size());
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        CHECK(labeled[i].id == sc.dataset.blobs[i].id);
        CHECK(labeled[i].camera_id == sc.dataset.blob_truth[i]);
    }
}

TEST_CASE("associate_blobs gate and nearest neighbour") {
    FisheyeIntrinsics intr;
    const Trajectory traj({{0.0, Pose::identity(), 0}, {1.0, Pose::identity(), 1}});
    const double theta = 10.0 / intr.fx;
    CameraEstimate a, b;
    a.camera_id = 1;
    a.pose_world.translation = Vec3(0, 0, 3);
    b.camera_id = 2;
    b.pose_world.translation = Vec3(3 * std::tan(theta), 0, 3);
    const auto pb = project_fisheye(intr, Pose::identity(), b.pose_world.translation);
    REQUIRE(pb);
    CHECK(std::abs(pb->x() - intr.cx - 10.0) < 1e-9);

    BlobDetection far{1, 0, Vec2(intr.cx + 200, intr.cy), {}};
    CHECK(associate_blobs({far}, {a, b}, traj, intr, 50.0).empty());

    BlobDetection near_a{2, 0, Vec2(intr.cx + 1, intr.cy), {}};
    auto out = associate_blobs({near_a}, {a, b}, traj, intr, 50.0);
    REQUIRE(out.size() == 1);
    CHECK(out[0].camera_id == 1);

    // One-to-one: the second blob near camera 1 falls back to camera 2.
    BlobDetection also_near_a{3, 0, Vec2(intr.cx + 2, intr.cy), {}};
    out = associate_blobs({also_near_a, near_a}, {a, b}, traj, intr, 50.0);
    REQUIRE(out.size() == 2);
    CHECK(out[0].id == 3);
    CHECK(out[0].camera_id == 2);
    CHECK(out[1].camera_id == 1);
}

TEST_CASE("refine_camera_positions") {
    const auto &sc = zero_noise_scenario();
    const auto blobs = truth_labeled(sc.dataset);
    const auto &traj = sc.truth.robot_trajectory_metric;

    SUBCASE("zero noise converges to ground truth") {
        Rng g(73);
        auto cams = truth_as_estimates(sc.truth);
        for (auto &c : cams) c.pose_world.translation += random_vec(g, 0.05);
        const auto res = refine_camera_positions(cams, blobs, traj, sc.dataset.intrinsics);
        CHECK(res.report.converged);
        CHECK(max_position_error(res.cameras, sc.truth) < 1e-6);
        for (std::size_t i = 0; i < cams.size(); ++i) {
            CHECK(res.cameras[i].refined);
            CHECK(res.cameras[i].pose_world.rotation == cams[i].pose_world.rotation);
        }
    }
    SUBCASE("a single blob is under-determined") {
        auto cams = truth_as_estimates(sc.truth);
        cams.resize(2);
        cams[0].pose_world.translation.x() += 0.1;
        cams[1].pose_world.translation.x() += 0.1;
        std::vector<BlobDetection> few;
        for (const auto &b : blobs) {
            if (b.camera_id == cams[0].camera_id && few.empty()) few.push_back(b);
            if (b.camera_id == cams[1].camera_id) few.push_back(b);
        }
        const auto res = refine_camera_positions(cams, few, traj, sc.dataset.intrinsics);
        CHECK_FALSE(res.cameras[0].refined);
        CHECK(res.cameras[0].n_blob == 1);
        CHECK(res.cameras[0].pose_world.translation == cams[0].pose_world.translation);
        CHECK(res.cameras[1].refined);
        CHECK((res.cameras[1].pose_world.translation - sc.truth.camera(cams[1].camera_id)->translation).norm() < 1e-6);
    }
}

TEST_CASE("refinement reduces reprojection error and position error under blob noise") {
    const auto &sc = noisy_scenario();
    const auto &traj = sc.truth.robot_trajectory_metric;
    Rng g(79);
    auto cams = truth_as_estimates(sc.truth);
    for (auto &c : cams) c.pose_world.translation += 0.1 * random_vec(g).normalized();
    const auto labeled = associate_blobs(sc.dataset.blobs, cams, traj, sc.dataset.intrinsics);
    const double before = reprojection_rmse(cams, labeled, traj, sc.dataset.intrinsics).rmse_px;
    const auto res = refine_camera_positions(cams, labeled, traj, sc.dataset.intrinsics);
    const double after = reprojection_rmse(res.cameras, labeled, traj, sc.dataset.intrinsics).rmse_px;
    CHECK(after < before);
    CHECK(max_position_error(res.cameras, sc.truth) < max_position_error(cams, sc.truth));
}

TEST_CASE("run_pipeline zero noise") {
    const auto &sc = zero_noise_scenario();
    const auto res = run_pipeline(sc.dataset.trajectory_unscaled, sc.dataset.arucos, sc.dataset.blobs,
                                  sc.dataset.intrinsics);
    REQUIRE(res.cameras.size() == 40);
    CHECK(std::abs(res.scale_offset.scale / sc.truth.scale - 1.0) < 1e-6);
    CHECK(max_position_error(res.cameras, sc.truth) < 1e-4);
    CHECK(max_rotation_error(res.cameras, sc.truth) < 1e-5);
    CHECK(res.dropped_aruco == 0);
    CHECK(res.associated_blobs.size() == sc.dataset.blobs.size());
    for (const auto &c : res.cameras) {
        CHECK(c.refined);
        CHECK(c.n_aruco >= 1);
    }

    // Final cost of every stage at zero noise.
    CHECK(res.scale_offset.report.final_cost < 1e-16);
    for (const auto &c : res.looking_down) CHECK(c.report.final_cost < 1e-16);
    CHECK(res.refinement_report.final_cost < 1e-16);

    // Scaled trajectory is the input scaled once.
    for (std::size_t i = 0; i < res.scaled_trajectory.size(); ++i) {
        CHECK(res.scaled_trajectory.samples()[i].pose.translation ==
              sc.dataset.trajectory_unscaled.samples()[i].pose.translation * res.scale_offset.scale);
    }
}

TEST_CASE("run_pipeline degraded modes and stage errors") {
    const auto &sc = zero_noise_scenario();
    const auto no_blobs = run_pipeline(sc.dataset.trajectory_unscaled, sc.dataset.arucos, {}, sc.dataset.intrinsics);
    REQUIRE(no_blobs.cameras.size() == 40);
    for (const auto &c : no_blobs.cameras) CHECK_FALSE(c.refined);

    try {
        run_pipeline(sc.dataset.trajectory_unscaled, {}, sc.dataset.blobs, sc.dataset.intrinsics);
        FAIL("expected a stage error");
    } catch (const PipelineError &e) {
        CHECK(e.stage() == Stage::ScaleOffset);
        CHECK(std::string(e.what()).find("scale_offset") != std::string::npos);
    }

    // Detections outside the trajectory span are dropped and counted.
    auto arucos = sc.dataset.arucos;
    arucos.push_back({0, sc.dataset.trajectory_unscaled.end_time() + 5.0, arucos.front().pose_marker_in_camera});
    const auto dropped = run_pipeline(sc.dataset.trajectory_unscaled, arucos, {}, sc.dataset.intrinsics);
    CHECK(dropped.dropped_aruco == 1);
}

TEST_CASE("looking-down stage is independent of detection order") {
    const auto &sc = noisy_scenario();
    auto shuffled = sc.dataset.arucos;
    std::shuffle(shuffled.begin(), shuffled.end(), Rng(83));
    const auto a = run_pipeline(sc.dataset.trajectory_unscaled, sc.dataset.arucos, sc.dataset.blobs, sc.dataset.intrinsics);
    const auto b = run_pipeline(sc.dataset.trajectory_unscaled, shuffled, sc.dataset.blobs, sc.dataset.intrinsics);
    REQUIRE(a.cameras.size() == b.cameras.size());
    for (std::size_t i = 0; i < a.cameras.size(); ++i) {
        CHECK(a.looking_down[i].pose_world.rotation == b.looking_down[i].pose_world.rotation);
        CHECK(a.looking_down[i].pose_world.translation == b.looking_down[i].pose_world.translation);
        CHECK(a.cameras[i].pose_world.translation == b.cameras[i].pose_world.translation);
    }
}

TEST_CASE("refinement never touches rotations") {
    const auto &sc = noisy_scenario();
    const auto res = run_pipeline(sc.dataset.trajectory_unscaled, sc.dataset.arucos, sc.dataset.blobs,
                                  sc.dataset.intrinsics);
    for (std::size_t i = 0; i < res.cameras.size(); ++i) {
        CHECK(res.cameras[i].pose_world.rotation == res.looking_down[i].pose_world.rotation);
        if (!res.cameras[i].refined)
            CHECK(res.cameras[i].pose_world.translation == res.looking_down[i].pose_world.translation);
    }
}

TEST_CASE("scale equivariance") {
    const auto &sc = noisy_scenario();
    const double c = 3.7;
    const auto a = run_pipeline(sc.dataset.trajectory_unscaled, sc.dataset.arucos, sc.dataset.blobs,
                                sc.dataset.intrinsics);
    const auto b = run_pipeline(scaled(sc.dataset.trajectory_unscaled, c), sc.dataset.arucos, sc.dataset.blobs,
                                sc.dataset.intrinsics);
    CHECK(std::abs(b.scale_offset.scale * c / a.scale_offset.scale - 1.0) < 1e-6);
    REQUIRE(a.cameras.size() == b.cameras.size());
    for (std::size_t i = 0; i < a.cameras.size(); ++i) {
        CHECK((a.cameras[i].pose_world.translation - b.cameras[i].pose_world.translation).norm() < 1e-6);
        CHECK(rotation_error(a.cameras[i].pose_world, b.cameras[i].pose_world) < 1e-6);
    }
}

TEST_CASE("gauge consistency") {
    const auto &sc = noisy_scenario();
    const Pose gauge{UnitQuaternion::exp(Vec3(0.1, -0.2, 0.7)), Vec3(3.0, -1.0, 0.5)};
    // The gauge acts on metric poses, so its translation enters the unscaled
    // trajectory divided by the true scale.
    const Pose gauge_unscaled{gauge.rotation, gauge.translation / sc.truth.scale};
    std::vector<TimedPose> moved = sc.dataset.trajectory_unscaled.samples();
    for (auto &s : moved) s.pose = gauge_unscaled * s.pose;

    const auto a = run_pipeline(sc.dataset.trajectory_unscaled, sc.dataset.arucos, sc.dataset.blobs,
                                sc.dataset.intrinsics);
    const auto b = run_pipeline(Trajectory(moved), sc.dataset.arucos, sc.dataset.blobs, sc.dataset.intrinsics);
    CHECK(std::abs(a.scale_offset.scale - b.scale_offset.scale) < 1e-6);
    CHECK((a.scale_offset.offset.translation - b.scale_offset.offset.translation).norm() < 1e-6);
    CHECK(rotation_error(a.scale_offset.offset, b.scale_offset.offset) < 1e-6);
    // In metric units the gauge translation is carried by the estimated scale.
    const Pose gauge_metric{gauge.rotation, gauge_unscaled.translation * b.scale_offset.scale};
    for (std::size_t i = 0; i < a.cameras.size(); ++i) {
        const Pose expected = gauge_metric * a.cameras[i].pose_world;
        CHECK((expected.translation - b.cameras[i].pose_world.translation).norm() < 1e-6);
        CHECK(rotation_error(expected, b.cameras[i].pose_world) < 1e-6);
    }
}
