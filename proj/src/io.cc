#include "camreg/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <initializer_list>
#include <sstream>

#include <openssl/evp.h>

namespace camreg::io {

namespace {

std::string join(const std::string &path, const std::string &key) { return path.empty() ? key : path + "." + key; }

void require_object(const json &j, const std::string &path) {
    if (!j.is_object()) throw SchemaError((path.empty() ? std::string("document") : path) + ": expected an object");
}

void check_keys(const json &j, const std::string &path, std::initializer_list<const char *> known) {
    require_object(j, path);
    for (const auto &item : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char *k) { return item.key() == k; })) {
            throw SchemaError(join(path, item.key()) + ": unknown field");
        }
    }
}

double number(const json &j, const std::string &field) {
    if (!j.is_number()) throw SchemaError(field + ": expected a number");
    return j.get<double>();
}

std::int64_t integer(const json &j, const std::string &field) {
    if (!j.is_number_integer()) throw SchemaError(field + ": expected an integer");
    return j.get<std::int64_t>();
}

bool boolean(const json &j, const std::string &field) {
    if (!j.is_boolean()) throw SchemaError(field + ": expected a boolean");
    return j.get<bool>();
}

const json &member(const json &obj, const char *key, const std::string &path) {
    require_object(obj, path);
    auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(join(path, key) + ": missing field");
    return *it;
}

void opt_number(const json &obj, const char *key, const std::string &path, double &out) {
    if (auto it = obj.find(key); it != obj.end()) out = number(*it, join(path, key));
}

std::vector<double> numbers(const json &j, const std::string &field, std::size_t n) {
    if (!j.is_array() || j.size() != n) {
        throw SchemaError(field + ": expected an array of " + std::to_string(n) + " numbers");
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(number(j[i], field + "[" + std::to_string(i) + "]"));
    return out;
}

}  // namespace

json pose_to_json(const Pose &p) {
    const auto &q = p.rotation;
    return json::array({q.w(), q.x(), q.y(), q.z(), p.translation.x(), p.translation.y(), p.translation.z()});
}

Pose pose_from_json(const json &j, const std::string &field) {
    const auto v = numbers(j, field, 7);
    Pose p;
    try {
        p.rotation = UnitQuaternion(v[0], v[1], v[2], v[3]);
    } catch (const std::invalid_argument &) {
        throw SchemaError(field + ": quaternion must be non-zero");
    }
    p.translation = Vec3(v[4], v[5], v[6]);
    if (!p.is_finite()) throw SchemaError(field + ": pose must be finite");
    return p;
}

json intrinsics_to_json(const FisheyeIntrinsics &intr) {
    return json{{"fx", intr.fx},
                {"fy", intr.fy},
                {"cx", intr.cx},
                {"cy", intr.cy},
                {"k", json::array({intr.k1, intr.k2, intr.k3, intr.k4})},
                {"width", intr.width},
                {"height", intr.height},
                {"max_fov", intr.max_fov}};
}

namespace {

FisheyeIntrinsics intrinsics_from_json_at(const json &j, const std::string &path, FisheyeIntrinsics intr) {
    check_keys(j, path, {"fx", "fy", "cx", "cy", "k", "width", "height", "max_fov"});
    opt_number(j, "fx", path, intr.fx);
    opt_number(j, "fy", path, intr.fy);
    opt_number(j, "cx", path, intr.cx);
    opt_number(j, "cy", path, intr.cy);
    opt_number(j, "max_fov", path, intr.max_fov);
    if (auto it = j.find("k"); it != j.end()) {
        const auto k = numbers(*it, join(path, "k"), 4);
        intr.k1 = k[0];
        intr.k2 = k[1];
        intr.k3 = k[2];
        intr.k4 = k[3];
    }
    if (auto it = j.find("width"); it != j.end()) intr.width = int(integer(*it, join(path, "width")));
    if (auto it = j.find("height"); it != j.end()) intr.height = int(integer(*it, join(path, "height")));
    if (auto err = intr.validate()) throw SchemaError(path + ": " + *err);
    return intr;
}

}  // namespace

FisheyeIntrinsics intrinsics_from_json(const json &j) { return intrinsics_from_json_at(j, "intrinsics", {}); }

json config_to_json(const ScenarioConfig &cfg) {
    const auto &t = cfg.trajectory;
    const auto &n = cfg.noise;
    json wps = json::array();
    for (const auto &w : t.waypoints) wps.push_back(json::array({w.x(), w.y()}));
    json j{{"n_cameras", cfg.n_cameras},
           {"ceiling_height_range", json::array({cfg.ceiling_min, cfg.ceiling_max})},
           {"area", json::array({cfg.area_x, cfg.area_y})},
           {"grid_jitter", cfg.grid_jitter},
           {"camera_tilt_sigma", cfg.camera_tilt_sigma},
           {"trajectory",
            {{"waypoints", wps},
             {"speed", t.speed},
             {"turn_rate", t.turn_rate},
             {"keyframe_rate", t.keyframe_rate},
             {"roll_pitch_excitation", t.roll_pitch_excitation},
             {"robot_height", t.robot_height},
             {"start_time", t.start_time}}},
           {"true_scale", cfg.true_scale},
           {"true_offset", pose_to_json(cfg.true_offset)},
           {"aruco_fov_half_angle", cfg.aruco_fov_half_angle},
           {"noise",
            {{"aruco_trans_sigma", n.aruco_trans_sigma},
             {"aruco_rot_sigma", n.aruco_rot_sigma},
             {"blob_pixel_sigma", n.blob_pixel_sigma},
             {"timestamp_jitter_sigma", n.timestamp_jitter_sigma},
             {"outlier_fraction", n.outlier_fraction},
             {"vo_trans_sigma", n.vo_trans_sigma},
             {"vo_rot_sigma", n.vo_rot_sigma}}},
           {"intrinsics", intrinsics_to_json(cfg.intrinsics)},
           {"seed", cfg.seed}};
    if (cfg.noise_seed) j["noise_seed"] = *cfg.noise_seed;
    return j;
}

ScenarioConfig config_from_json(const json &j) {
    ScenarioConfig cfg;
    check_keys(j, "", {"n_cameras", "ceiling_height_range", "area", "grid_jitter", "camera_tilt_sigma", "trajectory",
                       "true_scale", "true_offset", "aruco_fov_half_angle", "noise", "intrinsics", "seed",
                       "noise_seed"});
    if (auto it = j.find("n_cameras"); it != j.end()) cfg.n_cameras = int(integer(*it, "n_cameras"));
    if (auto it = j.find("ceiling_height_range"); it != j.end()) {
        const auto v = numbers(*it, "ceiling_height_range", 2);
        cfg.ceiling_min = v[0];
        cfg.ceiling_max = v[1];
    }
    if (auto it = j.find("area"); it != j.end()) {
        const auto v = numbers(*it, "area", 2);
        cfg.area_x = v[0];
        cfg.area_y = v[1];
    }
    opt_number(j, "grid_jitter", "", cfg.grid_jitter);
    opt_number(j, "camera_tilt_sigma", "", cfg.camera_tilt_sigma);
    opt_number(j, "true_scale", "", cfg.true_scale);
    opt_number(j, "aruco_fov_half_angle", "", cfg.aruco_fov_half_angle);
    if (auto it = j.find("true_offset"); it != j.end()) cfg.true_offset = pose_from_json(*it, "true_offset");
    if (auto it = j.find("seed"); it != j.end()) {
        if (!it->is_number_unsigned()) throw SchemaError("seed: expected a non-negative integer");
        cfg.seed = it->get<std::uint64_t>();
    }
    if (auto it = j.find("noise_seed"); it != j.end()) {
        if (!it->is_number_unsigned()) throw SchemaError("noise_seed: expected a non-negative integer");
        cfg.noise_seed = it->get<std::uint64_t>();
    }

    if (auto it = j.find("trajectory"); it != j.end()) {
        const json &t = *it;
        check_keys(t, "trajectory", {"waypoints", "speed", "turn_rate", "keyframe_rate", "roll_pitch_excitation",
                                     "robot_height", "start_time"});
        auto &tc = cfg.trajectory;
        opt_number(t, "speed", "trajectory", tc.speed);
        opt_number(t, "turn_rate", "trajectory", tc.turn_rate);
        opt_number(t, "keyframe_rate", "trajectory", tc.keyframe_rate);
        opt_number(t, "roll_pitch_excitation", "trajectory", tc.roll_pitch_excitation);
        opt_number(t, "robot_height", "trajectory", tc.robot_height);
        opt_number(t, "start_time", "trajectory", tc.start_time);
        if (auto w = t.find("waypoints"); w != t.end()) {
            if (!w->is_array()) throw SchemaError("trajectory.waypoints: expected an array");
            for (std::size_t i = 0; i < w->size(); ++i) {
                const auto xy = numbers((*w)[i], "trajectory.waypoints[" + std::to_string(i) + "]", 2);
                tc.waypoints.emplace_back(xy[0], xy[1]);
            }
        }
    }
    if (auto it = j.find("noise"); it != j.end()) {
        const json &n = *it;
        check_keys(n, "noise", {"aruco_trans_sigma", "aruco_rot_sigma", "blob_pixel_sigma", "timestamp_jitter_sigma",
                                "outlier_fraction", "vo_trans_sigma", "vo_rot_sigma"});
        auto &nc = cfg.noise;
        opt_number(n, "aruco_trans_sigma", "noise", nc.aruco_trans_sigma);
        opt_number(n, "aruco_rot_sigma", "noise", nc.aruco_rot_sigma);
        opt_number(n, "blob_pixel_sigma", "noise", nc.blob_pixel_sigma);
        opt_number(n, "timestamp_jitter_sigma", "noise", nc.timestamp_jitter_sigma);
        opt_number(n, "outlier_fraction", "noise", nc.outlier_fraction);
        opt_number(n, "vo_trans_sigma", "noise", nc.vo_trans_sigma);
        opt_number(n, "vo_rot_sigma", "noise", nc.vo_rot_sigma);
    }
    if (auto it = j.find("intrinsics"); it != j.end()) {
        cfg.intrinsics = intrinsics_from_json_at(*it, "intrinsics", cfg.intrinsics);
    }
    return cfg;
}

json report_to_json(const SolveReport &r) {
    return json{{"converged", r.converged},
                {"iterations", r.iterations},
                {"initial_cost", r.initial_cost},
                {"final_cost", r.final_cost},
                {"termination", to_string(r.termination)}};
}

json result_to_json(const CalibrationResult &r) {
    json cameras = json::array();
    json looking_down = json::array();
    for (std::size_t i = 0; i < r.cameras.size(); ++i) {
        const auto &c = r.cameras[i];
        json cam{{"id", c.camera_id},
                 {"pose", pose_to_json(c.pose_world)},
                 {"n_aruco", c.n_aruco},
                 {"n_blob", c.n_blob},
                 {"refined", c.refined}};
        if (i < r.looking_down.size()) cam["pose_looking_down"] = pose_to_json(r.looking_down[i].pose_world);
        cameras.push_back(cam);
        json rep = report_to_json(i < r.looking_down.size() ? r.looking_down[i].report : c.report);
        rep["camera_id"] = c.camera_id;
        looking_down.push_back(rep);
    }
    json assoc = json::array();
    for (const auto &b : r.associated_blobs) {
        if (b.camera_id) assoc.push_back(json::array({b.id, *b.camera_id}));
    }
    json so = report_to_json(r.scale_offset.report);
    so["n_segments"] = r.scale_offset.n_segments;
    return json{{"scale", r.scale_offset.scale},
                {"offset", pose_to_json(r.scale_offset.offset)},
                {"observability", {{"degenerate_motion", r.scale_offset.degenerate_motion}}},
                {"dropped_aruco", r.dropped_aruco},
                {"cameras", cameras},
                {"reports", {{"scale_offset", so}, {"looking_down", looking_down},
                             {"refinement", report_to_json(r.refinement_report)}}},
                {"associations", assoc}};
}

LoadedResult result_from_json(const json &j) {
    LoadedResult r;
    r.scale = number(member(j, "scale", ""), "scale");
    if (!(r.scale > 0.0)) throw SchemaError("scale: must be positive");
    r.offset = pose_from_json(member(j, "offset", ""), "offset");
    if (auto it = j.find("observability"); it != j.end() && it->contains("degenerate_motion")) {
        r.degenerate_motion = boolean((*it)["degenerate_motion"], "observability.degenerate_motion");
    }
    const json &cams = member(j, "cameras", "");
    if (!cams.is_array()) throw SchemaError("cameras: expected an array");
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const std::string path = "cameras[" + std::to_string(i) + "]";
        const json &c = cams[i];
        CameraEstimate est;
        est.camera_id = int(integer(member(c, "id", path), path + ".id"));
        est.pose_world = pose_from_json(member(c, "pose", path), path + ".pose");
        if (auto it = c.find("n_aruco"); it != c.end()) est.n_aruco = int(integer(*it, path + ".n_aruco"));
        if (auto it = c.find("n_blob"); it != c.end()) est.n_blob = int(integer(*it, path + ".n_blob"));
        if (auto it = c.find("refined"); it != c.end()) est.refined = boolean(*it, path + ".refined");
        r.cameras.push_back(est);
        CameraEstimate down = est;
        down.refined = false;
        if (auto it = c.find("pose_looking_down"); it != c.end()) {
            down.pose_world = pose_from_json(*it, path + ".pose_looking_down");
        }
        r.looking_down.push_back(down);
    }
    if (auto it = j.find("associations"); it != j.end()) {
        if (!it->is_array()) throw SchemaError("associations: expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string path = "associations[" + std::to_string(i) + "]";
            const json &a = (*it)[i];
            if (!a.is_array() || a.size() != 2) throw SchemaError(path + ": expected [blob_id, camera_id]");
            r.associations.emplace_back(integer(a[0], path), int(integer(a[1], path)));
        }
    }
    return r;
}

namespace {

json trajectory_to_json_array(const Trajectory &traj) {
    json arr = json::array();
    for (const auto &s : traj.samples()) {
        arr.push_back(json{{"keyframe_id", s.keyframe_id}, {"stamp", s.stamp}, {"pose", pose_to_json(s.pose)}});
    }
    return arr;
}

TimedPose timed_pose_from_json(const json &j, const std::string &path) {
    TimedPose tp;
    tp.keyframe_id = integer(member(j, "keyframe_id", path), path + ".keyframe_id");
    tp.stamp = number(member(j, "stamp", path), path + ".stamp");
    tp.pose = pose_from_json(member(j, "pose", path), path + ".pose");
    return tp;
}

Trajectory make_trajectory(std::vector<TimedPose> samples, const std::string &what) {
    try {
        return Trajectory(std::move(samples));
    } catch (const std::invalid_argument &e) {
        throw SchemaError(what + ": " + e.what());
    }
}

}  // namespace

json ground_truth_to_json(const ScenarioGroundTruth &gt, const std::vector<int> &blob_truth) {
    json cams = json::array();
    for (const auto &[id, pose] : gt.camera_poses_world) cams.push_back(json{{"id", id}, {"pose", pose_to_json(pose)}});
    return json{{"scale", gt.scale},
                {"offset", pose_to_json(gt.offset)},
                {"cameras", cams},
                {"blob_labels", blob_truth},
                {"trajectory_metric", trajectory_to_json_array(gt.robot_trajectory_metric)}};
}

ScenarioGroundTruth ground_truth_from_json(const json &j) {
    ScenarioGroundTruth gt;
    gt.scale = number(member(j, "scale", ""), "scale");
    gt.offset = pose_from_json(member(j, "offset", ""), "offset");
    const json &cams = member(j, "cameras", "");
    if (!cams.is_array()) throw SchemaError("cameras: expected an array");
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const std::string path = "cameras[" + std::to_string(i) + "]";
        gt.camera_poses_world.emplace_back(int(integer(member(cams[i], "id", path), path + ".id")),
                                           pose_from_json(member(cams[i], "pose", path), path + ".pose"));
    }
    if (auto it = j.find("trajectory_metric"); it != j.end()) {
        if (!it->is_array()) throw SchemaError("trajectory_metric: expected an array");
        std::vector<TimedPose> samples;
        for (std::size_t i = 0; i < it->size(); ++i) {
            samples.push_back(timed_pose_from_json((*it)[i], "trajectory_metric[" + std::to_string(i) + "]"));
        }
        gt.robot_trajectory_metric = make_trajectory(std::move(samples), "trajectory_metric");
    }
    return gt;
}

json reprojection_to_json(const ReprojectionReport &r) {
    json per = json::object();
    for (const auto &[id, v] : r.per_camera_rmse_px) per[std::to_string(id)] = v;
    return json{{"rmse_px", r.rmse_px}, {"n_terms", r.n_terms}, {"per_camera_rmse_px", per}};
}

json rmsd_to_json(const PoseRmsdReport &r) {
    return json{{"rot_rmsd_deg", {{"roll", r.rot_rmsd_deg.x()}, {"pitch", r.rot_rmsd_deg.y()}, {"yaw", r.rot_rmsd_deg.z()}}},
                {"trans_rmsd_m", {{"x", r.trans_rmsd_m.x()}, {"y", r.trans_rmsd_m.y()}, {"z", r.trans_rmsd_m.z()}}},
                {"n_matched", r.n_matched}};
}

std::string read_text(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("cannot read " + path.string());
    return ss.str();
}

void write_text(const std::filesystem::path &path, const std::string &content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("cannot write " + path.string());
}

json read_json(const std::filesystem::path &path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error &e) {
        throw SchemaError(path.filename().string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path &path, const json &j) { write_text(path, j.dump(2) + "\n"); }

std::string sha256_hex(const std::string &content) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(content.data(), content.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return hex.str();
}

std::string trajectory_to_jsonl(const Trajectory &traj) {
    std::string out;
    for (const auto &rec : trajectory_to_json_array(traj)) out += rec.dump() + "\n";
    return out;
}

std::string measurements_to_jsonl(const std::vector<ArucoDetection> &arucos, const std::vector<BlobDetection> &blobs) {
    std::string out;
    for (const auto &a : arucos) {
        out += json{{"type", "aruco"}, {"camera_id", a.camera_id}, {"stamp", a.stamp},
                    {"pose", pose_to_json(a.pose_marker_in_camera)}}
                   .dump() +
               "\n";
    }
    for (const auto &b : blobs) {
        json rec{{"type", "blob"}, {"id", b.id}, {"keyframe_id", b.keyframe_id},
                 {"pixel", json::array({b.pixel.x(), b.pixel.y()})}};
        if (b.camera_id) rec["camera_id"] = *b.camera_id;
        out += rec.dump() + "\n";
    }
    return out;
}

void write_dataset(const std::filesystem::path &dir, const Dataset &ds) {
    write_text(dir / "dataset.jsonl", measurements_to_jsonl(ds.arucos, ds.blobs));
    write_text(dir / "trajectory.jsonl", trajectory_to_jsonl(ds.trajectory_unscaled));
    write_json(dir / "intrinsics.json", intrinsics_to_json(ds.intrinsics));
}

namespace {

template <class F>
void for_each_jsonl(const std::filesystem::path &path, F &&fn) {
    std::istringstream in(read_text(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.filename().string() + ":" + std::to_string(lineno);
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error &e) {
            throw SchemaError(where + ": " + e.what());
        }
        fn(rec, where);
    }
}

}  // namespace

Dataset read_dataset(const std::filesystem::path &dir) {
    Dataset ds;
    ds.intrinsics = intrinsics_from_json(read_json(dir / "intrinsics.json"));

    std::vector<TimedPose> samples;
    for_each_jsonl(dir / "trajectory.jsonl",
                   [&](const json &rec, const std::string &where) { samples.push_back(timed_pose_from_json(rec, where)); });
    ds.trajectory_unscaled = make_trajectory(std::move(samples), "trajectory.jsonl");

    for_each_jsonl(dir / "dataset.jsonl", [&](const json &rec, const std::string &where) {
        const json &type = member(rec, "type", where);
        if (type == "aruco") {
            ArucoDetection a;
            const std::int64_t cid = integer(member(rec, "camera_id", where), where + ".camera_id");
            if (cid < 0) throw SchemaError(where + ".camera_id: must be >= 0");
            a.camera_id = int(cid);
            a.stamp = number(member(rec, "stamp", where), where + ".stamp");
            if (!std::isfinite(a.stamp)) throw SchemaError(where + ".stamp: must be finite");
            a.pose_marker_in_camera = pose_from_json(member(rec, "pose", where), where + ".pose");
            ds.arucos.push_back(a);
        } else if (type == "blob") {
            BlobDetection b;
            b.id = integer(member(rec, "id", where), where + ".id");
            b.keyframe_id = integer(member(rec, "keyframe_id", where), where + ".keyframe_id");
            const auto px = numbers(member(rec, "pixel", where), where + ".pixel", 2);
            b.pixel = Vec2(px[0], px[1]);
            if (!ds.intrinsics.in_image(b.pixel)) throw SchemaError(where + ".pixel: outside the image");
            if (auto it = rec.find("camera_id"); it != rec.end()) b.camera_id = int(integer(*it, where + ".camera_id"));
            ds.blobs.push_back(b);
        } else {
            throw SchemaError(where + ".type: expected \"aruco\" or \"blob\"");
        }
    });
    return ds;
}

}  // namespace camreg::io
