#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "camreg/evaluation.hpp"
#include "camreg/registration.hpp"
#include "camreg/simulator.hpp"

namespace camreg::io {

using json = nlohmann::json;

/// Input that parses but violates the expected schema. what() names the field.
class SchemaError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char *kToolVersion = "0.1.0";

// Poses are [qw, qx, qy, qz, tx, ty, tz] with canonical quaternion sign.
json pose_to_json(const Pose &p);
Pose pose_from_json(const json &j, const std::string &field);

json intrinsics_to_json(const FisheyeIntrinsics &intr);
FisheyeIntrinsics intrinsics_from_json(const json &j);

json config_to_json(const ScenarioConfig &cfg);
/// Missing keys take defaults; unknown keys and type errors throw SchemaError.
ScenarioConfig config_from_json(const json &j);

json report_to_json(const SolveReport &r);
json result_to_json(const CalibrationResult &r);

/// The subset of a result file needed for evaluation.
struct LoadedResult {
    double scale = 1.0;
    Pose offset;
    bool degenerate_motion = false;
    std::vector<CameraEstimate> cameras;
    std::vector<CameraEstimate> looking_down;
    std::vector<std::pair<std::int64_t, int>> associations;  // (blob id, camera id)
};
LoadedResult result_from_json(const json &j);

json ground_truth_to_json(const ScenarioGroundTruth &gt, const std::vector<int> &blob_truth);
ScenarioGroundTruth ground_truth_from_json(const json &j);

json reprojection_to_json(const ReprojectionReport &r);
json rmsd_to_json(const PoseRmsdReport &r);

std::string read_text(const std::filesystem::path &path);
void write_text(const std::filesystem::path &path, const std::string &content);
json read_json(const std::filesystem::path &path);
void write_json(const std::filesystem::path &path, const json &j);
std::string sha256_hex(const std::string &content);

/// Dataset directory layout: dataset.jsonl, trajectory.jsonl, intrinsics.json.
void write_dataset(const std::filesystem::path &dir, const Dataset &ds);
Dataset read_dataset(const std::filesystem::path &dir);

std::string trajectory_to_jsonl(const Trajectory &traj);
std::string measurements_to_jsonl(const std::vector<ArucoDetection> &arucos, const std::vector<BlobDetection> &blobs);

}  // namespace camreg::io
