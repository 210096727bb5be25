#pragma once

#include <filesystem>
#include <optional>

namespace camreg::cli {

enum ExitCode : int {
    kOk = 0,
    kInvalidInput = 1,
    kIoFailure = 2,
    kStageFailure = 3,
    kTooFewCorrespondences = 4,
};

/// Writes dataset.jsonl, trajectory.jsonl, intrinsics.json, ground_truth.json
/// and manifest.json into out_dir.
int cmd_simulate(const std::filesystem::path &config_path, const std::filesystem::path &out_dir);

struct CalibrateOverrides {
    std::optional<double> huber_delta;
    std::optional<double> cauchy_scale;
    std::optional<double> gate_px;
    bool no_refine = false;
};

/// Writes result.json and manifest.json into out_dir.
int cmd_calibrate(const std::filesystem::path &dataset_dir, const std::filesystem::path &out_dir,
                  const CalibrateOverrides &overrides = {});

struct EvaluateArgs {
    std::filesystem::path result;
    std::optional<std::filesystem::path> ground_truth;
    std::optional<std::filesystem::path> other;
    /// Dataset used for reprojection errors; defaults to the one recorded in
    /// the manifest next to the result.
    std::optional<std::filesystem::path> dataset;
    std::filesystem::path out_dir;
    bool align = false;
};

/// Writes report.json, table.txt, reprojection_residuals.csv and manifest.json.
int cmd_evaluate(const EvaluateArgs &args);

/// Full command-line entry point (subcommand parsing included).
int run(int argc, char **argv);

}  // namespace camreg::cli
