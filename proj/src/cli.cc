#include "camreg/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "camreg/io.hpp"

namespace camreg::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void setup_logging() {
    static bool done = false;
    if (done) return;
    done = true;
    auto logger = spdlog::stderr_color_mt("camreg");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char *lvl = std::getenv("CAMREG_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));
}

// Writes the file and records its digest in `outputs`.
void emit(const fs::path &dir, const std::string &name, const std::string &content, json &outputs) {
    io::write_text(dir / name, content);
    outputs.push_back({{"path", (dir / name).string()}, {"sha256", io::sha256_hex(content)}});
}

std::string dump(const json &j) { return j.dump(2) + "\n"; }

void ensure_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw io::IoError(dir.string() + ": cannot create directory");
}

json file_digest(const fs::path &p) {
    return {{"path", p.string()}, {"sha256", io::sha256_hex(io::read_text(p))}};
}

std::string fixed(double v, int prec = 3) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
}

}  // namespace

int cmd_simulate(const fs::path &config_path, const fs::path &out_dir) {
    setup_logging();
    const auto t0 = Clock::now();
    ScenarioConfig cfg;
    try {
        cfg = io::config_from_json(io::read_json(config_path));
    } catch (const io::IoError &e) {
        spdlog::error("{}", e.what());
        return kIoFailure;
    } catch (const std::exception &e) {
        spdlog::error("invalid config: {}", e.what());
        return kInvalidInput;
    }
    if (auto err = validate(cfg)) {
        spdlog::error("invalid config: {}", *err);
        return kInvalidInput;
    }

    try {
        const auto t_gen = Clock::now();
        const Scenario sc = generate_scenario(cfg);
        const double gen_ms = ms_since(t_gen);
        spdlog::info("generated {} aruco detections, {} blobs over {} keyframes", sc.dataset.arucos.size(),
                     sc.dataset.blobs.size(), sc.dataset.trajectory_unscaled.size());

        ensure_dir(out_dir);
        json outputs = json::array();
        emit(out_dir, "dataset.jsonl", io::measurements_to_jsonl(sc.dataset.arucos, sc.dataset.blobs), outputs);
        emit(out_dir, "trajectory.jsonl", io::trajectory_to_jsonl(sc.dataset.trajectory_unscaled), outputs);
        emit(out_dir, "intrinsics.json", dump(io::intrinsics_to_json(sc.dataset.intrinsics)), outputs);
        emit(out_dir, "ground_truth.json", dump(io::ground_truth_to_json(sc.truth, sc.dataset.blob_truth)), outputs);

        json manifest{{"command", "simulate"},
                      {"tool_version", io::kToolVersion},
                      {"config", io::config_to_json(cfg)},
                      {"seed", cfg.seed},
                      {"noise_seed", cfg.effective_noise_seed()},
                      {"inputs", {{"config", config_path.string()}}},
                      {"outputs", outputs},
                      {"timings_ms", {{"generate", gen_ms}, {"total", ms_since(t0)}}}};
        io::write_json(out_dir / "manifest.json", manifest);
    } catch (const io::IoError &e) {
        spdlog::error("{}", e.what());
        return kIoFailure;
    } catch (const InvalidConfig &e) {
        spdlog::error("invalid config: {}", e.what());
        return kInvalidInput;
    }
    return kOk;
}

int cmd_calibrate(const fs::path &dataset_dir, const fs::path &out_dir, const CalibrateOverrides &overrides) {
    setup_logging();
    const auto t0 = Clock::now();

    PipelineOptions opt;
    if (overrides.huber_delta) opt.huber_delta = *overrides.huber_delta;
    if (overrides.cauchy_scale) opt.cauchy_scale = *overrides.cauchy_scale;
    if (overrides.gate_px) opt.gate_px = *overrides.gate_px;
    opt.refine = !overrides.no_refine;
    if (!(opt.huber_delta > 0.0) || !(opt.cauchy_scale > 0.0) || !(opt.gate_px > 0.0)) {
        spdlog::error("loss scales and gate must be positive");
        return kInvalidInput;
    }

    Dataset ds;
    try {
        ds = io::read_dataset(dataset_dir);
    } catch (const io::IoError &e) {
        spdlog::error("{}", e.what());
        return kIoFailure;
    } catch (const std::exception &e) {
        spdlog::error("schema violation: {}", e.what());
        return kInvalidInput;
    }
    const double load_ms = ms_since(t0);

    CalibrationResult result;
    try {
        result = run_pipeline(ds.trajectory_unscaled, ds.arucos, ds.blobs, ds.intrinsics, opt);
    } catch (const PipelineError &e) {
        spdlog::error("{}", e.what());
        return kStageFailure;
    }
    spdlog::info("scale {:.6f}, {} cameras, {} associated blobs", result.scale_offset.scale, result.cameras.size(),
                 result.associated_blobs.size());
    if (result.scale_offset.degenerate_motion) {
        spdlog::warn("planar motion: offset translation along the rotation axis is unobservable");
    }

    try {
        ensure_dir(out_dir);
        json outputs = json::array();
        emit(out_dir, "result.json", dump(io::result_to_json(result)), outputs);

        json inputs = json::array();
        for (const char *name : {"dataset.jsonl", "trajectory.jsonl", "intrinsics.json"}) {
            inputs.push_back(file_digest(dataset_dir / name));
        }
        json timings{{"load", load_ms}};
        for (const auto &[stage, ms] : result.stage_timings_ms) timings[to_string(stage)] = ms;
        timings["total"] = ms_since(t0);
        json options{{"huber_delta", opt.huber_delta},
                     {"cauchy_scale", opt.cauchy_scale},
                     {"pixel_sigma", opt.pixel_sigma},
                     {"gate_px", opt.gate_px},
                     {"refine", opt.refine},
                     {"min_trans", opt.min_motion.min_trans},
                     {"min_rot", opt.min_motion.min_rot}};
        json manifest{{"command", "calibrate"},
                      {"tool_version", io::kToolVersion},
                      {"config", options},
                      {"dataset", fs::absolute(dataset_dir).string()},
                      {"inputs", inputs},
                      {"outputs", outputs},
                      {"timings_ms", timings}};
        io::write_json(out_dir / "manifest.json", manifest);
    } catch (const io::IoError &e) {
        spdlog::error("{}", e.what());
        return kIoFailure;
    }
    return kOk;
}

namespace {

std::vector<BlobDetection> labeled_blobs(const Dataset &ds, const io::LoadedResult &res) {
    std::map<std::int64_t, int> label(res.associations.begin(), res.associations.end());
    std::vector<BlobDetection> out;
    for (const auto &b : ds.blobs) {
        auto it = label.find(b.id);
        if (it == label.end()) continue;
        BlobDetection l = b;
        l.camera_id = it->second;
        out.push_back(l);
    }
    return out;
}

std::optional<fs::path> dataset_from_manifest(const fs::path &result_path) {
    const fs::path manifest = result_path.parent_path() / "manifest.json";
    if (!fs::exists(manifest)) return std::nullopt;
    const json m = io::read_json(manifest);
    if (auto it = m.find("dataset"); it != m.end() && it->is_string()) return fs::path(it->get<std::string>());
    return std::nullopt;
}

std::string residuals_csv(const ReprojectionReport &before, const ReprojectionReport &after) {
    std::ostringstream s;
    s << "stage,blob_id,keyframe_id,camera_id,observed_u,observed_v,projected_u,projected_v,error_px\n";
    s << std::setprecision(10);
    auto rows = [&](const char *stage, const ReprojectionReport &r) {
        for (const auto &e : r.residuals) {
            s << stage << ',' << e.blob_id << ',' << e.keyframe_id << ',' << e.camera_id << ',' << e.observed.x()
              << ',' << e.observed.y() << ',' << e.projected.x() << ',' << e.projected.y() << ','
              << (e.observed - e.projected).norm() << '\n';
        }
    };
    rows("before", before);
    rows("after", after);
    return s.str();
}

std::string table_text(const std::optional<std::pair<ReprojectionReport, ReprojectionReport>> &reproj,
                       const PoseRmsdReport &rmsd, const std::string &reference) {
    std::ostringstream s;
    if (reproj) {
        s << "Reprojection Error (Pixel)\n";
        s << std::left << std::setw(10) << "" << std::setw(22) << "Before Refinement" << "Post Refinement\n";
        s << std::setw(10) << "result" << std::setw(22) << fixed(reproj->first.rmse_px)
          << fixed(reproj->second.rmse_px) << "\n\n";
    }
    s << "RMSD between corresponding environment cameras (" << reference << ", " << rmsd.n_matched
      << " cameras)\n";
    s << std::left << std::setw(10) << "";
    for (const char *h : {"phi[deg]", "theta[deg]", "psi[deg]", "X[m]", "Y[m]", "Z[m]"}) s << std::setw(12) << h;
    s << "\n" << std::setw(10) << "result";
    for (int i = 0; i < 3; ++i) s << std::setw(12) << fixed(rmsd.rot_rmsd_deg[i]);
    for (int i = 0; i < 3; ++i) s << std::setw(12) << fixed(rmsd.trans_rmsd_m[i], 4);
    s << "\n";
    return s.str();
}

}  // namespace

int cmd_evaluate(const EvaluateArgs &args) {
    setup_logging();
    const auto t0 = Clock::now();
    if (args.ground_truth.has_value() == args.other.has_value()) {
        spdlog::error("exactly one of --ground-truth and --other is required");
        return kInvalidInput;
    }

    io::LoadedResult res;
    std::optional<ScenarioGroundTruth> gt;
    std::optional<io::LoadedResult> other;
    std::optional<Dataset> ds;
    json inputs = json::array();
    try {
        res = io::result_from_json(io::read_json(args.result));
        inputs.push_back(file_digest(args.result));
        if (args.ground_truth) {
            gt = io::ground_truth_from_json(io::read_json(*args.ground_truth));
            inputs.push_back(file_digest(*args.ground_truth));
        } else {
            other = io::result_from_json(io::read_json(*args.other));
            inputs.push_back(file_digest(*args.other));
        }
        auto ds_dir = args.dataset ? args.dataset : dataset_from_manifest(args.result);
        if (ds_dir) {
            ds = io::read_dataset(*ds_dir);
        } else {
            spdlog::warn("no dataset found; skipping reprojection errors");
        }
    } catch (const io::IoError &e) {
        spdlog::error("{}", e.what());
        return kIoFailure;
    } catch (const std::exception &e) {
        spdlog::error("schema violation: {}", e.what());
        return kInvalidInput;
    }

    PoseRmsdReport rmsd;
    try {
        rmsd = gt ? compare_to_ground_truth(res.cameras, *gt, args.align) : pose_rmsd(res.cameras, other->cameras);
    } catch (const TooFewCorrespondences &e) {
        spdlog::error("{}", e.what());
        return kTooFewCorrespondences;
    } catch (const DegenerateGeometry &e) {
        spdlog::error("{}", e.what());
        return kTooFewCorrespondences;
    }

    std::optional<std::pair<ReprojectionReport, ReprojectionReport>> reproj;
    if (ds) {
        const Trajectory traj = apply_scale(ds->trajectory_unscaled, res.scale);
        const auto blobs = labeled_blobs(*ds, res);
        reproj.emplace(reprojection_rmse(res.looking_down, blobs, traj, ds->intrinsics),
                       reprojection_rmse(res.cameras, blobs, traj, ds->intrinsics));
    }

    try {
        ensure_dir(args.out_dir);
        json outputs = json::array();
        json report{{"pose_rmsd", io::rmsd_to_json(rmsd)},
                    {"reference", gt ? "ground_truth" : "other_result"},
                    {"aligned", gt ? args.align : true}};
        if (reproj) {
            report["reprojection"] = {{"before_refinement", io::reprojection_to_json(reproj->first)},
                                      {"after_refinement", io::reprojection_to_json(reproj->second)}};
        }
        emit(args.out_dir, "report.json", dump(report), outputs);
        emit(args.out_dir, "table.txt", table_text(reproj, rmsd, gt ? "vs ground truth" : "vs other result"),
             outputs);
        if (reproj) emit(args.out_dir, "reprojection_residuals.csv", residuals_csv(reproj->first, reproj->second), outputs);
        json manifest{{"command", "evaluate"},
                      {"tool_version", io::kToolVersion},
                      {"config", {{"align", args.align}}},
                      {"inputs", inputs},
                      {"outputs", outputs},
                      {"timings_ms", {{"total", ms_since(t0)}}}};
        io::write_json(args.out_dir / "manifest.json", manifest);
    } catch (const io::IoError &e) {
        spdlog::error("{}", e.what());
        return kIoFailure;
    }
    return kOk;
}

int run(int argc, char **argv) {
    CLI::App app{"Registration of fixed ceiling cameras from a mobile robot"};
    app.require_subcommand(1);
    app.set_version_flag("--version", io::kToolVersion);

    std::string config, sim_out;
    auto *sim = app.add_subcommand("simulate", "Generate a synthetic dataset with ground truth");
    sim->add_option("--config", config, "Scenario config (JSON)")->required();
    sim->add_option("--out", sim_out, "Output directory")->required();

    std::string dataset, cal_out;
    CalibrateOverrides ov;
    auto *cal = app.add_subcommand("calibrate", "Register cameras from a dataset");
    cal->add_option("--dataset", dataset, "Dataset directory")->required();
    cal->add_option("--out", cal_out, "Output directory")->required();
    cal->add_option("--huber-delta", ov.huber_delta, "Huber threshold for the marker stages");
    cal->add_option("--cauchy-scale", ov.cauchy_scale, "Cauchy scale for the refinement");
    cal->add_option("--gate-px", ov.gate_px, "Association gate in pixels");
    cal->add_flag("--no-refine", ov.no_refine, "Skip the blob refinement");

    EvaluateArgs ev;
    std::string result, gt_path, other_path, ds_path, ev_out;
    auto *eval = app.add_subcommand("evaluate", "Compare a result to ground truth or another result");
    eval->add_option("--result", result, "result.json")->required();
    auto *gt_opt = eval->add_option("--ground-truth", gt_path, "ground_truth.json");
    auto *other_opt = eval->add_option("--other", other_path, "Second result.json");
    gt_opt->excludes(other_opt);
    eval->add_option("--dataset", ds_path, "Dataset directory for reprojection errors");
    eval->add_option("--out", ev_out, "Output directory")->required();
    eval->add_flag("--align", ev.align, "Align to ground truth before comparing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInvalidInput;
    }

    if (*sim) return cmd_simulate(config, sim_out);
    if (*cal) return cmd_calibrate(dataset, cal_out, ov);
    ev.result = result;
    if (!gt_path.empty()) ev.ground_truth = gt_path;
    if (!other_path.empty()) ev.other = other_path;
    if (!ds_path.empty()) ev.dataset = ds_path;
    ev.out_dir = ev_out;
    return cmd_evaluate(ev);
}

}  // namespace camreg::cli
