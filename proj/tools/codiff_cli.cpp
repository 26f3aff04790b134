// codiff command-line front end: generate, calibrate, sweep, report.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "codiff/config.hpp"
#include "codiff/evaluation.hpp"
#include "codiff/scenario.hpp"

namespace fs = std::filesystem;
using namespace codiff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

/// Usage problems detected after CLI11 parsing (empty grids, missing inputs).
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

std::string default_output_dir(const RunConfig& cfg)
{
    if (const char* env = std::getenv("CODIFF_OUTPUT_DIR"); env && *env)
        return env;
    return cfg.output_dir;
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw UsageError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Scene load_scene(const std::string& path)
{
    try {
        return scene_from_json(nlohmann::json::parse(read_text(path)));
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("scene '" + path + "': " + e.what());
    }
}

int cmd_generate(const std::string& config_path, const std::string& out_path)
{
    const RunConfig cfg = load_config(config_path);
    const Scene scene = generate_scene(cfg.pipeline.scene, cfg.seed);
    write_text(out_path, scene_to_json(scene).dump(2) + "\n");
    fmt::print("seed {}\nobjects {}\n", scene.seed, scene.objects.size());
    return kExitOk;
}

void print_trial(const TrialResult& r)
{
    fmt::print("configuration {}  sigma_t {} m  sigma_r {} deg  delay {} s  seed {}\n", r.flags.label(), r.sigma_t,
               r.sigma_r, r.delay, r.seed);
    fmt::print("{:>6} {:>12} {:>12} {:>12} {:>12}\n", "agent", "trans_before", "trans_after", "rot_before",
               "rot_after");
    for (const auto& a : r.agents)
        fmt::print("{:>6} {:>12.3f} {:>12.3f} {:>12.3f} {:>12.3f}\n", a.agent_id, a.trans_error_before,
                   a.trans_error_after, a.rot_error_before, a.rot_error_after);
    fmt::print("pose rmse      trans {:.3f} -> {:.3f} m   rot {:.3f} -> {:.3f} deg\n", r.pose_before.trans_rmse,
               r.pose_after.trans_rmse, r.pose_before.rot_rmse, r.pose_after.rot_rmse);
    if (r.matching)
        fmt::print("matching       precision {:.3f}  recall {:.3f}  f1 {:.3f}\n", r.matching->precision,
                   r.matching->recall, r.matching->f1);
    else
        fmt::print("matching       skipped (pcm off)\n");
    fmt::print("alignment iou  {:.4f} -> {:.4f}\n", r.iou_before, r.iou_after);
    fmt::print("ap@0.5 {:.4f}  ap@0.7 {:.4f}  feature mse {:.6g}\n", r.ap50, r.ap70, r.feature_mse);
    fmt::print("solver         iterations {}  converged {}\n", r.solver_iterations, r.solver_converged ? "yes" : "no");
}

int cmd_calibrate(const std::string& config_path, const std::string& scene_path, bool no_pcm, bool no_tcm, int batch,
                  const std::string& out_path)
{
    const RunConfig cfg = load_config(config_path);
    const PipelineFlags flags{!no_pcm, !no_tcm};

    if (batch > 0) {
        if (!scene_path.empty())
            throw UsageError("--batch generates its own scenes; drop --scene");
        std::vector<double> before, after, ratios;
        nlohmann::json trials = nlohmann::json::array();
        for (int k = 0; k < batch; ++k) {
            const TrialResult r = run_trial(cfg.pipeline, flags, derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
            before.push_back(r.pose_before.trans_rmse);
            after.push_back(r.pose_after.trans_rmse);
            if (r.pose_before.trans_rmse > 0.0)
                ratios.push_back(r.pose_after.trans_rmse / r.pose_before.trans_rmse);
            trials.push_back(trial_to_json(r));
        }
        fmt::print("trials {}\nmedian trans rmse before {:.4f} m\nmedian trans rmse after {:.4f} m\n", batch,
                   median(before), median(after));
        if (ratios.empty())
            fmt::print("median improvement ratio n/a (no pre-calibration error)\n");
        else
            fmt::print("median improvement ratio {:.4f}\n", median(ratios));
        if (!out_path.empty())
            write_text(out_path, trials.dump(2) + "\n");
        return kExitOk;
    }

    TrialResult r;
    try {
        r = scene_path.empty() ? run_trial(cfg.pipeline, flags, cfg.seed)
                               : run_trial(load_scene(scene_path), cfg.pipeline, flags, cfg.seed);
    } catch (const SolverError& e) {
        const auto& rep = e.report;
        fmt::print(stderr, "solver failed: {}\n  iterations {}  initial cost {:.6g}  final cost {:.6g}  note {}\n",
                   e.what(), rep.iterations, rep.initial_cost, rep.final_cost, rep.note);
        throw;
    }
    print_trial(r);
    if (!out_path.empty())
        write_text(out_path, trial_to_json(r).dump(2) + "\n");
    return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::vector<double>& sigmas, const std::vector<double>& delays,
              const std::vector<std::string>& configs, int trials, int jobs, std::string out_dir, bool grid_overridden)
{
    RunConfig cfg = load_config(config_path);
    SweepGrid grid = cfg.sweep;
    if (!sigmas.empty())
        grid.sigmas = sigmas;
    if (!delays.empty())
        grid.delays = delays;
    if (!configs.empty()) {
        grid.configurations.clear();
        for (const auto& c : configs)
            grid.configurations.push_back(PipelineFlags::parse(c));
    }
    if (trials >= 0)
        grid.trials = trials;
    if (grid_overridden && (grid.sigmas.empty() || grid.delays.empty() || grid.configurations.empty()))
        throw UsageError("sweep grid is empty");
    if (grid.trials < 1)
        throw UsageError("sweep grid is empty (--trials must be >= 1)");
    if (out_dir.empty())
        out_dir = default_output_dir(cfg);

    const auto rows = run_sweep(cfg.pipeline, grid, cfg.seed, jobs);
    write_text(fs::path(out_dir) / "results.csv", to_csv(rows));
    write_text(fs::path(out_dir) / "summary.json", summarize(rows).dump(2) + "\n");
    fmt::print("rows {}\nwrote {}\n", rows.size(), out_dir);
    return kExitOk;
}

int cmd_report(const std::string& dir)
{
    const fs::path csv = fs::path(dir) / "results.csv";
    if (!fs::exists(csv))
        throw UsageError("no results at '" + csv.string() + "'");
    const auto rows = from_csv(read_text(csv));
    if (rows.empty())
        throw UsageError("'" + csv.string() + "' holds no trials");
    const nlohmann::json summary = summarize(rows);

    const auto med = [](const nlohmann::json& cell, const char* key) -> std::string {
        if (!cell.contains(key) || cell[key].is_null())
            return "-";
        return fmt::format("{:.4f}", cell[key]["median"].get<double>());
    };
    fmt::print("{:>6} {:>6} {:>9} {:>6} {:>8} {:>10} {:>10} {:>8} {:>8} {:>8}\n", "sigma", "delay", "config",
               "trials", "f1", "trans_aft", "iou_after", "ap50", "ap70", "feat_mse");
    for (const auto& cell : summary["cells"])
        fmt::print("{:>6} {:>6} {:>9} {:>6} {:>8} {:>10} {:>10} {:>8} {:>8} {:>8}\n", cell["sigma"].get<double>(),
                   cell["delay"].get<double>(), cell["config"].get<std::string>(), cell["trials"].get<int>(),
                   med(cell, "f1"), med(cell, "trans_rmse_after"), med(cell, "iou_after"), med(cell, "ap50"),
                   med(cell, "ap70"), med(cell, "feature_mse"));
    fmt::print("(medians over trials; AP uses all-point interpolation)\n");
    write_text(fs::path(dir) / "report.json", summary.dump(2) + "\n");
    return kExitOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"codiff: collaborative perception calibration and feature denoising"};
    app.require_subcommand(1);

    std::string config_path, out_path, scene_path, results_dir;
    bool no_pcm = false, no_tcm = false;
    int batch = 0, trials = -1, jobs = 1;
    std::vector<double> sigmas, delays;
    std::vector<std::string> configs;

    auto* gen = app.add_subcommand("generate", "Generate a scene from a config");
    gen->add_option("--config", config_path, "Run config (JSON)")->required();
    gen->add_option("--out", out_path, "Scene JSON output path")->required();

    auto* cal = app.add_subcommand("calibrate", "Run one calibration trial, or a batch");
    cal->add_option("--config", config_path, "Run config (JSON)")->required();
    cal->add_option("--scene", scene_path, "Use this scene instead of generating one");
    cal->add_flag("--no-pcm", no_pcm, "Disable pose calibration");
    cal->add_flag("--no-tcm", no_tcm, "Disable feature denoising");
    cal->add_option("--batch", batch, "Run N seeds and print the median improvement ratio")->check(CLI::NonNegativeNumber);
    cal->add_option("--out", out_path, "TrialResult JSON output path");

    auto* swp = app.add_subcommand("sweep", "Run a noise/delay/configuration sweep");
    swp->add_option("--config", config_path, "Run config (JSON)")->required();
    auto* sig_opt = swp->add_option("--sigmas", sigmas, "Noise levels (m and deg)")->delimiter(',');
    auto* del_opt = swp->add_option("--delays", delays, "Delays in seconds")->delimiter(',');
    auto* cfg_opt = swp->add_option("--configs", configs, "Configurations: pcm+tcm, pcm, tcm, none")->delimiter(',');
    swp->add_option("--trials", trials, "Trials per cell");
    swp->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    swp->add_option("--out", out_path, "Output directory (default: $CODIFF_OUTPUT_DIR or config output.dir)");

    auto* rep = app.add_subcommand("report", "Aggregate a sweep's results");
    rep->add_option("--results", results_dir, "Sweep output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*gen)
            return cmd_generate(config_path, out_path);
        if (*cal)
            return cmd_calibrate(config_path, scene_path, no_pcm, no_tcm, batch, out_path);
        if (*swp) {
            const bool overridden = sig_opt->count() > 0 || del_opt->count() > 0 || cfg_opt->count() > 0;
            return cmd_sweep(config_path, sigmas, delays, configs, trials, jobs, out_path, overridden);
        }
        if (*rep)
            return cmd_report(results_dir);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return kExitConfig;
    } catch (const UsageError& e) {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
