#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "codiff/diffusion.hpp"
#include "codiff/matching.hpp"
#include "codiff/posegraph.hpp"
#include "codiff/scenario.hpp"

namespace codiff {

struct DiffusionParams {
    int steps = 500; ///< diffusion timesteps T
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int sampling_steps = 8;
    SamplerKind sampler = SamplerKind::ddpm;
    int codec_rate = 32;
    double prior_sigma = 0.05; ///< sigma0 of the condition-prior denoiser
};

/// Everything a single trial needs besides the seed and the flags.
struct PipelineConfig {
    SceneParams scene;
    NoiseConfig noise;
    MatchingParams matching;
    SolverOptions solver;
    DiffusionParams diffusion;
    GridConfig grid;
};

struct PipelineFlags {
    bool pcm = true;
    bool tcm = true;

    std::string label() const;
    static PipelineFlags parse(const std::string& label);
    bool operator==(const PipelineFlags&) const = default;
};

struct MatchMetrics {
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 1.0;
};

struct PoseError {
    double trans_rmse = 0.0; ///< meters
    double rot_rmse = 0.0;   ///< degrees
};

struct AgentCalibration {
    int agent_id = 0;
    double trans_error_before = 0.0;
    double trans_error_after = 0.0;
    double rot_error_before = 0.0; ///< degrees
    double rot_error_after = 0.0;
};

struct TrialResult {
    double sigma_t = 0.0;
    double sigma_r = 0.0;
    double delay = 0.0;
    PipelineFlags flags;
    std::uint64_t seed = 0;
    int trial = 0;
    std::optional<MatchMetrics> matching; ///< absent when pcm is off
    PoseError pose_before;
    PoseError pose_after;
    double iou_before = 0.0;
    double iou_after = 0.0;
    double ap50 = 0.0;
    double ap70 = 0.0;
    double feature_mse = 0.0;
    int solver_iterations = 0;
    bool solver_converged = true;
    std::vector<AgentCalibration> agents;
};

/// Precision, recall and F1 over (p, q) pair sets. Empty predictions give precision 1 by convention.
MatchMetrics assignment_metrics(const Assignment& pred, const std::vector<std::pair<int, int>>& truth);

/// RMS over agents of Euclidean position error and wrapped angular error (degrees). Id sets must match.
PoseError pose_rmse(const std::map<int, Pose2>& estimated, const std::map<int, Pose2>& truth);

/// All-point interpolated AP. Detections carry their confidence; each ground truth is consumed once.
double average_precision(const std::vector<DetectedBox>& detections, const std::vector<DetectedBox>& ground_truth,
                         double iou_threshold);

/// Greedy confidence-ordered suppression of boxes overlapping a kept box by more than iou_threshold.
std::vector<DetectedBox> suppress_duplicates(std::vector<DetectedBox> boxes, double iou_threshold);

TrialResult run_trial(const PipelineConfig& config, const PipelineFlags& flags, std::uint64_t seed);

/// Runs the pipeline on a given scene instead of generating one.
TrialResult run_trial(const Scene& scene, const PipelineConfig& config, const PipelineFlags& flags,
                      std::uint64_t seed);

struct SweepGrid {
    std::vector<double> sigmas; ///< used as sigma_t (m) and sigma_r (deg)
    std::vector<double> delays; ///< seconds
    std::vector<PipelineFlags> configurations;
    int trials = 1;
};

/// Rows sorted by (sigma, delay, configuration, trial). Trial k uses derive_seed(base_seed, k) in every cell.
std::vector<TrialResult> run_sweep(const PipelineConfig& config, const SweepGrid& grid, std::uint64_t base_seed,
                                   int jobs = 1);

std::string csv_header();
std::string to_csv_row(const TrialResult& r);
std::string to_csv(const std::vector<TrialResult>& rows);
std::vector<TrialResult> from_csv(const std::string& text);

nlohmann::json trial_to_json(const TrialResult& r);

/// Per-cell mean / std / median of every metric, keyed by sigma, delay and configuration.
nlohmann::json summarize(const std::vector<TrialResult>& rows);

/// Throws std::invalid_argument on an empty sample.
double median(std::vector<double> values);

} // namespace codiff
