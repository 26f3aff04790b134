#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "codiff/feature_map.hpp"
#include "codiff/geometry.hpp"

namespace codiff {

using Rng = std::mt19937_64;

/// Standard normal draw scaled by sigma; sigma == 0 still consumes one draw so streams stay aligned.
double gaussian(Rng& rng, double sigma);

/// SplitMix64 mixing of a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

struct Agent {
    int id = 0;
    Pose2 true_pose;
    double sensing_range = 50.0;
};

struct SceneObject {
    int id = 0;
    Pose2 pose;
    Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
    double half_length = 2.2;
    double half_width = 0.9;

    /// Pose after constant-velocity motion over dt seconds (dt < 0 rolls back).
    Pose2 pose_at(double dt) const { return {pose.x() + velocity.x() * dt, pose.y() + velocity.y() * dt, pose.theta()}; }
};

struct Scene {
    std::vector<Agent> agents;
    std::vector<SceneObject> objects;
    double timestamp = 0.0;
    std::uint64_t seed = 0;

    const Agent& agent(int id) const;
    /// Throws std::invalid_argument on duplicate ids or non-positive extents / ranges.
    void validate() const;
};

struct SceneParams {
    int n_agents = 2;
    int n_objects = 30;
    double extent = 100.0;       ///< side of the square objects are placed in, meters
    double agent_spread = 20.0;  ///< side of the central square agents are placed in, meters
    double sensing_range = 50.0;
    double max_speed = 10.0;     ///< m/s
    double min_half_length = 1.8;
    double max_half_length = 2.4;
    double min_half_width = 0.8;
    double max_half_width = 1.0;
    int max_retries = 1000;
};

struct NoiseConfig {
    double sigma_t = 0.0;  ///< meters
    double sigma_r = 0.0;  ///< degrees
    double delay = 0.0;    ///< seconds
    Eigen::Vector3d detection_sigma = Eigen::Vector3d::Zero(); ///< (m, m, rad)
    std::uint64_t rng_seed = 0;

    void validate() const;
};

/// Lower bound applied to the sigma field carried by boxes so the information matrix stays finite.
inline constexpr double kMinReportedSigma = 1e-3;

/// Boxes in the observing agent's frame, with the simulator's object ids alongside.
struct Detections {
    std::vector<DetectedBox> boxes;
    std::vector<int> object_ids;
};

struct CollabMessage {
    int sender_id = 0;
    std::vector<DetectedBox> boxes;  ///< sender frame
    std::vector<int> truth_object_ids; ///< simulator annotation, never read by the calibration path
    Pose2 reported_pose;
    FeatureMap feature;
    double capture_time = 0.0;
};

Scene generate_scene(const SceneParams& params, std::uint64_t seed);

Pose2 perturb_pose(const Pose2& p, const NoiseConfig& cfg, Rng& rng);

/// Detections of the scene's current object poses from `agent_id`'s true pose.
Detections observe(const Scene& scene, int agent_id, const NoiseConfig& cfg, Rng& rng);

/// Detections of objects rolled back by `dt` seconds (dt <= 0 is the past).
Detections observe_at(const Scene& scene, int agent_id, double dt, const NoiseConfig& cfg, Rng& rng);

CollabMessage build_message(const Scene& scene, int sender_id, const NoiseConfig& cfg, Rng& rng,
                            const GridConfig& grid = {});

FeatureMap synthesize_feature(const std::vector<DetectedBox>& boxes, const GridConfig& grid);

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

} // namespace codiff
