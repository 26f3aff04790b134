#include "codiff/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace codiff {

double gaussian(Rng& rng, double sigma)
{
    std::normal_distribution<double> unit(0.0, 1.0);
    return sigma * unit(rng);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream)
{
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

const Agent& Scene::agent(int id) const
{
    for (const auto& a : agents)
        if (a.id == id)
            return a;
    throw std::invalid_argument("Scene: unknown agent id " + std::to_string(id));
}

void Scene::validate() const
{
    std::set<int> ids;
    for (const auto& a : agents) {
        if (!ids.insert(a.id).second)
            throw std::invalid_argument("Scene: duplicate agent id " + std::to_string(a.id));
        if (!(a.sensing_range > 0.0))
            throw std::invalid_argument("Scene: sensing_range must be positive");
    }
    ids.clear();
    for (const auto& o : objects) {
        if (!ids.insert(o.id).second)
            throw std::invalid_argument("Scene: duplicate object id " + std::to_string(o.id));
        if (!(o.half_length > 0.0) || !(o.half_width > 0.0))
            throw std::invalid_argument("Scene: object extents must be positive");
    }
}

void NoiseConfig::validate() const
{
    if (!(sigma_t >= 0.0))
        throw std::invalid_argument("noise.sigma_t must be >= 0");
    if (!(sigma_r >= 0.0))
        throw std::invalid_argument("noise.sigma_r must be >= 0");
    if (!(delay >= 0.0))
        throw std::invalid_argument("noise.delay must be >= 0");
    if (!(detection_sigma.array() >= 0.0).all())
        throw std::invalid_argument("noise.detection_sigma must be >= 0");
}

namespace {

DetectedBox footprint(const SceneObject& o)
{
    DetectedBox b;
    b.center = o.pose;
    b.half_length = o.half_length;
    b.half_width = o.half_width;
    return b;
}

} // namespace

Scene generate_scene(const SceneParams& params, std::uint64_t seed)
{
    if (params.n_agents < 1)
        throw std::invalid_argument("generate_scene: n_agents must be >= 1");
    if (params.n_objects < 0)
        throw std::invalid_argument("generate_scene: n_objects must be >= 0");

    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    constexpr double pi = std::numbers::pi;

    Scene scene;
    scene.seed = seed;
    for (int i = 0; i < params.n_agents; ++i) {
        const double h = 0.5 * params.agent_spread;
        scene.agents.push_back({i, Pose2(uniform(-h, h), uniform(-h, h), uniform(-pi, pi)), params.sensing_range});
    }

    const double h = 0.5 * params.extent;
    std::vector<DetectedBox> placed;
    for (int k = 0; k < params.n_objects; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < params.max_retries && !ok; ++attempt) {
            SceneObject o;
            o.id = k;
            o.pose = Pose2(uniform(-h, h), uniform(-h, h), uniform(-pi, pi));
            o.half_length = uniform(params.min_half_length, params.max_half_length);
            o.half_width = uniform(params.min_half_width, params.max_half_width);
            const double speed = uniform(0.0, params.max_speed);
            o.velocity = speed * Eigen::Vector2d(std::cos(o.pose.theta()), std::sin(o.pose.theta()));
            const DetectedBox fp = footprint(o);
            ok = std::none_of(placed.begin(), placed.end(),
                              [&](const DetectedBox& other) { return rotated_iou(fp, other) > 0.0; });
            if (ok) {
                placed.push_back(fp);
                scene.objects.push_back(o);
            }
        }
        if (!ok)
            throw std::runtime_error("generate_scene: cannot place object " + std::to_string(k) +
                                     " without overlap after " + std::to_string(params.max_retries) + " retries");
    }
    return scene;
}

Pose2 perturb_pose(const Pose2& p, const NoiseConfig& cfg, Rng& rng)
{
    const double dx = gaussian(rng, cfg.sigma_t);
    const double dy = gaussian(rng, cfg.sigma_t);
    const double dtheta = gaussian(rng, cfg.sigma_r * std::numbers::pi / 180.0);
    return {p.x() + dx, p.y() + dy, p.theta() + dtheta};
}

Detections observe_at(const Scene& scene, int agent_id, double dt, const NoiseConfig& cfg, Rng& rng)
{
    const Agent& agent = scene.agent(agent_id);
    const Eigen::Vector3d reported_sigma = cfg.detection_sigma.cwiseMax(kMinReportedSigma);
    Detections out;
    for (const auto& o : scene.objects) {
        const Pose2 world = o.pose_at(dt);
        const Pose2 local = relative(agent.true_pose, world);
        const double range = local.translation().norm();
        if (range > agent.sensing_range)
            continue;
        DetectedBox b;
        const double nx = gaussian(rng, cfg.detection_sigma.x());
        const double ny = gaussian(rng, cfg.detection_sigma.y());
        const double nt = gaussian(rng, cfg.detection_sigma.z());
        b.center = Pose2(local.x() + nx, local.y() + ny, local.theta() + nt);
        b.half_length = o.half_length;
        b.half_width = o.half_width;
        b.sigma = reported_sigma;
        b.confidence = std::clamp(1.0 - range / agent.sensing_range + gaussian(rng, 0.05), 0.0, 1.0);
        out.boxes.push_back(b);
        out.object_ids.push_back(o.id);
    }
    return out;
}

Detections observe(const Scene& scene, int agent_id, const NoiseConfig& cfg, Rng& rng)
{
    return observe_at(scene, agent_id, 0.0, cfg, rng);
}

CollabMessage build_message(const Scene& scene, int sender_id, const NoiseConfig& cfg, Rng& rng,
                            const GridConfig& grid)
{
    const Agent& sender = scene.agent(sender_id);
    CollabMessage msg;
    msg.sender_id = sender_id;
    msg.capture_time = scene.timestamp - cfg.delay;
    msg.reported_pose = perturb_pose(sender.true_pose, cfg, rng);
    Detections det = observe_at(scene, sender_id, -cfg.delay, cfg, rng);
    msg.boxes = std::move(det.boxes);
    msg.truth_object_ids = std::move(det.object_ids);
    msg.feature = synthesize_feature(msg.boxes, grid);
    return msg;
}

FeatureMap synthesize_feature(const std::vector<DetectedBox>& boxes, const GridConfig& grid)
{
    if (grid.height <= 0 || grid.width <= 0 || grid.channels <= 0 || !(grid.resolution > 0.0))
        throw std::invalid_argument("synthesize_feature: grid dimensions must be positive");
    FeatureMap map(grid.height, grid.width, grid.channels, grid.resolution);
    Eigen::MatrixXd bump = Eigen::MatrixXd::Zero(grid.height, grid.width);
    for (const auto& box : boxes) {
        const int col = static_cast<int>(std::floor(box.center.x() / grid.resolution + 0.5 * grid.width));
        const int row = static_cast<int>(std::floor(box.center.y() / grid.resolution + 0.5 * grid.height));
        if (row < 0 || col < 0 || row >= grid.height || col >= grid.width)
            continue;
        const double width = std::hypot(box.half_length, box.half_width);
        const int reach = static_cast<int>(std::ceil(4.0 * width / grid.resolution));
        for (int r = std::max(0, row - reach); r <= std::min(grid.height - 1, row + reach); ++r) {
            for (int c = std::max(0, col - reach); c <= std::min(grid.width - 1, col + reach); ++c) {
                const double d2 = (std::pow(r - row, 2) + std::pow(c - col, 2)) * grid.resolution * grid.resolution;
                bump(r, c) = std::max(bump(r, c), std::exp(-d2 / (2.0 * width * width)));
            }
        }
    }
    for (int r = 0; r < grid.height; ++r)
        for (int c = 0; c < grid.width; ++c)
            map.data.row(map.pixel(r, c)).setConstant(bump(r, c));
    return map;
}

nlohmann::json scene_to_json(const Scene& scene)
{
    nlohmann::json j;
    j["schema"] = "codiff.scene/1";
    j["seed"] = scene.seed;
    j["timestamp"] = scene.timestamp;
    j["agents"] = nlohmann::json::array();
    for (const auto& a : scene.agents)
        j["agents"].push_back({{"id", a.id},
                               {"x", a.true_pose.x()},
                               {"y", a.true_pose.y()},
                               {"theta", a.true_pose.theta()},
                               {"sensing_range", a.sensing_range}});
    j["objects"] = nlohmann::json::array();
    for (const auto& o : scene.objects)
        j["objects"].push_back({{"id", o.id},
                                {"x", o.pose.x()},
                                {"y", o.pose.y()},
                                {"theta", o.pose.theta()},
                                {"vx", o.velocity.x()},
                                {"vy", o.velocity.y()},
                                {"half_length", o.half_length},
                                {"half_width", o.half_width}});
    return j;
}

Scene scene_from_json(const nlohmann::json& j)
{
    if (j.value("schema", "") != "codiff.scene/1")
        throw std::invalid_argument("scene: unsupported or missing schema key");
    Scene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.timestamp = j.at("timestamp").get<double>();
    for (const auto& a : j.at("agents"))
        s.agents.push_back({a.at("id").get<int>(),
                            Pose2(a.at("x").get<double>(), a.at("y").get<double>(), a.at("theta").get<double>()),
                            a.at("sensing_range").get<double>()});
    for (const auto& o : j.at("objects")) {
        SceneObject obj;
        obj.id = o.at("id").get<int>();
        obj.pose = Pose2(o.at("x").get<double>(), o.at("y").get<double>(), o.at("theta").get<double>());
        obj.velocity = {o.at("vx").get<double>(), o.at("vy").get<double>()};
        obj.half_length = o.at("half_length").get<double>();
        obj.half_width = o.at("half_width").get<double>();
        s.objects.push_back(obj);
    }
    s.validate();
    return s;
}

} // namespace codiff
