#include "codiff/config.hpp"

#include <fstream>
#include <set>

namespace codiff {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> allowed)
{
    if (!obj.is_object())
        throw ConfigError(path + ": expected an object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [key, value] : obj.items())
        if (!keys.contains(key))
            throw ConfigError((path.empty() ? key : path + "." + key) + ": unknown key");
}

template <typename T>
void read(const json& obj, const std::string& path, const char* key, T& out)
{
    if (!obj.contains(key))
        return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + "." + key + ": wrong type");
    }
}

void require(bool ok, const std::string& field, const std::string& what)
{
    if (!ok)
        throw ConfigError(field + ": " + what);
}

} // namespace

void RunConfig::validate() const
{
    const auto& s = pipeline.scene;
    require(s.n_agents >= 1, "scene.n_agents", "must be >= 1");
    require(s.n_objects >= 0, "scene.n_objects", "must be >= 0");
    require(s.extent > 0.0, "scene.extent", "must be > 0");
    require(s.agent_spread >= 0.0, "scene.agent_spread", "must be >= 0");
    require(s.sensing_range > 0.0, "scene.sensing_range", "must be > 0");
    require(s.max_speed >= 0.0, "scene.max_speed", "must be >= 0");
    require(s.min_half_length > 0.0 && s.min_half_length <= s.max_half_length, "scene.half_length",
            "require 0 < min <= max");
    require(s.min_half_width > 0.0 && s.min_half_width <= s.max_half_width, "scene.half_width",
            "require 0 < min <= max");
    require(s.max_retries >= 1, "scene.max_retries", "must be >= 1");

    const auto& n = pipeline.noise;
    require(n.sigma_t >= 0.0, "noise.sigma_t", "must be >= 0");
    require(n.sigma_r >= 0.0, "noise.sigma_r", "must be >= 0");
    require(n.delay >= 0.0, "noise.delay", "must be >= 0");
    require((n.detection_sigma.array() >= 0.0).all(), "noise.detection_sigma", "entries must be >= 0");

    const auto& m = pipeline.matching;
    require(m.tau2 > 0.0, "matching.tau2", "must be > 0");
    require(m.lambda >= 0.0, "matching.lambda", "must be >= 0");
    require(m.k_neighbors >= 0, "matching.k", "must be >= 0");

    const auto& so = pipeline.solver;
    require(so.max_iterations >= 1, "solver.max_iter", "must be >= 1");
    require(so.cost_tolerance >= 0.0, "solver.cost_tol", "must be >= 0");
    require(so.gradient_tolerance >= 0.0, "solver.grad_tol", "must be >= 0");
    require(so.initial_damping > 0.0, "solver.init_damping", "must be > 0");

    const auto& d = pipeline.diffusion;
    require(d.steps >= 1, "diffusion.T", "must be >= 1");
    require(d.beta_start > 0.0 && d.beta_start <= d.beta_end && d.beta_end < 1.0, "diffusion.beta_start",
            "require 0 < beta_start <= beta_end < 1");
    require(d.sampling_steps >= 1 && d.sampling_steps <= d.steps, "diffusion.steps", "require 1 <= steps <= T");
    require(d.prior_sigma >= 0.0, "diffusion.prior_sigma", "must be >= 0");

    const auto& g = pipeline.grid;
    require(g.height > 0 && g.width > 0, "grid.height", "grid dimensions must be > 0");
    require(g.channels > 0, "grid.channels", "must be > 0");
    require(g.resolution > 0.0, "grid.resolution", "must be > 0");
    require(d.codec_rate >= 1 && g.channels % d.codec_rate == 0, "diffusion.codec_rate",
            "must divide grid.channels");

    require(!sweep.sigmas.empty(), "sweep.sigmas", "must be non-empty");
    require(!sweep.delays.empty(), "sweep.delays", "must be non-empty");
    require(!sweep.configurations.empty(), "sweep.configs", "must be non-empty");
    require(sweep.trials >= 1, "sweep.trials", "must be >= 1");
    for (const double v : sweep.sigmas)
        require(v >= 0.0, "sweep.sigmas", "entries must be >= 0");
    for (const double v : sweep.delays)
        require(v >= 0.0, "sweep.delays", "entries must be >= 0");
}

RunConfig config_from_json(const json& j)
{
    reject_unknown(j, "", {"schema", "seed", "scene", "noise", "matching", "solver", "diffusion", "grid", "sweep", "output"});
    if (!j.contains("schema"))
        throw ConfigError("schema: missing (expected \"" + std::string(kConfigSchema) + "\")");
    if (j.at("schema") != kConfigSchema)
        throw ConfigError("schema: unsupported version (expected \"" + std::string(kConfigSchema) + "\")");

    RunConfig cfg;
    read(j, "", "seed", cfg.seed);
    auto& p = cfg.pipeline;

    if (j.contains("scene")) {
        const json& s = j.at("scene");
        reject_unknown(s, "scene", {"n_agents", "n_objects", "extent", "agent_spread", "sensing_range", "max_speed",
                                    "min_half_length", "max_half_length", "min_half_width", "max_half_width",
                                    "max_retries"});
        read(s, "scene", "n_agents", p.scene.n_agents);
        read(s, "scene", "n_objects", p.scene.n_objects);
        read(s, "scene", "extent", p.scene.extent);
        read(s, "scene", "agent_spread", p.scene.agent_spread);
        read(s, "scene", "sensing_range", p.scene.sensing_range);
        read(s, "scene", "max_speed", p.scene.max_speed);
        read(s, "scene", "min_half_length", p.scene.min_half_length);
        read(s, "scene", "max_half_length", p.scene.max_half_length);
        read(s, "scene", "min_half_width", p.scene.min_half_width);
        read(s, "scene", "max_half_width", p.scene.max_half_width);
        read(s, "scene", "max_retries", p.scene.max_retries);
    }
    if (j.contains("noise")) {
        const json& n = j.at("noise");
        reject_unknown(n, "noise", {"sigma_t", "sigma_r", "delay", "detection_sigma"});
        read(n, "noise", "sigma_t", p.noise.sigma_t);
        read(n, "noise", "sigma_r", p.noise.sigma_r);
        read(n, "noise", "delay", p.noise.delay);
        if (n.contains("detection_sigma")) {
            std::vector<double> ds;
            read(n, "noise", "detection_sigma", ds);
            if (ds.size() != 3)
                throw ConfigError("noise.detection_sigma: expected [sigma_x, sigma_y, sigma_theta]");
            p.noise.detection_sigma = {ds[0], ds[1], ds[2]};
        }
    }
    if (j.contains("matching")) {
        const json& m = j.at("matching");
        reject_unknown(m, "matching", {"tau1", "tau2", "lambda", "k"});
        read(m, "matching", "tau1", p.matching.tau1);
        read(m, "matching", "tau2", p.matching.tau2);
        read(m, "matching", "lambda", p.matching.lambda);
        read(m, "matching", "k", p.matching.k_neighbors);
    }
    if (j.contains("solver")) {
        const json& s = j.at("solver");
        reject_unknown(s, "solver", {"max_iter", "cost_tol", "grad_tol", "init_damping"});
        read(s, "solver", "max_iter", p.solver.max_iterations);
        read(s, "solver", "cost_tol", p.solver.cost_tolerance);
        read(s, "solver", "grad_tol", p.solver.gradient_tolerance);
        read(s, "solver", "init_damping", p.solver.initial_damping);
    }
    if (j.contains("diffusion")) {
        const json& d = j.at("diffusion");
        reject_unknown(d, "diffusion", {"T", "beta_start", "beta_end", "steps", "sampler", "codec_rate", "prior_sigma"});
        read(d, "diffusion", "T", p.diffusion.steps);
        read(d, "diffusion", "beta_start", p.diffusion.beta_start);
        read(d, "diffusion", "beta_end", p.diffusion.beta_end);
        read(d, "diffusion", "steps", p.diffusion.sampling_steps);
        read(d, "diffusion", "codec_rate", p.diffusion.codec_rate);
        read(d, "diffusion", "prior_sigma", p.diffusion.prior_sigma);
        if (d.contains("sampler")) {
            std::string name;
            read(d, "diffusion", "sampler", name);
            try {
                p.diffusion.sampler = parse_sampler(name);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("diffusion.sampler: ") + e.what());
            }
        }
    }
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        reject_unknown(g, "grid", {"height", "width", "channels", "resolution"});
        read(g, "grid", "height", p.grid.height);
        read(g, "grid", "width", p.grid.width);
        read(g, "grid", "channels", p.grid.channels);
        read(g, "grid", "resolution", p.grid.resolution);
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        reject_unknown(s, "sweep", {"sigmas", "delays", "configs", "trials"});
        read(s, "sweep", "sigmas", cfg.sweep.sigmas);
        read(s, "sweep", "delays", cfg.sweep.delays);
        read(s, "sweep", "trials", cfg.sweep.trials);
        if (s.contains("configs")) {
            std::vector<std::string> labels;
            read(s, "sweep", "configs", labels);
            cfg.sweep.configurations.clear();
            for (const auto& l : labels) {
                try {
                    cfg.sweep.configurations.push_back(PipelineFlags::parse(l));
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(std::string("sweep.configs: ") + e.what());
                }
            }
        }
    }
    if (j.contains("output")) {
        const json& o = j.at("output");
        reject_unknown(o, "output", {"dir"});
        read(o, "output", "dir", cfg.output_dir);
    }
    cfg.validate();
    return cfg;
}

json config_to_json(const RunConfig& cfg)
{
    const auto& p = cfg.pipeline;
    json j;
    j["schema"] = kConfigSchema;
    j["seed"] = cfg.seed;
    j["scene"] = {{"n_agents", p.scene.n_agents},
                  {"n_objects", p.scene.n_objects},
                  {"extent", p.scene.extent},
                  {"agent_spread", p.scene.agent_spread},
                  {"sensing_range", p.scene.sensing_range},
                  {"max_speed", p.scene.max_speed},
                  {"min_half_length", p.scene.min_half_length},
                  {"max_half_length", p.scene.max_half_length},
                  {"min_half_width", p.scene.min_half_width},
                  {"max_half_width", p.scene.max_half_width},
                  {"max_retries", p.scene.max_retries}};
    j["noise"] = {{"sigma_t", p.noise.sigma_t},
                  {"sigma_r", p.noise.sigma_r},
                  {"delay", p.noise.delay},
                  {"detection_sigma",
                   {p.noise.detection_sigma.x(), p.noise.detection_sigma.y(), p.noise.detection_sigma.z()}}};
    j["matching"] = {{"tau1", p.matching.tau1},
                     {"tau2", p.matching.tau2},
                     {"lambda", p.matching.lambda},
                     {"k", p.matching.k_neighbors}};
    j["solver"] = {{"max_iter", p.solver.max_iterations},
                   {"cost_tol", p.solver.cost_tolerance},
                   {"grad_tol", p.solver.gradient_tolerance},
                   {"init_damping", p.solver.initial_damping}};
    j["diffusion"] = {{"T", p.diffusion.steps},
                      {"beta_start", p.diffusion.beta_start},
                      {"beta_end", p.diffusion.beta_end},
                      {"steps", p.diffusion.sampling_steps},
                      {"sampler", to_string(p.diffusion.sampler)},
                      {"codec_rate", p.diffusion.codec_rate},
                      {"prior_sigma", p.diffusion.prior_sigma}};
    j["grid"] = {{"height", p.grid.height},
                 {"width", p.grid.width},
                 {"channels", p.grid.channels},
                 {"resolution", p.grid.resolution}};
    std::vector<std::string> labels;
    for (const auto& f : cfg.sweep.configurations)
        labels.push_back(f.label());
    j["sweep"] = {{"sigmas", cfg.sweep.sigmas}, {"delays", cfg.sweep.delays}, {"configs", labels}, {"trials", cfg.sweep.trials}};
    j["output"] = {{"dir", cfg.output_dir}};
    return j;
}

RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("config: cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    return config_from_json(j);
}

} // namespace codiff
