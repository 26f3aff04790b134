#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "codiff/evaluation.hpp"

namespace codiff {

inline constexpr const char* kConfigSchema = "codiff.config/1";

/// Raised for invalid configuration content; the message starts with the offending field path.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    std::uint64_t seed = 7;
    PipelineConfig pipeline;
    SweepGrid sweep{{0.0, 0.1, 0.2, 0.3, 0.4}, {0.0}, {{true, true}, {false, false}}, 20};
    std::string output_dir = "results";

    void validate() const;
};

/// Parses and validates; missing keys take defaults, unknown keys are errors.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

RunConfig load_config(const std::string& path);

} // namespace codiff
