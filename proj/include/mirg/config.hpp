#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "mirg/grpo.hpp"
#include "mirg/json_io.hpp"
#include "mirg/pipeline.hpp"
#include "mirg/synthetic_env.hpp"
#include "mirg/training.hpp"

namespace mirg {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class AnnotatorKind { Mock, Remote };

struct AnnotatorSettings {
    AnnotatorKind kind = AnnotatorKind::Mock;
    std::string url;
    // Name of the environment variable holding the API key; keys never live
    // in config files.
    std::string api_key_env = "MIRG_ANNOTATOR_API_KEY";
    int max_tokens = 2048;
    int timeout_ms = 60000;
    int max_attempts = 4;
    int initial_backoff_ms = 250;
};

struct PipelineSettings {
    PipelineConfig pipeline;
    AnnotatorSettings annotator;
};

struct PathSettings {
    std::optional<std::filesystem::path> input;
    std::optional<std::filesystem::path> output;
    std::optional<std::filesystem::path> rejects;
    std::optional<std::filesystem::path> metrics;
    std::optional<std::filesystem::path> params_out;
};

struct RunConfig {
    GrpoConfig grpo;
    EnvConfig env;
    TrainOptions train;
    PipelineSettings pipeline;
    PathSettings paths;
};

// Overlays the keys present in `j` onto `config`. Unknown keys and ill-typed
// values throw ConfigError naming the offending key.
void apply_config(RunConfig& config, const json& j);

RunConfig load_run_config(const std::filesystem::path& path);

json run_config_to_json(const RunConfig& config);

// Range checks across all sections. Throws ConfigError.
void validate_run_config(const RunConfig& config);

std::unique_ptr<AnnotatorClient> make_annotator(const AnnotatorSettings& settings, const FaultPlan& faults = {});

}  // namespace mirg
