#include "mirg/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <type_traits>

namespace mirg {

namespace {

// Reads typed keys out of one JSON object and rejects any it was not asked
// about.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError(label() + " must be an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        known_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        const json& v = *it;
        const std::string where = name_.empty() ? std::string(key) : name_ + "." + key;
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where + " must be a boolean");
            out = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) throw ConfigError(where + " must be a non-negative integer");
            out = v.get<std::uint64_t>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
            out = v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where + " must be a number");
            out = v.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where + " must be a string");
            out = v.get<std::string>();
        } else {
            static_assert(std::is_same_v<T, std::optional<std::filesystem::path>>);
            if (v.is_null()) {
                out.reset();
            } else {
                if (!v.is_string()) throw ConfigError(where + " must be a path string");
                out = std::filesystem::path(v.get<std::string>());
            }
        }
    }

    const json* child(const char* key) {
        known_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!known_.contains(key)) throw ConfigError("unknown config key " + (name_.empty() ? key : name_ + "." + key));
        }
    }

private:
    std::string label() const { return name_.empty() ? "config" : name_; }

    const json& j_;
    std::string name_;
    std::set<std::string> known_;
};

}  // namespace

void apply_config(RunConfig& c, const json& j) {
    Section top(j, "");
    if (const json* g = top.child("grpo")) {
        Section s(*g, "grpo");
        s.read("group_size", c.grpo.group_size);
        s.read("kl_coefficient", c.grpo.kl_coefficient);
        s.read("std_epsilon", c.grpo.std_epsilon);
        s.read("learning_rate", c.grpo.learning_rate);
        s.read("iterations", c.grpo.iterations);
        s.read("seed", c.grpo.seed);
        s.finish();
    }
    if (const json* e = top.child("env")) {
        Section s(*e, "env");
        s.read("min_images", c.env.min_images);
        s.read("max_images", c.env.max_images);
        s.read("objects_per_image", c.env.objects_per_image);
        s.read("grid_size", c.env.grid_size);
        s.read("image_width", c.env.image_width);
        s.read("image_height", c.env.image_height);
        s.read("max_retries", c.env.max_retries);
        s.finish();
    }
    if (const json* t = top.child("train")) {
        Section s(*t, "train");
        s.read("image_reward", c.train.image_reward);
        s.read("eval_tasks", c.train.eval_tasks);
        s.read("eval_seed", c.train.eval_seed);
        s.finish();
    }
    if (const json* p = top.child("pipeline")) {
        Section s(*p, "pipeline");
        PipelineConfig& pc = c.pipeline.pipeline;
        s.read("strict_envelope", pc.strict_envelope);
        s.read("skip_stage1", pc.skip_stage1);
        s.read("max_in_flight", pc.max_in_flight);
        s.read("checkpoint_dir", pc.checkpoint_dir);
        if (const json* a = s.child("annotator")) {
            Section as(*a, "pipeline.annotator");
            AnnotatorSettings& an = c.pipeline.annotator;
            std::string kind = an.kind == AnnotatorKind::Mock ? "mock" : "remote";
            as.read("kind", kind);
            if (kind == "mock") {
                an.kind = AnnotatorKind::Mock;
            } else if (kind == "remote") {
                an.kind = AnnotatorKind::Remote;
            } else {
                throw ConfigError("pipeline.annotator.kind must be \"mock\" or \"remote\"");
            }
            as.read("url", an.url);
            as.read("api_key_env", an.api_key_env);
            as.read("max_tokens", an.max_tokens);
            as.read("timeout_ms", an.timeout_ms);
            as.read("max_attempts", an.max_attempts);
            as.read("initial_backoff_ms", an.initial_backoff_ms);
            as.finish();
        }
        s.finish();
    }
    if (const json* p = top.child("paths")) {
        Section s(*p, "paths");
        s.read("input", c.paths.input);
        s.read("output", c.paths.output);
        s.read("rejects", c.paths.rejects);
        s.read("metrics", c.paths.metrics);
        s.read("params_out", c.paths.params_out);
        s.finish();
    }
    top.finish();
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    RunConfig c;
    apply_config(c, j);
    return c;
}

json run_config_to_json(const RunConfig& c) {
    const auto opt = [](const std::optional<std::filesystem::path>& p) { return p ? json(p->string()) : json(nullptr); };
    const auto& pc = c.pipeline.pipeline;
    const auto& an = c.pipeline.annotator;
    return json{
        {"grpo", c.grpo},
        {"env", c.env},
        {"train", {{"image_reward", c.train.image_reward}, {"eval_tasks", c.train.eval_tasks}, {"eval_seed", c.train.eval_seed}}},
        {"pipeline",
         {{"strict_envelope", pc.strict_envelope},
          {"skip_stage1", pc.skip_stage1},
          {"max_in_flight", pc.max_in_flight},
          {"checkpoint_dir", opt(pc.checkpoint_dir)},
          {"annotator",
           {{"kind", an.kind == AnnotatorKind::Mock ? "mock" : "remote"},
            {"url", an.url},
            {"api_key_env", an.api_key_env},
            {"max_tokens", an.max_tokens},
            {"timeout_ms", an.timeout_ms},
            {"max_attempts", an.max_attempts},
            {"initial_backoff_ms", an.initial_backoff_ms}}}}},
        {"paths",
         {{"input", opt(c.paths.input)},
          {"output", opt(c.paths.output)},
          {"rejects", opt(c.paths.rejects)},
          {"metrics", opt(c.paths.metrics)},
          {"params_out", opt(c.paths.params_out)}}},
    };
}

void validate_run_config(const RunConfig& c) {
    try {
        c.grpo.validate();
        c.env.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (c.train.eval_tasks < 0) throw ConfigError("train.eval_tasks must be non-negative");
    if (c.train.eval_seed >= (1ULL << 63)) throw ConfigError("train.eval_seed must be below 2^63");
    if (c.pipeline.pipeline.max_in_flight < 1) throw ConfigError("pipeline.max_in_flight must be at least 1");
    const auto& an = c.pipeline.annotator;
    if (an.kind == AnnotatorKind::Remote && an.url.empty()) throw ConfigError("pipeline.annotator.url is required for remote");
    if (an.max_tokens < 1 || an.timeout_ms < 1 || an.max_attempts < 1 || an.initial_backoff_ms < 0) {
        throw ConfigError("pipeline.annotator limits must be positive");
    }
}

std::unique_ptr<AnnotatorClient> make_annotator(const AnnotatorSettings& s, const FaultPlan& faults) {
    if (s.kind == AnnotatorKind::Mock) return std::make_unique<DeterministicMock>(faults);
    RemoteEndpointConfig rc;
    rc.url = s.url;
    if (const char* key = std::getenv(s.api_key_env.c_str())) rc.api_key = key;
    rc.max_tokens = s.max_tokens;
    rc.timeout = std::chrono::milliseconds(s.timeout_ms);
    rc.max_attempts = s.max_attempts;
    rc.initial_backoff = std::chrono::milliseconds(s.initial_backoff_ms);
    try {
        return std::make_unique<RemoteEndpoint>(std::move(rc));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace mirg
