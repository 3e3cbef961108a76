#pragma once

#include <cstddef>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mirg/evaluation.hpp"
#include "mirg/grpo.hpp"
#include "mirg/reward.hpp"
#include "mirg/synthetic_env.hpp"
#include "mirg/training.hpp"
#include "mirg/trajectory.hpp"

namespace mirg {

using json = nlohmann::json;

// A bad line in a JSONL stream; line numbers are 1-based.
class JsonlError : public std::runtime_error {
public:
    JsonlError(std::size_t line, const std::string& detail)
        : std::runtime_error("line " + std::to_string(line) + ": " + detail), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

void to_json(json& j, const BoundingBox& b);
void from_json(const json& j, BoundingBox& b);
void to_json(json& j, const GroundedObject& o);
void from_json(const json& j, GroundedObject& o);
void to_json(json& j, const GroundTruth& gt);
void from_json(const json& j, GroundTruth& gt);
void to_json(json& j, const RewardBreakdown& r);
void to_json(json& j, const MatchResult& m);
void to_json(json& j, const EvalReport& r);
void from_json(const json& j, EvalSample& s);
void to_json(json& j, const EvalSample& s);
void to_json(json& j, const IterationMetrics& m);
void to_json(json& j, const PolicyEvaluation& e);
void to_json(json& j, const GrpoConfig& c);
void to_json(json& j, const EnvConfig& c);

// Parse tree of a trajectory: blocks with their segments and mention spans.
json trajectory_to_json(const Trajectory& t);

// One EvalSample per non-blank line. Throws JsonlError.
std::vector<EvalSample> read_eval_samples(std::istream& in);

// Eval-harness line for a synthetic task. The prediction is left empty unless
// given.
json task_to_eval_json(const TaskSample& task, const std::string& sample_id, const std::string& prediction = {});

}  // namespace mirg
