#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mirg/grpo.hpp"
#include "mirg/policy.hpp"
#include "mirg/synthetic_env.hpp"

namespace mirg {

struct TrainOptions {
    bool image_reward = true;
    int eval_tasks = 200;
    std::uint64_t eval_seed = 1'000'000;
};

struct IterationMetrics {
    int iteration = 0;
    double mean_reward = 0.0;  // mean of the scalar reward used for advantages
    double mean_r_img = 0.0;
    double mean_r_obj = 0.0;
    double kl = 0.0;
    double objective = 0.0;
};

// Expected metrics of a policy over a task set, summed exactly over the full
// action space rather than sampled.
struct PolicyEvaluation {
    double accuracy = 0.0;  // expected Acc@0.5
    double mean_r_img = 0.0;
    double mean_r_obj = 0.0;
    double mean_reward = 0.0;  // expected r_fmt + r_img + r_obj
};

struct TrainingReport {
    PolicyEvaluation initial;
    PolicyEvaluation final;
    std::vector<IterationMetrics> iterations;
    ToyPolicy policy;
};

// Held-out tasks with every action pre-scored through the real render, parse
// and reward path; evaluating a policy is then a weighted sum.
class HeldOutSet {
public:
    HeldOutSet(std::uint64_t first_seed, int count, const EnvConfig& env);

    PolicyEvaluation evaluate(const ToyPolicy& policy) const;
    std::span<const TaskSample> tasks() const { return tasks_; }

private:
    struct Outcome {
        bool correct;
        double r_img;
        double r_obj;
        double total;
    };
    int grid_size_;
    std::vector<TaskSample> tasks_;
    std::vector<TaskFeatures> features_;
    std::vector<std::vector<Outcome>> outcomes_;  // per task, image-major actions
};

// Seed of the task drawn at `iteration`; disjoint from held-out seeds, which
// stay below 2^63.
std::uint64_t training_task_seed(std::uint64_t run_seed, int iteration);

using IterationObserver = std::function<void(const IterationMetrics&)>;

// Sequential GRPO training. Identical inputs give bit-identical reports.
TrainingReport train_loop(const GrpoConfig& config, const EnvConfig& env, const TrainOptions& options = {},
                          const IterationObserver& observer = {});

}  // namespace mirg
