#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mirg/policy.hpp"
#include "mirg/reward.hpp"
#include "mirg/synthetic_env.hpp"

namespace mirg {

struct GrpoConfig {
    int group_size = 8;
    double kl_coefficient = 0.04;
    double std_epsilon = 1e-8;
    double learning_rate = 0.05;
    int iterations = 300;
    std::uint64_t seed = 7;

    // Throws std::invalid_argument; group_size must be at least 2.
    void validate() const;
};

class DegenerateGroup : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class SupportMismatch : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct Rollout {
    ActionRecord action;
    std::string text;
    RewardBreakdown reward;
    double logprob_old = 0.0;      // fixed when the response was sampled
    double logprob_current = 0.0;  // under the policy being optimized
};

struct RolloutGroup {
    std::string query_id;
    std::vector<Rollout> responses;
    std::vector<double> advantages;  // filled by assign_advantages
};

// Scalar reward fed to the advantage computation. With the image term
// disabled this is r_fmt + r_obj.
double training_reward(const RewardBreakdown& reward, bool use_image_reward);

// (r - mean) / max(std, eps) with the population std. A group of identical
// rewards yields exact zeros.
std::vector<double> normalize_advantages(std::span<const double> rewards, double epsilon);

void assign_advantages(RolloutGroup& group, double epsilon, bool use_image_reward = true);

// exp(logp_current - logp_old).
double importance_ratio(double logp_current, double logp_old);

// Exact KL(policy || reference) over the full action space of one task.
double kl_divergence(const ActionDistribution& policy, const ActionDistribution& reference);
double kl_divergence(const ToyPolicy& policy, const ToyPolicy& reference, const TaskSample& task);

// (1/N) sum_i ratio_i * A_i - lambda * kl, using the stored log-probabilities.
double grpo_objective(const RolloutGroup& group, double kl, double lambda);

// The same objective with current log-probabilities and KL recomputed from
// `policy`; this is the function grpo_gradient differentiates.
double grpo_objective_at(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& reference,
                         const TaskFeatures& features, double lambda);

// Analytic gradient of grpo_objective_at with respect to the policy
// parameters. Advantages and old log-probabilities are constants.
std::vector<double> grpo_gradient(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& reference,
                                  const TaskFeatures& features, double lambda);
std::vector<double> grpo_gradient(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& reference,
                                  const TaskSample& task, double lambda);

// Gradient ascent step: theta + learning_rate * gradient.
ToyPolicy update_policy(const ToyPolicy& policy, std::span<const double> gradient, double learning_rate);

}  // namespace mirg
