#pragma once

// Random GRPO configurations shared by the unit and acceptance tests.

#include <cmath>
#include <random>
#include <vector>

#include "mirg/grpo.hpp"
#include "mirg/pipeline.hpp"
#include "mirg/policy.hpp"
#include "mirg/synthetic_env.hpp"

namespace support {

struct GradientCase {
    mirg::TaskSample task;
    mirg::TaskFeatures features;
    mirg::ToyPolicy policy;
    mirg::ToyPolicy reference;
    mirg::RolloutGroup group;
    double lambda = 0.0;
};

inline mirg::ToyPolicy random_policy(std::mt19937_64& rng, int grid, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> p(mirg::ToyPolicy::kParameterCount);
    for (double& v : p) v = normal(rng);
    return mirg::ToyPolicy(grid, p);
}

// Group sampled under an old policy that differs from the current one, so
// ratios are not all 1; advantages come from random rewards.
inline GradientCase random_gradient_case(std::mt19937_64& rng, int grid = 4) {
    mirg::EnvConfig env;
    env.grid_size = grid;
    GradientCase c{mirg::generate_task(rng(), env), {}, random_policy(rng, grid, 0.7), random_policy(rng, grid, 0.7), {}, 0.0};
    c.features = mirg::extract_features(c.task, grid);
    c.lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng);

    std::vector<double> old_params(c.policy.parameters().begin(), c.policy.parameters().end());
    std::normal_distribution<double> jitter(0.0, 0.1);
    for (double& v : old_params) v += jitter(rng);
    const mirg::ToyPolicy old_policy(grid, old_params);
    const auto old_dist = mirg::action_distribution(old_policy, c.features);
    const auto cur_dist = mirg::action_distribution(c.policy, c.features);

    const int n = std::uniform_int_distribution<int>(2, 8)(rng);
    std::vector<double> rewards;
    for (int i = 0; i < n; ++i) {
        mirg::Rollout r;
        r.action = mirg::sample_action(old_dist, c.task, grid, rng);
        r.logprob_old = old_dist.logprob(r.action.chosen_image, r.action.chosen_cell);
        r.logprob_current = cur_dist.logprob(r.action.chosen_image, r.action.chosen_cell);
        c.group.responses.push_back(r);
        rewards.push_back(std::uniform_real_distribution<double>(0.0, 3.0)(rng));
    }
    c.group.advantages = mirg::normalize_advantages(rewards, 1e-8);
    return c;
}

// Central differences of grpo_objective_at.
inline std::vector<double> numeric_gradient(const GradientCase& c, double step = 1e-5) {
    std::vector<double> base(c.policy.parameters().begin(), c.policy.parameters().end());
    std::vector<double> g(base.size());
    for (std::size_t k = 0; k < base.size(); ++k) {
        auto plus = base, minus = base;
        plus[k] += step;
        minus[k] -= step;
        const double fp = mirg::grpo_objective_at(c.group, mirg::ToyPolicy(c.policy.grid_size(), plus), c.reference, c.features, c.lambda);
        const double fm = mirg::grpo_objective_at(c.group, mirg::ToyPolicy(c.policy.grid_size(), minus), c.reference, c.features, c.lambda);
        g[k] = (fp - fm) / (2.0 * step);
    }
    return g;
}

// ||a - b|| / max(||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        norm += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(norm), floor);
}

// A RawSample built from a synthetic task: the query target plus up to
// `extra` more scene objects as gold, spread over the images.
inline mirg::RawSample raw_from_task(const mirg::TaskSample& task, const std::string& id, int extra = 2) {
    mirg::RawSample raw;
    raw.sample_id = id;
    raw.query = task.query;
    for (std::size_t i = 0; i < task.images.size(); ++i) {
        raw.images.push_back({"img-" + std::to_string(task.seed) + "-" + std::to_string(i + 1) + ".png",
                              task.images[i].width, task.images[i].height});
    }
    raw.gold_objects = task.ground_truth.objects;
    const auto& first = raw.gold_objects.front().position;
    for (std::size_t i = 0; i < task.images.size() && extra > 0; ++i) {
        const int n = static_cast<int>(i) + 1;
        for (const auto& o : task.images[i].objects) {
            if (extra == 0) break;
            if (mirg::PositionId{n, o.object_index} == first) continue;
            if ((task.seed + static_cast<std::uint64_t>(o.object_index + n)) % 2 != 0) continue;
            raw.gold_objects.push_back({{n, o.object_index},
                                        std::string(mirg::to_string(o.color)) + " " + std::string(mirg::to_string(o.shape)),
                                        o.box});
            --extra;
        }
    }
    return raw;
}

}  // namespace support
