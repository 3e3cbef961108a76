#include "mirg/training.hpp"

#include <cmath>
#include <random>

#include "mirg/evaluation.hpp"

namespace mirg {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t training_task_seed(std::uint64_t run_seed, int iteration) {
    return splitmix64(run_seed ^ splitmix64(static_cast<std::uint64_t>(iteration))) | (1ULL << 63);
}

HeldOutSet::HeldOutSet(std::uint64_t first_seed, int count, const EnvConfig& env) : grid_size_(env.grid_size) {
    const int cells = env.grid_size * env.grid_size;
    for (int i = 0; i < count; ++i) {
        TaskSample task = generate_task(first_seed + static_cast<std::uint64_t>(i), env);
        std::vector<Outcome> table;
        table.reserve(task.images.size() * static_cast<std::size_t>(cells));
        for (int n = 1; n <= static_cast<int>(task.images.size()); ++n) {
            for (int c = 0; c < cells; ++c) {
                const std::string text = render_response(make_action(task, env.grid_size, n, c), task);
                const RewardBreakdown r = score_response(text, task.ground_truth);
                table.push_back({is_correct(text, task.ground_truth), r.image, r.object, r.total});
            }
        }
        features_.push_back(extract_features(task, env.grid_size));
        outcomes_.push_back(std::move(table));
        tasks_.push_back(std::move(task));
    }
}

PolicyEvaluation HeldOutSet::evaluate(const ToyPolicy& policy) const {
    PolicyEvaluation e;
    if (tasks_.empty()) return e;
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
        const auto dist = action_distribution(policy, features_[t]);
        std::size_t a = 0;
        for (std::size_t n = 0; n < dist.image_count(); ++n) {
            const double pn = std::exp(dist.image_logp[n]);
            for (std::size_t c = 0; c < dist.cells_per_image; ++c, ++a) {
                const double p = pn * std::exp(dist.cell(n, c));
                const Outcome& o = outcomes_[t][a];
                if (o.correct) e.accuracy += p;
                e.mean_r_img += p * o.r_img;
                e.mean_r_obj += p * o.r_obj;
                e.mean_reward += p * o.total;
            }
        }
    }
    const double count = static_cast<double>(tasks_.size());
    e.accuracy /= count;
    e.mean_r_img /= count;
    e.mean_r_obj /= count;
    e.mean_reward /= count;
    return e;
}

TrainingReport train_loop(const GrpoConfig& config, const EnvConfig& env, const TrainOptions& options,
                          const IterationObserver& observer) {
    config.validate();
    env.validate();
    if (options.eval_tasks < 0) throw std::invalid_argument("eval_tasks must be non-negative");
    if (options.eval_seed >= (1ULL << 63)) throw std::invalid_argument("eval_seed must be below 2^63");

    const HeldOutSet held_out(options.eval_seed, options.eval_tasks, env);
    const ToyPolicy reference(env.grid_size);
    ToyPolicy policy = reference;
    std::mt19937_64 rng(config.seed);

    TrainingReport report{held_out.evaluate(policy), {}, {}, policy};
    report.iterations.reserve(static_cast<std::size_t>(config.iterations));

    for (int it = 1; it <= config.iterations; ++it) {
        const TaskSample task = generate_task(training_task_seed(config.seed, it), env);
        const TaskFeatures features = extract_features(task, env.grid_size);
        const ActionDistribution dist = action_distribution(policy, features);

        RolloutGroup group;
        group.query_id = std::to_string(task.seed);
        IterationMetrics m;
        m.iteration = it;
        for (int i = 0; i < config.group_size; ++i) {
            Rollout r;
            r.action = sample_action(dist, task, env.grid_size, rng);
            r.text = render_response(r.action, task);
            r.reward = score_response(r.text, task.ground_truth);
            r.logprob_old = dist.logprob(r.action.chosen_image, r.action.chosen_cell);
            r.logprob_current = r.logprob_old;
            m.mean_reward += training_reward(r.reward, options.image_reward);
            m.mean_r_img += r.reward.image;
            m.mean_r_obj += r.reward.object;
            group.responses.push_back(std::move(r));
        }
        const double n = static_cast<double>(config.group_size);
        m.mean_reward /= n;
        m.mean_r_img /= n;
        m.mean_r_obj /= n;

        assign_advantages(group, config.std_epsilon, options.image_reward);
        m.kl = kl_divergence(dist, action_distribution(reference, features));
        m.objective = grpo_objective(group, m.kl, config.kl_coefficient);

        const auto grad = grpo_gradient(group, policy, reference, features, config.kl_coefficient);
        policy = update_policy(policy, grad, config.learning_rate);

        if (observer) observer(m);
        report.iterations.push_back(m);
    }

    report.final = held_out.evaluate(policy);
    report.policy = policy;
    return report;
}

}  // namespace mirg
