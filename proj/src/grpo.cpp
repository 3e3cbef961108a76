#include "mirg/grpo.hpp"

#include <algorithm>
#include <cmath>

namespace mirg {

namespace {

// d log pi(n, c) / d theta for one action.
void add_score_function(const ActionDistribution& dist, const TaskFeatures& f, std::size_t n0, std::size_t c,
                        double scale, std::vector<double>& grad) {
    ImageFeatures mean_image{};
    for (std::size_t m = 0; m < dist.image_count(); ++m) {
        const double p = std::exp(dist.image_logp[m]);
        for (std::size_t k = 0; k < kImageFeatureCount; ++k) mean_image[k] += p * f.image[m][k];
    }
    for (std::size_t k = 0; k < kImageFeatureCount; ++k) grad[k] += scale * (f.image[n0][k] - mean_image[k]);

    CellFeatures mean_cell{};
    for (std::size_t d = 0; d < dist.cells_per_image; ++d) {
        const double p = std::exp(dist.cell(n0, d));
        for (std::size_t k = 0; k < kCellFeatureCount; ++k) mean_cell[k] += p * f.cell_at(n0, d)[k];
    }
    for (std::size_t k = 0; k < kCellFeatureCount; ++k) {
        grad[kImageFeatureCount + k] += scale * (f.cell_at(n0, c)[k] - mean_cell[k]);
    }
}

double log_ratio_term(double logp, double logref) {
    if (std::isinf(logp) && logp < 0) return 0.0;
    if (std::isinf(logref) && logref < 0) {
        throw SupportMismatch("reference assigns zero probability where the policy does not");
    }
    return logp - logref;
}

}  // namespace

void GrpoConfig::validate() const {
    if (group_size < 2) throw std::invalid_argument("grpo: group_size must be at least 2");
    if (!(kl_coefficient >= 0.0) || !std::isfinite(kl_coefficient)) {
        throw std::invalid_argument("grpo: kl_coefficient must be non-negative");
    }
    if (!(std_epsilon > 0.0)) throw std::invalid_argument("grpo: std_epsilon must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("grpo: learning_rate must be positive");
    }
    if (iterations < 0) throw std::invalid_argument("grpo: iterations must be non-negative");
}

double training_reward(const RewardBreakdown& reward, bool use_image_reward) {
    return use_image_reward ? reward.total : reward.format + reward.object;
}

std::vector<double> normalize_advantages(std::span<const double> rewards, double epsilon) {
    const std::size_t n = rewards.size();
    if (n < 2) throw DegenerateGroup("advantage normalization needs at least two rewards");
    if (!std::all_of(rewards.begin(), rewards.end(), [](double r) { return std::isfinite(r); })) {
        throw std::invalid_argument("rewards must be finite");
    }
    std::vector<double> out(n, 0.0);
    if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); })) return out;

    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(n);
    const double denom = std::max(std::sqrt(var), epsilon);
    for (std::size_t i = 0; i < n; ++i) out[i] = (rewards[i] - mean) / denom;
    return out;
}

void assign_advantages(RolloutGroup& group, double epsilon, bool use_image_reward) {
    std::vector<double> rewards;
    rewards.reserve(group.responses.size());
    for (const auto& r : group.responses) rewards.push_back(training_reward(r.reward, use_image_reward));
    group.advantages = normalize_advantages(rewards, epsilon);
}

double importance_ratio(double logp_current, double logp_old) { return std::exp(logp_current - logp_old); }

double kl_divergence(const ActionDistribution& policy, const ActionDistribution& reference) {
    if (policy.image_count() != reference.image_count() || policy.cells_per_image != reference.cells_per_image) {
        throw DimensionMismatch("policy and reference act over different action spaces");
    }
    double kl = 0.0;
    for (std::size_t n = 0; n < policy.image_count(); ++n) {
        const double pn = std::exp(policy.image_logp[n]);
        double inner = 0.0;
        for (std::size_t c = 0; c < policy.cells_per_image; ++c) {
            inner += std::exp(policy.cell(n, c)) * log_ratio_term(policy.cell(n, c), reference.cell(n, c));
        }
        kl += pn * (log_ratio_term(policy.image_logp[n], reference.image_logp[n]) + inner);
    }
    return std::max(kl, 0.0);
}

double kl_divergence(const ToyPolicy& policy, const ToyPolicy& reference, const TaskSample& task) {
    const auto features = extract_features(task, policy.grid_size());
    return kl_divergence(action_distribution(policy, features), action_distribution(reference, features));
}

double grpo_objective(const RolloutGroup& group, double kl, double lambda) {
    const std::size_t n = group.responses.size();
    if (group.advantages.size() != n) throw std::invalid_argument("group advantages are not populated");
    if (n == 0) return -lambda * kl;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = group.responses[i];
        sum += importance_ratio(r.logprob_current, r.logprob_old) * group.advantages[i];
    }
    return sum / static_cast<double>(n) - lambda * kl;
}

double grpo_objective_at(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& reference,
                         const TaskFeatures& features, double lambda) {
    const auto dist = action_distribution(policy, features);
    RolloutGroup current = group;
    for (auto& r : current.responses) r.logprob_current = dist.logprob(r.action.chosen_image, r.action.chosen_cell);
    return grpo_objective(current, kl_divergence(dist, action_distribution(reference, features)), lambda);
}

std::vector<double> grpo_gradient(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& reference,
                                  const TaskFeatures& features, double lambda) {
    const std::size_t n = group.responses.size();
    if (group.advantages.size() != n) throw std::invalid_argument("group advantages are not populated");
    const auto dist = action_distribution(policy, features);
    std::vector<double> grad(ToyPolicy::kParameterCount, 0.0);

    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = group.responses[i];
        if (group.advantages[i] == 0.0) continue;
        const double logp = dist.logprob(r.action.chosen_image, r.action.chosen_cell);
        const double weight = importance_ratio(logp, r.logprob_old) * group.advantages[i] / static_cast<double>(n);
        add_score_function(dist, features, static_cast<std::size_t>(r.action.chosen_image - 1),
                           static_cast<std::size_t>(r.action.chosen_cell), weight, grad);
    }

    if (lambda == 0.0) return grad;

    // KL = sum_n p(n) L_n with L_n = log p(n)/q(n) + K_n and K_n the per-image
    // cell KL. dKL/dz_n = p(n)(L_n - KL); dKL/dy_nc = p(n)p(c|n)(log-ratio - K_n).
    const auto ref = action_distribution(reference, features);
    const std::size_t images = dist.image_count();
    std::vector<double> cell_kl(images, 0.0), total(images, 0.0);
    double kl = 0.0;
    for (std::size_t m = 0; m < images; ++m) {
        for (std::size_t c = 0; c < dist.cells_per_image; ++c) {
            cell_kl[m] += std::exp(dist.cell(m, c)) * log_ratio_term(dist.cell(m, c), ref.cell(m, c));
        }
        total[m] = log_ratio_term(dist.image_logp[m], ref.image_logp[m]) + cell_kl[m];
        kl += std::exp(dist.image_logp[m]) * total[m];
    }
    for (std::size_t m = 0; m < images; ++m) {
        const double pm = std::exp(dist.image_logp[m]);
        const double dz = pm * (total[m] - kl);
        for (std::size_t k = 0; k < kImageFeatureCount; ++k) grad[k] -= lambda * dz * features.image[m][k];
        for (std::size_t c = 0; c < dist.cells_per_image; ++c) {
            const double pc = std::exp(dist.cell(m, c));
            const double dy = pm * pc * (log_ratio_term(dist.cell(m, c), ref.cell(m, c)) - cell_kl[m]);
            const auto& fc = features.cell_at(m, c);
            for (std::size_t k = 0; k < kCellFeatureCount; ++k) grad[kImageFeatureCount + k] -= lambda * dy * fc[k];
        }
    }
    return grad;
}

std::vector<double> grpo_gradient(const RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& reference,
                                  const TaskSample& task, double lambda) {
    return grpo_gradient(group, policy, reference, extract_features(task, policy.grid_size()), lambda);
}

ToyPolicy update_policy(const ToyPolicy& policy, std::span<const double> gradient, double learning_rate) {
    const auto params = policy.parameters();
    if (gradient.size() != params.size()) {
        throw DimensionMismatch("gradient has " + std::to_string(gradient.size()) + " entries, policy has " +
                                std::to_string(params.size()));
    }
    std::vector<double> next(params.begin(), params.end());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += learning_rate * gradient[i];
    return ToyPolicy(policy.grid_size(), std::move(next));
}

}  // namespace mirg
