#include "mirg/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mirg {

namespace {

double dot(std::span<const double> w, std::span<const double> x) {
    return std::inner_product(w.begin(), w.end(), x.begin(), 0.0);
}

std::size_t draw(std::span<const double> logp, double u) {
    double acc = 0.0;
    for (std::size_t i = 0; i < logp.size(); ++i) {
        acc += std::exp(logp[i]);
        if (u < acc) return i;
    }
    // Rounding left a sliver of mass past the last bin.
    for (std::size_t i = logp.size(); i-- > 0;) {
        if (std::isfinite(logp[i])) return i;
    }
    return logp.size() - 1;
}

}  // namespace

TaskFeatures extract_features(const TaskSample& task, int grid_size) {
    TaskFeatures f;
    f.grid_size = grid_size;
    const int cells = grid_size * grid_size;
    for (std::size_t n0 = 0; n0 < task.images.size(); ++n0) {
        const int n = static_cast<int>(n0) + 1;
        const SceneImage& image = task.images[n0];
        const bool admissible = image_condition(task, n);
        double full = 0.0;
        double partial = 0.0;
        std::vector<int> kind(image.objects.size(), 2);
        for (std::size_t k = 0; k < image.objects.size(); ++k) {
            if (object_condition(task, n, image.objects[k])) {
                full += 1.0;
                kind[k] = 0;
            } else if (partial_condition(task, n, image.objects[k])) {
                partial += 1.0;
                kind[k] = 1;
            }
        }
        f.image.push_back({full, admissible ? full : 0.0, partial, admissible ? 1.0 : 0.0});

        for (int c = 0; c < cells; ++c) {
            const BoundingBox box = cell_box(image, grid_size, c);
            CellFeatures cf{0.0, 0.0, 0.0, 0.0};
            for (std::size_t k = 0; k < image.objects.size(); ++k) {
                const BoundingBox& ob = image.objects[k].box;
                const auto slot = static_cast<std::size_t>(kind[k]);
                cf[slot] = std::max(cf[slot], kCellIouScale * iou(box, ob));
                const double iw = std::min(box.x2, ob.x2) - std::max(box.x1, ob.x1);
                const double ih = std::min(box.y2, ob.y2) - std::max(box.y1, ob.y1);
                if (iw > 0.0 && ih > 0.0 && box.area() > 0.0) cf[3] = std::max(cf[3], iw * ih / box.area());
            }
            f.cell.push_back(cf);
        }
    }
    return f;
}

ToyPolicy::ToyPolicy(int grid_size) : ToyPolicy(grid_size, std::vector<double>(kParameterCount, 0.0)) {}

ToyPolicy::ToyPolicy(int grid_size, std::vector<double> parameters)
    : grid_size_(grid_size), params_(std::move(parameters)) {
    if (grid_size_ < 1) throw std::invalid_argument("grid_size must be positive");
    if (params_.size() != kParameterCount) {
        throw DimensionMismatch("policy expects " + std::to_string(kParameterCount) + " parameters, got " +
                                std::to_string(params_.size()));
    }
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - peak);
    const double log_norm = peak + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_norm;
    return out;
}

double ActionDistribution::logprob(int image_index, int cell_index) const {
    return image_logp[static_cast<std::size_t>(image_index - 1)] +
           cell(static_cast<std::size_t>(image_index - 1), static_cast<std::size_t>(cell_index));
}

ActionDistribution action_distribution(const ToyPolicy& policy, const TaskFeatures& features) {
    if (features.grid_size != policy.grid_size()) {
        throw DimensionMismatch("features were extracted for a different grid size");
    }
    ActionDistribution d;
    d.cells_per_image = features.cells_per_image();
    std::vector<double> logits(features.image_count());
    for (std::size_t n = 0; n < features.image_count(); ++n) logits[n] = dot(policy.image_weights(), features.image[n]);
    d.image_logp = log_softmax(logits);

    d.cell_logp.reserve(features.cell.size());
    std::vector<double> cell_logits(d.cells_per_image);
    for (std::size_t n = 0; n < features.image_count(); ++n) {
        for (std::size_t c = 0; c < d.cells_per_image; ++c) {
            cell_logits[c] = dot(policy.cell_weights(), features.cell_at(n, c));
        }
        const auto lp = log_softmax(cell_logits);
        d.cell_logp.insert(d.cell_logp.end(), lp.begin(), lp.end());
    }
    return d;
}

double policy_logprob(const ToyPolicy& policy, const TaskSample& task, const ActionRecord& action) {
    validate_action(task, policy.grid_size(), action);
    const auto dist = action_distribution(policy, extract_features(task, policy.grid_size()));
    return dist.logprob(action.chosen_image, action.chosen_cell);
}

ActionRecord sample_action(const ActionDistribution& dist, const TaskSample& task, int grid_size,
                           std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t n0 = draw(dist.image_logp, unit(rng));
    const std::span<const double> cells(dist.cell_logp.data() + n0 * dist.cells_per_image, dist.cells_per_image);
    const std::size_t c = draw(cells, unit(rng));
    return make_action(task, grid_size, static_cast<int>(n0) + 1, static_cast<int>(c));
}

std::pair<ActionRecord, double> policy_sample(const ToyPolicy& policy, const TaskSample& task,
                                              std::mt19937_64& rng) {
    const auto dist = action_distribution(policy, extract_features(task, policy.grid_size()));
    ActionRecord action = sample_action(dist, task, policy.grid_size(), rng);
    return {action, dist.logprob(action.chosen_image, action.chosen_cell)};
}

}  // namespace mirg
