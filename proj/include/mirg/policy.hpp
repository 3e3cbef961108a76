#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mirg/synthetic_env.hpp"

namespace mirg {

// Image features: [matching objects, matching objects in an admissible image,
//                  near-miss objects, image admissible].
// Cell features:  [best IoU with a matching object, best IoU with a near-miss
//                  object, best IoU with any other object, covered fraction],
//                  IoU terms scaled by kCellIouScale.
inline constexpr std::size_t kImageFeatureCount = 4;
inline constexpr std::size_t kCellFeatureCount = 4;
inline constexpr double kCellIouScale = 4.0;

using ImageFeatures = std::array<double, kImageFeatureCount>;
using CellFeatures = std::array<double, kCellFeatureCount>;

struct TaskFeatures {
    int grid_size = 0;
    std::vector<ImageFeatures> image;  // one row per image
    std::vector<CellFeatures> cell;    // image-major, grid_size^2 rows per image

    std::size_t image_count() const { return image.size(); }
    std::size_t cells_per_image() const { return static_cast<std::size_t>(grid_size) * grid_size; }
    const CellFeatures& cell_at(std::size_t image0, std::size_t c) const {
        return cell[image0 * cells_per_image() + c];
    }
};

TaskFeatures extract_features(const TaskSample& task, int grid_size);

class DimensionMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Two linear-softmax heads: pi(image | query) and pi(cell | image, query).
class ToyPolicy {
public:
    static constexpr std::size_t kParameterCount = kImageFeatureCount + kCellFeatureCount;

    // All-zero weights: uniform over images and cells.
    explicit ToyPolicy(int grid_size = 8);
    ToyPolicy(int grid_size, std::vector<double> parameters);

    int grid_size() const { return grid_size_; }
    std::span<const double> parameters() const { return params_; }
    std::span<const double> image_weights() const { return std::span(params_).first(kImageFeatureCount); }
    std::span<const double> cell_weights() const { return std::span(params_).subspan(kImageFeatureCount); }

    friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;

private:
    int grid_size_;
    std::vector<double> params_;
};

struct ActionDistribution {
    std::size_t cells_per_image = 0;
    std::vector<double> image_logp;  // log pi(n | q), image-0-based
    std::vector<double> cell_logp;   // log pi(c | n, q), image-major

    std::size_t image_count() const { return image_logp.size(); }
    double cell(std::size_t image0, std::size_t c) const { return cell_logp[image0 * cells_per_image + c]; }
    // Joint log-probability; image index is 1-based.
    double logprob(int image_index, int cell_index) const;
};

ActionDistribution action_distribution(const ToyPolicy& policy, const TaskFeatures& features);

double policy_logprob(const ToyPolicy& policy, const TaskSample& task, const ActionRecord& action);

ActionRecord sample_action(const ActionDistribution& dist, const TaskSample& task, int grid_size,
                           std::mt19937_64& rng);
std::pair<ActionRecord, double> policy_sample(const ToyPolicy& policy, const TaskSample& task,
                                              std::mt19937_64& rng);

// log-softmax of `logits`, max-shifted.
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace mirg
