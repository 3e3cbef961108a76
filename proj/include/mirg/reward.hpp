#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "mirg/trajectory.hpp"

namespace mirg {

struct GroundTruth {
    std::vector<GroundedObject> objects;
    int image_count = 1;

    // Throws std::invalid_argument: empty, image index out of range,
    // duplicate position ids or invalid boxes.
    void validate() const;
};

struct MatchPair {
    std::size_t gt_index;
    std::size_t pred_index;
    double iou;
};

struct MatchResult {
    std::vector<MatchPair> pairs;
    std::vector<std::size_t> unmatched_gt;
    std::vector<std::size_t> unmatched_pred;
};

struct RewardBreakdown {
    double format = 0.0;  // r_fmt in {0, 1}
    double image = 0.0;   // r_img in [0, 1]
    double object = 0.0;  // r_obj in [0, 1]
    double total = 0.0;   // format + image + object
};

double iou(const BoundingBox& a, const BoundingBox& b);

int format_reward(std::string_view text);

// Compares image indices only; object indices are ignored.
int image_reward_single(PositionId predicted, PositionId truth);

// One-to-one matching that maximizes total IoU. Boxes from different images
// never overlap. Pairs with zero IoU are reported as unmatched.
MatchResult match_objects(std::span<const GroundedObject> preds, std::span<const GroundedObject> gts);

// Image-level pairing of the objects `match` left unmatched: within each image,
// leftover gold and predicted objects are paired in index order.
std::vector<MatchPair> match_leftover_images(std::span<const GroundedObject> preds,
                                             std::span<const GroundedObject> gts, const MatchResult& match);

RewardBreakdown score_groundings(std::span<const GroundedObject> preds, const GroundTruth& gt);
RewardBreakdown score_response(std::string_view text, const GroundTruth& gt);

}  // namespace mirg
