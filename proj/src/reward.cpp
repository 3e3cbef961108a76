#include "mirg/reward.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include "mirg/assignment.hpp"

namespace mirg {

void GroundTruth::validate() const {
    if (image_count < 1) throw std::invalid_argument("ground truth needs at least one image");
    if (objects.empty()) throw std::invalid_argument("ground truth has no objects");
    std::set<PositionId> seen;
    for (const auto& obj : objects) {
        if (!obj.position.valid() || obj.position.image_index > image_count) {
            throw std::invalid_argument("ground-truth image index out of range");
        }
        if (!obj.box.valid()) throw std::invalid_argument("ground-truth box is invalid");
        if (!seen.insert(obj.position).second) throw std::invalid_argument("duplicate ground-truth position id");
    }
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

int format_reward(std::string_view text) { return check_format(text) ? 1 : 0; }

int image_reward_single(PositionId predicted, PositionId truth) {
    return predicted.image_index == truth.image_index ? 1 : 0;
}

MatchResult match_objects(std::span<const GroundedObject> preds, std::span<const GroundedObject> gts) {
    WeightMatrix overlap(gts.size(), preds.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
        for (std::size_t p = 0; p < preds.size(); ++p) {
            if (preds[p].position.image_index != gts[g].position.image_index) continue;
            overlap(g, p) = iou(preds[p].box, gts[g].box);
        }
    }
    const auto assignment = max_weight_assignment(overlap);

    MatchResult result;
    std::vector<bool> pred_taken(preds.size(), false);
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const auto p = assignment[g];
        if (p && overlap(g, *p) > 0.0) {
            result.pairs.push_back({g, *p, overlap(g, *p)});
            pred_taken[*p] = true;
        } else {
            result.unmatched_gt.push_back(g);
        }
    }
    for (std::size_t p = 0; p < preds.size(); ++p) {
        if (!pred_taken[p]) result.unmatched_pred.push_back(p);
    }
    return result;
}

std::vector<MatchPair> match_leftover_images(std::span<const GroundedObject> preds,
                                             std::span<const GroundedObject> gts, const MatchResult& match) {
    std::map<int, std::vector<std::size_t>> free_preds;
    for (std::size_t p : match.unmatched_pred) free_preds[preds[p].position.image_index].push_back(p);

    std::map<int, std::size_t> next;
    std::vector<MatchPair> pairs;
    for (std::size_t g : match.unmatched_gt) {
        const int image = gts[g].position.image_index;
        auto it = free_preds.find(image);
        if (it == free_preds.end()) continue;
        std::size_t& cursor = next[image];
        if (cursor < it->second.size()) pairs.push_back({g, it->second[cursor++], 0.0});
    }
    return pairs;
}

RewardBreakdown score_groundings(std::span<const GroundedObject> preds, const GroundTruth& gt) {
    const MatchResult match = match_objects(preds, gt.objects);
    const auto leftovers = match_leftover_images(preds, gt.objects, match);

    double iou_sum = 0.0;
    double image_hits = 0.0;
    for (const auto& pair : match.pairs) {
        iou_sum += pair.iou;
        image_hits += image_reward_single(preds[pair.pred_index].position, gt.objects[pair.gt_index].position);
    }
    for (const auto& pair : leftovers) {
        image_hits += image_reward_single(preds[pair.pred_index].position, gt.objects[pair.gt_index].position);
    }

    const double count = static_cast<double>(gt.objects.size());
    RewardBreakdown r;
    r.format = 1.0;
    r.object = iou_sum / count;
    r.image = image_hits / count;
    r.total = r.format + r.image + r.object;
    return r;
}

RewardBreakdown score_response(std::string_view text, const GroundTruth& gt) {
    const auto parsed = try_parse_trajectory(text);
    if (!parsed) return RewardBreakdown{};
    const auto preds = extract_groundings(*parsed);
    return score_groundings(preds, gt);
}

}  // namespace mirg
