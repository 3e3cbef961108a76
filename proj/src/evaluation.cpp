#include "mirg/evaluation.hpp"

#include <set>

namespace mirg {

bool is_correct(std::string_view prediction, const GroundTruth& gt) {
    const auto parsed = try_parse_trajectory(prediction);
    if (!parsed) return false;
    const auto preds = extract_groundings(*parsed);
    const MatchResult match = match_objects(preds, gt.objects);
    if (match.pairs.size() != gt.objects.size()) return false;
    for (const auto& pair : match.pairs) {
        if (!(pair.iou > kAccuracyIouThreshold)) return false;
    }
    return true;
}

void EvalAccumulator::add(const EvalSample& sample) {
    add(sample.task_kind, is_correct(sample.prediction, sample.ground_truth));
}

void EvalAccumulator::add(const std::string& task_kind, bool correct) {
    KindTally& t = tallies_[task_kind];
    ++t.count;
    if (correct) ++t.correct;
}

void EvalAccumulator::merge(const EvalAccumulator& other) {
    for (const auto& [kind, tally] : other.tallies_) {
        KindTally& t = tallies_[kind];
        t.count += tally.count;
        t.correct += tally.correct;
    }
}

EvalReport EvalAccumulator::report() const {
    if (tallies_.empty()) throw EmptyInput("no evaluation samples");
    EvalReport r;
    r.per_task = tallies_;
    double sum = 0.0;
    for (const auto& [kind, tally] : tallies_) {
        sum += tally.accuracy();
        r.total_samples += tally.count;
        r.total_correct += tally.correct;
    }
    r.average = sum / static_cast<double>(tallies_.size());
    return r;
}

EvalReport evaluate(std::span<const EvalSample> samples) {
    if (samples.empty()) throw EmptyInput("no evaluation samples");
    std::set<std::string> ids;
    EvalAccumulator acc;
    for (const auto& s : samples) {
        if (!ids.insert(s.sample_id).second) throw std::invalid_argument("duplicate sample_id: " + s.sample_id);
        acc.add(s);
    }
    return acc.report();
}

}  // namespace mirg
