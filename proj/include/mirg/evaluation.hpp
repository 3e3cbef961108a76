#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mirg/reward.hpp"

namespace mirg {

inline constexpr double kAccuracyIouThreshold = 0.5;

struct EvalSample {
    std::string sample_id;
    std::string task_kind;
    std::string prediction;
    GroundTruth ground_truth;
};

struct KindTally {
    std::size_t count = 0;
    std::size_t correct = 0;

    double accuracy() const { return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count); }
    friend bool operator==(const KindTally&, const KindTally&) = default;
};

struct EvalReport {
    std::map<std::string, KindTally> per_task;
    double average = 0.0;  // unweighted mean of per-kind accuracies
    std::size_t total_samples = 0;
    std::size_t total_correct = 0;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

class EmptyInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Correct iff the prediction parses and every gold object is paired with a
// same-image prediction at IoU strictly above 0.5.
bool is_correct(std::string_view prediction, const GroundTruth& gt);

// Commutative, associative per-kind tally.
class EvalAccumulator {
public:
    void add(const EvalSample& sample);
    void add(const std::string& task_kind, bool correct);
    void merge(const EvalAccumulator& other);
    // Throws EmptyInput if nothing was added.
    EvalReport report() const;

private:
    std::map<std::string, KindTally> tallies_;
};

// Throws EmptyInput on an empty span, std::invalid_argument on repeated ids.
EvalReport evaluate(std::span<const EvalSample> samples);

}  // namespace mirg
