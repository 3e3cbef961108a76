#include "mirg/json_io.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace mirg {

namespace {

int positive_int(const json& j, const char* key) {
    const json& v = j.at(key);
    if (!v.is_number_integer()) throw std::invalid_argument(std::string(key) + " must be an integer");
    return v.get<int>();
}

bool blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

json segment_to_json(const Segment& segment) {
    if (const auto* text = std::get_if<std::string>(&segment)) return json{{"text", *text}};
    const auto& mention = std::get<ObjectMention>(segment);
    if (const auto* full = std::get_if<GroundedObject>(&mention)) return json{{"full_mention", *full}};
    const PositionId id = std::get<BackReference>(mention).target;
    return json{{"back_reference", {{"image_index", id.image_index}, {"object_index", id.object_index}}}};
}

}  // namespace

void to_json(json& j, const BoundingBox& b) { j = json::array({b.x1, b.y1, b.x2, b.y2}); }

void from_json(const json& j, BoundingBox& b) {
    if (!j.is_array() || j.size() != 4) throw std::invalid_argument("box must be an array [x1,y1,x2,y2]");
    for (const auto& v : j) {
        if (!v.is_number()) throw std::invalid_argument("box coordinates must be numbers");
    }
    b = BoundingBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (!b.valid()) throw std::invalid_argument("box must be finite, non-negative and ordered");
}

void to_json(json& j, const GroundedObject& o) {
    j = json{{"image_index", o.position.image_index},
             {"object_index", o.position.object_index},
             {"description", o.description},
             {"box", o.box}};
}

void from_json(const json& j, GroundedObject& o) {
    o.position.image_index = positive_int(j, "image_index");
    o.position.object_index = positive_int(j, "object_index");
    o.description = j.at("description").get<std::string>();
    o.box = j.at("box").get<BoundingBox>();
}

void to_json(json& j, const GroundTruth& gt) { j = json{{"image_count", gt.image_count}, {"objects", gt.objects}}; }

void from_json(const json& j, GroundTruth& gt) {
    gt.image_count = positive_int(j, "image_count");
    gt.objects = j.at("objects").get<std::vector<GroundedObject>>();
    gt.validate();
}

void to_json(json& j, const RewardBreakdown& r) {
    j = json{{"r_fmt", r.format}, {"r_img", r.image}, {"r_obj", r.object}, {"total", r.total}};
}

void to_json(json& j, const MatchResult& m) {
    json pairs = json::array();
    for (const auto& p : m.pairs) pairs.push_back({{"gt_index", p.gt_index}, {"pred_index", p.pred_index}, {"iou", p.iou}});
    j = json{{"pairs", pairs}, {"unmatched_gt", m.unmatched_gt}, {"unmatched_pred", m.unmatched_pred}};
}

void to_json(json& j, const EvalReport& r) {
    json per_task = json::object();
    for (const auto& [kind, t] : r.per_task) {
        per_task[kind] = {{"count", t.count}, {"correct", t.correct}, {"accuracy", t.accuracy()}};
    }
    j = json{{"per_task", per_task},
             {"average", r.average},
             {"total_samples", r.total_samples},
             {"total_correct", r.total_correct}};
}

void from_json(const json& j, EvalSample& s) {
    s.sample_id = j.at("sample_id").get<std::string>();
    s.task_kind = j.at("task_kind").get<std::string>();
    s.prediction = j.at("prediction").get<std::string>();
    s.ground_truth = j.at("ground_truth").get<GroundTruth>();
}

void to_json(json& j, const EvalSample& s) {
    j = json{{"sample_id", s.sample_id},
             {"task_kind", s.task_kind},
             {"prediction", s.prediction},
             {"ground_truth", s.ground_truth}};
}

void to_json(json& j, const IterationMetrics& m) {
    j = json{{"iteration", m.iteration}, {"mean_reward", m.mean_reward}, {"mean_r_img", m.mean_r_img},
             {"mean_r_obj", m.mean_r_obj}, {"kl", m.kl},                   {"objective", m.objective}};
}

void to_json(json& j, const PolicyEvaluation& e) {
    j = json{{"accuracy", e.accuracy},
             {"mean_r_img", e.mean_r_img},
             {"mean_r_obj", e.mean_r_obj},
             {"mean_reward", e.mean_reward}};
}

void to_json(json& j, const GrpoConfig& c) {
    j = json{{"group_size", c.group_size}, {"kl_coefficient", c.kl_coefficient}, {"std_epsilon", c.std_epsilon},
             {"learning_rate", c.learning_rate}, {"iterations", c.iterations}, {"seed", c.seed}};
}

void to_json(json& j, const EnvConfig& c) {
    j = json{{"min_images", c.min_images},   {"max_images", c.max_images},     {"objects_per_image", c.objects_per_image},
             {"grid_size", c.grid_size},     {"image_width", c.image_width},   {"image_height", c.image_height},
             {"max_retries", c.max_retries}};
}

json trajectory_to_json(const Trajectory& t) {
    json think = json::array();
    json answer = json::array();
    for (const auto& s : t.think.segments) think.push_back(segment_to_json(s));
    for (const auto& s : t.answer.segments) answer.push_back(segment_to_json(s));
    json spans = json::array();
    for (const auto& m : t.mentions()) {
        const PositionId id = mention_id(m.mention);
        spans.push_back({{"block", m.block == BlockKind::Think ? "think" : "answer"},
                         {"begin", m.begin},
                         {"end", m.end},
                         {"kind", is_full_mention(m.mention) ? "full" : "back_reference"},
                         {"bbox_id", std::to_string(id.image_index) + "-" + std::to_string(id.object_index)}});
    }
    return json{{"think", think}, {"answer", answer}, {"mentions", spans}};
}

std::vector<EvalSample> read_eval_samples(std::istream& in) {
    std::vector<EvalSample> samples;
    std::set<std::string> ids;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (blank(line)) continue;
        EvalSample s;
        try {
            s = json::parse(line).get<EvalSample>();
        } catch (const std::exception& e) {
            throw JsonlError(number, e.what());
        }
        if (!ids.insert(s.sample_id).second) throw JsonlError(number, "duplicate sample_id " + s.sample_id);
        samples.push_back(std::move(s));
    }
    return samples;
}

json task_to_eval_json(const TaskSample& task, const std::string& sample_id, const std::string& prediction) {
    return json{{"sample_id", sample_id},
                {"task_kind", std::string(to_string(task.task_kind))},
                {"prediction", prediction},
                {"ground_truth", task.ground_truth}};
}

}  // namespace mirg
