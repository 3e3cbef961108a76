#include "mirg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <thread>
#include <unordered_map>
#include <variant>

namespace mirg {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool blank(const std::string& line) { return trim(line).empty(); }

bool has_ref_tag(std::string_view s) {
    return s.find(kRefOpen) != std::string_view::npos || s.find(kRefClose) != std::string_view::npos;
}

[[noreturn]] void fail(PipelineErrorKind kind, const std::string& detail) { throw PipelineError(kind, detail); }

std::string fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xf];
    return out;
}

std::string with_payload(std::string_view instructions, const json& payload) {
    std::string out(instructions);
    out += "\n\n";
    out += kPayloadMarker;
    out += "\n";
    out += payload.dump();
    return out;
}

// A block's text split into plain runs and <ref> mentions.
struct RefPiece {
    std::string text;
    bool mention = false;
};

std::vector<RefPiece> split_refs(std::string_view text) {
    std::vector<RefPiece> pieces;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t open = text.find(kRefOpen, pos);
        const std::size_t stray = text.find(kRefClose, pos);
        if (stray < open) fail(PipelineErrorKind::MalformedResponse, "unmatched </ref>");
        if (open == std::string_view::npos) {
            pieces.push_back({std::string(text.substr(pos)), false});
            break;
        }
        if (open > pos) pieces.push_back({std::string(text.substr(pos, open - pos)), false});
        const std::size_t body = open + kRefOpen.size();
        const std::size_t close = text.find(kRefClose, body);
        if (close == std::string_view::npos) fail(PipelineErrorKind::MalformedResponse, "unclosed <ref>");
        const std::string_view inner = text.substr(body, close - body);
        if (inner.find(kRefOpen) != std::string_view::npos) fail(PipelineErrorKind::MalformedResponse, "nested <ref>");
        const std::string_view label = trim(inner);
        if (label.empty()) fail(PipelineErrorKind::MalformedResponse, "empty <ref> mention");
        pieces.push_back({std::string(label), true});
        pos = close + kRefClose.size();
    }
    return pieces;
}

std::string block_text(const Block& b) { return b.render(); }

Trajectory parse_cot(std::string_view cot_text) {
    try {
        return parse_trajectory(cot_text);
    } catch (const ParseError& e) {
        if (e.kind() == ParseErrorKind::MissingEnvelope) fail(PipelineErrorKind::EnvelopeMissing, e.what());
        fail(PipelineErrorKind::MalformedResponse, e.what());
    }
}

std::string call(AnnotatorClient& client, const std::string& prompt, const RawSample& raw) {
    std::vector<std::string> attachments;
    attachments.reserve(raw.images.size());
    for (const auto& img : raw.images) attachments.push_back(img.ref);
    try {
        return client.complete(prompt, attachments);
    } catch (const ClientError& e) {
        fail(PipelineErrorKind::ClientError, e.what());
    }
}

bool inside(const BoundingBox& b, const ImageRef& img) { return b.valid() && b.x2 <= img.width && b.y2 <= img.height; }

json raw_payload(const RawSample& raw, int stage) {
    json j = raw;
    j["stage"] = stage;
    return j;
}

}  // namespace

std::string_view to_string(PipelineErrorKind kind) {
    switch (kind) {
        case PipelineErrorKind::InvalidSample: return "InvalidSample";
        case PipelineErrorKind::ClientError: return "ClientError";
        case PipelineErrorKind::EnvelopeMissing: return "EnvelopeMissing";
        case PipelineErrorKind::MalformedResponse: return "MalformedResponse";
        case PipelineErrorKind::UnresolvedMention: return "UnresolvedMention";
        case PipelineErrorKind::OutOfRangeIndex: return "OutOfRangeIndex";
        case PipelineErrorKind::ValidationFailed: return "ValidationFailed";
    }
    return "Unknown";
}

PipelineError::PipelineError(PipelineErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

void to_json(json& j, const ImageRef& r) { j = json{{"ref", r.ref}, {"width", r.width}, {"height", r.height}}; }

void from_json(const json& j, ImageRef& r) {
    r.ref = j.at("ref").get<std::string>();
    r.width = j.at("width").get<double>();
    r.height = j.at("height").get<double>();
}

void to_json(json& j, const RawSample& s) {
    j = json{{"sample_id", s.sample_id}, {"images", s.images}, {"query", s.query}, {"gold_objects", s.gold_objects}};
}

void from_json(const json& j, RawSample& s) {
    s.sample_id = j.at("sample_id").get<std::string>();
    s.images = j.at("images").get<std::vector<ImageRef>>();
    s.query = j.at("query").get<std::string>();
    s.gold_objects = j.at("gold_objects").get<std::vector<GroundedObject>>();
}

void to_json(json& j, const MentionMapping& m) {
    j = json{{"mention", m.mention}, {"image_index", m.image_index}, {"box", m.box}};
}

void from_json(const json& j, MentionMapping& m) {
    m.mention = j.at("mention").get<std::string>();
    m.image_index = j.at("image_index").get<int>();
    m.box = j.at("box").get<BoundingBox>();
}

void to_json(json& j, const FinalSample& s) {
    j = s.raw;
    j["trajectory"] = serialize_trajectory(s.trajectory);
}

void to_json(json& j, const PipelineReport& r) {
    json by_stage = json::object();
    for (std::size_t s = 0; s < r.rejected_by_stage.size(); ++s) {
        if (r.rejected_by_stage[s] > 0) by_stage[std::to_string(s)] = r.rejected_by_stage[s];
    }
    j = json{{"input", r.input},
             {"emitted", r.emitted},
             {"rejected", r.rejected},
             {"rejected_by_stage", by_stage},
             {"revalidation_failures", r.revalidation_failures}};
}

void validate_raw_sample(const RawSample& raw) {
    const auto bad = [](const std::string& why) { fail(PipelineErrorKind::InvalidSample, why); };
    if (trim(raw.sample_id).empty()) bad("empty sample_id");
    if (raw.images.empty()) bad("no images");
    for (const auto& img : raw.images) {
        if (!(img.width > 0.0) || !(img.height > 0.0) || !std::isfinite(img.width) || !std::isfinite(img.height)) bad("image " + img.ref + " has non-positive size");
    }
    if (contains_reserved_token(raw.query) || has_ref_tag(raw.query)) bad("query contains reserved tokens");
    for (const auto& g : raw.gold_objects) {
        const int n = g.position.image_index;
        if (n < 1 || n > static_cast<int>(raw.images.size())) {
            bad("gold object references image " + std::to_string(n) + " of " + std::to_string(raw.images.size()));
        }
        if (g.position.object_index < 1) bad("gold object index must be positive");
        if (!g.box.valid()) bad("gold box is not a valid box");
        if (trim(g.description).empty()) bad("gold object has empty description");
        if (contains_reserved_token(g.description) || has_ref_tag(g.description)) {
            bad("description contains reserved tokens");
        }
    }
}

std::vector<std::string> ref_mentions(std::string_view cot_text) {
    const Trajectory t = parse_cot(cot_text);
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const Block* b : {&t.think, &t.answer}) {
        for (auto& piece : split_refs(block_text(*b))) {
            if (piece.mention && seen.insert(piece.text).second) out.push_back(std::move(piece.text));
        }
    }
    return out;
}

std::vector<std::string> mention_labels(const RawSample& raw) {
    std::vector<std::string> labels;
    for (const auto& g : raw.gold_objects) labels.emplace_back(trim(g.description));
    const auto counts = [&] {
        std::map<std::string, int> c;
        for (const auto& l : labels) ++c[l];
        return c;
    };
    auto c = counts();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (c[labels[i]] > 1) labels[i] += " in Image-" + std::to_string(raw.gold_objects[i].position.image_index);
    }
    c = counts();
    std::map<std::string, int> ordinal;
    for (auto& l : labels) {
        if (c[l] > 1) l += " #" + std::to_string(++ordinal[l]);
    }
    return labels;
}

std::string template_cot(const RawSample& raw) {
    const auto labels = mention_labels(raw);
    std::string think = "The question asks: " + std::string(trim(raw.query)) + " There are " +
                        std::to_string(raw.images.size()) + " images to compare.";
    std::string answer;
    if (labels.empty()) {
        think += " None of the images holds a matching object.";
        answer = "No object matches the question.";
    } else {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            think += " In Image-" + std::to_string(raw.gold_objects[i].position.image_index) + " I find " +
                     std::string(kRefOpen) + labels[i] + std::string(kRefClose) + ".";
        }
        think += " Checking again, " + std::string(kRefOpen) + labels.front() + std::string(kRefClose) +
                 " fits the question.";
        answer = "The answer is ";
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (i > 0) answer += " and ";
            answer += std::string(kRefOpen) + labels[i] + std::string(kRefClose);
        }
        answer += ".";
    }
    return std::string(tokens::kThinkOpen) + think + std::string(tokens::kThinkClose) +
           std::string(tokens::kAnswerOpen) + answer + std::string(tokens::kAnswerClose);
}

std::string stage1_prompt(const RawSample& raw) {
    return with_payload(
        "Reason step by step about the question over the attached images, using the gold objects as the answer. "
        "Write the reasoning inside <think></think> and the final answer inside <answer></answer>. Mark every "
        "object you mention as <ref>description</ref>, reusing the same description for the same object.",
        raw_payload(raw, 1));
}

std::string stage2_prompt(const CotSample& cot) {
    json payload = raw_payload(cot.raw, 2);
    payload["cot_text"] = cot.cot_text;
    payload["mentions"] = ref_mentions(cot.cot_text);
    return with_payload(
        "For each marked object mention in the reasoning, give the 1-based index of the image it appears in and "
        "its bounding box. Reply with JSON: {\"mentions\": [{\"mention\", \"image_index\", \"box\": [x1,y1,x2,y2]}]}.",
        payload);
}

std::string stage3_prompt(const MappedSample& mapped) {
    json payload = raw_payload(mapped.cot.raw, 3);
    payload["cot_text"] = mapped.cot.cot_text;
    payload["mappings"] = mapped.mappings;
    return with_payload(
        "Rewrite the reasoning so that the first mention of each object becomes <bbox_id>[N-M]</bbox_id>"
        "<|object_ref_start|>description<|object_ref_end|><|box_start|>(x1,y1),(x2,y2)<|box_end|>, where N is the "
        "image index and M numbers objects within that image in order of first mention. Later mentions are the "
        "bare <bbox_id>[N-M]</bbox_id>. Keep the think/answer envelope.",
        payload);
}

Trajectory reassemble_trajectory(std::string_view cot_text, const std::vector<MentionMapping>& mappings) {
    const Trajectory cot = parse_cot(cot_text);
    std::unordered_map<std::string, const MentionMapping*> by_label;
    for (const auto& m : mappings) {
        if (!by_label.emplace(m.mention, &m).second) fail(PipelineErrorKind::MalformedResponse, "duplicate mapping");
    }
    std::map<std::string, PositionId> assigned;
    std::map<int, int> per_image;
    Trajectory out;
    const auto rewrite = [&](const Block& in, Block& dst) {
        for (const auto& piece : split_refs(block_text(in))) {
            if (!piece.mention) {
                dst.append_text(piece.text);
                continue;
            }
            if (const auto it = assigned.find(piece.text); it != assigned.end()) {
                dst.append(BackReference{it->second});
                continue;
            }
            const auto m = by_label.find(piece.text);
            if (m == by_label.end()) fail(PipelineErrorKind::UnresolvedMention, "no mapping for '" + piece.text + "'");
            const PositionId id{m->second->image_index, ++per_image[m->second->image_index]};
            assigned.emplace(piece.text, id);
            dst.append(GroundedObject{id, piece.text, m->second->box});
        }
    };
    rewrite(cot.think, out.think);
    rewrite(cot.answer, out.answer);
    return out;
}

BoundingBox clamp_box(const BoundingBox& box, const ImageRef& image) {
    // + 0.0 folds a clamped -0.0 to +0.0 so the box serializes as a plain number.
    const auto cx = [&](double v) { return std::clamp(v, 0.0, image.width) + 0.0; };
    const auto cy = [&](double v) { return std::clamp(v, 0.0, image.height) + 0.0; };
    return BoundingBox{cx(box.x1), cy(box.y1), cx(box.x2), cy(box.y2)};
}

CotSample stage1_generate_cot(const RawSample& raw, AnnotatorClient& client, const PipelineConfig& config) {
    validate_raw_sample(raw);
    if (config.skip_stage1) return CotSample{raw, template_cot(raw)};
    std::string text = call(client, stage1_prompt(raw), raw);
    if (!try_parse_trajectory(text)) {
        try {
            parse_trajectory(text);
        } catch (const ParseError& e) {
            if (e.kind() != ParseErrorKind::MissingEnvelope) fail(PipelineErrorKind::MalformedResponse, e.what());
            if (config.strict_envelope) fail(PipelineErrorKind::EnvelopeMissing, e.what());
        }
        const std::string_view body = trim(text);
        if (contains_reserved_token(body)) fail(PipelineErrorKind::MalformedResponse, "reserved tokens outside envelope");
        std::string answer;
        for (const auto& piece : split_refs(body)) {
            if (!piece.mention) continue;
            if (!answer.empty()) answer += ", ";
            answer += std::string(kRefOpen) + piece.text + std::string(kRefClose);
        }
        text = std::string(tokens::kThinkOpen) + std::string(body) + std::string(tokens::kThinkClose) +
               std::string(tokens::kAnswerOpen) + answer + std::string(tokens::kAnswerClose);
    }
    ref_mentions(text);
    return CotSample{raw, std::move(text)};
}

MappedSample stage2_map_objects(const CotSample& cot, AnnotatorClient& client) {
    const auto wanted = ref_mentions(cot.cot_text);
    const std::string reply = call(client, stage2_prompt(cot), cot.raw);
    json j;
    try {
        j = json::parse(reply);
    } catch (const json::exception& e) {
        fail(PipelineErrorKind::MalformedResponse, std::string("stage 2 reply is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("mentions") || !j["mentions"].is_array()) {
        fail(PipelineErrorKind::MalformedResponse, "stage 2 reply lacks a mentions array");
    }
    const std::set<std::string> wanted_set(wanted.begin(), wanted.end());
    std::map<std::string, MentionMapping> got;
    const int image_count = static_cast<int>(cot.raw.images.size());
    for (const auto& e : j["mentions"]) {
        MentionMapping m;
        try {
            m.mention = std::string(trim(e.at("mention").get<std::string>()));
            const json& idx = e.at("image_index");
            if (!idx.is_number_integer()) throw std::invalid_argument("image_index must be an integer");
            m.image_index = idx.get<int>();
            const json& b = e.at("box");
            if (!b.is_array() || b.size() != 4) throw std::invalid_argument("box must have four numbers");
            m.box = BoundingBox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        } catch (const std::exception& ex) {
            fail(PipelineErrorKind::MalformedResponse, ex.what());
        }
        if (!wanted_set.contains(m.mention)) fail(PipelineErrorKind::MalformedResponse, "unknown mention '" + m.mention + "'");
        if (m.image_index < 1 || m.image_index > image_count) {
            fail(PipelineErrorKind::OutOfRangeIndex, "image_index " + std::to_string(m.image_index) + " for " +
                                                         std::to_string(image_count) + " images");
        }
        const BoundingBox& b = m.box;
        if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) || !std::isfinite(b.y2) ||
            b.x1 > b.x2 || b.y1 > b.y2) {
            fail(PipelineErrorKind::MalformedResponse, "box for '" + m.mention + "' is not ordered");
        }
        m.box = clamp_box(b, cot.raw.images[static_cast<std::size_t>(m.image_index - 1)]);
        if (!(m.box.area() > 0.0)) fail(PipelineErrorKind::MalformedResponse, "box for '" + m.mention + "' lies outside its image");
        if (!got.emplace(m.mention, m).second) fail(PipelineErrorKind::MalformedResponse, "mention mapped twice");
    }
    MappedSample out{cot, {}};
    for (const auto& w : wanted) {
        const auto it = got.find(w);
        if (it == got.end()) fail(PipelineErrorKind::UnresolvedMention, "no mapping for '" + w + "'");
        out.mappings.push_back(it->second);
    }
    return out;
}

void validate_final_trajectory(const Trajectory& t, const MappedSample& mapped) {
    const auto bad = [](const std::string& why) { fail(PipelineErrorKind::ValidationFailed, why); };
    try {
        validate_trajectory(t);
    } catch (const InvariantViolation& e) {
        bad(e.what());
    }
    std::map<std::string, const MentionMapping*> by_label;
    for (const auto& m : mapped.mappings) by_label.emplace(m.mention, &m);
    std::set<std::string> used;
    std::map<int, int> per_image;
    const auto& images = mapped.cot.raw.images;
    for (const auto& span : t.mentions()) {
        const auto* full = std::get_if<GroundedObject>(&span.mention);
        if (!full) continue;
        const int n = full->position.image_index;
        if (n < 1 || n > static_cast<int>(images.size())) bad("mention refers to missing image " + std::to_string(n));
        if (full->position.object_index != ++per_image[n]) {
            bad("object numbers in image " + std::to_string(n) + " are not in first-mention order");
        }
        if (!inside(full->box, images[static_cast<std::size_t>(n - 1)])) bad("box outside image " + std::to_string(n));
        const std::string label(trim(full->description));
        const auto it = by_label.find(label);
        if (it == by_label.end()) bad("unmapped object '" + label + "'");
        if (it->second->image_index != n || !(it->second->box == full->box)) bad("object '" + label + "' disagrees with its mapping");
        if (!used.insert(label).second) bad("object '" + label + "' introduced twice");
    }
    if (used.size() != mapped.mappings.size()) bad("trajectory omits mapped objects");
}

FinalSample stage3_reassemble(const MappedSample& mapped, AnnotatorClient& client) {
    const std::string reply = call(client, stage3_prompt(mapped), mapped.cot.raw);
    Trajectory t;
    try {
        t = parse_trajectory(reply);
    } catch (const ParseError& e) {
        fail(PipelineErrorKind::ValidationFailed, std::string(to_string(e.kind())) + " at byte " +
                                                      std::to_string(e.offset()));
    }
    validate_final_trajectory(t, mapped);
    return FinalSample{mapped.cot.raw, std::move(t)};
}

namespace {

struct Reject {
    std::string sample_id;
    int stage = 0;
    std::string error;
};

struct Work {
    RawSample raw;
    std::string digest;
    std::optional<std::string> cached_cot;
    std::optional<std::vector<MentionMapping>> cached_mappings;

    std::optional<CotSample> cot;
    std::optional<MappedSample> mapped;
    std::variant<std::monostate, std::string, Reject> result;
};

using Checkpoint = std::map<std::pair<std::string, std::string>, json>;

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Checkpoint cp;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (blank(line)) continue;
        try {
            json j = json::parse(line);
            auto key = std::pair{j.at("sample_id").get<std::string>(), j.at("digest").get<std::string>()};
            cp[std::move(key)] = std::move(j);
        } catch (const json::exception&) {
            // A torn last line from an interrupted run; that sample is redone.
        }
    }
    return cp;
}

void process(Work& w, const StageClients& clients, const PipelineConfig& config) {
    int stage = 1;
    try {
        if (w.cached_cot) {
            w.cot = CotSample{w.raw, *w.cached_cot};
        } else {
            w.cot = stage1_generate_cot(w.raw, *clients.stage1, config);
        }
        stage = 2;
        if (w.cached_mappings) {
            w.mapped = MappedSample{*w.cot, *w.cached_mappings};
        } else {
            w.mapped = stage2_map_objects(*w.cot, *clients.stage2);
        }
        stage = 3;
        const FinalSample final_sample = stage3_reassemble(*w.mapped, *clients.stage3);
        w.result = json(final_sample).dump();
    } catch (const PipelineError& e) {
        w.result = Reject{w.raw.sample_id, stage, e.what()};
    } catch (const std::exception& e) {
        w.result = Reject{w.raw.sample_id, stage, std::string("ClientError: ") + e.what()};
    }
}

std::size_t revalidate(const std::filesystem::path& output_path) {
    std::ifstream in(output_path);
    if (!in) throw std::runtime_error("cannot reopen " + output_path.string());
    std::size_t failures = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (blank(line)) continue;
        try {
            const json j = json::parse(line);
            const RawSample raw = j.get<RawSample>();
            const Trajectory t = parse_trajectory(j.at("trajectory").get<std::string>());
            for (const auto& span : t.mentions()) {
                const auto* full = std::get_if<GroundedObject>(&span.mention);
                if (!full) continue;
                const auto n = static_cast<std::size_t>(full->position.image_index);
                if (n < 1 || n > raw.images.size() || !inside(full->box, raw.images[n - 1])) {
                    throw std::runtime_error("box outside image");
                }
            }
        } catch (const std::exception&) {
            ++failures;
        }
    }
    return failures;
}

}  // namespace

PipelineReport run_pipeline(const std::filesystem::path& input_path, const std::filesystem::path& output_path,
                            const std::filesystem::path& rejects_path, const StageClients& clients,
                            const PipelineConfig& config) {
    if (config.max_in_flight < 1) throw std::invalid_argument("max_in_flight must be at least 1");
    if (!clients.stage2 || !clients.stage3 || (!clients.stage1 && !config.skip_stage1)) {
        throw std::invalid_argument("a client is required for every stage that runs");
    }
    std::ifstream in(input_path);
    if (!in) throw std::runtime_error("cannot open " + input_path.string());

    PipelineReport report;
    std::vector<Reject> load_rejects;
    std::vector<Work> work;
    std::vector<std::variant<std::size_t, std::size_t>> order;  // index into work or into load_rejects
    std::set<std::string> ids;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (blank(line)) continue;
        ++report.input;
        std::string id = "line " + std::to_string(number);
        try {
            const json j = json::parse(line);
            if (j.is_object() && j.contains("sample_id") && j["sample_id"].is_string()) id = j["sample_id"].get<std::string>();
            RawSample raw = j.get<RawSample>();
            validate_raw_sample(raw);
            if (!ids.insert(raw.sample_id).second) fail(PipelineErrorKind::InvalidSample, "duplicate sample_id");
            Work w;
            w.digest = fnv1a(json(raw).dump());
            w.raw = std::move(raw);
            order.emplace_back(std::in_place_index<0>, work.size());
            work.push_back(std::move(w));
        } catch (const std::exception& e) {
            std::string msg = e.what();
            if (!dynamic_cast<const PipelineError*>(&e)) msg = "InvalidSample: line " + std::to_string(number) + ": " + msg;
            order.emplace_back(std::in_place_index<1>, load_rejects.size());
            load_rejects.push_back({id, 0, msg});
        }
    }

    std::filesystem::path cp1, cp2;
    if (config.checkpoint_dir) {
        std::filesystem::create_directories(*config.checkpoint_dir);
        cp1 = *config.checkpoint_dir / "stage1.jsonl";
        cp2 = *config.checkpoint_dir / "stage2.jsonl";
        const Checkpoint c1 = load_checkpoint(cp1);
        const Checkpoint c2 = load_checkpoint(cp2);
        for (auto& w : work) {
            if (config.skip_stage1) continue;
            const auto hit1 = c1.find({w.raw.sample_id, w.digest});
            if (hit1 == c1.end()) continue;
            try {
                w.cached_cot = hit1->second.at("cot_text").get<std::string>();
                const auto hit2 = c2.find({w.raw.sample_id, fnv1a(w.digest + *w.cached_cot)});
                if (hit2 != c2.end()) w.cached_mappings = hit2->second.at("mappings").get<std::vector<MentionMapping>>();
            } catch (const std::exception&) {
                w.cached_cot.reset();
                w.cached_mappings.reset();
            }
        }
    }

    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < work.size(); i = next++) process(work[i], clients, config);
    };
    {
        const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(config.max_in_flight), work.size());
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
    }

    std::ofstream out(output_path, std::ios::trunc);
    std::ofstream rejects(rejects_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + output_path.string());
    if (!rejects) throw std::runtime_error("cannot write " + rejects_path.string());
    const auto write_reject = [&](const Reject& r) {
        rejects << json{{"sample_id", r.sample_id}, {"stage", r.stage}, {"error", r.error}}.dump() << '\n';
        ++report.rejected;
        ++report.rejected_by_stage[static_cast<std::size_t>(r.stage)];
    };
    for (const auto& o : order) {
        if (o.index() == 1) {
            write_reject(load_rejects[std::get<1>(o)]);
            continue;
        }
        const Work& w = work[std::get<0>(o)];
        if (const auto* text = std::get_if<std::string>(&w.result)) {
            out << *text << '\n';
            ++report.emitted;
        } else {
            write_reject(std::get<Reject>(w.result));
        }
    }
    out.close();
    rejects.close();
    if (!out || !rejects) throw std::runtime_error("write failed");

    if (config.checkpoint_dir && !config.skip_stage1) {
        std::ofstream s1(cp1, std::ios::trunc);
        std::ofstream s2(cp2, std::ios::trunc);
        for (const auto& w : work) {
            if (!w.cot) continue;
            s1 << json{{"sample_id", w.raw.sample_id}, {"digest", w.digest}, {"cot_text", w.cot->cot_text}}.dump() << '\n';
            if (!w.mapped) continue;
            s2 << json{{"sample_id", w.raw.sample_id},
                       {"digest", fnv1a(w.digest + w.cot->cot_text)},
                       {"mappings", w.mapped->mappings}}
                      .dump()
               << '\n';
        }
    }

    report.revalidation_failures = revalidate(output_path);
    return report;
}

}  // namespace mirg
