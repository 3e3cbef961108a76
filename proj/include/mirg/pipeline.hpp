#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mirg/annotator.hpp"
#include "mirg/json_io.hpp"
#include "mirg/trajectory.hpp"

namespace mirg {

struct ImageRef {
    std::string ref;  // opaque identifier, e.g. a file name
    double width = 0.0;
    double height = 0.0;
};

struct RawSample {
    std::string sample_id;
    std::vector<ImageRef> images;
    std::string query;
    std::vector<GroundedObject> gold_objects;
};

// Stage 1 output: reasoning in the think/answer envelope with objects marked
// as <ref>description</ref>.
struct CotSample {
    RawSample raw;
    std::string cot_text;
};

struct MentionMapping {
    std::string mention;
    int image_index = 1;
    BoundingBox box;
};

struct MappedSample {
    CotSample cot;
    std::vector<MentionMapping> mappings;  // one per distinct mention, first-mention order
};

struct FinalSample {
    RawSample raw;
    Trajectory trajectory;
};

inline constexpr std::string_view kRefOpen = "<ref>";
inline constexpr std::string_view kRefClose = "</ref>";

enum class PipelineErrorKind {
    InvalidSample,
    ClientError,
    EnvelopeMissing,
    MalformedResponse,
    UnresolvedMention,
    OutOfRangeIndex,
    ValidationFailed,
};

std::string_view to_string(PipelineErrorKind kind);

class PipelineError : public std::runtime_error {
public:
    PipelineError(PipelineErrorKind kind, const std::string& detail);
    PipelineErrorKind kind() const { return kind_; }

private:
    PipelineErrorKind kind_;
};

struct PipelineConfig {
    bool strict_envelope = true;  // reject stage-1 text without the envelope instead of wrapping it
    bool skip_stage1 = false;     // answer-only samples: synthesize the CoT from gold objects
    int max_in_flight = 4;
    std::optional<std::filesystem::path> checkpoint_dir;
};

struct StageClients {
    AnnotatorClient* stage1 = nullptr;
    AnnotatorClient* stage2 = nullptr;
    AnnotatorClient* stage3 = nullptr;
};

struct PipelineReport {
    std::size_t input = 0;
    std::size_t emitted = 0;
    std::size_t rejected = 0;
    // Index 0 counts input lines that failed to load; 1..3 the stages.
    std::array<std::size_t, 4> rejected_by_stage{};
    std::size_t revalidation_failures = 0;
};

void to_json(json& j, const ImageRef& r);
void from_json(const json& j, ImageRef& r);
void to_json(json& j, const RawSample& s);
void from_json(const json& j, RawSample& s);
void to_json(json& j, const MentionMapping& m);
void from_json(const json& j, MentionMapping& m);
void to_json(json& j, const FinalSample& s);
void to_json(json& j, const PipelineReport& r);

// Throws PipelineError(InvalidSample).
void validate_raw_sample(const RawSample& raw);

// Distinct <ref> mentions in order of first appearance. Throws
// PipelineError(MalformedResponse) on unbalanced or empty tags.
std::vector<std::string> ref_mentions(std::string_view cot_text);

// One unambiguous mention label per gold object: the description, qualified
// by image and then by ordinal when descriptions repeat.
std::vector<std::string> mention_labels(const RawSample& raw);

// Templated reasoning over the gold objects; used by the mock annotator and
// for samples that skip stage 1.
std::string template_cot(const RawSample& raw);

std::string stage1_prompt(const RawSample& raw);
std::string stage2_prompt(const CotSample& cot);
std::string stage3_prompt(const MappedSample& mapped);

// Rewrites <ref> mentions into bbox_id tokens: the first mention of an object
// becomes a full mention numbered per image in first-mention order, later
// ones back-references.
Trajectory reassemble_trajectory(std::string_view cot_text, const std::vector<MentionMapping>& mappings);

BoundingBox clamp_box(const BoundingBox& box, const ImageRef& image);

CotSample stage1_generate_cot(const RawSample& raw, AnnotatorClient& client, const PipelineConfig& config = {});
MappedSample stage2_map_objects(const CotSample& cot, AnnotatorClient& client);
FinalSample stage3_reassemble(const MappedSample& mapped, AnnotatorClient& client);

// Checks a final trajectory against its mapping: parse validity, per-image
// bbox numbering, boxes inside their images. Throws PipelineError.
void validate_final_trajectory(const Trajectory& t, const MappedSample& mapped);

// Streams input JSONL through the three stages. Failed samples go to
// `rejects_path` as {sample_id, stage, error}; the run itself only fails on
// I/O errors.
PipelineReport run_pipeline(const std::filesystem::path& input_path, const std::filesystem::path& output_path,
                            const std::filesystem::path& rejects_path, const StageClients& clients,
                            const PipelineConfig& config = {});

}  // namespace mirg
