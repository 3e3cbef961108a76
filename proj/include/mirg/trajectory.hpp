#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace mirg {

// Axis-aligned box in abstract pixel coordinates.
struct BoundingBox {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }

    // Finite, non-negative, and ordered (x1 <= x2, y1 <= y2).
    bool valid() const;

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// (n, k): the k-th object of the n-th image, both 1-based.
struct PositionId {
    int image_index = 1;
    int object_index = 1;

    bool valid() const { return image_index >= 1 && object_index >= 1; }

    friend auto operator<=>(const PositionId&, const PositionId&) = default;
};

struct GroundedObject {
    PositionId position;
    std::string description;
    BoundingBox box;

    friend bool operator==(const GroundedObject&, const GroundedObject&) = default;
};

// A later mention of an object, written as its bare bbox_id.
struct BackReference {
    PositionId target;

    friend bool operator==(const BackReference&, const BackReference&) = default;
};

using ObjectMention = std::variant<GroundedObject, BackReference>;

PositionId mention_id(const ObjectMention& mention);
bool is_full_mention(const ObjectMention& mention);

// Free text or an object mention. Canonical blocks never hold two adjacent
// text segments or an empty text segment.
using Segment = std::variant<std::string, ObjectMention>;

struct Block {
    std::vector<Segment> segments;

    Block& append_text(std::string_view text);
    Block& append(ObjectMention mention);

    // Block content exactly as it appears between the envelope tags.
    std::string render() const;

    friend bool operator==(const Block&, const Block&) = default;
};

enum class BlockKind { Think, Answer };

// A mention located in the serialized trajectory, [begin, end) byte offsets.
struct MentionSpan {
    BlockKind block;
    std::size_t begin;
    std::size_t end;
    ObjectMention mention;
};

struct Trajectory {
    Block think;
    Block answer;

    // All mentions in textual order with offsets into serialize_trajectory().
    std::vector<MentionSpan> mentions() const;

    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

enum class ParseErrorKind {
    MissingEnvelope,
    MalformedMention,
    BadCoordinates,
    DanglingReference,
    DuplicateId,
};

std::string_view to_string(ParseErrorKind kind);

class ParseError : public std::runtime_error {
public:
    ParseError(ParseErrorKind kind, std::size_t offset, const std::string& detail);

    ParseErrorKind kind() const { return kind_; }
    // Byte offset into the parsed text where the problem was detected.
    std::size_t offset() const { return offset_; }

private:
    ParseErrorKind kind_;
    std::size_t offset_;
};

class InvariantViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Reserved token strings of the wire format.
namespace tokens {
inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";
inline constexpr std::string_view kBboxIdOpen = "<bbox_id>";
inline constexpr std::string_view kBboxIdClose = "</bbox_id>";
inline constexpr std::string_view kObjectRefStart = "<|object_ref_start|>";
inline constexpr std::string_view kObjectRefEnd = "<|object_ref_end|>";
inline constexpr std::string_view kBoxStart = "<|box_start|>";
inline constexpr std::string_view kBoxEnd = "<|box_end|>";
}  // namespace tokens

// True if `text` contains any reserved envelope or mention token.
bool contains_reserved_token(std::string_view text);

Trajectory parse_trajectory(std::string_view text);
std::optional<Trajectory> try_parse_trajectory(std::string_view text);

// Throws InvariantViolation when `t` is not a valid trajectory.
std::string serialize_trajectory(const Trajectory& t);

// Throws InvariantViolation with the first violated invariant.
void validate_trajectory(const Trajectory& t);

bool check_format(std::string_view text);

// Answer-block groundings in textual order, back-references resolved.
std::vector<GroundedObject> extract_groundings(const Trajectory& t);

std::string format_coordinate(double value);
std::string render_mention(const ObjectMention& mention);

}  // namespace mirg
