#include "mirg/trajectory.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <set>

namespace mirg {

namespace {

constexpr std::array<std::string_view, 10> kReservedTokens = {
    tokens::kThinkOpen,      tokens::kThinkClose,   tokens::kAnswerOpen, tokens::kAnswerClose,
    tokens::kBboxIdOpen,     tokens::kBboxIdClose,  tokens::kObjectRefStart,
    tokens::kObjectRefEnd,   tokens::kBoxStart,     tokens::kBoxEnd,
};

constexpr std::array<std::string_view, 6> kMentionTokens = {
    tokens::kBboxIdOpen,    tokens::kBboxIdClose, tokens::kObjectRefStart,
    tokens::kObjectRefEnd,  tokens::kBoxStart,    tokens::kBoxEnd,
};

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

bool starts_with_at(std::string_view text, std::size_t pos, std::string_view token) {
    return pos <= text.size() && text.substr(pos).starts_with(token);
}

struct Failure {
    ParseErrorKind kind;
    std::size_t offset;
    std::string detail;
};

// Recursive-descent parser over a single input string. Offsets reported in
// failures are absolute byte positions in that string.
class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    std::optional<Failure> run(Trajectory& out) {
        std::size_t pos = skip_space(0);
        if (!starts_with_at(text_, pos, tokens::kThinkOpen)) {
            return Failure{ParseErrorKind::MissingEnvelope, pos, "expected <think>"};
        }
        const std::size_t think_begin = pos + tokens::kThinkOpen.size();
        const std::size_t think_end = text_.find(tokens::kThinkClose, think_begin);
        if (think_end == std::string_view::npos) {
            return Failure{ParseErrorKind::MissingEnvelope, think_begin, "unterminated think block"};
        }
        if (auto f = reject_envelope_tags(think_begin, think_end)) return f;

        pos = skip_space(think_end + tokens::kThinkClose.size());
        if (!starts_with_at(text_, pos, tokens::kAnswerOpen)) {
            return Failure{ParseErrorKind::MissingEnvelope, pos, "expected <answer> after think block"};
        }
        const std::size_t answer_begin = pos + tokens::kAnswerOpen.size();
        const std::size_t answer_end = text_.find(tokens::kAnswerClose, answer_begin);
        if (answer_end == std::string_view::npos) {
            return Failure{ParseErrorKind::MissingEnvelope, answer_begin, "unterminated answer block"};
        }
        if (auto f = reject_envelope_tags(answer_begin, answer_end)) return f;

        pos = skip_space(answer_end + tokens::kAnswerClose.size());
        if (pos != text_.size()) {
            return Failure{ParseErrorKind::MissingEnvelope, pos, "trailing content after answer block"};
        }

        Trajectory t;
        if (auto f = parse_block(think_begin, think_end, t.think)) return f;
        if (auto f = parse_block(answer_begin, answer_end, t.answer)) return f;
        out = std::move(t);
        return std::nullopt;
    }

private:
    std::size_t skip_space(std::size_t pos) const {
        while (pos < text_.size() && is_space(text_[pos])) ++pos;
        return pos;
    }

    std::optional<Failure> reject_envelope_tags(std::size_t begin, std::size_t end) const {
        const std::string_view body = text_.substr(begin, end - begin);
        for (auto tag : {tokens::kThinkOpen, tokens::kThinkClose, tokens::kAnswerOpen, tokens::kAnswerClose}) {
            if (auto at = body.find(tag); at != std::string_view::npos) {
                return Failure{ParseErrorKind::MissingEnvelope, begin + at,
                               "envelope tag " + std::string(tag) + " nested inside a block"};
            }
        }
        return std::nullopt;
    }

    std::optional<Failure> parse_block(std::size_t begin, std::size_t end, Block& block) {
        std::size_t text_start = begin;
        std::size_t pos = begin;
        while (pos < end) {
            const std::size_t lt = text_.find('<', pos);
            if (lt == std::string_view::npos || lt >= end) break;
            if (starts_with_at(text_, lt, tokens::kBboxIdOpen)) {
                block.append_text(text_.substr(text_start, lt - text_start));
                ObjectMention mention;
                std::size_t next = 0;
                if (auto f = parse_mention(lt, end, mention, next)) return f;
                if (auto f = register_mention(mention, lt)) return f;
                block.append(std::move(mention));
                pos = text_start = next;
                continue;
            }
            for (auto token : kMentionTokens) {
                if (starts_with_at(text_, lt, token) && lt + token.size() <= end) {
                    return Failure{ParseErrorKind::MalformedMention, lt,
                                   "stray " + std::string(token) + " outside a mention"};
                }
            }
            pos = lt + 1;
        }
        block.append_text(text_.substr(text_start, end - text_start));
        return std::nullopt;
    }

    std::optional<Failure> register_mention(const ObjectMention& mention, std::size_t at) {
        const PositionId id = mention_id(mention);
        if (is_full_mention(mention)) {
            if (!seen_.insert(id).second) {
                return Failure{ParseErrorKind::DuplicateId, at,
                               "bbox_id [" + std::to_string(id.image_index) + "-" +
                                   std::to_string(id.object_index) + "] introduced twice"};
            }
        } else if (!seen_.contains(id)) {
            return Failure{ParseErrorKind::DanglingReference, at,
                           "bbox_id [" + std::to_string(id.image_index) + "-" +
                               std::to_string(id.object_index) + "] referenced before definition"};
        }
        return std::nullopt;
    }

    // Positive integer of at most 9 digits.
    bool parse_index(std::size_t& pos, std::size_t end, int& value) const {
        const std::size_t start = pos;
        while (pos < end && is_digit(text_[pos])) ++pos;
        const std::size_t len = pos - start;
        if (len == 0 || len > 9) return false;
        int v = 0;
        std::from_chars(text_.data() + start, text_.data() + pos, v);
        value = v;
        return v >= 1;
    }

    std::optional<Failure> parse_mention(std::size_t at, std::size_t end, ObjectMention& out,
                                         std::size_t& next) {
        std::size_t pos = at + tokens::kBboxIdOpen.size();
        PositionId id;
        const auto malformed = [&](std::size_t where, const char* what) {
            return Failure{ParseErrorKind::MalformedMention, where, what};
        };
        if (pos >= end || text_[pos] != '[') return malformed(pos, "expected '[' after <bbox_id>");
        ++pos;
        if (!parse_index(pos, end, id.image_index)) return malformed(pos, "bad image index in bbox_id");
        if (pos >= end || text_[pos] != '-') return malformed(pos, "expected '-' in bbox_id");
        ++pos;
        if (!parse_index(pos, end, id.object_index)) return malformed(pos, "bad object index in bbox_id");
        if (pos >= end || text_[pos] != ']') return malformed(pos, "expected ']' in bbox_id");
        ++pos;
        if (!starts_with_at(text_, pos, tokens::kBboxIdClose) || pos + tokens::kBboxIdClose.size() > end) {
            return malformed(pos, "expected </bbox_id>");
        }
        pos += tokens::kBboxIdClose.size();

        if (!(starts_with_at(text_, pos, tokens::kObjectRefStart) &&
              pos + tokens::kObjectRefStart.size() <= end)) {
            out = BackReference{id};
            next = pos;
            return std::nullopt;
        }

        const std::size_t desc_begin = pos + tokens::kObjectRefStart.size();
        const std::size_t desc_end = text_.find(tokens::kObjectRefEnd, desc_begin);
        if (desc_end == std::string_view::npos || desc_end + tokens::kObjectRefEnd.size() > end) {
            return malformed(desc_begin, "unterminated object description");
        }
        const std::string_view description = text_.substr(desc_begin, desc_end - desc_begin);
        for (auto token : kReservedTokens) {
            if (auto in = description.find(token); in != std::string_view::npos) {
                return malformed(desc_begin + in, "special token inside object description");
            }
        }
        if (trim(description).empty()) return malformed(desc_begin, "empty object description");

        pos = desc_end + tokens::kObjectRefEnd.size();
        if (!starts_with_at(text_, pos, tokens::kBoxStart) || pos + tokens::kBoxStart.size() > end) {
            return malformed(pos, "expected <|box_start|> after description");
        }
        const std::size_t coords_begin = pos + tokens::kBoxStart.size();
        const std::size_t coords_end = text_.find(tokens::kBoxEnd, coords_begin);
        if (coords_end == std::string_view::npos || coords_end + tokens::kBoxEnd.size() > end) {
            return malformed(coords_begin, "unterminated box");
        }
        BoundingBox box;
        if (auto f = parse_coordinates(coords_begin, coords_end, box)) return f;

        out = GroundedObject{id, std::string(description), box};
        next = coords_end + tokens::kBoxEnd.size();
        return std::nullopt;
    }

    // "(x1,y1),(x2,y2)" with optional blanks around numbers and punctuation.
    std::optional<Failure> parse_coordinates(std::size_t begin, std::size_t end, BoundingBox& box) const {
        std::size_t pos = begin;
        const auto bad = [&](const char* what) {
            return Failure{ParseErrorKind::BadCoordinates, pos, what};
        };
        const auto blanks = [&] {
            while (pos < end && (text_[pos] == ' ' || text_[pos] == '\t')) ++pos;
        };
        const auto expect = [&](char c) {
            blanks();
            if (pos < end && text_[pos] == c) {
                ++pos;
                return true;
            }
            return false;
        };
        const auto number = [&](double& value) {
            blanks();
            const std::size_t start = pos;
            while (pos < end && is_digit(text_[pos])) ++pos;
            if (pos == start) return false;
            if (pos < end && text_[pos] == '.') {
                ++pos;
                const std::size_t frac = pos;
                while (pos < end && is_digit(text_[pos])) ++pos;
                if (pos == frac) return false;
            }
            const auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos, value);
            return ec == std::errc{} && ptr == text_.data() + pos && std::isfinite(value);
        };

        double v[4] = {};
        if (!expect('(')) return bad("expected '('");
        if (!number(v[0])) return bad("non-numeric x1");
        if (!expect(',')) return bad("expected ','");
        if (!number(v[1])) return bad("non-numeric y1");
        if (!expect(')')) return bad("expected ')'");
        if (!expect(',')) return bad("expected ',' between corners");
        if (!expect('(')) return bad("expected '('");
        if (!number(v[2])) return bad("non-numeric x2");
        if (!expect(',')) return bad("expected ','");
        if (!number(v[3])) return bad("non-numeric y2");
        if (!expect(')')) return bad("expected ')'");
        blanks();
        if (pos != end) return bad("unexpected content in box");
        box = BoundingBox{v[0], v[1], v[2], v[3]};
        if (box.x2 < box.x1 || box.y2 < box.y1) {
            pos = begin;
            return bad("box corners out of order");
        }
        return std::nullopt;
    }

    std::string_view text_;
    std::set<PositionId> seen_;
};

std::string id_token(PositionId id) {
    std::string s(tokens::kBboxIdOpen);
    s += '[';
    s += std::to_string(id.image_index);
    s += '-';
    s += std::to_string(id.object_index);
    s += ']';
    s += tokens::kBboxIdClose;
    return s;
}

}  // namespace

bool BoundingBox::valid() const {
    for (double v : {x1, y1, x2, y2}) {
        if (!std::isfinite(v) || v < 0.0) return false;
    }
    return x1 <= x2 && y1 <= y2;
}

PositionId mention_id(const ObjectMention& mention) {
    return std::visit(
        [](const auto& m) {
            if constexpr (std::is_same_v<std::decay_t<decltype(m)>, GroundedObject>) {
                return m.position;
            } else {
                return m.target;
            }
        },
        mention);
}

bool is_full_mention(const ObjectMention& mention) {
    return std::holds_alternative<GroundedObject>(mention);
}

Block& Block::append_text(std::string_view text) {
    if (text.empty()) return *this;
    if (!segments.empty()) {
        if (auto* last = std::get_if<std::string>(&segments.back())) {
            last->append(text);
            return *this;
        }
    }
    segments.emplace_back(std::string(text));
    return *this;
}

Block& Block::append(ObjectMention mention) {
    segments.emplace_back(std::move(mention));
    return *this;
}

std::string Block::render() const {
    std::string out;
    for (const auto& segment : segments) {
        if (const auto* text = std::get_if<std::string>(&segment)) {
            out += *text;
        } else {
            out += render_mention(std::get<ObjectMention>(segment));
        }
    }
    return out;
}

std::vector<MentionSpan> Trajectory::mentions() const {
    std::vector<MentionSpan> spans;
    std::size_t offset = tokens::kThinkOpen.size();
    const auto walk = [&](const Block& block, BlockKind kind) {
        for (const auto& segment : block.segments) {
            if (const auto* text = std::get_if<std::string>(&segment)) {
                offset += text->size();
                continue;
            }
            const auto& mention = std::get<ObjectMention>(segment);
            const std::size_t len = render_mention(mention).size();
            spans.push_back({kind, offset, offset + len, mention});
            offset += len;
        }
    };
    walk(think, BlockKind::Think);
    offset += tokens::kThinkClose.size() + tokens::kAnswerOpen.size();
    walk(answer, BlockKind::Answer);
    return spans;
}

std::string_view to_string(ParseErrorKind kind) {
    switch (kind) {
        case ParseErrorKind::MissingEnvelope: return "MissingEnvelope";
        case ParseErrorKind::MalformedMention: return "MalformedMention";
        case ParseErrorKind::BadCoordinates: return "BadCoordinates";
        case ParseErrorKind::DanglingReference: return "DanglingReference";
        case ParseErrorKind::DuplicateId: return "DuplicateId";
    }
    return "Unknown";
}

ParseError::ParseError(ParseErrorKind kind, std::size_t offset, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + " at offset " + std::to_string(offset) + ": " + detail),
      kind_(kind),
      offset_(offset) {}

bool contains_reserved_token(std::string_view text) {
    return std::any_of(kReservedTokens.begin(), kReservedTokens.end(),
                       [&](std::string_view token) { return text.find(token) != std::string_view::npos; });
}

Trajectory parse_trajectory(std::string_view text) {
    Trajectory t;
    if (auto failure = Parser(text).run(t)) {
        throw ParseError(failure->kind, failure->offset, failure->detail);
    }
    return t;
}

std::optional<Trajectory> try_parse_trajectory(std::string_view text) {
    Trajectory t;
    if (Parser(text).run(t)) return std::nullopt;
    return t;
}

bool check_format(std::string_view text) {
    Trajectory t;
    return !Parser(text).run(t).has_value();
}

void validate_trajectory(const Trajectory& t) {
    std::set<PositionId> defined;
    const auto check_block = [&](const Block& block, const char* name) {
        for (const auto& segment : block.segments) {
            if (const auto* text = std::get_if<std::string>(&segment)) {
                if (contains_reserved_token(*text)) {
                    throw InvariantViolation(std::string("free text in ") + name + " block contains a reserved token");
                }
                continue;
            }
            const auto& mention = std::get<ObjectMention>(segment);
            const PositionId id = mention_id(mention);
            if (!id.valid()) throw InvariantViolation("bbox_id indices must be positive");
            if (const auto* full = std::get_if<GroundedObject>(&mention)) {
                if (trim(full->description).empty()) throw InvariantViolation("empty object description");
                if (contains_reserved_token(full->description)) {
                    throw InvariantViolation("object description contains a reserved token");
                }
                if (!full->box.valid()) throw InvariantViolation("invalid bounding box");
                if (!defined.insert(id).second) throw InvariantViolation("duplicate bbox_id among full mentions");
            } else if (!defined.contains(id)) {
                throw InvariantViolation("back-reference does not resolve to an earlier full mention");
            }
        }
    };
    check_block(t.think, "think");
    check_block(t.answer, "answer");
}

std::string serialize_trajectory(const Trajectory& t) {
    validate_trajectory(t);
    std::string out;
    out += tokens::kThinkOpen;
    out += t.think.render();
    out += tokens::kThinkClose;
    out += tokens::kAnswerOpen;
    out += t.answer.render();
    out += tokens::kAnswerClose;
    return out;
}

std::vector<GroundedObject> extract_groundings(const Trajectory& t) {
    std::vector<const GroundedObject*> defined;
    const auto lookup = [&](PositionId id) -> const GroundedObject* {
        for (const auto* obj : defined) {
            if (obj->position == id) return obj;
        }
        return nullptr;
    };
    const auto collect = [&](const Block& block) {
        for (const auto& segment : block.segments) {
            if (const auto* mention = std::get_if<ObjectMention>(&segment)) {
                if (const auto* full = std::get_if<GroundedObject>(mention)) defined.push_back(full);
            }
        }
    };
    collect(t.think);
    collect(t.answer);

    std::vector<GroundedObject> out;
    for (const auto& segment : t.answer.segments) {
        const auto* mention = std::get_if<ObjectMention>(&segment);
        if (!mention) continue;
        if (const auto* obj = lookup(mention_id(*mention))) out.push_back(*obj);
    }
    return out;
}

std::string format_coordinate(double value) {
    char buf[512];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
    if (ec != std::errc{}) throw InvariantViolation("coordinate cannot be rendered");
    return std::string(buf, ptr);
}

std::string render_mention(const ObjectMention& mention) {
    const auto* full = std::get_if<GroundedObject>(&mention);
    if (!full) return id_token(std::get<BackReference>(mention).target);
    std::string out = id_token(full->position);
    out += tokens::kObjectRefStart;
    out += full->description;
    out += tokens::kObjectRefEnd;
    out += tokens::kBoxStart;
    out += '(' + format_coordinate(full->box.x1) + ',' + format_coordinate(full->box.y1) + "),(" +
           format_coordinate(full->box.x2) + ',' + format_coordinate(full->box.y2) + ')';
    out += tokens::kBoxEnd;
    return out;
}

}  // namespace mirg
