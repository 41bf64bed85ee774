#pragma once

// BIOES codec for single-type span tagging.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mise/error.hpp"

namespace mise {

/// Fixed integer assignment; persisted in checkpoints.
enum class Tag : std::uint8_t { O = 0, B = 1, I = 2, E = 3, S = 4 };

inline constexpr std::size_t kNumTags = 5;
inline constexpr std::array<Tag, kNumTags> kAllTags{Tag::O, Tag::B, Tag::I, Tag::E, Tag::S};
inline constexpr std::array<std::string_view, kNumTags> kTagNames{"O", "B", "I", "E", "S"};

using TagSequence = std::vector<Tag>;

constexpr std::size_t tag_index(Tag t) noexcept { return static_cast<std::size_t>(t); }
inline Tag tag_from_index(std::size_t i) {
    if (i >= kNumTags) throw DataError("tag index out of range: " + std::to_string(i));
    return static_cast<Tag>(i);
}
constexpr std::string_view tag_name(Tag t) noexcept { return kTagNames[tag_index(t)]; }

inline std::optional<Tag> parse_tag(std::string_view s) {
    for (std::size_t i = 0; i < kNumTags; ++i)
        if (kTagNames[i] == s) return static_cast<Tag>(i);
    return std::nullopt;
}

inline std::string tags_to_string(const TagSequence& tags) {
    std::string out;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        if (i) out += ',';
        out += tag_name(tags[i]);
    }
    return out;
}

/// Inclusive token range [start, end].
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    friend bool operator==(const Span&, const Span&) = default;
    friend auto operator<=>(const Span&, const Span&) = default;
};

using SpanSet = std::vector<Span>;

/// Single-token spans become S; longer spans B I* E; everything else O.
inline TagSequence encode_spans(const SpanSet& spans, std::size_t length) {
    TagSequence tags(length, Tag::O);
    std::vector<bool> used(length, false);
    for (const Span& s : spans) {
        if (s.start > s.end || s.end >= length)
            throw DataError("span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                            "] out of bounds for length " + std::to_string(length));
        for (std::size_t i = s.start; i <= s.end; ++i) {
            if (used[i]) throw DataError("overlapping spans at token " + std::to_string(i));
            used[i] = true;
        }
        if (s.start == s.end) {
            tags[s.start] = Tag::S;
        } else {
            tags[s.start] = Tag::B;
            for (std::size_t i = s.start + 1; i < s.end; ++i) tags[i] = Tag::I;
            tags[s.end] = Tag::E;
        }
    }
    return tags;
}

struct DecodeResult {
    SpanSet spans;
    bool repaired = false; // input was not a valid BIOES sequence
};

/// Left-to-right scan: a maximal B I* E run is a span, a lone S is a span, and any
/// other non-O tag is dropped. Never invents span tokens; sorted, disjoint output.
inline DecodeResult decode_tags(const TagSequence& tags) {
    DecodeResult out;
    const std::size_t n = tags.size();
    std::size_t i = 0;
    while (i < n) {
        if (tags[i] == Tag::S) {
            out.spans.push_back({i, i});
            ++i;
        } else if (tags[i] == Tag::B) {
            std::size_t j = i + 1;
            while (j < n && tags[j] == Tag::I) ++j;
            if (j < n && tags[j] == Tag::E) {
                out.spans.push_back({i, j});
                i = j + 1;
            } else {
                ++i;
            }
        } else {
            ++i;
        }
    }
    out.repaired = encode_spans(out.spans, n) != tags;
    return out;
}

/// Grammar edge check. nullopt `from` means sequence start, nullopt `to` means end.
constexpr bool transition_allowed(std::optional<Tag> from, std::optional<Tag> to) noexcept {
    auto opens = [](Tag t) { return t == Tag::O || t == Tag::B || t == Tag::S; };
    auto closes = [](Tag t) { return t == Tag::O || t == Tag::E || t == Tag::S; };
    if (!from && !to) return true;
    if (!from) return opens(*to);
    if (!to) return closes(*from);
    switch (*from) {
    case Tag::O:
    case Tag::E:
    case Tag::S: return opens(*to);
    case Tag::B:
    case Tag::I: return *to == Tag::I || *to == Tag::E;
    }
    return false;
}

struct Violation {
    std::size_t position = 0;  // index of the `from` token; for a start violation, 0
    std::optional<Tag> from;   // nullopt: sequence start
    std::optional<Tag> to;     // nullopt: sequence end
    friend bool operator==(const Violation&, const Violation&) = default;
};

inline std::vector<Violation> validate_transitions(const TagSequence& tags) {
    std::vector<Violation> out;
    if (tags.empty()) return out;
    if (!transition_allowed(std::nullopt, tags.front())) out.push_back({0, std::nullopt, tags.front()});
    for (std::size_t i = 0; i + 1 < tags.size(); ++i)
        if (!transition_allowed(tags[i], tags[i + 1])) out.push_back({i, tags[i], tags[i + 1]});
    if (!transition_allowed(tags.back(), std::nullopt)) out.push_back({tags.size() - 1, tags.back(), std::nullopt});
    return out;
}

inline bool is_valid_bioes(const TagSequence& tags) { return validate_transitions(tags).empty(); }

} // namespace mise
