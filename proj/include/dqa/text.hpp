#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dqa {

/// Half-open byte range [begin, end) into a UTF-8 string.
struct char_range {
    std::size_t begin = 0;
    std::size_t end = 0;

    [[nodiscard]] constexpr std::size_t length() const noexcept { return end - begin; }
    [[nodiscard]] constexpr bool empty() const noexcept { return end == begin; }
    [[nodiscard]] constexpr bool valid_for(std::size_t size) const noexcept {
        return begin <= end && end <= size;
    }
    [[nodiscard]] constexpr bool contains(const char_range& other) const noexcept {
        return begin <= other.begin && other.end <= end;
    }
    [[nodiscard]] constexpr bool overlaps(const char_range& other) const noexcept {
        return begin < other.end && other.begin < end;
    }

    friend constexpr bool operator==(const char_range&, const char_range&) = default;
    friend constexpr auto operator<=>(const char_range&, const char_range&) = default;
};

inline std::string_view slice(std::string_view text, const char_range& r) {
    return text.substr(r.begin, r.length());
}

namespace text {

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);
std::string collapse_whitespace(std::string_view s);

/// Lowercase, trim, collapse internal whitespace.
std::string normalize_surface(std::string_view s);

/// normalize_surface plus stripping of trailing . , ; : ! ? characters.
std::string normalize_answer(std::string_view s);

/// Sentence spans inside `range`, split after ". ", "! ", "? " and at
/// newlines. Terminal punctuation stays with its sentence; spans are trimmed
/// and empty ones dropped.
std::vector<char_range> sentence_spans(std::string_view full_text, char_range range);

/// The sentence of `range` that fully contains `target`; `target` itself when
/// the span crosses a sentence boundary.
char_range containing_sentence(std::string_view full_text, char_range range,
                               char_range target);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

bool is_word_char(char c) noexcept;

}  // namespace text
}  // namespace dqa
