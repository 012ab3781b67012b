#include "dqa/text.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <stdexcept>

namespace dqa::text {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

bool is_word_char(char c) noexcept {
    auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) != 0 || c == '_' || u >= 0x80;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
        return static_cast<char>(std::tolower(c));
    });
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : trim(s)) {
        if (is_space(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

std::string normalize_surface(std::string_view s) {
    return collapse_whitespace(to_lower(s));
}

std::string normalize_answer(std::string_view s) {
    std::string out = normalize_surface(s);
    auto terminal = [](char c) {
        return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
    };
    while (!out.empty() && (terminal(out.back()) || is_space(out.back()))) out.pop_back();
    return out;
}

std::vector<char_range> sentence_spans(std::string_view full_text, char_range range) {
    std::vector<char_range> spans;
    if (!range.valid_for(full_text.size())) return spans;

    auto push = [&](std::size_t b, std::size_t e) {
        while (b < e && is_space(full_text[b])) ++b;
        while (e > b && is_space(full_text[e - 1])) --e;
        if (b < e) spans.push_back({b, e});
    };

    std::size_t start = range.begin;
    std::size_t i = range.begin;
    while (i < range.end) {
        char c = full_text[i];
        if (c == '\n') {
            push(start, i);
            start = ++i;
            continue;
        }
        if ((c == '.' || c == '!' || c == '?') && i + 1 < range.end && full_text[i + 1] == ' ') {
            push(start, i + 1);
            i += 2;
            start = i;
            continue;
        }
        ++i;
    }
    push(start, range.end);
    return spans;
}

char_range containing_sentence(std::string_view full_text, char_range range, char_range target) {
    for (const auto& s : sentence_spans(full_text, range)) {
        if (s.contains(target)) return s;
    }
    return target;
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0x0f]);
    }
    return out;
}

}  // namespace dqa::text
