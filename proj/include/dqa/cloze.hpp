#pragma once

#include "dqa/corpus.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace dqa {

struct cloze_item {
    std::string blanked_sentence;
    std::string gold;
    std::vector<std::string> aliases;

    friend bool operator==(const cloze_item&, const cloze_item&) = default;
};

struct cloze_test {
    std::string note_id;
    std::vector<cloze_item> items;

    friend bool operator==(const cloze_test&, const cloze_test&) = default;
};

inline constexpr std::size_t min_cloze_items = 5;
inline constexpr std::size_t max_cloze_items = 7;

/// Throws cloze_format_error: 5..7 items, non-empty gold, and (when a note is
/// given) every gold answer found verbatim in the note text.
void validate_cloze_test(const cloze_test& test, const discharge_note* note = nullptr);

nlohmann::json to_json(const cloze_test& t);
cloze_test cloze_test_from_json(const nlohmann::json& j);
cloze_test load_cloze_test(const std::filesystem::path& path);

struct cloze_result {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy = 0.0;
    std::vector<bool> item_correct;
    std::vector<std::string> responses;

    friend bool operator==(const cloze_result&, const cloze_result&) = default;
};

nlohmann::json to_json(const cloze_result& r);
cloze_result cloze_result_from_json(const nlohmann::json& j);

/// An item is correct when the normalized response equals the normalized gold
/// answer or any alias. Throws cloze_format_error on a length mismatch.
cloze_result score_cloze(const cloze_test& test, std::span<const std::string> responses);

}  // namespace dqa
