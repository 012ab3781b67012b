#include "dqa/cloze.hpp"

#include "dqa/errors.hpp"
#include "dqa/text.hpp"

#include <fstream>

namespace dqa {

using nlohmann::json;

void validate_cloze_test(const cloze_test& test, const discharge_note* note) {
    const auto n = test.items.size();
    if (n < min_cloze_items || n > max_cloze_items) {
        throw cloze_format_error("cloze test needs 5 to 7 items, got " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& item = test.items[i];
        if (text::trim(item.gold).empty()) {
            throw cloze_format_error("items[" + std::to_string(i) + "].gold is empty");
        }
        if (note != nullptr && note->full_text.find(item.gold) == std::string::npos) {
            throw cloze_format_error("items[" + std::to_string(i) + "].gold '" + item.gold +
                                     "' does not appear in note " + note->note_id);
        }
    }
}

nlohmann::json to_json(const cloze_test& t) {
    json items = json::array();
    for (const auto& i : t.items) {
        items.push_back({{"blanked_sentence", i.blanked_sentence}, {"gold", i.gold}, {"aliases", i.aliases}});
    }
    return {{"note_id", t.note_id}, {"items", std::move(items)}};
}

cloze_test cloze_test_from_json(const nlohmann::json& j) {
    cloze_test t;
    try {
        t.note_id = j.at("note_id").get<std::string>();
        for (const auto& i : j.at("items")) {
            t.items.push_back({i.value("blanked_sentence", ""), i.at("gold").get<std::string>(),
                               i.value("aliases", std::vector<std::string>{})});
        }
    } catch (const json::exception& e) {
        throw cloze_format_error(std::string("cloze test JSON: ") + e.what());
    }
    return t;
}

cloze_test load_cloze_test(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw cloze_format_error("cannot open cloze test " + path.string());
    try {
        return cloze_test_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw cloze_format_error(path.string() + ": " + e.what());
    }
}

nlohmann::json to_json(const cloze_result& r) {
    return {{"correct", r.correct},
            {"total", r.total},
            {"accuracy", r.accuracy},
            {"item_correct", r.item_correct},
            {"responses", r.responses}};
}

cloze_result cloze_result_from_json(const nlohmann::json& j) {
    cloze_result r;
    try {
        r.correct = j.at("correct").get<std::size_t>();
        r.total = j.at("total").get<std::size_t>();
        r.accuracy = j.at("accuracy").get<double>();
        r.item_correct = j.at("item_correct").get<std::vector<bool>>();
        r.responses = j.at("responses").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw parse_error(std::string("cloze result JSON: ") + e.what());
    }
    return r;
}

cloze_result score_cloze(const cloze_test& test, std::span<const std::string> responses) {
    if (responses.size() != test.items.size()) {
        throw cloze_format_error("expected " + std::to_string(test.items.size()) + " responses, got " +
                                 std::to_string(responses.size()));
    }
    if (test.items.empty()) throw cloze_format_error("cloze test has no items");
    cloze_result r;
    r.total = test.items.size();
    r.responses.assign(responses.begin(), responses.end());
    for (std::size_t i = 0; i < r.total; ++i) {
        const auto given = text::normalize_answer(responses[i]);
        const auto& item = test.items[i];
        bool ok = !given.empty() && given == text::normalize_answer(item.gold);
        for (const auto& a : item.aliases) {
            if (ok) break;
            ok = !given.empty() && given == text::normalize_answer(a);
        }
        r.item_correct.push_back(ok);
        if (ok) ++r.correct;
    }
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    return r;
}

}  // namespace dqa
