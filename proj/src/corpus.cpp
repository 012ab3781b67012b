#include "dqa/corpus.hpp"

#include "dqa/errors.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <tuple>

namespace dqa {

namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 11> event_type_names{
    "Symptom",   "Disease",   "Complication", "Test",          "TestGoal",        "TestResult",
    "TestImplication", "Procedure", "Medicine", "TreatmentGoal", "TreatmentResult",
};

constexpr std::array<std::string_view, 6> relation_type_names{
    "SymptomCausedByDisease", "TestGoal", "TestResult", "TestImplication",
    "TreatmentGoal",          "TreatmentResult",
};

constexpr std::array<std::string_view, 7> detailed_type_names{
    "MedicineDosage", "MedicineFrequency", "MedicineDuration",   "MedicationName",
    "SignSymptom",    "DiagnosticProcedure", "UpcomingAppointment",
};

constexpr std::array<event_type, 1> symptom_set{event_type::symptom};
constexpr std::array<event_type, 1> disease_set{event_type::disease};
constexpr std::array<event_type, 1> test_set{event_type::test};
constexpr std::array<event_type, 1> test_goal_set{event_type::test_goal};
constexpr std::array<event_type, 1> test_result_set{event_type::test_result};
constexpr std::array<event_type, 1> test_implication_set{event_type::test_implication};
constexpr std::array<event_type, 2> treatment_set{event_type::procedure, event_type::medicine};
constexpr std::array<event_type, 1> treatment_goal_set{event_type::treatment_goal};
constexpr std::array<event_type, 1> treatment_result_set{event_type::treatment_result};

const std::array<relation_signature, 6> signatures{{
    {symptom_set, disease_set},
    {test_set, test_goal_set},
    {test_set, test_result_set},
    {test_set, test_implication_set},
    {treatment_set, treatment_goal_set},
    {treatment_set, treatment_result_set},
}};

template <typename Enum, std::size_t N>
std::optional<Enum> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
    for (std::size_t i = 0; i < N; ++i) {
        if (names[i] == s) return static_cast<Enum>(i);
    }
    return std::nullopt;
}

json range_to_json(const char_range& r) { return json::array({r.begin, r.end}); }

char_range range_from_json(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() ||
        !j[1].is_number_unsigned()) {
        throw parse_error(what + " must be a [start, end] pair of non-negative integers");
    }
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

char_range trimmed(std::string_view text, std::size_t b, std::size_t e) {
    auto ws = [](char c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; };
    while (b < e && ws(text[b])) ++b;
    while (e > b && ws(text[e - 1])) --e;
    return {b, e};
}

std::string derive_note_id(std::string_view full_text) {
    return "note-" + text::sha256_hex(full_text).substr(0, 12);
}

discharge_note split_plain(std::string_view raw, const section_splitter& splitter) {
    std::vector<std::regex> patterns;
    patterns.reserve(splitter.heading_patterns.size());
    for (const auto& p : splitter.heading_patterns) {
        try {
            patterns.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
        } catch (const std::regex_error& e) {
            throw parse_error("bad heading pattern '" + p + "': " + e.what());
        }
    }

    discharge_note note;
    note.full_text = std::string(raw);
    note.provenance = note_provenance::user_supplied;

    std::optional<std::size_t> split_at;
    std::size_t line_start = 0;
    while (line_start < raw.size() && !split_at) {
        std::size_t line_end = raw.find('\n', line_start);
        if (line_end == std::string_view::npos) line_end = raw.size();
        const std::string line(raw.substr(line_start, line_end - line_start));
        for (const auto& re : patterns) {
            if (std::regex_search(line, re)) {
                split_at = line_start;
                break;
            }
        }
        line_start = line_end + 1;
    }

    if (split_at) {
        note.visit_recap = trimmed(raw, 0, *split_at);
        note.detailed_instructions = trimmed(raw, *split_at, raw.size());
        if (note.visit_recap.empty()) note.visit_recap = {0, 0};
    } else {
        note.visit_recap = {0, raw.size()};
        note.detailed_instructions = {raw.size(), raw.size()};
    }
    return note;
}

discharge_note split_json(std::string_view raw) {
    json j;
    try {
        j = json::parse(raw);
    } catch (const json::parse_error& e) {
        throw parse_error(std::string("malformed note JSON: ") + e.what());
    }
    if (!j.is_object()) throw parse_error("sectioned note must be a JSON object");

    if (j.contains("full_text")) return note_from_json(j);

    auto section = [&](const char* key) -> std::optional<std::string> {
        if (!j.contains(key)) return std::nullopt;
        if (!j[key].is_string()) throw parse_error(std::string(key) + " must be a string");
        return j[key].get<std::string>();
    };
    auto recap = section("visit_recap");
    auto detailed = section("detailed_instructions");
    if (!recap && !detailed) {
        throw parse_error("sectioned note needs visit_recap and/or detailed_instructions");
    }

    discharge_note note;
    note.full_text = recap.value_or("");
    note.visit_recap = {0, note.full_text.size()};
    if (detailed && !detailed->empty()) {
        if (!note.full_text.empty()) note.full_text += "\n\n";
        const std::size_t b = note.full_text.size();
        note.full_text += *detailed;
        note.detailed_instructions = {b, note.full_text.size()};
    } else {
        note.detailed_instructions = {note.full_text.size(), note.full_text.size()};
    }
    if (j.contains("note_id")) note.note_id = j["note_id"].get<std::string>();
    note.provenance = j.contains("provenance")
                          ? parse_provenance(j["provenance"].get<std::string>())
                          : note_provenance::user_supplied;
    return note;
}

std::string field(std::string_view base, std::size_t index, std::string_view name = {}) {
    std::string out(base);
    out += "[" + std::to_string(index) + "]";
    if (!name.empty()) {
        out += ".";
        out += name;
    }
    return out;
}

template <typename T>
T required(const json& obj, const char* key, const std::string& note_id, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) {
        throw annotation_error(note_id, path + "." + key + ": missing");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw annotation_error(note_id, path + "." + key + ": wrong type");
    }
}

annotated_note parse_one(const json& j, std::size_t index) {
    const std::string path = field("", index);
    if (!j.is_object()) throw annotation_error("?", path + ": expected object");
    const std::string note_id = required<std::string>(j, "note_id", "?", path);

    annotated_note out;
    out.note.note_id = note_id;
    out.note.full_text = required<std::string>(j, "full_text", note_id, path);
    out.note.provenance = note_provenance::annotated;
    try {
        out.note.visit_recap = range_from_json(j.value("visit_recap", json::array({0, 0})),
                                               "visit_recap");
        out.note.detailed_instructions = range_from_json(
            j.value("detailed_instructions", json::array({0, 0})), "detailed_instructions");
    } catch (const parse_error& e) {
        throw annotation_error(note_id, e.what());
    }

    const auto split_name = required<std::string>(j, "split", note_id, path);
    try {
        out.split = parse_split(split_name);
    } catch (const unknown_type_error&) {
        throw annotation_error(note_id, "split: unknown value '" + split_name + "'");
    }

    const json events = j.value("events", json::array());
    if (!events.is_array()) throw annotation_error(note_id, "events: expected array");
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        const std::string epath = field("events", i);
        medical_event ev;
        ev.event_id = required<std::string>(e, "event_id", note_id, epath);
        ev.span.begin = required<std::size_t>(e, "start", note_id, epath);
        ev.span.end = required<std::size_t>(e, "end", note_id, epath);
        const auto type_name = required<std::string>(e, "etype", note_id, epath);
        auto t = try_parse_event_type(type_name);
        if (!t) {
            throw unknown_type_error("note '" + note_id + "': " + epath + ".etype: unknown event type '" +
                                     type_name + "'");
        }
        ev.etype = *t;
        if (ev.span.valid_for(out.note.full_text.size())) {
            ev.surface = std::string(slice(out.note.full_text, ev.span));
        }
        if (e.contains("surface") && e["surface"].is_string() && ev.span.valid_for(out.note.full_text.size()) &&
            e["surface"].get<std::string>() != ev.surface) {
            throw annotation_error(note_id, epath + ".surface: does not match full_text at span");
        }
        out.events.push_back(std::move(ev));
    }

    const json relations = j.value("relations", json::array());
    if (!relations.is_array()) throw annotation_error(note_id, "relations: expected array");
    for (std::size_t i = 0; i < relations.size(); ++i) {
        const auto& r = relations[i];
        const std::string rpath = field("relations", i);
        event_relation rel;
        rel.head = required<std::string>(r, "head", note_id, rpath);
        rel.tail = required<std::string>(r, "tail", note_id, rpath);
        const auto type_name = required<std::string>(r, "rtype", note_id, rpath);
        auto rt = lookup<relation_type>(relation_type_names, type_name);
        if (!rt) {
            throw unknown_type_error("note '" + note_id + "': " + rpath + ".rtype: unknown relation type '" +
                                     type_name + "'");
        }
        rel.rtype = *rt;
        rel.label = true;
        out.relations.push_back(std::move(rel));
    }

    validate_annotated_note(out);
    return out;
}

}  // namespace

// ─────────────────────────────────────────────────────
// Notes
// ─────────────────────────────────────────────────────

void validate_note(const discharge_note& note) {
    if (note.full_text.empty()) throw invalid_note("full_text is empty");
    const auto size = note.full_text.size();
    if (!note.visit_recap.valid_for(size)) throw invalid_note("visit_recap out of bounds");
    if (!note.detailed_instructions.valid_for(size)) {
        throw invalid_note("detailed_instructions out of bounds");
    }
    if (note.visit_recap.overlaps(note.detailed_instructions)) {
        throw invalid_note("visit_recap and detailed_instructions overlap");
    }
}

std::vector<std::string> section_splitter::default_patterns() {
    return {
        R"(^\s*follow[- ]?up instructions)",
        R"(\bmedications?\b[^:]*:)",
    };
}

discharge_note ingest_note(std::string_view raw, note_format format,
                           const section_splitter& splitter) {
    if (text::trim(raw).empty()) throw invalid_note("empty note");
    discharge_note note =
        format == note_format::plain ? split_plain(raw, splitter) : split_json(raw);
    if (note.note_id.empty()) note.note_id = derive_note_id(note.full_text);
    validate_note(note);
    return note;
}

nlohmann::json note_to_json(const discharge_note& note) {
    return {
        {"note_id", note.note_id},
        {"full_text", note.full_text},
        {"visit_recap", range_to_json(note.visit_recap)},
        {"detailed_instructions", range_to_json(note.detailed_instructions)},
        {"provenance", to_string(note.provenance)},
    };
}

discharge_note note_from_json(const nlohmann::json& j) {
    discharge_note note;
    try {
        note.full_text = j.at("full_text").get<std::string>();
        note.note_id = j.value("note_id", std::string{});
        note.visit_recap = j.contains("visit_recap")
                               ? range_from_json(j["visit_recap"], "visit_recap")
                               : char_range{0, note.full_text.size()};
        note.detailed_instructions =
            j.contains("detailed_instructions")
                ? range_from_json(j["detailed_instructions"], "detailed_instructions")
                : char_range{note.full_text.size(), note.full_text.size()};
        note.provenance = j.contains("provenance")
                              ? parse_provenance(j["provenance"].get<std::string>())
                              : note_provenance::user_supplied;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("note JSON: ") + e.what());
    }
    if (note.note_id.empty() && !note.full_text.empty()) note.note_id = derive_note_id(note.full_text);
    validate_note(note);
    return note;
}

std::string_view to_string(note_provenance p) {
    switch (p) {
        case note_provenance::synthetic: return "synthetic";
        case note_provenance::annotated: return "annotated";
        case note_provenance::user_supplied: return "user_supplied";
    }
    return "user_supplied";
}

note_provenance parse_provenance(std::string_view s) {
    if (s == "synthetic") return note_provenance::synthetic;
    if (s == "annotated") return note_provenance::annotated;
    if (s == "user_supplied") return note_provenance::user_supplied;
    throw unknown_type_error("unknown provenance '" + std::string(s) + "'");
}

// ─────────────────────────────────────────────────────
// Schema
// ─────────────────────────────────────────────────────

std::string_view to_string(event_type t) { return event_type_names[static_cast<std::size_t>(t)]; }

std::optional<event_type> try_parse_event_type(std::string_view s) {
    return lookup<event_type>(event_type_names, s);
}

event_type parse_event_type(std::string_view s) {
    if (auto t = try_parse_event_type(s)) return *t;
    throw unknown_type_error("unknown event type '" + std::string(s) + "'");
}

const relation_signature& signature(relation_type r) {
    return signatures[static_cast<std::size_t>(r)];
}

bool admits(relation_type r, event_type head, event_type tail) {
    const auto& sig = signature(r);
    return std::find(sig.heads.begin(), sig.heads.end(), head) != sig.heads.end() &&
           std::find(sig.tails.begin(), sig.tails.end(), tail) != sig.tails.end();
}

std::string_view to_string(relation_type r) {
    return relation_type_names[static_cast<std::size_t>(r)];
}

relation_type parse_relation_type(std::string_view s) {
    if (auto r = lookup<relation_type>(relation_type_names, s)) return *r;
    throw unknown_type_error("unknown relation type '" + std::string(s) + "'");
}

medical_event make_event(std::string event_id, std::string_view full_text, char_range span,
                         event_type etype) {
    return {std::move(event_id), span, std::string(slice(full_text, span)), etype};
}

std::string_view to_string(data_split s) {
    switch (s) {
        case data_split::train: return "train";
        case data_split::validation: return "validation";
        case data_split::test: return "test";
    }
    return "train";
}

data_split parse_split(std::string_view s) {
    if (s == "train") return data_split::train;
    if (s == "validation" || s == "dev") return data_split::validation;
    if (s == "test") return data_split::test;
    throw unknown_type_error("unknown split '" + std::string(s) + "'");
}

const medical_event* annotated_note::find_event(std::string_view event_id) const {
    auto it = std::find_if(events.begin(), events.end(),
                           [&](const medical_event& e) { return e.event_id == event_id; });
    return it == events.end() ? nullptr : &*it;
}

void validate_annotated_note(const annotated_note& an) {
    const auto& id = an.note.note_id;
    try {
        validate_note(an.note);
    } catch (const invalid_note& e) {
        throw annotation_error(id, e.what());
    }

    const auto size = an.note.full_text.size();
    std::set<std::string> ids;
    std::set<std::pair<char_range, event_type>> seen;
    for (std::size_t i = 0; i < an.events.size(); ++i) {
        const auto& e = an.events[i];
        if (e.event_id.empty()) throw annotation_error(id, field("events", i, "event_id") + ": empty");
        if (!ids.insert(e.event_id).second) {
            throw annotation_error(id, field("events", i, "event_id") + ": duplicate id '" + e.event_id + "'");
        }
        if (!e.span.valid_for(size)) {
            throw annotation_error(id, field("events", i, "start") + ": span out of bounds");
        }
        if (e.span.empty()) throw annotation_error(id, field("events", i, "start") + ": empty span");
        if (e.surface != slice(an.note.full_text, e.span)) {
            throw annotation_error(id, field("events", i, "surface") + ": does not match full_text");
        }
        if (!seen.emplace(e.span, e.etype).second) {
            throw annotation_error(id, field("events", i) + ": duplicate (span, etype)");
        }
    }

    std::set<std::tuple<std::string, std::string, relation_type>> rels;
    for (std::size_t i = 0; i < an.relations.size(); ++i) {
        const auto& r = an.relations[i];
        const auto* head = an.find_event(r.head);
        const auto* tail = an.find_event(r.tail);
        if (head == nullptr) {
            throw annotation_error(id, field("relations", i, "head") + ": unknown event '" + r.head + "'");
        }
        if (tail == nullptr) {
            throw annotation_error(id, field("relations", i, "tail") + ": unknown event '" + r.tail + "'");
        }
        if (r.head == r.tail) throw annotation_error(id, field("relations", i) + ": head equals tail");
        if (!r.label) throw annotation_error(id, field("relations", i) + ": annotated relations are positive");
        if (!admits(r.rtype, head->etype, tail->etype)) {
            throw annotation_error(id, field("relations", i, "rtype") + ": " + std::string(to_string(r.rtype)) +
                                           " does not admit (" + std::string(to_string(head->etype)) + ", " +
                                           std::string(to_string(tail->etype)) + ")");
        }
        if (!rels.emplace(r.head, r.tail, r.rtype).second) {
            throw annotation_error(id, field("relations", i) + ": duplicate relation");
        }
    }
}

std::string_view to_string(detailed_entity_type t) {
    return detailed_type_names[static_cast<std::size_t>(t)];
}

std::optional<detailed_entity_type> try_parse_detailed_entity_type(std::string_view s) {
    return lookup<detailed_entity_type>(detailed_type_names, s);
}

detailed_entity_type parse_detailed_entity_type(std::string_view s) {
    if (auto t = try_parse_detailed_entity_type(s)) return *t;
    throw unknown_type_error("unknown detailed entity type '" + std::string(s) + "'");
}

// ─────────────────────────────────────────────────────
// Files and dataset
// ─────────────────────────────────────────────────────

std::vector<annotated_note> parse_annotations(const nlohmann::json& j) {
    if (!j.is_array()) throw annotation_error("?", "top level: expected array of notes");
    std::vector<annotated_note> out;
    out.reserve(j.size());
    std::set<std::string> note_ids;
    for (std::size_t i = 0; i < j.size(); ++i) {
        auto note = parse_one(j[i], i);
        if (!note_ids.insert(note.note.note_id).second) {
            throw annotation_error(note.note.note_id, field("", i, "note_id") + ": duplicate note id");
        }
        out.push_back(std::move(note));
    }
    return out;
}

std::vector<annotated_note> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw parse_error(path.string() + ": " + e.what());
    }
    return parse_annotations(j);
}

nlohmann::json serialize_annotations(std::span<const annotated_note> notes) {
    json out = json::array();
    for (const auto& an : notes) {
        json events = json::array();
        for (const auto& e : an.events) {
            events.push_back({{"event_id", e.event_id},
                              {"start", e.span.begin},
                              {"end", e.span.end},
                              {"etype", to_string(e.etype)}});
        }
        json relations = json::array();
        for (const auto& r : an.relations) {
            relations.push_back({{"head", r.head}, {"tail", r.tail}, {"rtype", to_string(r.rtype)}});
        }
        out.push_back({{"note_id", an.note.note_id},
                       {"full_text", an.note.full_text},
                       {"visit_recap", range_to_json(an.note.visit_recap)},
                       {"detailed_instructions", range_to_json(an.note.detailed_instructions)},
                       {"split", to_string(an.split)},
                       {"events", std::move(events)},
                       {"relations", std::move(relations)}});
    }
    return out;
}

std::vector<relation_instance> derive_relation_dataset(std::span<const annotated_note> notes) {
    std::vector<relation_instance> out;
    for (const auto& an : notes) {
        std::set<std::tuple<std::string, std::string, relation_type>> positives;
        for (const auto& r : an.relations) positives.emplace(r.head, r.tail, r.rtype);

        std::vector<const medical_event*> order;
        order.reserve(an.events.size());
        for (const auto& e : an.events) order.push_back(&e);
        std::sort(order.begin(), order.end(), [](const medical_event* a, const medical_event* b) {
            return std::tie(a->span, a->event_id) < std::tie(b->span, b->event_id);
        });

        for (const auto* head : order) {
            for (const auto* tail : order) {
                if (head == tail) continue;
                for (auto rtype : all_relation_types) {
                    if (!admits(rtype, head->etype, tail->etype)) continue;
                    const bool positive = positives.count({head->event_id, tail->event_id, rtype}) > 0;
                    out.push_back({an.note.note_id, an.split,
                                   event_relation{head->event_id, tail->event_id, rtype, positive}});
                }
            }
        }
    }
    return out;
}

nlohmann::json to_json(const relation_instance& r) {
    return {{"note_id", r.note_id},
            {"split", to_string(r.split)},
            {"head", r.relation.head},
            {"tail", r.relation.tail},
            {"rtype", to_string(r.relation.rtype)},
            {"label", r.relation.label ? 1 : 0}};
}

}  // namespace dqa
