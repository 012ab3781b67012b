#include "dqa/extraction.hpp"

#include "dqa/errors.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <tuple>

namespace dqa {

namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 11> marker_codes{
    "symp", "dsyn", "comp", "test", "tsgl", "tsrs", "tsim", "proc", "medi", "trgl", "trrs",
};

// A typed span proposed by some matcher before overlap resolution.
struct hit {
    char_range span;
    int type_rank = 0;
};

/// Longest match wins, then leftmost, then lowest type rank. Result sorted by start.
std::vector<hit> resolve_overlaps(std::vector<hit> hits) {
    std::sort(hits.begin(), hits.end(), [](const hit& a, const hit& b) {
        if (a.span.length() != b.span.length()) return a.span.length() > b.span.length();
        if (a.span.begin != b.span.begin) return a.span.begin < b.span.begin;
        return a.type_rank < b.type_rank;
    });
    std::vector<hit> kept;
    for (const auto& h : hits) {
        const bool clash = std::any_of(kept.begin(), kept.end(),
                                       [&](const hit& k) { return k.span.overlaps(h.span); });
        if (!clash) kept.push_back(h);
    }
    std::sort(kept.begin(), kept.end(), [](const hit& a, const hit& b) {
        return std::tie(a.span.begin, a.span.end, a.type_rank) <
               std::tie(b.span.begin, b.span.end, b.type_rank);
    });
    return kept;
}

/// Case-insensitive, word-bounded occurrences of `term` inside `range`.
std::vector<char_range> find_term(std::string_view lowered_text, char_range range,
                                  std::string_view term) {
    std::vector<char_range> out;
    const std::string needle = text::to_lower(text::trim(term));
    if (needle.empty()) return out;
    std::size_t pos = range.begin;
    while (true) {
        pos = lowered_text.find(needle, pos);
        if (pos == std::string_view::npos || pos + needle.size() > range.end) break;
        const std::size_t end = pos + needle.size();
        const bool left_ok = pos == range.begin || !text::is_word_char(lowered_text[pos - 1]) ||
                             !text::is_word_char(needle.front());
        const bool right_ok = end == range.end || !text::is_word_char(lowered_text[end]) ||
                              !text::is_word_char(needle.back());
        if (left_ok && right_ok) out.push_back({pos, end});
        ++pos;
    }
    return out;
}

/// Regex matches inside `range`; the first participating capture group is the span.
std::vector<char_range> find_regex(std::string_view full_text, char_range range,
                                   const std::regex& re) {
    std::vector<char_range> out;
    const std::string section(slice(full_text, range));
    for (auto it = std::sregex_iterator(section.begin(), section.end(), re);
         it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        std::size_t group = 0;
        if (m.size() > 1 && m[1].matched) group = 1;
        const auto b = range.begin + static_cast<std::size_t>(m.position(group));
        const auto e = b + static_cast<std::size_t>(m.length(group));
        if (e > b) out.push_back({b, e});
    }
    return out;
}

std::regex icase(const std::string& pattern) {
    return std::regex(pattern, std::regex::ECMAScript | std::regex::icase);
}

const std::regex& dosage_re() {
    static const std::regex re = icase(
        R"(\b\d+(?:\.\d+)?\s?(?:mg|mcg|g|ml|meq|units?|tablets?|tabs?|capsules?|puffs?)\b)");
    return re;
}

const std::regex& frequency_re() {
    static const std::regex re = icase(
        R"(\b(?:once|twice|three times|four times)\s+(?:a|per)\s+(?:day|week)\b)"
        R"(|\b(?:once|twice|three times|four times)\s+daily\b)"
        R"(|\bevery\s+\d+(?:\s*-\s*\d+)?\s+hours?\b)"
        R"(|\bevery\s+(?:morning|evening|night|other day)\b)"
        R"(|\b(?:daily|nightly|at bedtime|as needed)\b)");
    return re;
}

const std::regex& duration_re() {
    static const std::regex re = icase(
        R"(\bfor\s+(?:(?:the\s+)?next\s+)?(?:\d+|one|two|three|four|five|six|seven|eight|nine|ten|a)\s+(?:more\s+)?(?:days?|weeks?|months?)\b)");
    return re;
}

const std::regex& appointment_date_re() {
    static const std::regex re = icase(
        R"(\b(?:(?:mon|tues|wednes|thurs|fri|satur|sun)day,?\s+)?)"
        R"((?:january|february|march|april|may|june|july|august|september|october|november|december)\s+\d{1,2}(?:st|nd|rd|th)?)"
        R"((?:,?\s+\d{4})?(?:\s+at\s+\d{1,2}(?::\d{2})?\s*(?:am|pm))?)"
        R"(|\b\d{1,2}/\d{1,2}(?:/\d{2,4})?\b)");
    return re;
}

const std::regex& clinic_re() {
    static const std::regex re(R"(\b(?:[A-Z][A-Za-z]+\s+){1,3}Clinic\b)");
    return re;
}

const std::regex& relative_visit_re() {
    static const std::regex re =
        icase(R"(\bin\s+(?:\d+|one|two|three|four|five|six|a)\s+(?:days?|weeks?|months?)\b)");
    return re;
}

const std::regex& visit_cue_re() {
    static const std::regex re = icase(R"(\b(?:follow[- ]?up|appointment|see (?:your|dr))\b)");
    return re;
}

std::size_t gap(const char_range& a, const char_range& b) {
    if (a.end <= b.begin) return b.begin - a.end;
    if (b.end <= a.begin) return a.begin - b.end;
    return 0;
}

bool same_event(const medical_event& a, const medical_event& b) {
    return a.event_id == b.event_id && a.span == b.span && a.etype == b.etype;
}

std::optional<char_range> sentence_of(const std::vector<char_range>& sentences, char_range span) {
    for (const auto& s : sentences) {
        if (s.contains(span)) return s;
    }
    return std::nullopt;
}

std::size_t json_offset(const json& obj, const char* key) {
    if (!obj.contains(key) || !obj[key].is_number_integer() || obj[key].get<long long>() < 0) {
        throw extractor_protocol_error(std::string("field '") + key + "' must be a non-negative integer");
    }
    return obj[key].get<std::size_t>();
}

}  // namespace

// ─────────────────────────────────────────────────────
// Gazetteer
// ─────────────────────────────────────────────────────

gazetteer gazetteer::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw parse_error("gazetteer must be a JSON object");
    gazetteer g;
    for (const auto& [key, value] : j.items()) {
        if (key == "patterns") {
            if (!value.is_array()) throw parse_error("gazetteer 'patterns' must be an array");
            for (const auto& r : value) {
                if (!r.contains("type") || !r.contains("regex")) {
                    throw parse_error("gazetteer pattern needs 'type' and 'regex'");
                }
                g.add_rule(r["type"].get<std::string>(), r["regex"].get<std::string>());
            }
            continue;
        }
        if (!value.is_array()) throw parse_error("gazetteer entry '" + key + "' must be an array");
        if (auto et = try_parse_event_type(key)) {
            for (const auto& term : value) g.add_term(*et, term.get<std::string>());
        } else if (auto dt = try_parse_detailed_entity_type(key)) {
            for (const auto& term : value) g.add_term(*dt, term.get<std::string>());
        } else {
            throw unknown_type_error("gazetteer: unknown type '" + key + "'");
        }
    }
    return g;
}

gazetteer gazetteer::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open gazetteer " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw parse_error(path.string() + ": " + e.what());
    }
}

void gazetteer::add_term(event_type t, std::string term) {
    if (!text::trim(term).empty()) event_terms_[t].push_back(std::move(term));
}

void gazetteer::add_term(detailed_entity_type t, std::string term) {
    if (!text::trim(term).empty()) entity_terms_[t].push_back(std::move(term));
}

void gazetteer::add_rule(std::string type_name, std::string pattern) {
    if (!try_parse_event_type(type_name) && !try_parse_detailed_entity_type(type_name)) {
        throw unknown_type_error("gazetteer rule: unknown type '" + type_name + "'");
    }
    try {
        auto compiled = icase(pattern);
        rules_.push_back({std::move(type_name), std::move(pattern), std::move(compiled)});
    } catch (const std::regex_error& e) {
        throw parse_error("gazetteer rule '" + pattern + "': " + e.what());
    }
}

bool gazetteer::empty() const noexcept {
    return event_terms_.empty() && entity_terms_.empty() && rules_.empty();
}

// ─────────────────────────────────────────────────────
// Markers
// ─────────────────────────────────────────────────────

std::string_view marker_code(event_type t) { return marker_codes[static_cast<std::size_t>(t)]; }

std::optional<event_type> event_type_for_marker(std::string_view code) {
    for (std::size_t i = 0; i < marker_codes.size(); ++i) {
        if (marker_codes[i] == code) return static_cast<event_type>(i);
    }
    return std::nullopt;
}

marked_sequence mark_pair(std::string_view text, const medical_event& head,
                          const medical_event& tail) {
    for (const auto* e : {&head, &tail}) {
        if (!e->span.valid_for(text.size()) || e->span.empty()) {
            throw invalid_pair("event '" + e->event_id + "' span is empty or outside the text");
        }
    }
    if (head.span.overlaps(tail.span)) throw invalid_pair("head and tail spans overlap");

    const bool head_first = head.span.begin < tail.span.begin;
    const medical_event& first = head_first ? head : tail;
    const medical_event& second = head_first ? tail : head;

    auto open = [](const medical_event& e) { return "<" + std::string(marker_code(e.etype)) + "> "; };
    auto close = [](const medical_event& e) { return " </" + std::string(marker_code(e.etype)) + ">"; };

    marked_sequence out;
    out.head_tag = std::string(marker_code(head.etype));
    out.tail_tag = std::string(marker_code(tail.etype));

    std::string& s = out.text;
    s.reserve(text.size() + 24);
    s.append(text.substr(0, first.span.begin));
    char_range first_marked{s.size(), 0};
    s.append(open(first)).append(slice(text, first.span)).append(close(first));
    first_marked.end = s.size();
    s.append(text.substr(first.span.end, second.span.begin - first.span.end));
    char_range second_marked{s.size(), 0};
    s.append(open(second)).append(slice(text, second.span)).append(close(second));
    second_marked.end = s.size();
    s.append(text.substr(second.span.end));

    out.head_marked = head_first ? first_marked : second_marked;
    out.tail_marked = head_first ? second_marked : first_marked;
    return out;
}

std::string strip_markers(const marked_sequence& seq) {
    const bool head_first = seq.head_marked.begin < seq.tail_marked.begin;
    const char_range first = head_first ? seq.head_marked : seq.tail_marked;
    const char_range second = head_first ? seq.tail_marked : seq.head_marked;
    const std::size_t first_open = 3 + (head_first ? seq.head_tag : seq.tail_tag).size();
    const std::size_t second_open = 3 + (head_first ? seq.tail_tag : seq.head_tag).size();

    auto inner = [&](char_range r, std::size_t open_len) {
        const std::size_t close_len = open_len + 1;
        return std::string_view(seq.text).substr(r.begin + open_len, r.length() - open_len - close_len);
    };

    std::string out;
    const std::string_view t(seq.text);
    out.append(t.substr(0, first.begin));
    out.append(inner(first, first_open));
    out.append(t.substr(first.end, second.begin - first.end));
    out.append(inner(second, second_open));
    out.append(t.substr(second.end));
    return out;
}

std::string strip_markers(std::string_view marked_text) {
    static const std::regex re = [] {
        std::string codes;
        for (auto c : marker_codes) {
            if (!codes.empty()) codes += "|";
            codes += c;
        }
        return std::regex("<(?:" + codes + ")> | </(?:" + codes + ")>");
    }();
    return std::regex_replace(std::string(marked_text), re, "");
}

// ─────────────────────────────────────────────────────
// Candidates
// ─────────────────────────────────────────────────────

std::vector<relation_candidate> generate_candidates(std::span<const medical_event> events) {
    std::vector<relation_candidate> out;
    for (std::size_t h = 0; h < events.size(); ++h) {
        for (std::size_t t = 0; t < events.size(); ++t) {
            if (h == t) continue;
            for (auto rtype : all_relation_types) {
                if (admits(rtype, events[h].etype, events[t].etype)) {
                    out.push_back({events[h], events[t], rtype});
                }
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const relation_candidate& a, const relation_candidate& b) {
        return std::make_tuple(a.head.span.begin, a.tail.span.begin, to_string(a.rtype)) <
               std::make_tuple(b.head.span.begin, b.tail.span.begin, to_string(b.rtype));
    });
    return out;
}

relation_context make_relation_context(const discharge_note& note,
                                       std::span<const medical_event> events,
                                       const relation_candidate& candidate) {
    const auto sentences = text::sentence_spans(note.full_text, note.visit_recap);
    const char_range hs = sentence_of(sentences, candidate.head.span).value_or(candidate.head.span);
    const char_range ts = sentence_of(sentences, candidate.tail.span).value_or(candidate.tail.span);
    const char_range window{std::min(hs.begin, ts.begin), std::max(hs.end, ts.end)};

    auto shifted = [&](medical_event e) {
        e.span = {e.span.begin - window.begin, e.span.end - window.begin};
        return e;
    };
    const std::string_view window_text = slice(note.full_text, window);

    relation_context ctx;
    ctx.text = note.full_text;
    ctx.scope = note.visit_recap;
    ctx.candidate = candidate;
    ctx.events = events;
    ctx.marked = mark_pair(window_text, shifted(candidate.head), shifted(candidate.tail));
    return ctx;
}

// ─────────────────────────────────────────────────────
// Gazetteer extractor
// ─────────────────────────────────────────────────────

gazetteer_extractor::gazetteer_extractor(std::shared_ptr<const gazetteer> lexicon)
    : lexicon_(std::move(lexicon)) {
    if (!lexicon_ || lexicon_->empty()) throw invalid_backend("gazetteer backend needs a non-empty lexicon");
}

std::vector<medical_event> gazetteer_extractor::extract_events(const discharge_note& note) const {
    const char_range scope = note.visit_recap;
    if (scope.empty()) return {};
    const std::string lowered = text::to_lower(note.full_text);

    std::vector<hit> hits;
    for (const auto& [etype, terms] : lexicon_->event_terms()) {
        for (const auto& term : terms) {
            for (auto span : find_term(lowered, scope, term)) {
                hits.push_back({span, static_cast<int>(etype)});
            }
        }
    }
    for (const auto& r : lexicon_->rules()) {
        if (auto et = try_parse_event_type(r.type_name)) {
            for (auto span : find_regex(note.full_text, scope, r.compiled)) {
                hits.push_back({span, static_cast<int>(*et)});
            }
        }
    }

    std::vector<medical_event> out;
    std::size_t n = 0;
    for (const auto& h : resolve_overlaps(std::move(hits))) {
        out.push_back(make_event("E" + std::to_string(++n), note.full_text, h.span,
                                 static_cast<event_type>(h.type_rank)));
    }
    return out;
}

std::vector<detailed_entity> gazetteer_extractor::extract_detailed_entities(
    const discharge_note& note) const {
    const char_range scope = note.detailed_instructions;
    if (scope.empty()) return {};
    const std::string& full = note.full_text;
    const std::string lowered = text::to_lower(full);
    const auto sentences = text::sentence_spans(full, scope);

    auto rank = [](detailed_entity_type t) { return static_cast<int>(t); };
    std::vector<hit> hits;
    std::vector<char_range> medication_mentions;

    for (const auto& [type, terms] : lexicon_->entity_terms()) {
        for (const auto& term : terms) {
            for (auto span : find_term(lowered, scope, term)) {
                hits.push_back({span, rank(type)});
                if (type == detailed_entity_type::medication_name) medication_mentions.push_back(span);
            }
        }
    }
    for (const auto& r : lexicon_->rules()) {
        if (auto dt = try_parse_detailed_entity_type(r.type_name)) {
            for (auto span : find_regex(full, scope, r.compiled)) {
                hits.push_back({span, rank(*dt)});
                if (*dt == detailed_entity_type::medication_name) medication_mentions.push_back(span);
            }
        }
    }

    // Dosages only count when they follow a medication name in the same sentence.
    for (auto span : find_regex(full, scope, dosage_re())) {
        const auto sentence = sentence_of(sentences, span);
        const bool after_medication = sentence &&
            std::any_of(medication_mentions.begin(), medication_mentions.end(), [&](char_range m) {
                return sentence->contains(m) && m.end <= span.begin;
            });
        if (after_medication) hits.push_back({span, rank(detailed_entity_type::medicine_dosage)});
    }
    for (auto span : find_regex(full, scope, frequency_re())) {
        hits.push_back({span, rank(detailed_entity_type::medicine_frequency)});
    }
    for (auto span : find_regex(full, scope, duration_re())) {
        hits.push_back({span, rank(detailed_entity_type::medicine_duration)});
    }
    for (const auto* re : {&appointment_date_re(), &clinic_re()}) {
        for (auto span : find_regex(full, scope, *re)) {
            hits.push_back({span, rank(detailed_entity_type::upcoming_appointment)});
        }
    }
    for (const auto& s : sentences) {
        const std::string sentence(slice(full, s));
        if (!std::regex_search(sentence, visit_cue_re())) continue;
        for (auto span : find_regex(full, s, relative_visit_re())) {
            hits.push_back({span, rank(detailed_entity_type::upcoming_appointment)});
        }
    }

    std::vector<detailed_entity> out;
    for (const auto& h : resolve_overlaps(std::move(hits))) {
        out.push_back({h.span, std::string(slice(full, h.span)),
                       static_cast<detailed_entity_type>(h.type_rank)});
    }
    return out;
}

relation_decision gazetteer_extractor::classify_relation(const relation_context& ctx) const {
    const auto& cand = ctx.candidate;
    const auto sentences = text::sentence_spans(ctx.text, ctx.scope);
    const auto hs = sentence_of(sentences, cand.head.span);
    const auto ts = sentence_of(sentences, cand.tail.span);
    if (!hs || !ts || *hs != *ts) return {false, 0.0};
    const char_range sentence = *hs;

    // Nearest event in the sentence satisfying `compliant`, ties broken leftmost.
    auto nearest = [&](const medical_event& from, auto compliant) -> const medical_event* {
        const medical_event* best = nullptr;
        std::size_t best_gap = std::numeric_limits<std::size_t>::max();
        for (const auto& e : ctx.events) {
            if (same_event(e, from) || !sentence.contains(e.span) || !compliant(e)) continue;
            const auto d = gap(from.span, e.span);
            if (d < best_gap || (d == best_gap && best && e.span.begin < best->span.begin)) {
                best = &e;
                best_gap = d;
            }
        }
        return best;
    };

    const auto* head_partner = nearest(cand.head, [&](const medical_event& e) {
        return admits(cand.rtype, cand.head.etype, e.etype);
    });
    const auto* tail_partner = nearest(cand.tail, [&](const medical_event& e) {
        return admits(cand.rtype, e.etype, cand.tail.etype);
    });
    const bool mutual = head_partner && tail_partner && same_event(*head_partner, cand.tail) &&
                        same_event(*tail_partner, cand.head);
    return mutual ? relation_decision{true, 1.0} : relation_decision{false, 0.0};
}

// ─────────────────────────────────────────────────────
// External extractor
// ─────────────────────────────────────────────────────

external_extractor::external_extractor(options opts) : opts_(std::move(opts)) {
    if (opts_.endpoint.empty()) throw invalid_backend("external backend needs an endpoint");
    if (!opts_.post) opts_.post = http::post_json;
}

nlohmann::json external_extractor::call(const nlohmann::json& request) const {
    const auto reply = opts_.post(opts_.endpoint, request.dump(), {}, opts_.timeout);
    if (reply.status == 0) {
        throw extractor_unavailable("extractor endpoint " + opts_.endpoint + " unreachable: " + reply.error);
    }
    if (reply.status >= 500 || reply.status == 408 || reply.status == 429) {
        throw extractor_unavailable("extractor endpoint returned HTTP " + std::to_string(reply.status));
    }
    if (reply.status < 200 || reply.status >= 300) {
        throw extractor_protocol_error("extractor endpoint returned HTTP " + std::to_string(reply.status));
    }
    try {
        auto j = json::parse(reply.body);
        if (!j.is_object()) throw extractor_protocol_error("extractor response is not a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw extractor_protocol_error(std::string("extractor response is not JSON: ") + e.what());
    }
}

std::vector<medical_event> external_extractor::extract_events(const discharge_note& note) const {
    const char_range scope = note.visit_recap;
    if (scope.empty()) return {};
    const std::string section(note.recap_text());
    const auto response = call({{"text", section}, {"task", "events"}});
    if (!response.contains("events") || !response["events"].is_array()) {
        throw extractor_protocol_error("response lacks an 'events' array");
    }

    std::vector<std::pair<char_range, event_type>> spans;
    for (const auto& e : response["events"]) {
        if (!e.is_object()) throw extractor_protocol_error("event entry is not an object");
        const char_range local{json_offset(e, "start"), json_offset(e, "end")};
        if (!local.valid_for(section.size()) || local.empty()) {
            throw extractor_protocol_error("event span out of bounds or empty");
        }
        if (!e.contains("etype") || !e["etype"].is_string()) {
            throw extractor_protocol_error("event entry lacks 'etype'");
        }
        auto t = try_parse_event_type(e["etype"].get<std::string>());
        if (!t) throw extractor_protocol_error("unknown event type '" + e["etype"].get<std::string>() + "'");
        spans.emplace_back(char_range{local.begin + scope.begin, local.end + scope.begin}, *t);
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i - 1].first.overlaps(spans[i].first)) {
            throw extractor_protocol_error("external extractor returned overlapping events");
        }
    }

    std::vector<medical_event> out;
    std::size_t n = 0;
    for (const auto& [span, t] : spans) {
        out.push_back(make_event("E" + std::to_string(++n), note.full_text, span, t));
    }
    return out;
}

std::vector<detailed_entity> external_extractor::extract_detailed_entities(
    const discharge_note& note) const {
    const char_range scope = note.detailed_instructions;
    if (scope.empty()) return {};
    const std::string section(note.detailed_text());
    const auto response = call({{"text", section}, {"task", "entities"}});
    if (!response.contains("entities") || !response["entities"].is_array()) {
        throw extractor_protocol_error("response lacks an 'entities' array");
    }
    std::vector<detailed_entity> out;
    for (const auto& e : response["entities"]) {
        if (!e.is_object()) throw extractor_protocol_error("entity entry is not an object");
        const char_range local{json_offset(e, "start"), json_offset(e, "end")};
        if (!local.valid_for(section.size()) || local.empty()) {
            throw extractor_protocol_error("entity span out of bounds or empty");
        }
        if (!e.contains("type") || !e["type"].is_string()) {
            throw extractor_protocol_error("entity entry lacks 'type'");
        }
        auto t = try_parse_detailed_entity_type(e["type"].get<std::string>());
        if (!t) throw extractor_protocol_error("unknown entity type '" + e["type"].get<std::string>() + "'");
        const char_range span{local.begin + scope.begin, local.end + scope.begin};
        out.push_back({span, std::string(slice(note.full_text, span)), *t});
    }
    std::sort(out.begin(), out.end(), [](const detailed_entity& a, const detailed_entity& b) {
        return std::tie(a.span, a.type) < std::tie(b.span, b.type);
    });
    return out;
}

relation_decision external_extractor::classify_relation(const relation_context& ctx) const {
    const std::string plain = strip_markers(ctx.marked);
    const auto response =
        call({{"text", plain}, {"task", "relation"}, {"marked_text", ctx.marked.text}});

    std::optional<double> confidence;
    if (response.contains("confidence")) {
        if (!response["confidence"].is_number()) throw extractor_protocol_error("'confidence' must be a number");
        confidence = response["confidence"].get<double>();
        if (*confidence < 0.0 || *confidence > 1.0) {
            throw extractor_protocol_error("'confidence' must lie in [0, 1]");
        }
    }
    std::optional<bool> label;
    if (response.contains("label")) {
        const auto& l = response["label"];
        if (l.is_boolean()) {
            label = l.get<bool>();
        } else if (l.is_number_integer() && (l.get<int>() == 0 || l.get<int>() == 1)) {
            label = l.get<int>() == 1;
        } else {
            throw extractor_protocol_error("'label' must be 0, 1 or a boolean");
        }
    }
    if (!label && !confidence) throw extractor_protocol_error("response needs 'label' or 'confidence'");

    const double p = confidence.value_or(*label ? 1.0 : 0.0);
    const bool related = label.value_or(true) && p >= opts_.relation_threshold;
    return {related, p};
}

// ─────────────────────────────────────────────────────
// Backend and pipeline
// ─────────────────────────────────────────────────────

void extractor_backend::validate() const {
    switch (kind) {
        case backend_kind::external:
            if (!endpoint || endpoint->empty()) throw invalid_backend("external backend requires an endpoint");
            break;
        case backend_kind::gazetteer:
            if (!lexicon || lexicon->empty()) throw invalid_backend("gazetteer backend requires a non-empty lexicon");
            break;
    }
}

std::unique_ptr<extractor> extractor_backend::make() const {
    validate();
    if (kind == backend_kind::gazetteer) return std::make_unique<gazetteer_extractor>(lexicon);
    external_extractor::options opts;
    opts.endpoint = *endpoint;
    opts.timeout = timeout;
    opts.relation_threshold = relation_threshold;
    return std::make_unique<external_extractor>(std::move(opts));
}

std::vector<medical_event> extract_events(const discharge_note& note, const extractor& ex) {
    return ex.extract_events(note);
}

std::vector<detailed_entity> extract_detailed_entities(const discharge_note& note, const extractor& ex) {
    return ex.extract_detailed_entities(note);
}

relation_decision classify_relation(const relation_context& ctx, const extractor& ex) {
    return ex.classify_relation(ctx);
}

std::vector<relation_candidate> extraction_result::positives() const {
    std::vector<relation_candidate> out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (decisions[i].related) out.push_back(candidates[i]);
    }
    return out;
}

extraction_result extract_relations(const discharge_note& note, const extractor& ex) {
    extraction_result r;
    r.events = ex.extract_events(note);
    r.candidates = generate_candidates(r.events);
    r.decisions.reserve(r.candidates.size());
    for (const auto& c : r.candidates) {
        r.decisions.push_back(ex.classify_relation(make_relation_context(note, r.events, c)));
    }
    return r;
}

// ─────────────────────────────────────────────────────
// Scoring
// ─────────────────────────────────────────────────────

category_score make_category_score(std::size_t tp, std::size_t fp, std::size_t fn) {
    category_score s;
    s.true_positives = tp;
    s.false_positives = fp;
    s.false_negatives = fn;
    s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    s.f1 = s.precision + s.recall == 0.0
               ? 0.0
               : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

void ie_tally::add_events(std::span<const medical_event> gold, std::span<const medical_event> predicted) {
    std::map<std::pair<char_range, event_type>, std::pair<std::size_t, std::size_t>> keys;
    for (const auto& e : gold) ++keys[{e.span, e.etype}].first;
    for (const auto& e : predicted) ++keys[{e.span, e.etype}].second;
    for (const auto& [key, n] : keys) {
        auto& c = per_category_[std::string(to_string(key.second))];
        const auto matched = std::min(n.first, n.second);
        c.tp += matched;
        c.fn += n.first - matched;
        c.fp += n.second - matched;
    }
}

void ie_tally::add_relations(std::span<const resolved_relation> gold,
                             std::span<const resolved_relation> predicted) {
    std::map<resolved_relation, std::pair<std::size_t, std::size_t>> keys;
    for (const auto& r : gold) ++keys[r].first;
    for (const auto& r : predicted) ++keys[r].second;
    for (const auto& [key, n] : keys) {
        auto& c = per_category_[std::string(to_string(key.rtype))];
        const auto matched = std::min(n.first, n.second);
        c.tp += matched;
        c.fn += n.first - matched;
        c.fp += n.second - matched;
    }
}

ie_score ie_tally::score() const {
    ie_score s;
    for (const auto& [name, c] : per_category_) {
        s.true_positives += c.tp;
        s.false_positives += c.fp;
        s.false_negatives += c.fn;
        s.per_category[name] = make_category_score(c.tp, c.fp, c.fn);
    }
    const auto micro = make_category_score(s.true_positives, s.false_positives, s.false_negatives);
    s.precision = micro.precision;
    s.recall = micro.recall;
    s.f1 = micro.f1;
    return s;
}

std::vector<resolved_relation> resolve_relations(std::span<const event_relation> relations,
                                                 std::span<const medical_event> events) {
    auto find = [&](const std::string& id) -> const medical_event* {
        for (const auto& e : events) {
            if (e.event_id == id) return &e;
        }
        return nullptr;
    };
    std::vector<resolved_relation> out;
    for (const auto& r : relations) {
        if (!r.label) continue;
        const auto* h = find(r.head);
        const auto* t = find(r.tail);
        if (h == nullptr || t == nullptr) {
            throw invalid_relation("relation references unknown event '" + (h ? r.tail : r.head) + "'");
        }
        out.push_back({h->span, t->span, r.rtype});
    }
    return out;
}

ie_score score_events(std::span<const medical_event> gold, std::span<const medical_event> predicted) {
    ie_tally t;
    t.add_events(gold, predicted);
    return t.score();
}

ie_score score_relations(std::span<const resolved_relation> gold,
                         std::span<const resolved_relation> predicted) {
    ie_tally t;
    t.add_relations(gold, predicted);
    return t.score();
}

seen_unseen seen_unseen_split(const std::set<std::string>& train_surfaces,
                              std::span<const medical_event> test) {
    std::set<std::string> normalized;
    for (const auto& s : train_surfaces) normalized.insert(text::normalize_surface(s));
    seen_unseen out;
    for (const auto& e : test) {
        if (normalized.count(text::normalize_surface(e.surface)) > 0) {
            out.seen.push_back(e);
        } else {
            out.unseen.push_back(e);
        }
    }
    return out;
}

nlohmann::json to_json(const ie_score& s) {
    json per = json::object();
    for (const auto& [name, c] : s.per_category) {
        per[name] = {{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1},
                     {"tp", c.true_positives}, {"fp", c.false_positives}, {"fn", c.false_negatives}};
    }
    return {{"precision", s.precision},
            {"recall", s.recall},
            {"f1", s.f1},
            {"support", {{"tp", s.true_positives}, {"fp", s.false_positives}, {"fn", s.false_negatives}}},
            {"per_category", per}};
}

nlohmann::json to_json(const medical_event& e) {
    return {{"event_id", e.event_id},
            {"start", e.span.begin},
            {"end", e.span.end},
            {"surface", e.surface},
            {"etype", to_string(e.etype)}};
}

nlohmann::json to_json(const detailed_entity& e) {
    return {{"start", e.span.begin}, {"end", e.span.end}, {"surface", e.surface}, {"type", to_string(e.type)}};
}

}  // namespace dqa
