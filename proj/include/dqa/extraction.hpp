/**
 * @file extraction.hpp
 * @brief Salient-event and relation extraction over the Visit Recap, entity
 *        extraction over the Detailed Instructions, and IE scoring.
 *
 * Extraction is pluggable: a deterministic gazetteer baseline ships with the
 * library, and an external backend forwards requests to a model server over
 * JSON/HTTP so fine-tuned taggers and classifiers can be used unchanged.
 */

#pragma once

#include "dqa/corpus.hpp"
#include "dqa/http.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace dqa {

// ─────────────────────────────────────────────────────
// Gazetteer
// ─────────────────────────────────────────────────────

/// Lexicon plus regex rules. Term matching is case-insensitive and
/// word-bounded; rules are case-insensitive ECMAScript regexes whose first
/// capture group (or whole match) becomes the span.
class gazetteer {
public:
    struct rule {
        std::string type_name;
        std::string pattern;
        std::regex compiled;
    };

    gazetteer() = default;

    /// {"Disease": ["cholangitis"], ..., "patterns": [{"type": "...", "regex": "..."}]}
    static gazetteer from_json(const nlohmann::json& j);
    static gazetteer load(const std::filesystem::path& path);

    void add_term(event_type t, std::string term);
    void add_term(detailed_entity_type t, std::string term);
    void add_rule(std::string type_name, std::string pattern);

    [[nodiscard]] bool empty() const noexcept;
    [[nodiscard]] const std::map<event_type, std::vector<std::string>>& event_terms() const {
        return event_terms_;
    }
    [[nodiscard]] const std::map<detailed_entity_type, std::vector<std::string>>& entity_terms()
        const {
        return entity_terms_;
    }
    [[nodiscard]] const std::vector<rule>& rules() const { return rules_; }

private:
    std::map<event_type, std::vector<std::string>> event_terms_;
    std::map<detailed_entity_type, std::vector<std::string>> entity_terms_;
    std::vector<rule> rules_;
};

// ─────────────────────────────────────────────────────
// Entity markers
// ─────────────────────────────────────────────────────

/// Four-letter marker code per event type ("dsyn" for Disease, "medi" for Medicine, ...).
std::string_view marker_code(event_type t);
std::optional<event_type> event_type_for_marker(std::string_view code);

struct marked_sequence {
    std::string text;
    std::string head_tag;
    std::string tail_tag;
    char_range head_marked;  ///< "<code> surface </code>" of the head in `text`
    char_range tail_marked;

    friend bool operator==(const marked_sequence&, const marked_sequence&) = default;
};

/// Wraps both spans as "<code> surface </code>". Throws invalid_pair when the
/// spans overlap, are empty, or fall outside `text`.
marked_sequence mark_pair(std::string_view text, const medical_event& head,
                          const medical_event& tail);

/// Removes the two markers recorded in `seq`, restoring the original text.
std::string strip_markers(const marked_sequence& seq);

/// Removes every "<code> " / " </code>" pair for known codes from free text.
std::string strip_markers(std::string_view marked_text);

// ─────────────────────────────────────────────────────
// Candidates and the extractor interface
// ─────────────────────────────────────────────────────

struct relation_candidate {
    medical_event head;
    medical_event tail;
    relation_type rtype = relation_type::symptom_caused_by_disease;

    friend bool operator==(const relation_candidate&, const relation_candidate&) = default;
};

/// Every ordered pair (head, tail), head != tail, admitted by a relation
/// signature, ordered by (head start, tail start, relation name).
std::vector<relation_candidate> generate_candidates(std::span<const medical_event> events);

/// Everything a relation classifier may look at for one candidate.
struct relation_context {
    std::string_view text;      ///< note full text
    char_range scope;           ///< section the events were extracted from
    relation_candidate candidate;
    std::span<const medical_event> events;  ///< all events of the note
    marked_sequence marked;     ///< candidate marked inside its sentence window
};

/// Builds the context, marking the candidate inside the smallest run of
/// sentences covering both events.
relation_context make_relation_context(const discharge_note& note,
                                       std::span<const medical_event> events,
                                       const relation_candidate& candidate);

struct relation_decision {
    bool related = false;
    double confidence = 0.0;

    friend bool operator==(const relation_decision&, const relation_decision&) = default;
};

class extractor {
public:
    virtual ~extractor() = default;

    /// Events inside the Visit Recap, sorted by start, non-overlapping.
    [[nodiscard]] virtual std::vector<medical_event> extract_events(
        const discharge_note& note) const = 0;

    /// Typed spans inside the Detailed Instructions, sorted by start.
    [[nodiscard]] virtual std::vector<detailed_entity> extract_detailed_entities(
        const discharge_note& note) const = 0;

    [[nodiscard]] virtual relation_decision classify_relation(
        const relation_context& ctx) const = 0;
};

/// Dictionary-and-pattern baseline.
class gazetteer_extractor final : public extractor {
public:
    explicit gazetteer_extractor(std::shared_ptr<const gazetteer> lexicon);

    [[nodiscard]] std::vector<medical_event> extract_events(
        const discharge_note& note) const override;
    [[nodiscard]] std::vector<detailed_entity> extract_detailed_entities(
        const discharge_note& note) const override;

    /// Related iff both events share a sentence and each is the other's
    /// nearest type-compliant partner within it.
    [[nodiscard]] relation_decision classify_relation(const relation_context& ctx) const override;

private:
    std::shared_ptr<const gazetteer> lexicon_;
};

/// JSON-over-HTTP adapter for an external model server.
///
/// Requests: {"text", "task": "events"|"entities"|"relation", "marked_text"?}.
/// Responses: {"events": [{start, end, etype}]}, {"entities": [{start, end, type}]},
/// or {"label": 0|1, "confidence": p}. Offsets are relative to "text".
class external_extractor final : public extractor {
public:
    struct options {
        std::string endpoint;
        std::chrono::milliseconds timeout{10000};
        double relation_threshold = 0.5;
        http::post_fn post = http::post_json;
    };

    explicit external_extractor(options opts);

    [[nodiscard]] std::vector<medical_event> extract_events(
        const discharge_note& note) const override;
    [[nodiscard]] std::vector<detailed_entity> extract_detailed_entities(
        const discharge_note& note) const override;
    [[nodiscard]] relation_decision classify_relation(const relation_context& ctx) const override;

private:
    nlohmann::json call(const nlohmann::json& request) const;

    options opts_;
};

enum class backend_kind { gazetteer, external };

/// Backend configuration as read from config files and the CLI.
struct extractor_backend {
    backend_kind kind = backend_kind::gazetteer;
    std::optional<std::string> endpoint;
    std::shared_ptr<const gazetteer> lexicon;
    double relation_threshold = 0.5;
    std::chrono::milliseconds timeout{10000};

    /// Throws invalid_backend: external needs an endpoint, gazetteer a non-empty lexicon.
    void validate() const;
    [[nodiscard]] std::unique_ptr<extractor> make() const;
};

// Free-function forms of the extractor operations.
std::vector<medical_event> extract_events(const discharge_note& note, const extractor& ex);
std::vector<detailed_entity> extract_detailed_entities(const discharge_note& note,
                                                       const extractor& ex);
relation_decision classify_relation(const relation_context& ctx, const extractor& ex);

/// Events, candidates and the positive relations among them for one note.
struct extraction_result {
    std::vector<medical_event> events;
    std::vector<relation_candidate> candidates;
    std::vector<relation_decision> decisions;  ///< parallel to candidates

    [[nodiscard]] std::vector<relation_candidate> positives() const;
};

extraction_result extract_relations(const discharge_note& note, const extractor& ex);

// ─────────────────────────────────────────────────────
// Scoring
// ─────────────────────────────────────────────────────

struct category_score {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
};

struct ie_score {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
    std::map<std::string, category_score> per_category;
};

/// P = tp/(tp+fp) (0 with no predictions), R = tp/(tp+fn) (0 with no gold),
/// F1 = 2PR/(P+R) (0 when P+R = 0).
category_score make_category_score(std::size_t tp, std::size_t fp, std::size_t fn);

/// Accumulates exact-match counts over many notes and micro-averages them.
class ie_tally {
public:
    void add_events(std::span<const medical_event> gold, std::span<const medical_event> predicted);

    struct resolved_relation {
        char_range head;
        char_range tail;
        relation_type rtype = relation_type::symptom_caused_by_disease;

        friend auto operator<=>(const resolved_relation&, const resolved_relation&) = default;
    };
    void add_relations(std::span<const resolved_relation> gold,
                       std::span<const resolved_relation> predicted);

    [[nodiscard]] ie_score score() const;

private:
    struct counts {
        std::size_t tp = 0, fp = 0, fn = 0;
    };
    std::map<std::string, counts> per_category_;
};

using resolved_relation = ie_tally::resolved_relation;

/// Positive relations with their endpoint ids replaced by spans.
std::vector<resolved_relation> resolve_relations(std::span<const event_relation> relations,
                                                 std::span<const medical_event> events);

/// A prediction is correct iff its span and type both equal a gold event's.
ie_score score_events(std::span<const medical_event> gold, std::span<const medical_event> predicted);

/// Matches on (head span, tail span, relation type).
ie_score score_relations(std::span<const resolved_relation> gold,
                         std::span<const resolved_relation> predicted);

struct seen_unseen {
    std::vector<medical_event> seen;
    std::vector<medical_event> unseen;
};

/// Partitions test events by whether their normalized surface occurs among
/// the (normalized) training surfaces.
seen_unseen seen_unseen_split(const std::set<std::string>& train_surfaces,
                              std::span<const medical_event> test);

nlohmann::json to_json(const ie_score& s);
nlohmann::json to_json(const medical_event& e);
nlohmann::json to_json(const detailed_entity& e);

}  // namespace dqa
