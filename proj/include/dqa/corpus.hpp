/**
 * @file corpus.hpp
 * @brief Discharge notes, the salient-event annotation schema and the
 *        relation-classification dataset derived from it.
 *
 * Spans are byte offsets into the UTF-8 full text of the owning note.
 */

#pragma once

#include "dqa/text.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dqa {

// ─────────────────────────────────────────────────────
// Notes
// ─────────────────────────────────────────────────────

enum class note_provenance { synthetic, annotated, user_supplied };

struct discharge_note {
    std::string note_id;
    std::string full_text;
    char_range visit_recap;
    char_range detailed_instructions;
    note_provenance provenance = note_provenance::user_supplied;

    [[nodiscard]] std::string_view recap_text() const { return slice(full_text, visit_recap); }
    [[nodiscard]] std::string_view detailed_text() const {
        return slice(full_text, detailed_instructions);
    }

    friend bool operator==(const discharge_note&, const discharge_note&) = default;
};

/// Throws invalid_note if the section ranges are out of bounds or overlap, or
/// the text is empty.
void validate_note(const discharge_note& note);

enum class note_format { plain, sectioned_json };

/// Heading patterns used to split plain notes. A line matching any pattern
/// (case-insensitive, searched per line) starts the detailed instructions.
struct section_splitter {
    std::vector<std::string> heading_patterns = default_patterns();

    static std::vector<std::string> default_patterns();
};

/// Parses a raw note. Plain text is split at the first line matching a
/// heading pattern; sectioned JSON carries `visit_recap` and
/// `detailed_instructions` strings (and optionally `note_id`, `provenance`).
/// When no id is supplied one is derived from the content hash.
discharge_note ingest_note(std::string_view raw, note_format format,
                           const section_splitter& splitter = {});

nlohmann::json note_to_json(const discharge_note& note);
discharge_note note_from_json(const nlohmann::json& j);

std::string_view to_string(note_provenance p);
note_provenance parse_provenance(std::string_view s);

// ─────────────────────────────────────────────────────
// Event and relation schema
// ─────────────────────────────────────────────────────

enum class event_type {
    symptom,
    disease,
    complication,
    test,
    test_goal,
    test_result,
    test_implication,
    procedure,
    medicine,
    treatment_goal,
    treatment_result,
};

inline constexpr std::array<event_type, 11> all_event_types{
    event_type::symptom,        event_type::disease,          event_type::complication,
    event_type::test,           event_type::test_goal,        event_type::test_result,
    event_type::test_implication, event_type::procedure,      event_type::medicine,
    event_type::treatment_goal, event_type::treatment_result,
};

/// Procedure and Medicine are the two kinds of treatment.
constexpr bool is_treatment(event_type t) noexcept {
    return t == event_type::procedure || t == event_type::medicine;
}

std::string_view to_string(event_type t);
/// Throws unknown_type_error.
event_type parse_event_type(std::string_view s);
std::optional<event_type> try_parse_event_type(std::string_view s);

enum class relation_type {
    symptom_caused_by_disease,
    test_goal,
    test_result,
    test_implication,
    treatment_goal,
    treatment_result,
};

inline constexpr std::array<relation_type, 6> all_relation_types{
    relation_type::symptom_caused_by_disease, relation_type::test_goal,
    relation_type::test_result,               relation_type::test_implication,
    relation_type::treatment_goal,            relation_type::treatment_result,
};

struct relation_signature {
    std::span<const event_type> heads;
    std::span<const event_type> tails;
};

const relation_signature& signature(relation_type r);
bool admits(relation_type r, event_type head, event_type tail);

std::string_view to_string(relation_type r);
relation_type parse_relation_type(std::string_view s);

struct medical_event {
    std::string event_id;
    char_range span;
    std::string surface;
    event_type etype = event_type::symptom;

    friend bool operator==(const medical_event&, const medical_event&) = default;
};

/// Builds an event whose surface is the slice of `full_text` at `span`.
medical_event make_event(std::string event_id, std::string_view full_text, char_range span,
                         event_type etype);

struct event_relation {
    std::string head;  ///< event_id
    std::string tail;  ///< event_id
    relation_type rtype = relation_type::symptom_caused_by_disease;
    bool label = true;

    friend bool operator==(const event_relation&, const event_relation&) = default;
};

enum class data_split { train, validation, test };

std::string_view to_string(data_split s);
data_split parse_split(std::string_view s);

struct annotated_note {
    discharge_note note;
    std::vector<medical_event> events;
    std::vector<event_relation> relations;
    data_split split = data_split::train;

    [[nodiscard]] const medical_event* find_event(std::string_view event_id) const;

    friend bool operator==(const annotated_note&, const annotated_note&) = default;
};

/// Throws annotation_error naming the offending field path.
void validate_annotated_note(const annotated_note& note);

// ─────────────────────────────────────────────────────
// Detailed-instruction entities
// ─────────────────────────────────────────────────────

enum class detailed_entity_type {
    medicine_dosage,
    medicine_frequency,
    medicine_duration,
    medication_name,
    sign_symptom,
    diagnostic_procedure,
    upcoming_appointment,
};

inline constexpr std::array<detailed_entity_type, 7> all_detailed_entity_types{
    detailed_entity_type::medicine_dosage,      detailed_entity_type::medicine_frequency,
    detailed_entity_type::medicine_duration,    detailed_entity_type::medication_name,
    detailed_entity_type::sign_symptom,         detailed_entity_type::diagnostic_procedure,
    detailed_entity_type::upcoming_appointment,
};

/// Dosage, frequency, duration and appointments are the preferred cloze triggers.
constexpr bool is_priority(detailed_entity_type t) noexcept {
    return t == detailed_entity_type::medicine_dosage ||
           t == detailed_entity_type::medicine_frequency ||
           t == detailed_entity_type::medicine_duration ||
           t == detailed_entity_type::upcoming_appointment;
}

std::string_view to_string(detailed_entity_type t);
detailed_entity_type parse_detailed_entity_type(std::string_view s);
std::optional<detailed_entity_type> try_parse_detailed_entity_type(std::string_view s);

struct detailed_entity {
    char_range span;
    std::string surface;
    detailed_entity_type type = detailed_entity_type::medication_name;

    friend bool operator==(const detailed_entity&, const detailed_entity&) = default;
};

// ─────────────────────────────────────────────────────
// Annotation files and the relation dataset
// ─────────────────────────────────────────────────────

std::vector<annotated_note> parse_annotations(const nlohmann::json& j);
std::vector<annotated_note> load_annotations(const std::filesystem::path& path);
nlohmann::json serialize_annotations(std::span<const annotated_note> notes);

/// One labelled pair for relation classification.
struct relation_instance {
    std::string note_id;
    data_split split = data_split::train;
    event_relation relation;

    friend bool operator==(const relation_instance&, const relation_instance&) = default;
};

/// Positives are the annotated relations; negatives are every other ordered,
/// signature-compliant event pair inside the same note. Events are visited in
/// (span, event_id) order so the output is deterministic.
std::vector<relation_instance> derive_relation_dataset(std::span<const annotated_note> notes);

nlohmann::json to_json(const relation_instance& r);

}  // namespace dqa
