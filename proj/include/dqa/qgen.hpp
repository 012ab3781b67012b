/**
 * @file qgen.hpp
 * @brief Educational question generation.
 *
 * Three sources feed a question set:
 *  - relation templates over Visit Recap relations,
 *  - cloze sentences over Detailed Instructions entities, rewritten into a
 *    natural question by the generation model,
 *  - zero-shot generation directly from the note.
 */

#pragma once

#include "dqa/corpus.hpp"
#include "dqa/extraction.hpp"
#include "dqa/llm.hpp"
#include "dqa/prompts.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace dqa {

enum class question_source { human, direct_llm, template_ie, cloze_ie };

std::string_view to_string(question_source s);
question_source parse_question_source(std::string_view s);

struct relation_trigger {
    medical_event head;
    medical_event tail;
    relation_type rtype = relation_type::symptom_caused_by_disease;

    friend bool operator==(const relation_trigger&, const relation_trigger&) = default;
};

struct entity_trigger {
    detailed_entity entity;

    friend bool operator==(const entity_trigger&, const entity_trigger&) = default;
};

using question_trigger = std::variant<std::monostate, relation_trigger, entity_trigger>;

struct question {
    std::string question_id;
    std::string text;
    std::string answer_key;
    question_source source = question_source::human;
    question_trigger trigger;
    std::string note_id;
    /// Cloze question emitted without LLM rewriting.
    bool fallback = false;

    friend bool operator==(const question&, const question&) = default;
};

/// Stable id derived from (note_id, source, text, answer_key).
std::string make_question_id(const question& q);

nlohmann::json to_json(const question& q);
question question_from_json(const nlohmann::json& j);

// ─────────────────────────────────────────────────────
// Templates
// ─────────────────────────────────────────────────────

/// Fills the expert template for the relation type with the head surface;
/// the tail surface is the answer. Throws invalid_relation when the pair
/// does not satisfy the relation signature.
question template_question(std::string_view note_id, const relation_candidate& rel);

/// Template text alone, e.g. "What is the goal of treatment ERCP?".
std::string template_text(relation_type rtype, std::string_view head_surface);

/// Optional "What treatment is applied to disease [X]?" form for a
/// TreatmentGoal relation: asks about the tail, answered by the head.
/// Returns nullopt for other relation types.
std::optional<question> treatment_for_disease_question(std::string_view note_id,
                                                       const relation_candidate& rel);

struct template_options {
    bool treatment_for_disease = false;
};

std::vector<question> template_questions(std::string_view note_id,
                                         std::span<const relation_candidate> relations,
                                         const template_options& opts = {});

// ─────────────────────────────────────────────────────
// Cloze
// ─────────────────────────────────────────────────────

inline constexpr std::string_view cloze_blank = "_____";

struct cloze_sentence {
    std::string original;
    std::string blanked;
};

/// The sentence containing `entity`, with the entity replaced by the blank.
cloze_sentence make_cloze_sentence(const discharge_note& note, const detailed_entity& entity);

struct cloze_options {
    bool allow_non_priority = false;
    bool fallback = true;
    std::string model = llm::model_config{}.generation_model;
    double temperature = llm::model_config{}.generation_temperature;
    int max_tokens = 128;
};

/// Builds the rewrite request for a blanked sentence.
llm::chat_request cloze_request(std::string_view blanked_sentence, const cloze_options& opts,
                                const prompt_set& prompts = prompt_set::defaults());

/// `llm` may be null, which behaves like an outage.
question cloze_question(const discharge_note& note, const detailed_entity& entity,
                        llm::transport* llm, const cloze_options& opts = {},
                        const prompt_set& prompts = prompt_set::defaults());

/// Cloze questions for the eligible entities, issued with at most
/// `max_in_flight` concurrent LLM requests; output order follows `entities`.
std::vector<question> cloze_questions(const discharge_note& note,
                                      std::span<const detailed_entity> entities,
                                      llm::transport* llm, const cloze_options& opts = {},
                                      std::size_t max_in_flight = 4,
                                      const prompt_set& prompts = prompt_set::defaults());

// ─────────────────────────────────────────────────────
// Direct generation
// ─────────────────────────────────────────────────────

/// "at least four", "at least 12", ...
std::string at_least_phrase(std::size_t n);

struct direct_options {
    std::string model = llm::model_config{}.generation_model;
    double temperature = llm::model_config{}.generation_temperature;
    int max_tokens = 512;
};

llm::chat_request direct_request(const discharge_note& note, std::size_t n_min,
                                 const direct_options& opts = {},
                                 const prompt_set& prompts = prompt_set::defaults());

/// Splits an LLM reply into questions: enumerated items ("1. ...", "2) ...")
/// when present, otherwise lines ending in '?'.
std::vector<std::string> parse_enumerated_questions(std::string_view response);

/// Retries once when fewer than n_min questions parse, then throws
/// retryable_generation_error.
std::vector<question> direct_llm_questions(const discharge_note& note, std::size_t n_min,
                                           llm::transport& llm, const direct_options& opts = {},
                                           const prompt_set& prompts = prompt_set::defaults());

// ─────────────────────────────────────────────────────
// Assembly
// ─────────────────────────────────────────────────────

enum class qgen_mode { gpt, gpt_ie, human };

std::string_view to_string(qgen_mode m);
qgen_mode parse_qgen_mode(std::string_view s);

struct question_set {
    std::string note_id;
    std::vector<question> questions;
    nlohmann::json generation_config = nlohmann::json::object();

    friend bool operator==(const question_set&, const question_set&) = default;
};

nlohmann::json to_json(const question_set& s);
question_set question_set_from_json(const nlohmann::json& j);

struct question_pool {
    std::vector<question> template_qs;
    std::vector<question> cloze_qs;
    std::vector<question> direct_qs;
    std::vector<question> human_qs;
};

/// Selects the sources for `mode`, drops duplicates by normalized
/// (text, answer_key), and orders relation-triggered questions before
/// entity-triggered ones, each by trigger position. Throws assembly_error
/// when a question belongs to another note.
question_set assemble_question_set(std::string_view note_id, const question_pool& pool,
                                   qgen_mode mode,
                                   const nlohmann::json& generation_config = nlohmann::json::object());

/// Accepts either {note_id: [{text, answer_key}, ...]} or a bare array for `note_id`.
std::vector<question> human_questions_from_json(const nlohmann::json& j, std::string_view note_id);
std::vector<question> load_human_questions(const std::filesystem::path& path,
                                           std::string_view note_id);

struct qgen_config {
    std::size_t n_min = 4;
    template_options templates;
    cloze_options cloze;
    direct_options direct;
    std::size_t max_in_flight = 4;
};

/// Runs the full pipeline for one note. `ex` is needed for gpt_ie, `llm` for
/// gpt (and for cloze rewriting), `human` for the human mode.
question_set generate_question_set(const discharge_note& note, qgen_mode mode, const extractor* ex,
                                   llm::transport* llm, const std::vector<question>* human,
                                   const qgen_config& config = {},
                                   const prompt_set& prompts = prompt_set::defaults());

}  // namespace dqa
