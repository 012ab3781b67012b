/**
 * @file dialogue.hpp
 * @brief Session state machine for the read / ask / verify / quiz loop.
 *
 * Every mutation is expressed as a session_event and applied through apply(),
 * so a session can be rebuilt exactly by folding its event log. The
 * operations below build the events, apply them to the live session and
 * return them for persistence.
 *
 * Phases:
 *
 *   Reading --next_turn--> AwaitingAnswer --submit_answer--> Asking
 *   Asking  --next_turn--> AwaitingAnswer
 *   Reading/Asking --next_turn (queue empty)--> ClozeTest --finish--> Finished
 */

#pragma once

#include "dqa/cloze.hpp"
#include "dqa/corpus.hpp"
#include "dqa/qgen.hpp"
#include "dqa/verify.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dqa {

enum class condition { none, q, qa };

std::string_view to_string(condition c);
condition parse_condition(std::string_view s);

enum class session_phase { reading, asking, awaiting_answer, cloze_test, finished };

std::string_view to_string(session_phase p);
session_phase parse_phase(std::string_view s);

enum class speaker { bot, patient };
enum class turn_kind { prompt, answer, feedback, acknowledgment, repeat_invite, system };

std::string_view to_string(speaker s);
speaker parse_speaker(std::string_view s);
std::string_view to_string(turn_kind k);
turn_kind parse_turn_kind(std::string_view s);

struct turn {
    std::size_t index = 0;
    dqa::speaker speaker = dqa::speaker::bot;
    turn_kind kind = turn_kind::system;
    std::string text;
    /// Present iff kind is feedback.
    std::optional<dqa::verdict> verdict;
    std::string timestamp;
    /// Question the turn belongs to; empty for system turns.
    std::string question_id;

    friend bool operator==(const turn&, const turn&) = default;
};

nlohmann::json to_json(const turn& t);
turn turn_from_json(const nlohmann::json& j);

struct dialogue_config {
    /// Re-ask a question once after an incorrect verdict.
    bool repeat_on_incorrect = false;
    std::string acknowledgment = "Thank you. Next question.";
    std::string reading_text = "Please read your discharge instructions carefully.";
    std::string repeat_text = "Let's try that question once more.";
    std::string quiz_text = "That was the last question. Please complete the short quiz about your discharge instructions.";

    friend bool operator==(const dialogue_config&, const dialogue_config&) = default;
};

nlohmann::json to_json(const dialogue_config& c);
dialogue_config dialogue_config_from_json(const nlohmann::json& j);

struct dialogue_session {
    std::string session_id;
    std::string note_id;
    dqa::condition condition = dqa::condition::qa;
    std::optional<qgen_mode> question_source;
    dialogue_config config;
    std::vector<question> questions;  ///< the set the session started with
    std::vector<question> queue;      ///< front = next question
    std::vector<turn> turns;
    session_phase phase = session_phase::reading;
    std::string current_question;     ///< question_id awaiting an answer
    std::set<std::string> repeated;   ///< question ids already re-asked
    std::optional<cloze_result> cloze;
    std::uint64_t last_seq = 0;

    [[nodiscard]] const question* find_question(std::string_view question_id) const;

    friend bool operator==(const dialogue_session&, const dialogue_session&) = default;
};

/// "None", "Q(GPT+IE)", "QA(Human)", ...
std::string condition_label(condition c, std::optional<qgen_mode> source);

/// Canonical form of a condition label: synonyms "Enhanced" and "Direct"
/// become "GPT+IE" and "GPT"; spacing is removed.
std::string canonical_condition_label(std::string_view label);

nlohmann::json to_json(const dialogue_session& s);

// ─────────────────────────────────────────────────────
// Events
// ─────────────────────────────────────────────────────

enum class event_kind { created, turn_appended, phase_changed, cloze_submitted };

std::string_view to_string(event_kind k);
event_kind parse_event_kind(std::string_view s);

struct session_event {
    std::uint64_t seq = 0;
    std::string session_id;
    event_kind kind = event_kind::created;
    nlohmann::json payload = nlohmann::json::object();

    friend bool operator==(const session_event&, const session_event&) = default;
};

nlohmann::json to_json(const session_event& e);
session_event session_event_from_json(const nlohmann::json& j);

/// Applies one event, enforcing sequence order and every machine rule.
/// Throws corrupt_log on an illegal event.
void apply(dialogue_session& s, const session_event& e);

/// Left fold of apply() over `events`, the first of which must be `created`.
dialogue_session replay_events(std::span<const session_event> events);

// ─────────────────────────────────────────────────────
// Operations
// ─────────────────────────────────────────────────────

using clock_fn = std::function<std::string()>;

/// UTC ISO-8601 with milliseconds.
std::string system_timestamp();

/// Computes feedback for an answer given the preceding exchanges.
using verifier_fn =
    std::function<verdict(std::span<const qa_exchange> history, const question& q, std::string_view answer)>;

verifier_fn make_llm_verifier(const discharge_note& note, llm::transport& llm,
                              verify_options opts = {}, prompt_set prompts = prompt_set::defaults());

struct session_start {
    dialogue_session session;
    std::vector<session_event> events;
};

/// Throws session_config_error when a Q/QA session has no questions or the
/// set belongs to another note.
session_start start_session(std::string session_id, const discharge_note& note, condition c,
                            std::optional<qgen_mode> source, const question_set& questions,
                            dialogue_config config = {}, const clock_fn& clock = system_timestamp);

struct step {
    std::vector<turn> bot_turns;
    std::vector<session_event> events;
};

/// Emits the next prompt, or moves to the quiz when the queue is empty.
/// Throws protocol_error outside Reading/Asking.
step next_turn(dialogue_session& s, const clock_fn& clock = system_timestamp);

/// Records the answer and the bot reaction for the condition. Throws
/// empty_answer or protocol_error (wrong phase).
step submit_answer(dialogue_session& s, std::string_view answer, const verifier_fn& verifier,
                   const clock_fn& clock = system_timestamp);

/// Exchanges completed so far (prompt, answer and feedback/acknowledgment).
std::vector<qa_exchange> history(const dialogue_session& s);

struct session_record {
    std::string session_id;
    std::string note_id;
    dqa::condition condition = dqa::condition::qa;
    std::optional<qgen_mode> question_source;
    std::vector<question> questions;
    std::vector<turn> turns;
    cloze_result cloze;

    friend bool operator==(const session_record&, const session_record&) = default;
};

nlohmann::json to_json(const session_record& r);

struct session_finish {
    session_record record;
    std::vector<session_event> events;
};

/// Stores the quiz result and closes the session. Throws protocol_error
/// unless the session is in the quiz phase.
session_finish finish_session(dialogue_session& s, const cloze_result& result);

/// Rebuilds the record of a finished session.
session_record make_record(const dialogue_session& s);

/// Header line with session metadata followed by one turn per line.
std::string transcript_jsonl(const dialogue_session& s);

}  // namespace dqa
