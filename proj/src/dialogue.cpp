#include "dqa/dialogue.hpp"

#include "dqa/errors.hpp"
#include "dqa/text.hpp"

#include <chrono>
#include <ctime>

namespace dqa {

using nlohmann::json;

std::string_view to_string(condition c) {
    switch (c) {
        case condition::none: return "None";
        case condition::q: return "Q";
        case condition::qa: return "QA";
    }
    return "None";
}

condition parse_condition(std::string_view s) {
    const auto l = text::to_lower(text::trim(s));
    if (l == "none") return condition::none;
    if (l == "q") return condition::q;
    if (l == "qa") return condition::qa;
    throw session_config_error("unknown condition '" + std::string(s) + "'");
}

std::string_view to_string(session_phase p) {
    switch (p) {
        case session_phase::reading: return "Reading";
        case session_phase::asking: return "Asking";
        case session_phase::awaiting_answer: return "AwaitingAnswer";
        case session_phase::cloze_test: return "ClozeTest";
        case session_phase::finished: return "Finished";
    }
    return "Reading";
}

session_phase parse_phase(std::string_view s) {
    if (s == "Reading") return session_phase::reading;
    if (s == "Asking") return session_phase::asking;
    if (s == "AwaitingAnswer") return session_phase::awaiting_answer;
    if (s == "ClozeTest") return session_phase::cloze_test;
    if (s == "Finished") return session_phase::finished;
    throw parse_error("unknown phase '" + std::string(s) + "'");
}

std::string_view to_string(speaker s) { return s == speaker::bot ? "bot" : "patient"; }

speaker parse_speaker(std::string_view s) {
    if (s == "bot") return speaker::bot;
    if (s == "patient") return speaker::patient;
    throw parse_error("unknown speaker '" + std::string(s) + "'");
}

std::string_view to_string(turn_kind k) {
    switch (k) {
        case turn_kind::prompt: return "Prompt";
        case turn_kind::answer: return "Answer";
        case turn_kind::feedback: return "Feedback";
        case turn_kind::acknowledgment: return "Acknowledgment";
        case turn_kind::repeat_invite: return "Repeat-Invite";
        case turn_kind::system: return "System";
    }
    return "System";
}

turn_kind parse_turn_kind(std::string_view s) {
    if (s == "Prompt") return turn_kind::prompt;
    if (s == "Answer") return turn_kind::answer;
    if (s == "Feedback") return turn_kind::feedback;
    if (s == "Acknowledgment") return turn_kind::acknowledgment;
    if (s == "Repeat-Invite") return turn_kind::repeat_invite;
    if (s == "System") return turn_kind::system;
    throw parse_error("unknown turn kind '" + std::string(s) + "'");
}

nlohmann::json to_json(const turn& t) {
    return {{"index", t.index},
            {"speaker", to_string(t.speaker)},
            {"kind", to_string(t.kind)},
            {"text", t.text},
            {"verdict", t.verdict ? to_json(*t.verdict) : json(nullptr)},
            {"timestamp", t.timestamp},
            {"question_id", t.question_id}};
}

turn turn_from_json(const nlohmann::json& j) {
    turn t;
    try {
        t.index = j.at("index").get<std::size_t>();
        t.speaker = parse_speaker(j.at("speaker").get<std::string>());
        t.kind = parse_turn_kind(j.at("kind").get<std::string>());
        t.text = j.at("text").get<std::string>();
        if (j.contains("verdict") && !j["verdict"].is_null()) t.verdict = verdict_from_json(j["verdict"]);
        t.timestamp = j.value("timestamp", "");
        t.question_id = j.value("question_id", "");
    } catch (const json::exception& e) {
        throw parse_error(std::string("turn JSON: ") + e.what());
    }
    return t;
}

nlohmann::json to_json(const dialogue_config& c) {
    return {{"repeat_on_incorrect", c.repeat_on_incorrect},
            {"acknowledgment", c.acknowledgment},
            {"reading_text", c.reading_text},
            {"repeat_text", c.repeat_text},
            {"quiz_text", c.quiz_text}};
}

dialogue_config dialogue_config_from_json(const nlohmann::json& j) {
    dialogue_config c;
    c.repeat_on_incorrect = j.value("repeat_on_incorrect", c.repeat_on_incorrect);
    c.acknowledgment = j.value("acknowledgment", c.acknowledgment);
    c.reading_text = j.value("reading_text", c.reading_text);
    c.repeat_text = j.value("repeat_text", c.repeat_text);
    c.quiz_text = j.value("quiz_text", c.quiz_text);
    return c;
}

const question* dialogue_session::find_question(std::string_view question_id) const {
    for (const auto& q : questions) {
        if (q.question_id == question_id) return &q;
    }
    return nullptr;
}

namespace {

std::string_view source_label(qgen_mode m) {
    switch (m) {
        case qgen_mode::human: return "Human";
        case qgen_mode::gpt: return "GPT";
        case qgen_mode::gpt_ie: return "GPT+IE";
    }
    return "GPT";
}

std::optional<qgen_mode> parse_source_label(std::string_view s) {
    const auto l = text::to_lower(s);
    if (l == "human") return qgen_mode::human;
    if (l == "gpt" || l == "direct") return qgen_mode::gpt;
    if (l == "gpt+ie" || l == "gpt-ie" || l == "gpt_ie" || l == "enhanced") return qgen_mode::gpt_ie;
    return std::nullopt;
}

}  // namespace

std::string condition_label(condition c, std::optional<qgen_mode> source) {
    if (c == condition::none || !source) return std::string(to_string(c));
    return std::string(to_string(c)) + "(" + std::string(source_label(*source)) + ")";
}

std::string canonical_condition_label(std::string_view label) {
    std::string compact;
    for (char ch : label) {
        if (ch != ' ' && ch != '\t') compact += ch;
    }
    const auto lower = text::to_lower(compact);
    if (lower == "none") return "None";
    const auto open = lower.find('(');
    const auto head = lower.substr(0, open);
    std::optional<condition> c;
    if (head == "q") c = condition::q;
    if (head == "qa") c = condition::qa;
    if (!c) return compact;
    if (open == std::string::npos) return std::string(to_string(*c));
    if (lower.back() != ')') return compact;
    const auto src = parse_source_label(lower.substr(open + 1, lower.size() - open - 2));
    if (!src) return compact;
    return condition_label(*c, src);
}

nlohmann::json to_json(const dialogue_session& s) {
    json questions = json::array();
    for (const auto& q : s.questions) questions.push_back(to_json(q));
    json queue = json::array();
    for (const auto& q : s.queue) queue.push_back(q.question_id);
    json turns = json::array();
    for (const auto& t : s.turns) turns.push_back(to_json(t));
    return {{"session_id", s.session_id},
            {"note_id", s.note_id},
            {"condition", to_string(s.condition)},
            {"question_source", s.question_source ? json(to_string(*s.question_source)) : json(nullptr)},
            {"label", condition_label(s.condition, s.question_source)},
            {"phase", to_string(s.phase)},
            {"config", to_json(s.config)},
            {"questions", std::move(questions)},
            {"queue", std::move(queue)},
            {"turns", std::move(turns)},
            {"current_question", s.current_question},
            {"repeated", s.repeated},
            {"cloze", s.cloze ? to_json(*s.cloze) : json(nullptr)},
            {"last_seq", s.last_seq}};
}

// ─────────────────────────────────────────────────────
// Events
// ─────────────────────────────────────────────────────

std::string_view to_string(event_kind k) {
    switch (k) {
        case event_kind::created: return "created";
        case event_kind::turn_appended: return "turn_appended";
        case event_kind::phase_changed: return "phase_changed";
        case event_kind::cloze_submitted: return "cloze_submitted";
    }
    return "created";
}

event_kind parse_event_kind(std::string_view s) {
    if (s == "created") return event_kind::created;
    if (s == "turn_appended") return event_kind::turn_appended;
    if (s == "phase_changed") return event_kind::phase_changed;
    if (s == "cloze_submitted") return event_kind::cloze_submitted;
    throw corrupt_log("unknown event kind '" + std::string(s) + "'");
}

nlohmann::json to_json(const session_event& e) {
    return {{"seq", e.seq}, {"session_id", e.session_id}, {"kind", to_string(e.kind)}, {"payload", e.payload}};
}

session_event session_event_from_json(const nlohmann::json& j) {
    session_event e;
    try {
        e.seq = j.at("seq").get<std::uint64_t>();
        e.session_id = j.at("session_id").get<std::string>();
        e.kind = parse_event_kind(j.at("kind").get<std::string>());
        e.payload = j.at("payload");
    } catch (const json::exception& ex) {
        throw corrupt_log(std::string("event JSON: ") + ex.what());
    }
    return e;
}

namespace {

[[noreturn]] void illegal(const dialogue_session& s, const std::string& why) {
    throw corrupt_log("session " + s.session_id + " event " + std::to_string(s.last_seq + 1) + ": " + why);
}

const turn* last_turn(const dialogue_session& s) { return s.turns.empty() ? nullptr : &s.turns.back(); }

bool last_is(const dialogue_session& s, turn_kind k) {
    const auto* t = last_turn(s);
    return t != nullptr && t->kind == k;
}

void apply_created(dialogue_session& s, const session_event& e) {
    if (s.last_seq != 0) illegal(s, "created event on an existing session");
    const auto& p = e.payload;
    s = dialogue_session{};
    s.session_id = e.session_id;
    s.note_id = p.at("note_id").get<std::string>();
    s.condition = parse_condition(p.at("condition").get<std::string>());
    if (p.contains("question_source") && !p["question_source"].is_null()) {
        s.question_source = parse_qgen_mode(p["question_source"].get<std::string>());
    }
    s.config = dialogue_config_from_json(p.value("config", json::object()));
    for (const auto& q : p.at("questions")) s.questions.push_back(question_from_json(q));
    if (s.condition != condition::none) {
        if (s.questions.empty()) illegal(s, "Q/QA session without questions");
        s.queue = s.questions;
    }
    s.phase = session_phase::reading;
}

void apply_turn(dialogue_session& s, const session_event& e) {
    turn t = turn_from_json(e.payload);
    if (s.phase == session_phase::finished) illegal(s, "turn after the session finished");
    if (t.index != s.turns.size()) illegal(s, "turn index " + std::to_string(t.index) + " out of order");
    if (t.verdict.has_value() != (t.kind == turn_kind::feedback)) {
        illegal(s, "verdict must be present exactly on feedback turns");
    }
    if ((t.kind == turn_kind::answer) != (t.speaker == speaker::patient)) {
        illegal(s, "only answers come from the patient");
    }
    const bool awaiting = s.phase == session_phase::awaiting_answer;
    switch (t.kind) {
        case turn_kind::system:
            break;
        case turn_kind::prompt:
            if (s.condition == condition::none) illegal(s, "prompt in a None session");
            if (s.phase != session_phase::reading && s.phase != session_phase::asking) {
                illegal(s, "prompt outside Reading/Asking");
            }
            if (s.queue.empty()) illegal(s, "prompt with an empty queue");
            if (t.question_id != s.queue.front().question_id) illegal(s, "prompt out of queue order");
            if (!s.current_question.empty()) illegal(s, "prompt while another question is open");
            s.current_question = t.question_id;
            s.queue.erase(s.queue.begin());
            break;
        case turn_kind::answer:
            if (!awaiting || !last_is(s, turn_kind::prompt)) illegal(s, "answer without an open prompt");
            if (t.question_id != s.current_question) illegal(s, "answer to a different question");
            if (text::trim(t.text).empty()) illegal(s, "empty answer");
            break;
        case turn_kind::feedback:
            if (s.condition != condition::qa) illegal(s, "feedback outside a QA session");
            if (!awaiting || !last_is(s, turn_kind::answer)) illegal(s, "feedback without an answer");
            if (t.question_id != s.current_question) illegal(s, "feedback for a different question");
            break;
        case turn_kind::acknowledgment:
            if (s.condition != condition::q) illegal(s, "acknowledgment outside a Q session");
            if (!awaiting || !last_is(s, turn_kind::answer)) illegal(s, "acknowledgment without an answer");
            break;
        case turn_kind::repeat_invite: {
            if (s.condition != condition::qa || !s.config.repeat_on_incorrect) {
                illegal(s, "repeat invite with repeats disabled");
            }
            const auto* last = last_turn(s);
            if (!awaiting || last == nullptr || last->kind != turn_kind::feedback ||
                last->verdict->label != verdict_label::incorrect) {
                illegal(s, "repeat invite must follow incorrect feedback");
            }
            if (s.repeated.count(s.current_question) != 0) illegal(s, "question already repeated");
            const auto* q = s.find_question(s.current_question);
            if (q == nullptr) illegal(s, "repeat of an unknown question");
            s.repeated.insert(s.current_question);
            s.queue.insert(s.queue.begin(), *q);
            break;
        }
    }
    s.turns.push_back(std::move(t));
}

void apply_phase(dialogue_session& s, const session_event& e) {
    const auto from = parse_phase(e.payload.at("from").get<std::string>());
    const auto to = parse_phase(e.payload.at("to").get<std::string>());
    if (from != s.phase) illegal(s, "phase change from " + std::string(to_string(from)) + " while in " +
                                        std::string(to_string(s.phase)));
    using P = session_phase;
    const bool open_prompt = last_is(s, turn_kind::prompt) && !s.current_question.empty();
    if ((from == P::reading || from == P::asking) && to == P::awaiting_answer) {
        if (!open_prompt) illegal(s, "AwaitingAnswer without a prompt");
    } else if ((from == P::reading || from == P::asking) && to == P::cloze_test) {
        if (!s.queue.empty()) illegal(s, "quiz before the queue is drained");
    } else if (from == P::awaiting_answer && to == P::asking) {
        if (!(last_is(s, turn_kind::feedback) || last_is(s, turn_kind::acknowledgment) ||
              last_is(s, turn_kind::repeat_invite))) {
            illegal(s, "answer not yet handled");
        }
        s.current_question.clear();
    } else if (from == P::cloze_test && to == P::finished) {
        if (!s.cloze) illegal(s, "finished without a quiz result");
    } else {
        illegal(s, "illegal transition " + std::string(to_string(from)) + " -> " + std::string(to_string(to)));
    }
    s.phase = to;
}

void apply_cloze(dialogue_session& s, const session_event& e) {
    if (s.phase != session_phase::cloze_test) illegal(s, "quiz result outside ClozeTest");
    if (s.cloze) illegal(s, "quiz result already recorded");
    s.cloze = cloze_result_from_json(e.payload);
}

}  // namespace

void apply(dialogue_session& s, const session_event& e) {
    if (e.seq != s.last_seq + 1) {
        illegal(s, "sequence " + std::to_string(e.seq) + " after " + std::to_string(s.last_seq));
    }
    if (e.kind != event_kind::created && e.session_id != s.session_id) {
        illegal(s, "event for session " + e.session_id);
    }
    try {
        switch (e.kind) {
            case event_kind::created: apply_created(s, e); break;
            case event_kind::turn_appended: apply_turn(s, e); break;
            case event_kind::phase_changed: apply_phase(s, e); break;
            case event_kind::cloze_submitted: apply_cloze(s, e); break;
        }
    } catch (const corrupt_log&) {
        throw;
    } catch (const std::exception& ex) {
        illegal(s, ex.what());
    }
    s.last_seq = e.seq;
}

dialogue_session replay_events(std::span<const session_event> events) {
    if (events.empty()) throw not_found("empty event log");
    if (events.front().kind != event_kind::created) throw corrupt_log("log does not start with created");
    dialogue_session s;
    for (const auto& e : events) apply(s, e);
    return s;
}

// ─────────────────────────────────────────────────────
// Operations
// ─────────────────────────────────────────────────────

std::string system_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::system_clock::to_time_t(now);
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

verifier_fn make_llm_verifier(const discharge_note& note, llm::transport& llm, verify_options opts,
                              prompt_set prompts) {
    return [note, &llm, opts = std::move(opts), prompts = std::move(prompts)](
               std::span<const qa_exchange> hist, const question& q, std::string_view answer) {
        return verify_answer(note, hist, q, answer, llm, opts, prompts);
    };
}

namespace {

struct emitter {
    dialogue_session& s;
    std::vector<session_event>& out;

    void emit(event_kind kind, json payload) {
        session_event e{s.last_seq + 1, s.session_id, kind, std::move(payload)};
        apply(s, e);
        out.push_back(std::move(e));
    }

    turn add_turn(speaker who, turn_kind kind, std::string text, const clock_fn& clock,
                  std::string question_id = {}, std::optional<verdict> v = std::nullopt) {
        turn t{s.turns.size(), who, kind, std::move(text), std::move(v), clock(), std::move(question_id)};
        emit(event_kind::turn_appended, to_json(t));
        return t;
    }

    void move_to(session_phase to) {
        emit(event_kind::phase_changed, {{"from", to_string(s.phase)}, {"to", to_string(to)}});
    }
};

}  // namespace

session_start start_session(std::string session_id, const discharge_note& note, condition c,
                            std::optional<qgen_mode> source, const question_set& questions,
                            dialogue_config config, const clock_fn& clock) {
    if (session_id.empty()) throw session_config_error("session id is empty");
    if (c != condition::none && questions.questions.empty()) {
        throw session_config_error(std::string(to_string(c)) + " session needs at least one question");
    }
    if (c != condition::none && !source) {
        throw session_config_error("Q/QA sessions need a question source");
    }
    if (!questions.questions.empty() && questions.note_id != note.note_id) {
        throw session_config_error("question set belongs to note " + questions.note_id);
    }
    std::set<std::string> ids;
    for (const auto& q : questions.questions) {
        if (!ids.insert(q.question_id).second) {
            throw session_config_error("duplicate question id " + q.question_id);
        }
    }
    session_start out;
    json qs = json::array();
    for (const auto& q : questions.questions) qs.push_back(to_json(q));
    session_event created{1, session_id, event_kind::created,
                          {{"note_id", note.note_id},
                           {"condition", to_string(c)},
                           {"question_source", source ? json(to_string(*source)) : json(nullptr)},
                           {"config", to_json(config)},
                           {"questions", std::move(qs)}}};
    apply(out.session, created);
    out.events.push_back(std::move(created));
    emitter em{out.session, out.events};
    em.add_turn(speaker::bot, turn_kind::system, out.session.config.reading_text, clock);
    return out;
}

step next_turn(dialogue_session& s, const clock_fn& clock) {
    if (s.phase != session_phase::reading && s.phase != session_phase::asking) {
        throw protocol_error("next_turn is not allowed in phase " + std::string(to_string(s.phase)));
    }
    step out;
    emitter em{s, out.events};
    if (s.queue.empty()) {
        out.bot_turns.push_back(em.add_turn(speaker::bot, turn_kind::system, s.config.quiz_text, clock));
        em.move_to(session_phase::cloze_test);
        return out;
    }
    const question q = s.queue.front();
    out.bot_turns.push_back(em.add_turn(speaker::bot, turn_kind::prompt, q.text, clock, q.question_id));
    em.move_to(session_phase::awaiting_answer);
    return out;
}

std::vector<qa_exchange> history(const dialogue_session& s) {
    std::vector<qa_exchange> out;
    qa_exchange cur;
    for (const auto& t : s.turns) {
        switch (t.kind) {
            case turn_kind::prompt: cur = {t.text, {}, {}}; break;
            case turn_kind::answer: cur.answer = t.text; break;
            case turn_kind::feedback:
            case turn_kind::acknowledgment:
                cur.feedback = t.text;
                out.push_back(cur);
                break;
            default: break;
        }
    }
    return out;
}

step submit_answer(dialogue_session& s, std::string_view answer, const verifier_fn& verifier,
                   const clock_fn& clock) {
    if (s.phase != session_phase::awaiting_answer) {
        throw protocol_error("no question is awaiting an answer (phase " + std::string(to_string(s.phase)) + ")");
    }
    if (text::trim(answer).empty()) throw empty_answer("patient answer is empty");
    const question* q = s.find_question(s.current_question);
    if (q == nullptr) throw protocol_error("open question " + s.current_question + " is unknown");
    const question current = *q;
    const auto hist = history(s);

    // Verify before mutating so a verifier exception leaves the session untouched.
    std::optional<verdict> v;
    if (s.condition == condition::qa) {
        if (!verifier) throw session_config_error("QA session needs a verifier");
        v = verifier(hist, current, answer);
        if (v->feedback.empty()) v->feedback = std::string(degraded_feedback);
    }

    step out;
    emitter em{s, out.events};
    em.add_turn(speaker::patient, turn_kind::answer, std::string(answer), clock, current.question_id);
    if (s.condition == condition::qa) {
        const auto label = v->label;
        std::string feedback = v->feedback;
        out.bot_turns.push_back(em.add_turn(speaker::bot, turn_kind::feedback, std::move(feedback), clock,
                                            current.question_id, std::move(v)));
        if (label == verdict_label::incorrect && s.config.repeat_on_incorrect &&
            s.repeated.count(current.question_id) == 0) {
            out.bot_turns.push_back(em.add_turn(speaker::bot, turn_kind::repeat_invite, s.config.repeat_text,
                                                clock, current.question_id));
        }
    } else {
        out.bot_turns.push_back(em.add_turn(speaker::bot, turn_kind::acknowledgment, s.config.acknowledgment,
                                            clock, current.question_id));
    }
    em.move_to(session_phase::asking);
    return out;
}

nlohmann::json to_json(const session_record& r) {
    json questions = json::array();
    for (const auto& q : r.questions) questions.push_back(to_json(q));
    json turns = json::array();
    for (const auto& t : r.turns) turns.push_back(to_json(t));
    return {{"session_id", r.session_id},
            {"note_id", r.note_id},
            {"condition", to_string(r.condition)},
            {"question_source", r.question_source ? json(to_string(*r.question_source)) : json(nullptr)},
            {"label", condition_label(r.condition, r.question_source)},
            {"questions", std::move(questions)},
            {"turns", std::move(turns)},
            {"cloze", to_json(r.cloze)}};
}

session_record make_record(const dialogue_session& s) {
    if (s.phase != session_phase::finished || !s.cloze) {
        throw protocol_error("session " + s.session_id + " is not finished");
    }
    return {s.session_id, s.note_id, s.condition, s.question_source, s.questions, s.turns, *s.cloze};
}

session_finish finish_session(dialogue_session& s, const cloze_result& result) {
    if (s.phase != session_phase::cloze_test) {
        throw protocol_error("cannot finish in phase " + std::string(to_string(s.phase)));
    }
    session_finish out;
    emitter em{s, out.events};
    em.emit(event_kind::cloze_submitted, to_json(result));
    em.move_to(session_phase::finished);
    out.record = make_record(s);
    return out;
}

std::string transcript_jsonl(const dialogue_session& s) {
    json header = {{"type", "header"},
                   {"session_id", s.session_id},
                   {"note_id", s.note_id},
                   {"condition", to_string(s.condition)},
                   {"question_source", s.question_source ? json(to_string(*s.question_source)) : json(nullptr)},
                   {"label", condition_label(s.condition, s.question_source)},
                   {"phase", to_string(s.phase)},
                   {"question_count", s.questions.size()}};
    std::string out = header.dump() + "\n";
    for (const auto& t : s.turns) out += to_json(t).dump() + "\n";
    return out;
}

}  // namespace dqa
