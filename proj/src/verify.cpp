#include "dqa/verify.hpp"

#include "dqa/errors.hpp"
#include "dqa/text.hpp"

namespace dqa {

std::string_view to_string(verdict_label v) {
    switch (v) {
        case verdict_label::correct: return "Correct";
        case verdict_label::partially_correct: return "PartiallyCorrect";
        case verdict_label::incorrect: return "Incorrect";
        case verdict_label::unparseable: return "Unparseable";
    }
    return "Unparseable";
}

verdict_label parse_verdict_label(std::string_view s) {
    if (s == "Correct") return verdict_label::correct;
    if (s == "PartiallyCorrect") return verdict_label::partially_correct;
    if (s == "Incorrect") return verdict_label::incorrect;
    if (s == "Unparseable") return verdict_label::unparseable;
    throw unknown_type_error("unknown verdict label '" + std::string(s) + "'");
}

nlohmann::json to_json(const verdict& v) {
    return {{"label", to_string(v.label)}, {"feedback", v.feedback}, {"degraded", v.degraded}};
}

verdict verdict_from_json(const nlohmann::json& j) {
    try {
        return {parse_verdict_label(j.at("label").get<std::string>()),
                j.at("feedback").get<std::string>(), j.value("degraded", false)};
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("verdict JSON: ") + e.what());
    }
}

llm::chat_request build_verification_prompt(const discharge_note& note,
                                            std::span<const qa_exchange> history,
                                            const question& q, std::string_view patient_answer,
                                            const verify_options& opts,
                                            const prompt_set& prompts) {
    if (text::trim(patient_answer).empty()) throw empty_answer("patient answer is empty");
    using llm::role;
    llm::chat_request req;
    req.model_id = opts.model;
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;
    req.messages.push_back({role::system, prompts.verification_role});
    req.messages.push_back({role::user, "Discharge instruction: " + note.full_text});
    for (const auto& h : history) {
        req.messages.push_back({role::assistant, "Question: " + h.question});
        req.messages.push_back({role::user, "Answer: " + h.answer});
        req.messages.push_back({role::assistant, h.feedback});
    }
    req.messages.push_back({role::assistant, "Question: " + q.text});
    req.messages.push_back({role::user, "Answer: " + std::string(patient_answer)});
    req.messages.push_back({role::user, prompts.verification_instruction});
    return req;
}

verdict parse_verdict(std::string_view llm_response) {
    const auto raw = std::string(text::trim(llm_response));
    const auto s = text::collapse_whitespace(text::to_lower(raw));
    auto has = [&](std::string_view k) { return s.find(k) != std::string::npos; };
    verdict v;
    v.feedback = raw;
    if (has("partially correct")) {
        v.label = verdict_label::partially_correct;
    } else if (has("incorrect") || has("not correct") || has("isn't correct") ||
               has("isn\xE2\x80\x99t correct")) {
        v.label = verdict_label::incorrect;
    } else if (has("correct")) {
        v.label = verdict_label::correct;
    } else {
        v.label = verdict_label::unparseable;
    }
    return v;
}

verdict verify_answer(const discharge_note& note, std::span<const qa_exchange> history,
                      const question& q, std::string_view patient_answer, llm::transport& llm,
                      const verify_options& opts, const prompt_set& prompts) {
    const auto req = build_verification_prompt(note, history, q, patient_answer, opts, prompts);
    if (opts.answer_key_shortcut && !q.answer_key.empty() &&
        text::normalize_answer(q.answer_key) == text::normalize_answer(patient_answer)) {
        return {verdict_label::correct, "Your answer is correct. The answer is " + q.answer_key + ".",
                false};
    }
    try {
        return parse_verdict(llm.complete(req).text);
    } catch (const llm_unavailable&) {
        return {verdict_label::unparseable, std::string(degraded_feedback), true};
    }
}

}  // namespace dqa
