#pragma once

#include "dqa/corpus.hpp"
#include "dqa/llm.hpp"
#include "dqa/prompts.hpp"
#include "dqa/qgen.hpp"

#include <string>
#include <vector>

namespace dqa {

enum class verdict_label { correct, partially_correct, incorrect, unparseable };

std::string_view to_string(verdict_label v);
verdict_label parse_verdict_label(std::string_view s);

struct verdict {
    verdict_label label = verdict_label::unparseable;
    std::string feedback;
    /// Set when the verifier was unreachable and the feedback is canned.
    bool degraded = false;

    friend bool operator==(const verdict&, const verdict&) = default;
};

nlohmann::json to_json(const verdict& v);
verdict verdict_from_json(const nlohmann::json& j);

/// One earlier exchange in the conversation.
struct qa_exchange {
    std::string question;
    std::string answer;
    std::string feedback;

    friend bool operator==(const qa_exchange&, const qa_exchange&) = default;
};

struct verify_options {
    std::string model = llm::model_config{}.verification_model;
    double temperature = llm::model_config{}.verification_temperature;
    int max_tokens = llm::model_config{}.max_tokens;
    /// Mark answers equal to the answer key (after normalization) correct
    /// without asking the model.
    bool answer_key_shortcut = false;
};

inline constexpr std::string_view degraded_feedback =
    "Sorry, I am unable to check your answer right now. Let's continue with the next question.";

/// Messages, in order: system role; "Discharge instruction: <note>"; for each
/// earlier exchange "Question: ..." (assistant), "Answer: ..." (user) and the
/// feedback (assistant); the current "Question: ..." and "Answer: ..."; the
/// verification instruction (user). Throws empty_answer.
llm::chat_request build_verification_prompt(const discharge_note& note,
                                            std::span<const qa_exchange> history,
                                            const question& q, std::string_view patient_answer,
                                            const verify_options& opts = {},
                                            const prompt_set& prompts = prompt_set::defaults());

/// Keyword search with precedence partially correct > incorrect > correct.
verdict parse_verdict(std::string_view llm_response);

/// Prompt, complete, parse. An unreachable model yields a degraded
/// unparseable verdict instead of an error.
verdict verify_answer(const discharge_note& note, std::span<const qa_exchange> history,
                      const question& q, std::string_view patient_answer, llm::transport& llm,
                      const verify_options& opts = {},
                      const prompt_set& prompts = prompt_set::defaults());

}  // namespace dqa
