/**
 * @file eval.hpp
 * @brief Outcome measures: preference-ranking MRR, judge prompting and score
 *        parsing, heuristic binary-coding rates, and the combined report.
 *
 * Cloze scoring lives in cloze.hpp.
 */

#pragma once

#include "dqa/cloze.hpp"
#include "dqa/dialogue.hpp"
#include "dqa/llm.hpp"
#include "dqa/prompts.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dqa {

// ─────────────────────────────────────────────────────
// Rankings
// ─────────────────────────────────────────────────────

enum class eval_aspect { coverage, appropriateness, education_outcome, overall };

std::string_view to_string(eval_aspect a);
eval_aspect parse_eval_aspect(std::string_view s);

struct preference_ranking {
    std::string evaluator_id;
    eval_aspect aspect = eval_aspect::overall;
    std::map<std::string, int> ranks;  ///< canonical condition label -> rank

    friend bool operator==(const preference_ranking&, const preference_ranking&) = default;
};

/// Throws ranking_error unless ranks are competition ranks: each rank equals
/// one plus the number of conditions ranked strictly better.
void validate_ranking(const preference_ranking& r);

/// Mean of 1/rank(target). Throws ranking_error when rankings is empty or a
/// ranking lacks target.
double compute_mrr(std::span<const preference_ranking> rankings, std::string_view target);

/// aspect -> condition -> MRR over the rankings that mention the condition.
std::map<eval_aspect, std::map<std::string, double>> mrr_table(std::span<const preference_ranking> rankings);

/// CSV with header evaluator_id,aspect,condition,rank. Rows are grouped per
/// (evaluator, aspect); labels are canonicalized.
std::vector<preference_ranking> parse_rankings_csv(std::string_view csv);
std::vector<preference_ranking> load_rankings_csv(const std::filesystem::path& path);

// ─────────────────────────────────────────────────────
// Judge
// ─────────────────────────────────────────────────────

struct judge_scores {
    int coverage = 0;
    int question_appropriateness = 0;
    int education_outcome = 0;
    int overall = 0;
    int correctness = 0;
    int education_potential = 0;

    friend bool operator==(const judge_scores&, const judge_scores&) = default;
};

/// Keys as they appear in the judge reply.
inline constexpr std::array<std::string_view, 6> judge_keys{
    "Coverage", "Question Appropriateness", "Education Outcome",
    "Overall",  "Correctness",              "Education Potential"};

nlohmann::json to_json(const judge_scores& s);

/// "Bot: ..." / "Patient: ..." lines in turn order, newline separated.
/// System turns are omitted.
std::string render_conversation(std::span<const turn> turns);

struct judge_options {
    std::string model = llm::model_config{}.judge_model;
    double temperature = llm::model_config{}.judge_temperature;
    int max_tokens = llm::model_config{}.max_tokens;
    /// Reject replies with anything besides the JSON object, or extra keys.
    bool strict = false;
};

/// Single user message holding the judge template with both placeholders
/// substituted.
llm::chat_request build_judge_prompt(const discharge_note& note, const session_record& record,
                                     const judge_options& opts = {},
                                     const prompt_set& prompts = prompt_set::defaults());

/// Overload for a live session; throws protocol_error unless it is finished.
llm::chat_request build_judge_prompt(const discharge_note& note, const dialogue_session& session,
                                     const judge_options& opts = {},
                                     const prompt_set& prompts = prompt_set::defaults());

/// First JSON object in the reply with all six keys mapped to integers in
/// 1..5. Throws judge_parse_error.
judge_scores parse_judge_scores(std::string_view response, bool strict = false);

judge_scores judge_session(const discharge_note& note, const session_record& record, llm::transport& llm,
                           const judge_options& opts = {},
                           const prompt_set& prompts = prompt_set::defaults());

/// Per-aspect means over several judged sessions.
std::map<std::string, double> mean_judge_scores(std::span<const judge_scores> scores);

// ─────────────────────────────────────────────────────
// Heuristic binary coding
// ─────────────────────────────────────────────────────

struct heuristic_code {
    std::string turn_ref;
    bool correctness = false;
    bool education_potential = false;
};

struct heuristic_rates {
    std::size_t total = 0;
    std::size_t correctness_positive = 0;
    std::size_t education_positive = 0;
    double correctness_rate = 0.0;
    double education_rate = 0.0;

    friend bool operator==(const heuristic_rates&, const heuristic_rates&) = default;
};

/// Throws aggregation_error on empty input.
heuristic_rates aggregate_heuristic(std::span<const heuristic_code> codes);

/// CSV with header turn_ref,correctness,education_potential (0/1 or true/false).
std::vector<heuristic_code> parse_heuristic_csv(std::string_view csv);

nlohmann::json to_json(const heuristic_rates& r);

// ─────────────────────────────────────────────────────
// Report
// ─────────────────────────────────────────────────────

struct eval_report {
    std::optional<cloze_result> cloze;
    std::map<eval_aspect, std::map<std::string, double>> mrr;
    std::optional<judge_scores> judge;
    std::optional<heuristic_rates> heuristic;
};

nlohmann::json to_json(const eval_report& r);

}  // namespace dqa
