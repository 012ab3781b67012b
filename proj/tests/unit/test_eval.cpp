#include "../support/scenario.hpp"

#include "dqa/errors.hpp"
#include "dqa/eval.hpp"

#include <gtest/gtest.h>

using namespace dqa;
namespace fx = dqa::testing;
using nlohmann::json;

namespace {

constexpr std::string_view rankings_csv =
    "evaluator_id,aspect,condition,rank\r\n"
    "e1,Overall,QA(GPT+IE),1\r\n"
    "e1,Overall,Q(GPT+IE),2\r\n"
    "e1,Overall,None,3\r\n"
    "e2,Overall,QA (Enhanced),1\r\n"
    "e2,Overall,Q(GPT+IE),1\r\n"
    "e2,Overall,None,3\r\n"
    "e1,Coverage,QA(GPT+IE),2\r\n"
    "e1,Coverage,None,1\r\n";

const std::string all_fives =
    R"({"Coverage": 5, "Question Appropriateness": 5, "Education Outcome": 5, "Overall": 5, "Correctness": 5, "Education Potential": 5})";

}  // namespace

TEST(Rankings, CsvGroupsPerEvaluatorAndAspect) {
    const auto rs = parse_rankings_csv(rankings_csv);
    ASSERT_EQ(rs.size(), 3u);
    EXPECT_EQ(rs[1].evaluator_id, "e2");
    EXPECT_EQ(rs[1].ranks.at("QA(GPT+IE)"), 1);
    EXPECT_EQ(rs[2].aspect, eval_aspect::coverage);
}

TEST(Rankings, MrrOverEvaluators) {
    const auto rs = parse_rankings_csv(rankings_csv);
    std::vector<preference_ranking> overall(rs.begin(), rs.begin() + 2);
    EXPECT_DOUBLE_EQ(compute_mrr(overall, "QA(GPT+IE)"), 1.0);
    EXPECT_DOUBLE_EQ(compute_mrr(overall, "Q(GPT+IE)"), 0.75);
    EXPECT_DOUBLE_EQ(compute_mrr(overall, "None"), 1.0 / 3.0);
    const auto table = mrr_table(rs);
    EXPECT_DOUBLE_EQ(table.at(eval_aspect::overall).at("Q(GPT+IE)"), 0.75);
    EXPECT_DOUBLE_EQ(table.at(eval_aspect::coverage).at("QA(GPT+IE)"), 0.5);
    EXPECT_EQ(table.at(eval_aspect::coverage).count("Q(GPT+IE)"), 0u);
}

TEST(Rankings, Errors) {
    EXPECT_THROW(compute_mrr({}, "None"), ranking_error);
    const auto rs = parse_rankings_csv(rankings_csv);
    EXPECT_THROW(compute_mrr(rs, "Q(Human)"), ranking_error);
    EXPECT_THROW(parse_rankings_csv("e1,Overall,None,1\ne1,Overall,Q(GPT),3\n"), ranking_error);
    EXPECT_THROW(parse_rankings_csv("e1,Overall,None,1\ne1,Overall,None,2\n"), ranking_error);
    EXPECT_THROW(parse_rankings_csv("e1,Vibes,None,1\n"), ranking_error);
    EXPECT_THROW(parse_rankings_csv("e1,Overall,None,x\n"), ranking_error);
    EXPECT_THROW(parse_rankings_csv("e1,Overall,None\n"), parse_error);
}

TEST(Rankings, ValidateAcceptsOnlyCompetitionRanks) {
    preference_ranking r{"e", eval_aspect::overall, {{"A", 1}, {"B", 1}, {"C", 3}}};
    EXPECT_NO_THROW(validate_ranking(r));
    r.ranks["C"] = 2;
    EXPECT_THROW(validate_ranking(r), ranking_error);
    r.ranks = {{"A", 0}};
    EXPECT_THROW(validate_ranking(r), ranking_error);
}

TEST(Rankings, AspectNames) {
    EXPECT_EQ(parse_eval_aspect("Question Appropriateness"), eval_aspect::appropriateness);
    EXPECT_EQ(parse_eval_aspect("education_outcome"), eval_aspect::education_outcome);
    for (auto a : {eval_aspect::coverage, eval_aspect::appropriateness, eval_aspect::education_outcome,
                   eval_aspect::overall}) {
        EXPECT_EQ(parse_eval_aspect(to_string(a)), a);
    }
}

TEST(Judge, TolerantParsingFindsEmbeddedObject) {
    const auto s = parse_judge_scores("Here are my scores:\n```json\n" + all_fives + "\n```\nThanks");
    EXPECT_EQ(s.overall, 5);
    const auto t = parse_judge_scores(
        R"({"Coverage": "4", "Question Appropriateness": 3.0, "Education Outcome": 2, "Overall": 1, "Correctness": 5, "Education Potential": 4, "Note": "x"})");
    EXPECT_EQ(t, (judge_scores{4, 3, 2, 1, 5, 4}));
}

TEST(Judge, StrictRejectsProseAndExtras) {
    EXPECT_EQ(parse_judge_scores(all_fives, true).coverage, 5);
    EXPECT_THROW(parse_judge_scores("Scores: " + all_fives, true), judge_parse_error);
    auto extra = json::parse(all_fives);
    extra["Note"] = 1;
    EXPECT_THROW(parse_judge_scores(extra.dump(), true), judge_parse_error);
    auto str = json::parse(all_fives);
    str["Overall"] = "5";
    EXPECT_THROW(parse_judge_scores(str.dump(), true), judge_parse_error);
}

TEST(Judge, RangeAndMissingKeys) {
    auto j = json::parse(all_fives);
    j["Overall"] = 6;
    EXPECT_THROW(parse_judge_scores(j.dump()), judge_parse_error);
    j.erase("Overall");
    EXPECT_THROW(parse_judge_scores(j.dump()), judge_parse_error);
    EXPECT_THROW(parse_judge_scores("no json here"), judge_parse_error);
}

TEST(Judge, ConversationRenderingSkipsSystemTurns) {
    std::vector<turn> turns{{0, speaker::bot, turn_kind::system, "Read.", {}, "", ""},
                            {1, speaker::bot, turn_kind::prompt, "Why?", {}, "", "q"},
                            {2, speaker::patient, turn_kind::answer, "Because.", {}, "", "q"}};
    EXPECT_EQ(render_conversation(turns), "Bot: Why?\nPatient: Because.");
}

TEST(Judge, PromptSubstitutesNoteAndConversation) {
    auto llm = llm::replay_transport::load(fx::fixture_dir() / "e2e" / "llm.jsonl");
    const auto e2e = fx::run_e2e(*llm);
    const auto note = fx::cholangitis_note();
    const auto req = build_judge_prompt(note, e2e.session);
    ASSERT_EQ(req.messages.size(), 1u);
    const auto& body = req.messages[0].content;
    EXPECT_EQ(body.find(note_placeholder), std::string::npos);
    EXPECT_EQ(body.find(history_placeholder), std::string::npos);
    EXPECT_NE(body.find(note.full_text), std::string::npos);
    EXPECT_NE(body.find(render_conversation(e2e.session.turns)), std::string::npos);
    EXPECT_EQ(req.model_id, "gpt-4");

    llm::scripted_transport judge({all_fives});
    EXPECT_EQ(judge_session(note, make_record(e2e.session), judge).education_potential, 5);
}

TEST(Judge, UnfinishedSessionRejected) {
    const auto note = fx::cholangitis_note();
    auto st = start_session("s", note, condition::none, std::nullopt, {note.note_id, {}, {}});
    EXPECT_THROW(build_judge_prompt(note, st.session), protocol_error);
}

TEST(Judge, MeanScores) {
    const std::vector<judge_scores> s{{5, 4, 3, 2, 1, 5}, {3, 4, 5, 4, 3, 1}};
    const auto m = mean_judge_scores(s);
    EXPECT_DOUBLE_EQ(m.at("Coverage"), 4.0);
    EXPECT_DOUBLE_EQ(m.at("Education Potential"), 3.0);
}

TEST(Heuristic, RatesFromCsv) {
    const auto codes = parse_heuristic_csv("turn_ref,correctness,education_potential\nt1,1,0\nt2,true,yes\nt3,0,no\nt4,1,1\n");
    const auto r = aggregate_heuristic(codes);
    EXPECT_EQ(r.total, 4u);
    EXPECT_EQ(r.correctness_positive, 3u);
    EXPECT_DOUBLE_EQ(r.correctness_rate, 0.75);
    EXPECT_DOUBLE_EQ(r.education_rate, 0.5);
    EXPECT_THROW(aggregate_heuristic({}), aggregation_error);
    EXPECT_THROW(parse_heuristic_csv("t1,maybe,0\n"), aggregation_error);
}

TEST(Report, NullSectionsWhenAbsent) {
    eval_report r;
    r.heuristic = heuristic_rates{2, 1, 1, 0.5, 0.5};
    const auto j = to_json(r);
    EXPECT_TRUE(j["cloze"].is_null());
    EXPECT_TRUE(j["judge"].is_null());
    EXPECT_EQ(j["heuristic"]["total"], 2);
    EXPECT_TRUE(j["mrr"].empty());
}
