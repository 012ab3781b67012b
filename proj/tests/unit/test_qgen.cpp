#include "../support/scenario.hpp"

#include "dqa/errors.hpp"
#include "dqa/qgen.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace dqa;
namespace fx = dqa::testing;

namespace {

std::shared_ptr<const gazetteer> lexicon() {
    return std::make_shared<const gazetteer>(gazetteer::load(fx::data_dir() / "lexicon.json"));
}

detailed_entity find_entity(const discharge_note& n, std::string_view surface) {
    const auto ents = gazetteer_extractor(lexicon()).extract_detailed_entities(n);
    for (const auto& e : ents) {
        if (e.surface == surface) return e;
    }
    throw std::runtime_error("entity not found");
}

relation_candidate relation(event_type ht, std::string h, event_type tt, std::string t, relation_type r) {
    const std::string text = h + " " + t;
    return {make_event("h", text, {0, h.size()}, ht), make_event("t", text, {h.size() + 1, text.size()}, tt), r};
}

}  // namespace

TEST(Templates, OneTemplatePerRelationType) {
    EXPECT_EQ(template_text(relation_type::symptom_caused_by_disease, "fever"),
              "What is the cause of your symptom fever?");
    EXPECT_EQ(template_text(relation_type::test_goal, "CT scan"), "What is the goal of test CT scan?");
    EXPECT_EQ(template_text(relation_type::test_result, "CT scan"), "What is the result of test CT scan?");
    EXPECT_EQ(template_text(relation_type::test_implication, "CT scan"), "What does test CT scan imply?");
    EXPECT_EQ(template_text(relation_type::treatment_goal, "ERCP"), "What is the goal of treatment ERCP?");
    EXPECT_EQ(template_text(relation_type::treatment_result, "ERCP"), "What is the result of treatment ERCP?");
}

TEST(Templates, AnswerIsTailSurface) {
    const auto r = relation(event_type::procedure, "ERCP", event_type::treatment_goal, "remove gallstones",
                            relation_type::treatment_goal);
    const auto q = template_question("n", r);
    EXPECT_EQ(q.answer_key, "remove gallstones");
    EXPECT_EQ(q.source, question_source::template_ie);
    EXPECT_TRUE(std::holds_alternative<relation_trigger>(q.trigger));
    EXPECT_EQ(q.question_id, make_question_id(q));
}

TEST(Templates, NonCompliantPairRejected) {
    const auto r = relation(event_type::disease, "flu", event_type::symptom, "fever",
                            relation_type::symptom_caused_by_disease);
    EXPECT_THROW(template_question("n", r), invalid_relation);
}

TEST(Templates, TreatmentForDiseaseOnlyForTreatmentGoal) {
    const auto goal = relation(event_type::medicine, "antibiotics", event_type::treatment_goal, "the infection",
                               relation_type::treatment_goal);
    const auto q = treatment_for_disease_question("n", goal);
    ASSERT_TRUE(q);
    EXPECT_EQ(q->text, "What treatment is applied to disease the infection?");
    EXPECT_EQ(q->answer_key, "antibiotics");
    const auto res = relation(event_type::procedure, "ERCP", event_type::treatment_result, "pain improved",
                              relation_type::treatment_result);
    EXPECT_FALSE(treatment_for_disease_question("n", res));

    std::vector<relation_candidate> rels{goal, res};
    EXPECT_EQ(template_questions("n", rels).size(), 2u);
    EXPECT_EQ(template_questions("n", rels, {true}).size(), 3u);
}

TEST(Cloze, BlankReplacesEntityInItsSentence) {
    const auto n = fx::cholangitis_note();
    const auto s = make_cloze_sentence(n, find_entity(n, "twice a day"));
    EXPECT_EQ(s.original, "START ciprofloxacin 500mg by mouth twice a day for 7 days.");
    EXPECT_EQ(s.blanked, "START ciprofloxacin 500mg by mouth _____ for 7 days.");
}

TEST(Cloze, RequestCarriesBlankedSentenceThenInstruction) {
    const auto req = cloze_request("Take _____ daily.", {});
    ASSERT_EQ(req.messages.size(), 1u);
    EXPECT_EQ(req.messages[0].content, "Take _____ daily.\n" + prompt_set::defaults().cloze_rewrite);
}

TEST(Cloze, RewriteIsCleaned) {
    const auto n = fx::cholangitis_note();
    const auto e = find_entity(n, "twice a day");
    for (const std::string reply : {"Question: How often do you take ciprofloxacin?",
                                    "\n\n\"How often do you take ciprofloxacin?\"\nExtra",
                                    "Q:  How often do you take ciprofloxacin?"}) {
        llm::scripted_transport llm({reply});
        const auto q = cloze_question(n, e, &llm);
        EXPECT_EQ(q.text, "How often do you take ciprofloxacin?") << reply;
        EXPECT_EQ(q.answer_key, "twice a day");
        EXPECT_FALSE(q.fallback);
    }
}

TEST(Cloze, FallsBackOnOutageOrEmptyReply) {
    const auto n = fx::cholangitis_note();
    const auto e = find_entity(n, "for 7 days");
    llm::scripted_transport llm;
    llm.push_outage();
    llm.push("   ");
    for (int i = 0; i < 2; ++i) {
        const auto q = cloze_question(n, e, &llm);
        EXPECT_TRUE(q.fallback);
        EXPECT_EQ(q.text, "START ciprofloxacin 500mg by mouth twice a day _____.");
    }
    EXPECT_TRUE(cloze_question(n, e, nullptr).fallback);
}

TEST(Cloze, FallbackDisabledRaises) {
    const auto n = fx::cholangitis_note();
    cloze_options o;
    o.fallback = false;
    EXPECT_THROW(cloze_question(n, find_entity(n, "25mg"), nullptr, o), generation_error);
}

TEST(Cloze, NonPriorityEntitiesAreSkippedUnlessAllowed) {
    const auto n = fx::cholangitis_note();
    const auto name = find_entity(n, "metoprolol");
    EXPECT_THROW(cloze_question(n, name, nullptr), generation_error);
    const auto ents = gazetteer_extractor(lexicon()).extract_detailed_entities(n);
    const auto qs = cloze_questions(n, ents, nullptr);
    for (const auto& q : qs) {
        EXPECT_TRUE(is_priority(std::get<entity_trigger>(q.trigger).entity.type));
    }
    cloze_options all;
    all.allow_non_priority = true;
    EXPECT_EQ(cloze_questions(n, ents, nullptr, all).size(), ents.size());
}

TEST(Cloze, BoundedConcurrencyKeepsOrder) {
    const auto n = fx::cholangitis_note();
    const auto ents = gazetteer_extractor(lexicon()).extract_detailed_entities(n);
    const auto a = cloze_questions(n, ents, nullptr, {}, 1);
    const auto b = cloze_questions(n, ents, nullptr, {}, 8);
    EXPECT_EQ(a, b);
}

TEST(Direct, AtLeastPhrase) {
    EXPECT_EQ(at_least_phrase(4), "at least four");
    EXPECT_EQ(at_least_phrase(12), "at least 12");
}

TEST(Direct, RequestEmbedsNoteAndCount) {
    const auto n = fx::cholangitis_note();
    const auto req = direct_request(n, 4);
    ASSERT_EQ(req.messages.size(), 1u);
    EXPECT_EQ(req.messages[0].content.rfind(n.full_text, 0), 0u);
    EXPECT_NE(req.messages[0].content.find("at least four"), std::string::npos);
    EXPECT_EQ(req.messages[0].content.find("{N}"), std::string::npos);
}

TEST(Direct, ParsesEnumeratedAndPlainLists) {
    EXPECT_EQ(parse_enumerated_questions("1. Why?\n2) What\n   next?\n3: How?"),
              (std::vector<std::string>{"Why?", "What next?", "How?"}));
    EXPECT_EQ(parse_enumerated_questions("Here you go:\n- Why?\n* How?\nThanks."),
              (std::vector<std::string>{"Why?", "How?"}));
    EXPECT_TRUE(parse_enumerated_questions("").empty());
}

TEST(Direct, RetriesOnceThenFails) {
    const auto n = fx::cholangitis_note();
    llm::scripted_transport ok({"1. A?", "1. A?\n2. B?"});
    const auto qs = direct_llm_questions(n, 2, ok);
    EXPECT_EQ(qs.size(), 2u);
    EXPECT_EQ(ok.call_count(), 2u);

    llm::scripted_transport bad({"1. A?", "nothing"});
    EXPECT_THROW(direct_llm_questions(n, 2, bad), retryable_generation_error);
    EXPECT_EQ(bad.call_count(), 2u);
}

TEST(Assembly, OrdersRelationsBeforeEntitiesAndDedups) {
    const auto n = fx::cholangitis_note();
    const auto ex = gazetteer_extractor(lexicon());
    auto rels = extract_relations(n, ex).positives();
    std::reverse(rels.begin(), rels.end());
    question_pool pool;
    pool.template_qs = template_questions(n.note_id, rels);
    pool.template_qs.push_back(pool.template_qs.front());
    const auto ents = ex.extract_detailed_entities(n);
    pool.cloze_qs = cloze_questions(n, ents, nullptr);
    std::reverse(pool.cloze_qs.begin(), pool.cloze_qs.end());

    const auto set = assemble_question_set(n.note_id, pool, qgen_mode::gpt_ie);
    EXPECT_EQ(set.questions.size(), rels.size() + pool.cloze_qs.size());
    EXPECT_EQ(set.generation_config["mode"], "gpt-ie");
    std::size_t last = 0;
    bool in_entities = false;
    for (const auto& q : set.questions) {
        std::size_t pos = 0;
        if (const auto* r = std::get_if<relation_trigger>(&q.trigger)) {
            EXPECT_FALSE(in_entities);
            pos = r->head.span.begin;
        } else {
            if (!in_entities) last = 0;
            in_entities = true;
            pos = std::get<entity_trigger>(q.trigger).entity.span.begin;
        }
        EXPECT_GE(pos, last);
        last = pos;
    }
}

TEST(Assembly, ModeSelectsSources) {
    question h;
    h.text = "Human?";
    h.note_id = "n";
    question d = h;
    d.text = "Direct?";
    d.source = question_source::direct_llm;
    question_pool pool{{}, {}, {d}, {h}};
    EXPECT_EQ(assemble_question_set("n", pool, qgen_mode::human).questions.front().text, "Human?");
    EXPECT_EQ(assemble_question_set("n", pool, qgen_mode::gpt).questions.front().text, "Direct?");
    EXPECT_TRUE(assemble_question_set("n", pool, qgen_mode::gpt_ie).questions.empty());
}

TEST(Assembly, ForeignNoteRejected) {
    question q;
    q.text = "x?";
    q.note_id = "other";
    question_pool pool;
    pool.human_qs = {q};
    EXPECT_THROW(assemble_question_set("n", pool, qgen_mode::human), assembly_error);
}

TEST(Assembly, QuestionSetJsonRoundTrip) {
    const auto n = fx::cholangitis_note();
    const gazetteer_extractor ex(lexicon());
    const auto set = generate_question_set(n, qgen_mode::gpt_ie, &ex, nullptr, nullptr);
    EXPECT_FALSE(set.questions.empty());
    EXPECT_EQ(question_set_from_json(to_json(set)), set);
}

TEST(Assembly, ModeNames) {
    EXPECT_EQ(parse_qgen_mode("GPT-IE"), qgen_mode::gpt_ie);
    EXPECT_EQ(parse_qgen_mode("human"), qgen_mode::human);
    EXPECT_THROW(parse_qgen_mode("bogus"), config_error);
}

TEST(HumanQuestions, KeyedFileAndBareArray) {
    const auto qs = load_human_questions(fx::data_dir() / "human_questions.json", "cholangitis");
    ASSERT_EQ(qs.size(), 4u);
    EXPECT_EQ(qs[0].answer_key, "to remove gallstones");
    EXPECT_EQ(qs[0].source, question_source::human);
    EXPECT_TRUE(load_human_questions(fx::data_dir() / "human_questions.json", "other").empty());

    const auto bare = human_questions_from_json(nlohmann::json::parse(R"([{"text": "Why?"}])"), "z");
    ASSERT_EQ(bare.size(), 1u);
    EXPECT_EQ(bare[0].note_id, "z");
    EXPECT_THROW(human_questions_from_json(nlohmann::json::parse(R"([{"text": " "}])"), "z"), parse_error);
}

TEST(HumanQuestions, GenerateNeedsFile) {
    const auto n = fx::cholangitis_note();
    EXPECT_THROW(generate_question_set(n, qgen_mode::human, nullptr, nullptr, nullptr), generation_error);
    EXPECT_THROW(generate_question_set(n, qgen_mode::gpt, nullptr, nullptr, nullptr), generation_error);
}
