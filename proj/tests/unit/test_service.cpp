#include "../support/scenario.hpp"

#include "dqa/errors.hpp"
#include "dqa/service.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace dqa;
namespace fx = dqa::testing;
using nlohmann::json;

namespace {

std::vector<session_event> q_session_events(const std::string& id) {
    const auto n = fx::cholangitis_note();
    question_set qs{n.note_id, load_human_questions(fx::data_dir() / "human_questions.json", n.note_id), {}};
    auto clock = fx::fixed_clock();
    auto st = start_session(id, n, condition::q, qgen_mode::human, qs, {}, clock);
    auto events = st.events;
    auto more = next_turn(st.session, clock).events;
    events.insert(events.end(), more.begin(), more.end());
    more = submit_answer(st.session, "gallstones", {}, clock).events;
    events.insert(events.end(), more.begin(), more.end());
    return events;
}

std::function<std::string()> counter_ids() {
    auto n = std::make_shared<int>(0);
    return [n] { return "s" + std::to_string(++*n); };
}

service_config config_for(const fx::temp_dir& dir) {
    service_config c;
    c.data_dir = dir.path();
    c.human_questions = fx::data_dir() / "human_questions.json";
    c.lexicon = fx::data_dir() / "lexicon.json";
    return c;
}

json note_body() {
    return {{"note_id", "cholangitis"},
            {"text", fx::read_text(fx::data_dir() / "notes" / "cholangitis.txt")},
            {"cloze_test", json::parse(fx::read_text(fx::data_dir() / "cloze" / "cholangitis.json"))}};
}

}  // namespace

TEST(Toml, FlatKeysAndTypes) {
    const auto kv = parse_toml_flat(R"(
# comment
[server]
host = "0.0.0.0"   # trailing
port = 9090
[dialogue]
repeat_on_incorrect = true
[extraction]
threshold = 0.25
)");
    EXPECT_EQ(kv["server.host"], "0.0.0.0");
    EXPECT_EQ(kv["server.port"], 9090);
    EXPECT_EQ(kv["dialogue.repeat_on_incorrect"], true);
    EXPECT_DOUBLE_EQ(kv["extraction.threshold"].get<double>(), 0.25);
}

TEST(Toml, MalformedLinesRejected) {
    EXPECT_THROW(parse_toml_flat("[server\nport = 1"), config_error);
    EXPECT_THROW(parse_toml_flat("port"), config_error);
    EXPECT_THROW(parse_toml_flat("x = \"unterminated"), config_error);
}

TEST(Config, FromTomlResolvesRelativePaths) {
    const auto c = service_config::from_toml(R"(
[server]
port = 0
data_dir = "var"
[llm]
transport = "replay"
fixture = "fx/llm.jsonl"
judge_model = "judge-x"
[qgen]
n_min = 6
)",
                                             "/base");
    EXPECT_EQ(c.data_dir, std::filesystem::path("/base/var"));
    EXPECT_EQ(*c.llm_fixture, std::filesystem::path("/base/fx/llm.jsonl"));
    EXPECT_EQ(c.models.judge_model, "judge-x");
    EXPECT_EQ(c.n_min, 6u);
}

TEST(Config, Rejections) {
    EXPECT_THROW(service_config::from_toml("[server]\nbogus = 1"), config_error);
    EXPECT_THROW(service_config::from_toml("[server]\nport = 70000"), config_error);
    EXPECT_THROW(service_config::from_toml("[server]\nport = \"x\""), config_error);
    EXPECT_THROW(service_config::from_toml("[llm]\ntransport = \"replay\""), config_error);
    EXPECT_THROW(service_config::from_toml("[extraction]\nbackend = \"magic\""), config_error);
    EXPECT_THROW(service_config::load("/nonexistent/dqa.toml"), config_error);
}

TEST(Transport, ReplayNeedsFixture) {
    service_config c;
    c.llm_transport = "replay";
    EXPECT_THROW(make_transport(c), config_error);
    c.llm_fixture = fx::fixture_dir() / "e2e" / "llm.jsonl";
    EXPECT_NE(make_transport(c), nullptr);
}

TEST(Store, PersistAndReplay) {
    fx::temp_dir dir;
    session_store store(dir.path());
    const auto events = q_session_events("a");
    store.persist_events("a", events);
    EXPECT_EQ(store.last_seq("a"), events.size());
    EXPECT_EQ(store.events("a"), events);
    EXPECT_EQ(store.replay_session("a"), replay_events(events));
    EXPECT_TRUE(std::filesystem::exists(store.snapshot_path("a")));
    const auto snap = json::parse(fx::read_text(store.snapshot_path("a")));
    EXPECT_EQ(snap["last_seq"], events.size());

    session_store reopened(dir.path());
    EXPECT_EQ(reopened.replay_session("a"), replay_events(events));
    EXPECT_EQ(reopened.session_ids(), std::vector<std::string>{"a"});
}

TEST(Store, OneAtATimeMatchesBatch) {
    fx::temp_dir dir;
    session_store store(dir.path());
    const auto events = q_session_events("a");
    for (const auto& e : events) store.persist_event("a", e);
    EXPECT_EQ(store.events("a"), events);
}

TEST(Store, SequenceGapRejectedAndNothingWritten) {
    fx::temp_dir dir;
    session_store store(dir.path());
    auto events = q_session_events("a");
    store.persist_events("a", std::span(events).first(2));
    const auto before = fx::read_text(store.log_path("a"));
    EXPECT_THROW(store.persist_event("a", events[3]), consistency_error);
    EXPECT_THROW(store.persist_events("a", std::span(events).subspan(3)), consistency_error);
    std::vector<session_event> bad(events.begin() + 2, events.end());
    bad.back().session_id = "other";
    EXPECT_THROW(store.persist_events("a", bad), consistency_error);
    EXPECT_EQ(fx::read_text(store.log_path("a")), before);
    EXPECT_EQ(store.last_seq("a"), 2u);
}

TEST(Store, IllegalEventRejected) {
    fx::temp_dir dir;
    session_store store(dir.path());
    auto events = q_session_events("a");
    store.persist_events("a", std::span(events).first(2));
    auto e = events[2];
    e.kind = event_kind::phase_changed;
    e.payload = {{"from", "Reading"}, {"to", "Finished"}};
    EXPECT_THROW(store.persist_event("a", e), consistency_error);
}

TEST(Store, TornTailIgnored) {
    fx::temp_dir dir;
    const auto events = q_session_events("a");
    {
        session_store store(dir.path());
        store.persist_events("a", events);
        std::ofstream out(store.log_path("a"), std::ios::app | std::ios::binary);
        out << R"({"seq": 99, "session_id": "a", "ki)";
    }
    session_store store(dir.path());
    EXPECT_EQ(store.replay_session("a"), replay_events(events));
    EXPECT_EQ(store.last_seq("a"), events.size());
}

TEST(Store, CorruptMiddleLine) {
    fx::temp_dir dir;
    const auto events = q_session_events("a");
    std::string log;
    for (std::size_t i = 0; i < events.size(); ++i) {
        log += (i == 2 ? std::string("{garbage") : to_json(events[i]).dump()) + "\n";
    }
    fx::write_text(dir.path() / "a.jsonl", log);
    session_store store(dir.path());
    EXPECT_THROW(store.replay_session("a"), corrupt_log);
}

TEST(Store, UnknownSession) {
    fx::temp_dir dir;
    session_store store(dir.path());
    EXPECT_FALSE(store.exists("nope"));
    EXPECT_THROW(store.replay_session("nope"), not_found);
    EXPECT_THROW(store.replay_session("../etc"), not_found);
}

TEST(Classify, StatusMapping) {
    EXPECT_EQ(classify_exception(not_found("x")).status, 404);
    EXPECT_EQ(classify_exception(protocol_error("x")).status, 409);
    EXPECT_EQ(classify_exception(empty_answer("x")).status, 400);
    EXPECT_EQ(classify_exception(llm_unavailable("x")).status, 503);
    EXPECT_EQ(classify_exception(auth_error("x")).status, 502);
    const auto other = classify_exception(std::runtime_error("boom"));
    EXPECT_EQ(other.status, 500);
    EXPECT_EQ(other.code, "InternalError");
}

TEST(ChatService, QaSessionToReport) {
    fx::temp_dir dir;
    auto llm = std::make_shared<llm::scripted_transport>(std::vector<std::string>{
        "Your answer is correct.", "Your answer is partially correct.", "Your answer is incorrect.",
        "Your answer is correct."});
    chat_service svc(config_for(dir), {llm, nullptr, fx::fixed_clock(), counter_ids()});
    EXPECT_EQ(svc.create_note(note_body())["has_cloze_test"], true);

    const auto s = svc.create_session({{"note_id", "cholangitis"}, {"condition", "QA"}, {"question_source", "human"}});
    EXPECT_EQ(s["session_id"], "s1");
    EXPECT_EQ(s["phase"], "AwaitingAnswer");
    EXPECT_EQ(s["turns"].back()["text"], "Why did you have an ERCP?");

    for (const auto* a : {"gallstones", "twice", "a month", "11/02/2026"}) {
        const auto r = svc.answer("s1", {{"text", a}});
        EXPECT_EQ(r["turns"][0]["kind"], "Feedback");
    }
    EXPECT_EQ(svc.get_session("s1")["phase"], "ClozeTest");
    EXPECT_EQ(svc.get_cloze("s1")["count"], 6);
    EXPECT_EQ(svc.get_cloze("s1")["items"][0].count("gold"), 0u);
    const auto c = svc.submit_cloze("s1", {{"responses", {"ERCP", "twice a day", "", "", "", ""}}});
    EXPECT_EQ(c["correct"], 2);
    EXPECT_EQ(c["phase"], "Finished");

    const auto rep = svc.report("s1");
    EXPECT_EQ(rep["verdicts"]["Correct"], 2);
    EXPECT_EQ(rep["verdicts"]["PartiallyCorrect"], 1);
    EXPECT_EQ(rep["verdicts"]["Incorrect"], 1);
    EXPECT_EQ(rep["prompts"], 4);
    EXPECT_EQ(rep["label"], "QA(Human)");
    EXPECT_EQ(llm->call_count(), 4u);
}

TEST(ChatService, RequestIdIsIdempotentAcrossRestart) {
    fx::temp_dir dir;
    auto llm = std::make_shared<llm::scripted_transport>(std::vector<std::string>{"Your answer is correct."});
    json first;
    {
        chat_service svc(config_for(dir), {llm, nullptr, fx::fixed_clock(), counter_ids()});
        svc.create_note(note_body());
        svc.create_session({{"note_id", "cholangitis"}, {"condition", "QA"}, {"question_source", "human"}});
        first = svc.answer("s1", {{"text", "gallstones"}, {"request_id", "r-1"}});
        EXPECT_EQ(svc.answer("s1", {{"text", "gallstones"}, {"request_id", "r-1"}}), first);
    }
    chat_service again(config_for(dir), {llm, nullptr, fx::fixed_clock(), counter_ids()});
    EXPECT_EQ(again.answer("s1", {{"text", "gallstones"}, {"request_id", "r-1"}}), first);
    EXPECT_EQ(llm->call_count(), 1u);
    EXPECT_EQ(again.get_session("s1")["remaining"], 2);
}

TEST(ChatService, QSessionNeedsNoLlm) {
    fx::temp_dir dir;
    chat_service svc(config_for(dir), {nullptr, nullptr, fx::fixed_clock(), counter_ids()});
    svc.create_note(note_body());
    svc.create_session({{"note_id", "cholangitis"},
                        {"condition", "Q"},
                        {"questions", {{{"text", "What did the CT scan show?"}, {"answer_key", "inflammation"}}}}});
    const auto r = svc.answer("s1", {{"text", "inflammation"}});
    EXPECT_EQ(r["turns"][0]["kind"], "Acknowledgment");
    EXPECT_EQ(r["phase"], "ClozeTest");
}

TEST(ChatService, Errors) {
    fx::temp_dir dir;
    chat_service svc(config_for(dir), {nullptr, nullptr, fx::fixed_clock(), counter_ids()});
    EXPECT_THROW(svc.get_note("missing"), not_found);
    EXPECT_THROW(svc.create_note({{"note_id", "../x"}, {"text", "hi"}}), invalid_request);
    svc.create_note(note_body());
    EXPECT_THROW(svc.create_session({{"note_id", "cholangitis"}, {"condition", "QA"}}), session_config_error);
    svc.create_session({{"note_id", "cholangitis"}, {"condition", "None"}});
    EXPECT_EQ(svc.get_session("s1")["phase"], "ClozeTest");
    EXPECT_THROW(svc.answer("s1", {{"text", "x"}}), protocol_error);
    EXPECT_THROW(svc.submit_cloze("s1", {{"responses", {"x"}}}), cloze_format_error);
    EXPECT_THROW(svc.report("s1", true), llm_unavailable);
    EXPECT_THROW(svc.answer("nope", {{"text", "x"}}), not_found);
}
