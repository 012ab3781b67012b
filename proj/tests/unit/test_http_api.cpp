#include "../support/scenario.hpp"

#include "dqa/service.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <thread>

using namespace dqa;
namespace fx = dqa::testing;
using nlohmann::json;

namespace {

class HttpApi : public ::testing::Test {
protected:
    void SetUp() override {
        service_config c;
        c.data_dir = dir_.path();
        c.human_questions = fx::data_dir() / "human_questions.json";
        llm_ = std::make_shared<llm::scripted_transport>();
        auto ids = std::make_shared<int>(0);
        service_ = std::make_unique<chat_service>(
            c, chat_service::dependencies{llm_, nullptr, fx::fixed_clock(),
                                          [ids] { return "s" + std::to_string(++*ids); }});
        api_ = std::make_unique<http_api>(*service_);
        port_ = api_->bind("127.0.0.1", 0);
        ASSERT_GT(port_, 0);
        thread_ = std::thread([this] { api_->listen(); });
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
        for (int i = 0; i < 100 && !client_->Get("/health"); ++i) {
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
    }

    void TearDown() override {
        api_->stop();
        if (thread_.joinable()) thread_.join();
    }

    std::pair<int, json> post(const std::string& path, const json& body) {
        auto r = client_->Post(path, body.dump(), "application/json");
        if (!r) return {0, json()};
        return {r->status, json::parse(r->body)};
    }

    std::pair<int, json> get(const std::string& path) {
        auto r = client_->Get(path);
        if (!r) return {0, json()};
        return {r->status, json::parse(r->body)};
    }

    void create_note() {
        const auto [status, body] = post(
            "/notes",
            {{"note_id", "cholangitis"},
             {"text", fx::read_text(fx::data_dir() / "notes" / "cholangitis.txt")},
             {"cloze_test", json::parse(fx::read_text(fx::data_dir() / "cloze" / "cholangitis.json"))}});
        ASSERT_EQ(status, 201) << body.dump();
    }

    fx::temp_dir dir_;
    std::shared_ptr<llm::scripted_transport> llm_;
    std::unique_ptr<chat_service> service_;
    std::unique_ptr<http_api> api_;
    std::unique_ptr<httplib::Client> client_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace

TEST_F(HttpApi, Health) {
    const auto [status, body] = get("/health");
    EXPECT_EQ(status, 200);
    EXPECT_EQ(body["status"], "ok");
}

TEST_F(HttpApi, NotesCreateAndFetch) {
    create_note();
    const auto [status, body] = get("/notes/cholangitis");
    EXPECT_EQ(status, 200);
    EXPECT_EQ(body["note_id"], "cholangitis");
    EXPECT_EQ(body["has_cloze_test"], true);
    EXPECT_EQ(get("/notes/unknown").first, 404);
}

TEST_F(HttpApi, SectionedNote) {
    const auto [status, body] =
        post("/notes", {{"sections", {{"visit_recap", "You had a fever."}, {"detailed_instructions", "Rest."}}}});
    EXPECT_EQ(status, 201);
    EXPECT_EQ(body["note_id"].get<std::string>().rfind("note-", 0), 0u);
}

TEST_F(HttpApi, BadBodies) {
    auto r = client_->Post("/notes", "{not json", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);
    EXPECT_EQ(json::parse(r->body)["error"], "ParseError");
    const auto [status, body] = post("/notes", {{"text", "   "}});
    EXPECT_EQ(status, 400);
    EXPECT_EQ(body["error"], "InvalidNote");
    EXPECT_TRUE(body.contains("message"));
}

TEST_F(HttpApi, FullQaSession) {
    create_note();
    for (int i = 0; i < 4; ++i) llm_->push("Your answer is correct.");
    auto [status, s] = post("/sessions", {{"note_id", "cholangitis"}, {"condition", "QA"}, {"question_source", "human"}});
    ASSERT_EQ(status, 201) << s.dump();
    const std::string id = s["session_id"];
    EXPECT_EQ(s["phase"], "AwaitingAnswer");

    for (const auto* a : {"gallstones", "twice a day", "7 days", "11/02/2026"}) {
        const auto [st, r] = post("/sessions/" + id + "/answer", {{"text", a}});
        EXPECT_EQ(st, 200) << r.dump();
        EXPECT_EQ(r["turns"][0]["kind"], "Feedback");
    }
    EXPECT_EQ(get("/sessions/" + id).second["phase"], "ClozeTest");
    const auto [cs, cloze] = get("/sessions/" + id + "/cloze");
    EXPECT_EQ(cs, 200);
    EXPECT_EQ(cloze["items"].size(), 6u);

    const auto [fs, fin] =
        post("/sessions/" + id + "/cloze", {{"responses", {"ERCP", "twice daily", "a week", "25 mg", "", ""}}});
    EXPECT_EQ(fs, 200);
    EXPECT_EQ(fin["correct"], 4);

    llm_->push(R"({"Coverage": 4, "Question Appropriateness": 5, "Education Outcome": 4, "Overall": 4, "Correctness": 5, "Education Potential": 3})");
    const auto [rs, rep] = get("/sessions/" + id + "/report?judge=1");
    EXPECT_EQ(rs, 200) << rep.dump();
    EXPECT_EQ(rep["judge"]["Education Potential"], 3);
    EXPECT_EQ(rep["verdicts"]["Correct"], 4);

    auto tr = client_->Get("/sessions/" + id + "/transcript");
    ASSERT_TRUE(tr);
    EXPECT_EQ(tr->status, 200);
    EXPECT_EQ(json::parse(tr->body.substr(0, tr->body.find('\n')))["type"], "header");
}

TEST_F(HttpApi, WrongPhaseIs409) {
    create_note();
    const auto [status, s] = post("/sessions", {{"note_id", "cholangitis"}, {"condition", "None"}});
    ASSERT_EQ(status, 201);
    const auto [st, body] = post("/sessions/" + s["session_id"].get<std::string>() + "/answer", {{"text", "x"}});
    EXPECT_EQ(st, 409);
    EXPECT_EQ(body["error"], "ProtocolError");
}

TEST_F(HttpApi, EmptyAnswerIs400) {
    create_note();
    const auto [status, s] = post("/sessions", {{"note_id", "cholangitis"}, {"condition", "Q"}, {"question_source", "human"}});
    ASSERT_EQ(status, 201);
    const auto [st, body] = post("/sessions/" + s["session_id"].get<std::string>() + "/answer", {{"text", "  "}});
    EXPECT_EQ(st, 400);
    EXPECT_EQ(body["error"], "EmptyAnswer");
}

TEST_F(HttpApi, RequestIdRetryReturnsSameReply) {
    create_note();
    llm_->push("Your answer is correct.");
    const auto [status, s] = post("/sessions", {{"note_id", "cholangitis"}, {"condition", "QA"}, {"question_source", "human"}});
    ASSERT_EQ(status, 201);
    const std::string path = "/sessions/" + s["session_id"].get<std::string>() + "/answer";
    const auto a = post(path, {{"text", "gallstones"}, {"request_id", "abc"}});
    const auto b = post(path, {{"text", "gallstones"}, {"request_id", "abc"}});
    EXPECT_EQ(a, b);
    EXPECT_EQ(llm_->call_count(), 1u);
    EXPECT_EQ(get("/sessions/" + s["session_id"].get<std::string>()).second["remaining"], 2);
}

TEST_F(HttpApi, UnknownSessionIs404) {
    EXPECT_EQ(get("/sessions/nope").first, 404);
    EXPECT_EQ(get("/sessions/nope/report").first, 404);
    EXPECT_EQ(post("/sessions/nope/answer", {{"text", "x"}}).first, 404);
}

TEST_F(HttpApi, LlmOutageDuringGenerationIs503) {
    create_note();
    llm_->push_outage();
    llm_->push_outage();
    const auto [status, body] = post("/sessions", {{"note_id", "cholangitis"}, {"condition", "QA"}, {"question_source", "gpt"}});
    EXPECT_EQ(status, 503);
    EXPECT_EQ(body["error"], "LlmUnavailable");
}
