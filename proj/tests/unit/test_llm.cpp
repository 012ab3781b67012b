#include "../support/scenario.hpp"

#include "dqa/errors.hpp"
#include "dqa/llm.hpp"

#include <gtest/gtest.h>

using namespace dqa;
namespace fx = dqa::testing;
using namespace dqa::llm;
using nlohmann::json;

namespace {

chat_request sample(std::string text = "hello") {
    chat_request r;
    r.model_id = "m";
    r.messages = {{role::system, "sys"}, {role::user, std::move(text)}};
    r.temperature = 0.0;
    r.max_tokens = 16;
    return r;
}

std::string completion(std::string_view text) {
    return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
                {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 2}, {"total_tokens", 5}}}}
        .dump();
}

struct fake_endpoint {
    std::vector<http::reply> replies;
    std::vector<std::pair<std::string, json>> seen;
    std::vector<http::headers> headers;
    std::vector<std::chrono::milliseconds> sleeps;

    http_transport make(int attempts = 3) {
        http_transport::options o;
        o.base_url = "http://llm.local/v1/";
        o.api_key = "k";
        o.max_attempts = attempts;
        o.initial_backoff = std::chrono::milliseconds(100);
        o.post = [this](const std::string& url, const std::string& body, const http::headers& h,
                        std::chrono::milliseconds) {
            seen.emplace_back(url, json::parse(body));
            headers.push_back(h);
            auto r = replies.front();
            if (replies.size() > 1) replies.erase(replies.begin());
            return r;
        };
        o.sleep = [this](std::chrono::milliseconds d) { sleeps.push_back(d); };
        return http_transport(std::move(o));
    }
};

}  // namespace

TEST(Request, ValidateRules) {
    auto r = sample();
    EXPECT_NO_THROW(r.validate());
    r.messages.clear();
    EXPECT_THROW(r.validate(), invalid_request);
    r = sample();
    r.messages[0].role = role::assistant;
    EXPECT_THROW(r.validate(), invalid_request);
    r = sample();
    r.temperature = -0.1;
    EXPECT_THROW(r.validate(), invalid_request);
    r = sample();
    r.max_tokens = 0;
    EXPECT_THROW(r.validate(), invalid_request);
}

TEST(Request, JsonRoundTrip) {
    const auto r = sample();
    EXPECT_EQ(request_from_json(to_json(r)), r);
}

TEST(Digest, SensitiveToEveryField) {
    const auto base = digest(sample());
    EXPECT_EQ(base, digest(sample()));
    EXPECT_EQ(base, text::sha256_hex(canonical_json(sample())));
    auto r = sample();
    r.temperature = 0.5;
    EXPECT_NE(digest(r), base);
    r = sample();
    r.model_id = "n";
    EXPECT_NE(digest(r), base);
    EXPECT_NE(digest(sample("hello ")), base);
}

TEST(Digest, CanonicalFormSortsKeys) {
    const auto c = canonical_json(sample());
    EXPECT_LT(c.find("\"max_tokens\""), c.find("\"messages\""));
    EXPECT_LT(c.find("\"messages\""), c.find("\"model"));
    EXPECT_EQ(c.find('\n'), std::string::npos);
}

TEST(Scripted, ServesInOrderAndCounts) {
    scripted_transport t({"a", "b"});
    EXPECT_EQ(complete(sample(), t).text, "a");
    EXPECT_EQ(t.complete(sample()).text, "b");
    EXPECT_THROW(t.complete(sample()), llm_unavailable);
    EXPECT_EQ(t.call_count(), 3u);
    EXPECT_EQ(t.requests().size(), 3u);
}

TEST(Scripted, InvalidRequestIsNotCounted) {
    scripted_transport t({"a"});
    auto r = sample();
    r.messages.clear();
    EXPECT_THROW(t.complete(r), invalid_request);
    EXPECT_EQ(t.remaining(), 1u);
}

TEST(Replay, OrdinalsPerDigestThenRepeatLast) {
    const auto r = sample();
    replay_transport t({{digest(r), r, {"first", {}}}, {digest(r), r, {"second", {}}}});
    EXPECT_EQ(t.size(), 2u);
    EXPECT_EQ(t.complete(r).text, "first");
    EXPECT_EQ(t.complete(r).text, "second");
    EXPECT_EQ(t.complete(r).text, "second");
}

TEST(Replay, MissCarriesDigest) {
    replay_transport t({});
    try {
        t.complete(sample());
        FAIL();
    } catch (const fixture_miss& e) {
        EXPECT_EQ(e.digest(), digest(sample()));
        EXPECT_EQ(e.code(), "FixtureMiss");
    }
}

TEST(Replay, TamperedDigestRejected) {
    fx::temp_dir dir;
    fixture_entry e{digest(sample()), sample("other"), {"x", {}}};
    fx::write_text(dir.path() / "f.jsonl", fixture_line(e) + "\n");
    EXPECT_THROW(read_fixture(dir.path() / "f.jsonl"), parse_error);
}

TEST(Recording, WritesReplayableFixture) {
    fx::temp_dir dir;
    const auto path = dir.path() / "rec.jsonl";
    {
        auto inner = std::make_shared<scripted_transport>(std::vector<std::string>{"one", "two"});
        recording_transport rec(inner, path);
        EXPECT_EQ(rec.complete(sample("a")).text, "one");
        EXPECT_EQ(rec.complete(sample("b")).text, "two");
    }
    auto replay = replay_transport::load(path);
    EXPECT_EQ(replay->complete(sample("b")).text, "two");
    EXPECT_EQ(replay->complete(sample("a")).text, "one");
}

TEST(Http, PostsOpenAiShapeAndParsesReply) {
    fake_endpoint f;
    f.replies = {{200, completion("hi"), ""}};
    auto t = f.make();
    const auto r = t.complete(sample());
    EXPECT_EQ(r.text, "hi");
    EXPECT_EQ(r.usage.total_tokens, 5);
    ASSERT_EQ(f.seen.size(), 1u);
    EXPECT_EQ(f.seen[0].first, "http://llm.local/v1/chat/completions");
    EXPECT_EQ(f.seen[0].second["messages"][1]["content"], "hello");
    EXPECT_EQ(f.seen[0].second["messages"][0]["role"], "system");
    EXPECT_EQ(f.headers[0].at("Authorization"), "Bearer k");
}

TEST(Http, RetriesTransientWithBackoff) {
    fake_endpoint f;
    f.replies = {{503, "", ""}, {0, "", "reset"}, {200, completion("ok"), ""}};
    auto t = f.make();
    EXPECT_EQ(t.complete(sample()).text, "ok");
    EXPECT_EQ(f.seen.size(), 3u);
    EXPECT_EQ(f.sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100),
                                                                 std::chrono::milliseconds(200)}));
}

TEST(Http, GivesUpAfterMaxAttempts) {
    fake_endpoint f;
    f.replies = {{429, "", ""}};
    auto t = f.make(2);
    EXPECT_THROW(t.complete(sample()), llm_unavailable);
    EXPECT_EQ(f.seen.size(), 2u);
}

TEST(Http, AuthAndClientErrorsAreNotRetried) {
    fake_endpoint f;
    f.replies = {{401, "", ""}};
    auto t = f.make();
    EXPECT_THROW(t.complete(sample()), auth_error);
    EXPECT_EQ(f.seen.size(), 1u);

    fake_endpoint g;
    g.replies = {{400, "bad", ""}};
    auto u = g.make();
    EXPECT_THROW(u.complete(sample()), invalid_request);
    EXPECT_EQ(g.seen.size(), 1u);
}

TEST(Http, MalformedBodyIsUnavailable) {
    fake_endpoint f;
    f.replies = {{200, "{}", ""}};
    auto t = f.make();
    EXPECT_THROW(t.complete(sample()), llm_unavailable);
}

TEST(Http, MissingKeyIsAuthError) {
    http_transport::options o;
    EXPECT_THROW(http_transport{o}, auth_error);
}

TEST(HttpUrl, SplitsBaseAndPath) {
    EXPECT_EQ(http::split_url("http://h:8/a/b"), (std::pair<std::string, std::string>{"http://h:8", "/a/b"}));
    EXPECT_EQ(http::split_url("https://h"), (std::pair<std::string, std::string>{"https://h", "/"}));
}
