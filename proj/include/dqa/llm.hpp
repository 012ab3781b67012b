/**
 * @file llm.hpp
 * @brief Chat-completion client with deterministic record/replay transports.
 *
 * Every transport counts its calls so tests can assert that a code path made
 * (or did not make) LLM requests. Replay fixtures are JSONL files keyed by the
 * SHA-256 digest of the canonical JSON form of a request.
 */

#pragma once

#include "dqa/http.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace dqa::llm {

enum class role { system, user, assistant };

std::string_view to_string(role r);
role parse_role(std::string_view s);

struct message {
    llm::role role = llm::role::user;
    std::string content;

    friend bool operator==(const message&, const message&) = default;
};

struct chat_request {
    std::string model_id;
    std::vector<message> messages;
    double temperature = 0.0;
    int max_tokens = 512;

    /// Throws invalid_request: messages non-empty, first role system or user,
    /// temperature >= 0, max_tokens > 0.
    void validate() const;

    friend bool operator==(const chat_request&, const chat_request&) = default;
};

nlohmann::json to_json(const chat_request& req);
chat_request request_from_json(const nlohmann::json& j);

/// Compact JSON with sorted keys; message content is kept verbatim.
std::string canonical_json(const chat_request& req);

/// Lowercase hex SHA-256 of canonical_json(req).
std::string digest(const chat_request& req);

struct usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
    int total_tokens = 0;

    friend bool operator==(const usage&, const usage&) = default;
};

struct chat_response {
    std::string text;
    llm::usage usage;

    friend bool operator==(const chat_response&, const chat_response&) = default;
};

nlohmann::json to_json(const chat_response& r);
chat_response response_from_json(const nlohmann::json& j);

class transport {
public:
    virtual ~transport() = default;

    /// Validates the request, counts the call and forwards it.
    chat_response complete(const chat_request& req);

    [[nodiscard]] std::size_t call_count() const noexcept { return calls_.load(); }

protected:
    virtual chat_response do_complete(const chat_request& req) = 0;

private:
    std::atomic<std::size_t> calls_{0};
};

/// Free-function form used throughout the pipeline.
chat_response complete(const chat_request& req, transport& t);

/// Returns queued responses in order. An outage step raises llm_unavailable;
/// an exhausted script does too.
class scripted_transport final : public transport {
public:
    scripted_transport() = default;
    explicit scripted_transport(std::vector<std::string> responses);

    void push(std::string response);
    void push_outage();

    [[nodiscard]] std::vector<chat_request> requests() const;
    [[nodiscard]] std::size_t remaining() const;

protected:
    chat_response do_complete(const chat_request& req) override;

private:
    struct step {
        std::string text;
        bool outage = false;
    };
    mutable std::mutex mutex_;
    std::deque<step> script_;
    std::vector<chat_request> seen_;
};

struct fixture_entry {
    std::string digest;
    chat_request request;
    chat_response response;
};

/// Serves recorded responses without touching the network. The k-th call with
/// a given digest receives the k-th recording for it (the last one once
/// recordings run out). Misses raise fixture_miss.
class replay_transport final : public transport {
public:
    explicit replay_transport(std::vector<fixture_entry> entries);
    static std::unique_ptr<replay_transport> load(const std::filesystem::path& path);

    [[nodiscard]] std::size_t size() const noexcept { return count_; }

protected:
    chat_response do_complete(const chat_request& req) override;

private:
    std::map<std::string, std::vector<chat_response>> by_digest_;
    std::map<std::string, std::size_t> cursor_;
    std::size_t count_ = 0;
    std::mutex mutex_;
};

std::vector<fixture_entry> read_fixture(const std::filesystem::path& path);
std::string fixture_line(const fixture_entry& e);

/// Forwards to `inner` and appends each exchange to a JSONL fixture.
class recording_transport final : public transport {
public:
    recording_transport(std::shared_ptr<transport> inner, const std::filesystem::path& path);

protected:
    chat_response do_complete(const chat_request& req) override;

private:
    std::shared_ptr<transport> inner_;
    std::mutex mutex_;
    std::ofstream out_;
};

/// OpenAI-compatible POST {base_url}/chat/completions with bounded
/// exponential-backoff retries on transient failures.
class http_transport final : public transport {
public:
    struct options {
        std::string base_url = "https://api.openai.com/v1";
        std::string api_key;
        std::chrono::milliseconds timeout{60000};
        int max_attempts = 3;
        std::chrono::milliseconds initial_backoff{500};
        http::post_fn post = http::post_json;
        std::function<void(std::chrono::milliseconds)> sleep;
    };

    explicit http_transport(options opts);

    /// Reads LLM_API_KEY (required, else auth_error) and LLM_BASE_URL.
    static std::unique_ptr<http_transport> from_env();

protected:
    chat_response do_complete(const chat_request& req) override;

private:
    options opts_;
};

/// Model ids and decoding defaults for the two slots: question generation
/// and chat verification, plus the judge.
struct model_config {
    std::string generation_model = "gpt-3.5-turbo";
    std::string verification_model = "gpt-3.5-turbo";
    std::string judge_model = "gpt-4";
    double generation_temperature = 0.7;
    double verification_temperature = 0.0;
    double judge_temperature = 0.0;
    int max_tokens = 512;
};

}  // namespace dqa::llm
