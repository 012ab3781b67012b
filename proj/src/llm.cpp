#include "dqa/llm.hpp"

#include "dqa/errors.hpp"
#include "dqa/text.hpp"

#include <cstdlib>
#include <thread>

namespace dqa::llm {

using nlohmann::json;

std::string_view to_string(role r) {
    switch (r) {
        case role::system: return "system";
        case role::user: return "user";
        case role::assistant: return "assistant";
    }
    return "user";
}

role parse_role(std::string_view s) {
    if (s == "system") return role::system;
    if (s == "user") return role::user;
    if (s == "assistant") return role::assistant;
    throw invalid_request("unknown chat role '" + std::string(s) + "'");
}

void chat_request::validate() const {
    if (messages.empty()) throw invalid_request("chat request has no messages");
    if (messages.front().role == role::assistant) {
        throw invalid_request("first message must be a system or user message");
    }
    if (!(temperature >= 0.0)) throw invalid_request("temperature must be >= 0");
    if (max_tokens <= 0) throw invalid_request("max_tokens must be positive");
}

nlohmann::json to_json(const chat_request& req) {
    json msgs = json::array();
    for (const auto& m : req.messages) {
        msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return {{"model_id", req.model_id},
            {"messages", std::move(msgs)},
            {"temperature", req.temperature},
            {"max_tokens", req.max_tokens}};
}

chat_request request_from_json(const nlohmann::json& j) {
    chat_request req;
    try {
        req.model_id = j.at("model_id").get<std::string>();
        for (const auto& m : j.at("messages")) {
            req.messages.push_back({parse_role(m.at("role").get<std::string>()),
                                    m.at("content").get<std::string>()});
        }
        req.temperature = j.at("temperature").get<double>();
        req.max_tokens = j.at("max_tokens").get<int>();
    } catch (const json::exception& e) {
        throw parse_error(std::string("chat request JSON: ") + e.what());
    }
    return req;
}

std::string canonical_json(const chat_request& req) {
    // nlohmann::json objects are std::map backed, so keys serialize sorted.
    return to_json(req).dump();
}

std::string digest(const chat_request& req) { return text::sha256_hex(canonical_json(req)); }

nlohmann::json to_json(const chat_response& r) {
    return {{"text", r.text},
            {"usage",
             {{"prompt_tokens", r.usage.prompt_tokens},
              {"completion_tokens", r.usage.completion_tokens},
              {"total_tokens", r.usage.total_tokens}}}};
}

chat_response response_from_json(const nlohmann::json& j) {
    chat_response r;
    if (j.is_string()) {
        r.text = j.get<std::string>();
        return r;
    }
    try {
        r.text = j.at("text").get<std::string>();
        if (j.contains("usage")) {
            const auto& u = j["usage"];
            r.usage.prompt_tokens = u.value("prompt_tokens", 0);
            r.usage.completion_tokens = u.value("completion_tokens", 0);
            r.usage.total_tokens = u.value("total_tokens", 0);
        }
    } catch (const json::exception& e) {
        throw parse_error(std::string("chat response JSON: ") + e.what());
    }
    return r;
}

chat_response transport::complete(const chat_request& req) {
    req.validate();
    ++calls_;
    return do_complete(req);
}

chat_response complete(const chat_request& req, transport& t) { return t.complete(req); }

// ─────────────────────────────────────────────────────
// scripted
// ─────────────────────────────────────────────────────

scripted_transport::scripted_transport(std::vector<std::string> responses) {
    for (auto& r : responses) script_.push_back({std::move(r), false});
}

void scripted_transport::push(std::string response) {
    std::lock_guard lock(mutex_);
    script_.push_back({std::move(response), false});
}

void scripted_transport::push_outage() {
    std::lock_guard lock(mutex_);
    script_.push_back({{}, true});
}

std::vector<chat_request> scripted_transport::requests() const {
    std::lock_guard lock(mutex_);
    return seen_;
}

std::size_t scripted_transport::remaining() const {
    std::lock_guard lock(mutex_);
    return script_.size();
}

chat_response scripted_transport::do_complete(const chat_request& req) {
    std::lock_guard lock(mutex_);
    seen_.push_back(req);
    if (script_.empty()) throw llm_unavailable("scripted transport exhausted");
    auto step = std::move(script_.front());
    script_.pop_front();
    if (step.outage) throw llm_unavailable("scripted outage");
    return {std::move(step.text), {}};
}

// ─────────────────────────────────────────────────────
// replay / record
// ─────────────────────────────────────────────────────

std::string fixture_line(const fixture_entry& e) {
    return json{{"digest", e.digest}, {"request", to_json(e.request)}, {"response", to_json(e.response)}}
        .dump();
}

std::vector<fixture_entry> read_fixture(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open fixture " + path.string());
    std::vector<fixture_entry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = json::parse(line);
            fixture_entry e;
            e.request = request_from_json(j.at("request"));
            e.response = response_from_json(j.at("response"));
            e.digest = j.value("digest", digest(e.request));
            if (e.digest != digest(e.request)) {
                throw parse_error("digest does not match request");
            }
            out.push_back(std::move(e));
        } catch (const std::exception& ex) {
            throw parse_error(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return out;
}

replay_transport::replay_transport(std::vector<fixture_entry> entries) : count_(entries.size()) {
    for (auto& e : entries) by_digest_[e.digest].push_back(std::move(e.response));
}

std::unique_ptr<replay_transport> replay_transport::load(const std::filesystem::path& path) {
    return std::make_unique<replay_transport>(read_fixture(path));
}

chat_response replay_transport::do_complete(const chat_request& req) {
    const auto d = digest(req);
    std::lock_guard lock(mutex_);
    auto it = by_digest_.find(d);
    if (it == by_digest_.end()) throw fixture_miss(d);
    auto& k = cursor_[d];
    const auto& r = it->second[std::min(k, it->second.size() - 1)];
    ++k;
    return r;
}

recording_transport::recording_transport(std::shared_ptr<transport> inner,
                                         const std::filesystem::path& path)
    : inner_(std::move(inner)), out_(path, std::ios::app) {
    if (!inner_) throw invalid_request("recording transport needs an inner transport");
    if (!out_) throw storage_error("cannot open fixture for recording: " + path.string());
}

chat_response recording_transport::do_complete(const chat_request& req) {
    auto response = inner_->complete(req);
    std::lock_guard lock(mutex_);
    out_ << fixture_line({digest(req), req, response}) << '\n';
    out_.flush();
    return response;
}

// ─────────────────────────────────────────────────────
// http
// ─────────────────────────────────────────────────────

http_transport::http_transport(options opts) : opts_(std::move(opts)) {
    if (opts_.api_key.empty()) throw auth_error("no API key configured");
    if (opts_.max_attempts < 1) opts_.max_attempts = 1;
    if (!opts_.post) opts_.post = http::post_json;
    if (!opts_.sleep) opts_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::unique_ptr<http_transport> http_transport::from_env() {
    options opts;
    const char* key = std::getenv("LLM_API_KEY");
    if (key == nullptr || *key == '\0') throw auth_error("LLM_API_KEY is not set");
    opts.api_key = key;
    if (const char* base = std::getenv("LLM_BASE_URL"); base != nullptr && *base != '\0') {
        opts.base_url = base;
    }
    return std::make_unique<http_transport>(std::move(opts));
}

chat_response http_transport::do_complete(const chat_request& req) {
    json body = {{"model", req.model_id},
                 {"temperature", req.temperature},
                 {"max_tokens", req.max_tokens},
                 {"messages", json::array()}};
    for (const auto& m : req.messages) {
        body["messages"].push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    std::string url = opts_.base_url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    url += "/chat/completions";
    const http::headers headers{{"Authorization", "Bearer " + opts_.api_key}};
    const std::string payload = body.dump();

    std::string last_error;
    auto backoff = opts_.initial_backoff;
    for (int attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
        const auto reply = opts_.post(url, payload, headers, opts_.timeout);
        const int s = reply.status;
        if (s == 401 || s == 403) throw auth_error("chat endpoint rejected credentials (HTTP " + std::to_string(s) + ")");
        const bool transient = s == 0 || s == 408 || s == 409 || s == 429 || s >= 500;
        if (s >= 200 && s < 300) {
            try {
                const auto j = json::parse(reply.body);
                chat_response r;
                r.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
                if (j.contains("usage")) {
                    const auto& u = j["usage"];
                    r.usage = {u.value("prompt_tokens", 0), u.value("completion_tokens", 0),
                               u.value("total_tokens", 0)};
                }
                return r;
            } catch (const json::exception& e) {
                throw llm_unavailable(std::string("malformed chat completion: ") + e.what());
            }
        }
        if (!transient) {
            throw invalid_request("chat endpoint returned HTTP " + std::to_string(s) + ": " + reply.body);
        }
        last_error = s == 0 ? reply.error : "HTTP " + std::to_string(s);
        if (attempt < opts_.max_attempts) {
            opts_.sleep(backoff);
            backoff *= 2;
        }
    }
    throw llm_unavailable("chat endpoint failed after " + std::to_string(opts_.max_attempts) +
                          " attempts: " + last_error);
}

}  // namespace dqa::llm
