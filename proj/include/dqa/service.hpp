/**
 * @file service.hpp
 * @brief Persistence, configuration and the REST API.
 *
 * Sessions are stored as one JSONL event log per session plus a JSON
 * snapshot that is rewritten after every append. The log is authoritative;
 * the snapshot only serves reads and audits.
 *
 * Layout under the data directory:
 *
 *   notes/<note_id>.json
 *   cloze/<note_id>.json
 *   sessions/<session_id>.jsonl
 *   sessions/<session_id>.snapshot.json
 */

#pragma once

#include "dqa/cloze.hpp"
#include "dqa/dialogue.hpp"
#include "dqa/eval.hpp"
#include "dqa/extraction.hpp"
#include "dqa/llm.hpp"
#include "dqa/qgen.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace dqa {

// ─────────────────────────────────────────────────────
// Config
// ─────────────────────────────────────────────────────

/// Flat "section.key" -> value map parsed from a TOML-style file: [section]
/// headers, key = value lines with quoted strings, booleans, integers and
/// floats, and # comments.
nlohmann::json parse_toml_flat(std::string_view source);

struct service_config {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path data_dir = "dqa-data";
    /// Served at "/" when set (the web client build).
    std::optional<std::filesystem::path> static_dir;
    std::optional<std::filesystem::path> prompts_dir;
    std::optional<std::filesystem::path> cloze_dir;
    std::optional<std::filesystem::path> human_questions;

    std::string llm_transport = "http";  ///< http | replay | scripted
    std::optional<std::filesystem::path> llm_fixture;
    llm::model_config models;

    std::string extractor_backend = "gazetteer";  ///< gazetteer | external
    std::optional<std::filesystem::path> lexicon;
    std::optional<std::string> extractor_endpoint;
    double relation_threshold = 0.5;

    bool repeat_on_incorrect = false;
    std::size_t n_min = 4;
    bool cloze_fallback = true;
    bool answer_key_shortcut = false;
    bool judge_strict = false;

    /// Relative paths are resolved against `base`.
    static service_config from_toml(std::string_view source, const std::filesystem::path& base = {});
    static service_config load(const std::filesystem::path& path);
};

// ─────────────────────────────────────────────────────
// Session store
// ─────────────────────────────────────────────────────

class session_store {
public:
    explicit session_store(std::filesystem::path dir);

    /// Appends durably (flush + fsync) and refreshes the snapshot. Throws
    /// consistency_error unless e.seq is one past the last stored sequence,
    /// storage_error on I/O failure.
    void persist_event(const std::string& session_id, const session_event& e);

    /// Appends consecutive events with a single flush + fsync. Nothing is
    /// written when any event is out of sequence or illegal.
    void persist_events(const std::string& session_id, std::span<const session_event> events);

    /// Left fold of the stored events. Throws not_found for unknown or empty
    /// logs and corrupt_log for illegal or malformed events. A torn final
    /// line without a newline is ignored.
    [[nodiscard]] dialogue_session replay_session(const std::string& session_id) const;

    [[nodiscard]] std::vector<session_event> events(const std::string& session_id) const;
    [[nodiscard]] std::uint64_t last_seq(const std::string& session_id) const;
    [[nodiscard]] bool exists(const std::string& session_id) const;
    [[nodiscard]] std::vector<std::string> session_ids() const;

    [[nodiscard]] std::filesystem::path log_path(const std::string& session_id) const;
    [[nodiscard]] std::filesystem::path snapshot_path(const std::string& session_id) const;

    /// Serializes writers of one session.
    std::mutex& session_mutex(const std::string& session_id);

private:
    std::filesystem::path dir_;
    mutable std::mutex index_mutex_;
    mutable std::map<std::string, std::uint64_t> last_seq_;
    std::map<std::string, dialogue_session> folded_;
    std::map<std::string, std::unique_ptr<std::mutex>> locks_;

    std::uint64_t load_last_seq(const std::string& session_id) const;
};

// ─────────────────────────────────────────────────────
// Service core
// ─────────────────────────────────────────────────────

/// Error raised by the service with the HTTP status it maps to.
struct http_status_error {
    int status;
    std::string code;
    std::string message;
};

/// Maps a dqa::error (or any exception) to a status and JSON error body.
http_status_error classify_exception(const std::exception& e);

class chat_service {
public:
    struct dependencies {
        std::shared_ptr<llm::transport> llm;
        std::shared_ptr<const extractor> ex;
        clock_fn clock = system_timestamp;
        std::function<std::string()> new_id;  ///< defaults to random hex ids
    };

    chat_service(service_config config, dependencies deps);

    /// {text} | {visit_recap, detailed_instructions} | {sections: {...}},
    /// optional note_id and cloze_test. Returns {note_id}.
    nlohmann::json create_note(const nlohmann::json& body);
    nlohmann::json get_note(const std::string& note_id) const;

    /// {note_id, condition, question_source?, questions?}. Returns
    /// {session_id, phase, turns}.
    nlohmann::json create_session(const nlohmann::json& body);

    /// Snapshot: metadata, phase and all turns.
    nlohmann::json get_session(const std::string& session_id);

    /// {text, request_id?}. Returns {phase, turns} with the bot turns
    /// produced; a repeated request_id returns the original reply.
    nlohmann::json answer(const std::string& session_id, const nlohmann::json& body);

    /// Blanked sentences of the note's quiz (no answers).
    nlohmann::json get_cloze(const std::string& session_id);

    /// {responses}. Scores the quiz and finishes the session.
    nlohmann::json submit_cloze(const std::string& session_id, const nlohmann::json& body);

    /// Cloze result, verdict counts and, when `judge` is set, judge scores.
    nlohmann::json report(const std::string& session_id, bool judge = false);

    [[nodiscard]] const service_config& config() const noexcept { return config_; }
    [[nodiscard]] session_store& store() noexcept { return store_; }

private:
    struct live_session {
        dialogue_session session;
        std::map<std::string, nlohmann::json> replies;  ///< request_id -> reply
    };

    service_config config_;
    dependencies deps_;
    prompt_set prompts_;
    session_store store_;
    mutable std::mutex mutex_;
    std::map<std::string, discharge_note> notes_;
    std::map<std::string, cloze_test> cloze_;
    std::map<std::string, std::shared_ptr<live_session>> sessions_;

    discharge_note note(const std::string& note_id) const;
    std::optional<cloze_test> cloze_for(const std::string& note_id) const;
    std::shared_ptr<live_session> load(const std::string& session_id);
    void persist(const std::string& session_id, std::vector<session_event>& events,
                 const std::string& request_id = {});
    verifier_fn verifier(const discharge_note& n) const;
};

/// Wraps chat_service in an httplib server.
class http_api {
public:
    explicit http_api(chat_service& service);
    ~http_api();

    http_api(const http_api&) = delete;
    http_api& operator=(const http_api&) = delete;

    /// Binds `host`; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    bool listen();
    void stop();

private:
    chat_service& service_;
    std::unique_ptr<httplib::Server> server_;
};

/// Builds the transport named by the config (http from the environment,
/// replay from the fixture).
std::shared_ptr<llm::transport> make_transport(const service_config& config);
std::shared_ptr<const extractor> make_extractor(const service_config& config);

}  // namespace dqa
