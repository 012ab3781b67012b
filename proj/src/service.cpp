#include "dqa/service.hpp"

#include "dqa/errors.hpp"
#include "dqa/text.hpp"

#include <httplib.h>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace dqa {

using nlohmann::json;
namespace fs = std::filesystem;

// ─────────────────────────────────────────────────────
// Config
// ─────────────────────────────────────────────────────

namespace {

std::string strip_comment(std::string_view line) {
    bool in_str = false;
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_str) {
            if (c == '\\' && quote == '"') ++i;
            else if (c == quote) in_str = false;
        } else if (c == '"' || c == '\'') {
            in_str = true;
            quote = c;
        } else if (c == '#') {
            return std::string(line.substr(0, i));
        }
    }
    return std::string(line);
}

json parse_toml_value(std::string_view v, std::size_t line_no) {
    auto fail = [&](const std::string& why) {
        return config_error("config line " + std::to_string(line_no) + ": " + why);
    };
    if (v.empty()) throw fail("missing value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') throw fail("unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            char c = v[i];
            if (c == '\\' && i + 2 < v.size()) {
                const char n = v[++i];
                switch (n) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: throw fail(std::string("unknown escape \\") + n);
                }
            } else {
                out += c;
            }
        }
        return out;
    }
    if (v.front() == '\'') {
        if (v.size() < 2 || v.back() != '\'') throw fail("unterminated string");
        return std::string(v.substr(1, v.size() - 2));
    }
    if (v == "true") return true;
    if (v == "false") return false;
    auto parsed = json::parse(v, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_number()) throw fail("unsupported value '" + std::string(v) + "'");
    return parsed;
}

}  // namespace

nlohmann::json parse_toml_flat(std::string_view source) {
    json out = json::object();
    std::string section;
    std::istringstream in{std::string(source)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = std::string(text::trim(strip_comment(raw)));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw config_error("config line " + std::to_string(line_no) + ": bad section");
            section = std::string(text::trim(std::string_view(line).substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw config_error("config line " + std::to_string(line_no) + ": expected key = value");
        const auto key = std::string(text::trim(std::string_view(line).substr(0, eq)));
        if (key.empty()) throw config_error("config line " + std::to_string(line_no) + ": empty key");
        const auto full = section.empty() ? key : section + "." + key;
        if (out.contains(full)) throw config_error("config key " + full + " set twice");
        out[full] = parse_toml_value(text::trim(std::string_view(line).substr(eq + 1)), line_no);
    }
    return out;
}

service_config service_config::from_toml(std::string_view source, const fs::path& base) {
    const json kv = parse_toml_flat(source);
    service_config c;
    static const std::set<std::string> known{
        "server.host",           "server.port",           "server.data_dir",       "server.static_dir",
        "paths.prompts_dir",     "paths.cloze_dir",       "paths.human_questions", "llm.transport",
        "llm.fixture",           "llm.generation_model",  "llm.verification_model", "llm.judge_model",
        "llm.generation_temperature", "llm.max_tokens",   "extraction.backend",    "extraction.lexicon",
        "extraction.endpoint",   "extraction.threshold",  "dialogue.repeat_on_incorrect",
        "qgen.n_min",            "qgen.cloze_fallback",   "verify.answer_key_shortcut", "eval.judge_strict"};
    for (const auto& [k, v] : kv.items()) {
        if (known.count(k) == 0) throw config_error("unknown config key " + k);
    }
    auto path = [&](const char* key) -> std::optional<fs::path> {
        if (!kv.contains(key)) return std::nullopt;
        fs::path p = kv[key].get<std::string>();
        return p.is_relative() && !base.empty() ? base / p : p;
    };
    try {
        c.host = kv.value("server.host", c.host);
        c.port = kv.value("server.port", c.port);
        if (auto p = path("server.data_dir")) c.data_dir = *p;
        c.static_dir = path("server.static_dir");
        c.prompts_dir = path("paths.prompts_dir");
        c.cloze_dir = path("paths.cloze_dir");
        c.human_questions = path("paths.human_questions");
        c.llm_transport = kv.value("llm.transport", c.llm_transport);
        c.llm_fixture = path("llm.fixture");
        c.models.generation_model = kv.value("llm.generation_model", c.models.generation_model);
        c.models.verification_model = kv.value("llm.verification_model", c.models.verification_model);
        c.models.judge_model = kv.value("llm.judge_model", c.models.judge_model);
        c.models.generation_temperature = kv.value("llm.generation_temperature", c.models.generation_temperature);
        c.models.max_tokens = kv.value("llm.max_tokens", c.models.max_tokens);
        c.extractor_backend = kv.value("extraction.backend", c.extractor_backend);
        c.lexicon = path("extraction.lexicon");
        if (kv.contains("extraction.endpoint")) c.extractor_endpoint = kv["extraction.endpoint"].get<std::string>();
        c.relation_threshold = kv.value("extraction.threshold", c.relation_threshold);
        c.repeat_on_incorrect = kv.value("dialogue.repeat_on_incorrect", c.repeat_on_incorrect);
        c.n_min = kv.value("qgen.n_min", c.n_min);
        c.cloze_fallback = kv.value("qgen.cloze_fallback", c.cloze_fallback);
        c.answer_key_shortcut = kv.value("verify.answer_key_shortcut", c.answer_key_shortcut);
        c.judge_strict = kv.value("eval.judge_strict", c.judge_strict);
    } catch (const json::exception& e) {
        throw config_error(std::string("config value has the wrong type: ") + e.what());
    }
    if (c.port < 0 || c.port > 65535) throw config_error("server.port out of range");
    if (c.llm_transport != "http" && c.llm_transport != "replay" && c.llm_transport != "scripted" &&
        c.llm_transport != "none") {
        throw config_error("llm.transport must be http, replay, scripted or none");
    }
    if (c.llm_transport == "replay" && !c.llm_fixture) throw config_error("replay transport needs llm.fixture");
    if (c.extractor_backend != "gazetteer" && c.extractor_backend != "external") {
        throw config_error("extraction.backend must be gazetteer or external");
    }
    if (c.n_min < 1) throw config_error("qgen.n_min must be at least 1");
    return c;
}

service_config service_config::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_toml(ss.str(), path.parent_path());
}

// ─────────────────────────────────────────────────────
// Session store
// ─────────────────────────────────────────────────────

namespace {

void write_all(int fd, std::string_view data, const fs::path& p) {
    while (!data.empty()) {
        const auto n = ::write(fd, data.data(), data.size());
        if (n < 0) {
            if (errno == EINTR) continue;
            throw storage_error("write failed for " + p.string() + ": " + std::strerror(errno));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

void durable_append(const fs::path& p, std::string_view line) {
    const int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw storage_error("cannot open " + p.string() + ": " + std::strerror(errno));
    try {
        write_all(fd, line, p);
        if (::fsync(fd) != 0) throw storage_error("fsync failed for " + p.string());
    } catch (...) {
        ::close(fd);
        throw;
    }
    ::close(fd);
}

void atomic_write(const fs::path& p, std::string_view data) {
    const auto tmp = fs::path(p.string() + ".tmp");
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw storage_error("cannot open " + tmp.string() + ": " + std::strerror(errno));
    try {
        write_all(fd, data, tmp);
        if (::fsync(fd) != 0) throw storage_error("fsync failed for " + tmp.string());
    } catch (...) {
        ::close(fd);
        throw;
    }
    ::close(fd);
    std::error_code ec;
    fs::rename(tmp, p, ec);
    if (ec) throw storage_error("cannot replace " + p.string() + ": " + ec.message());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw storage_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool valid_id(std::string_view id) {
    if (id.empty() || id.size() > 128) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    }) && id != "." && id != "..";
}

}  // namespace

session_store::session_store(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw storage_error("cannot create " + dir_.string() + ": " + ec.message());
}

fs::path session_store::log_path(const std::string& id) const {
    if (!valid_id(id)) throw not_found("invalid session id '" + id + "'");
    return dir_ / (id + ".jsonl");
}

fs::path session_store::snapshot_path(const std::string& id) const {
    if (!valid_id(id)) throw not_found("invalid session id '" + id + "'");
    return dir_ / (id + ".snapshot.json");
}

bool session_store::exists(const std::string& id) const {
    return valid_id(id) && fs::exists(log_path(id));
}

std::vector<std::string> session_store::session_ids() const {
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir_)) {
        const auto name = entry.path().filename().string();
        if (name.size() > 6 && name.ends_with(".jsonl")) out.push_back(name.substr(0, name.size() - 6));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::mutex& session_store::session_mutex(const std::string& id) {
    std::lock_guard lock(index_mutex_);
    auto& slot = locks_[id];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

std::vector<session_event> session_store::events(const std::string& id) const {
    const auto p = log_path(id);
    if (!fs::exists(p)) throw not_found("session " + id + " does not exist");
    const auto data = slurp(p);
    std::vector<session_event> out;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < data.size()) {
        ++line_no;
        const auto nl = data.find('\n', pos);
        const bool terminated = nl != std::string::npos;
        const auto line = std::string_view(data).substr(pos, (terminated ? nl : data.size()) - pos);
        pos = terminated ? nl + 1 : data.size();
        if (text::trim(line).empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            if (!terminated) break;  // torn final write
            throw corrupt_log(p.string() + ":" + std::to_string(line_no) + ": malformed JSON");
        }
        auto e = session_event_from_json(j);
        if (e.session_id != id) throw corrupt_log(p.string() + ": event for session " + e.session_id);
        out.push_back(std::move(e));
    }
    return out;
}

dialogue_session session_store::replay_session(const std::string& id) const {
    const auto evs = events(id);
    if (evs.empty()) throw not_found("session " + id + " has no events");
    return replay_events(evs);
}

std::uint64_t session_store::load_last_seq(const std::string& id) const {
    const auto p = log_path(id);
    if (!fs::exists(p)) return 0;
    // Drop a torn tail so the next append starts on a fresh line.
    const auto data = slurp(p);
    if (!data.empty() && data.back() != '\n') {
        const auto cut = data.rfind('\n');
        const auto keep = cut == std::string::npos ? 0 : cut + 1;
        auto tail = json::parse(std::string_view(data).substr(keep), nullptr, false);
        if (tail.is_discarded()) {
            fs::resize_file(p, keep);
        } else {
            durable_append(p, "\n");
        }
    }
    const auto evs = events(id);
    return evs.empty() ? 0 : evs.back().seq;
}

std::uint64_t session_store::last_seq(const std::string& id) const {
    std::lock_guard lock(index_mutex_);
    auto it = last_seq_.find(id);
    if (it != last_seq_.end()) return it->second;
    const auto seq = load_last_seq(id);
    last_seq_[id] = seq;
    return seq;
}

void session_store::persist_event(const std::string& id, const session_event& e) {
    persist_events(id, std::span(&e, 1));
}

void session_store::persist_events(const std::string& id, std::span<const session_event> batch) {
    if (batch.empty()) return;
    auto expected = last_seq(id) + 1;
    // Fold first so an illegal event never reaches the log.
    dialogue_session state;
    {
        std::lock_guard lock(index_mutex_);
        auto it = folded_.find(id);
        if (it != folded_.end() && it->second.last_seq == expected - 1) state = it->second;
    }
    if (expected > 1 && state.last_seq != expected - 1) state = replay_session(id);
    std::string lines;
    for (const auto& e : batch) {
        if (e.session_id != id) throw consistency_error("event belongs to session " + e.session_id);
        if (e.seq != expected) {
            throw consistency_error("session " + id + ": expected seq " + std::to_string(expected) + ", got " +
                                    std::to_string(e.seq));
        }
        try {
            apply(state, e);
        } catch (const corrupt_log& ex) {
            throw consistency_error(ex.what());
        }
        lines += to_json(e).dump() + "\n";
        ++expected;
    }
    durable_append(log_path(id), lines);
    {
        std::lock_guard lock(index_mutex_);
        last_seq_[id] = state.last_seq;
        folded_[id] = state;
    }
    atomic_write(snapshot_path(id), to_json(state).dump(2) + "\n");
}

// ─────────────────────────────────────────────────────
// Service core
// ─────────────────────────────────────────────────────

http_status_error classify_exception(const std::exception& e) {
    const auto* de = dynamic_cast<const error*>(&e);
    if (de == nullptr) return {500, "InternalError", e.what()};
    const auto& code = de->code();
    static const std::map<std::string, int> status{
        {"NotFound", 404},
        {"ProtocolError", 409},
        {"ConsistencyError", 409},
        {"EmptyAnswer", 400},
        {"SessionConfigError", 400},
        {"ParseError", 400},
        {"InvalidNote", 400},
        {"ClozeFormatError", 400},
        {"UnknownTypeError", 400},
        {"InvalidRequest", 400},
        {"ConfigError", 400},
        {"InvalidRelation", 400},
        {"AssemblyError", 400},
        {"GenerationError", 503},
        {"RetryableGenerationError", 503},
        {"LlmUnavailable", 503},
        {"FixtureMiss", 503},
        {"ExtractorUnavailable", 503},
        {"AuthError", 502},
        {"ExtractorProtocolError", 502},
        {"JudgeParseError", 502},
    };
    auto it = status.find(code);
    return {it == status.end() ? 500 : it->second, code, e.what()};
}

namespace {

std::string random_id() {
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    std::ostringstream ss;
    ss << "s-" << std::hex << rng();
    return ss.str();
}

json public_view(const dialogue_session& s) {
    json turns = json::array();
    for (const auto& t : s.turns) turns.push_back(to_json(t));
    return {{"session_id", s.session_id},
            {"note_id", s.note_id},
            {"condition", to_string(s.condition)},
            {"question_source", s.question_source ? json(to_string(*s.question_source)) : json(nullptr)},
            {"label", condition_label(s.condition, s.question_source)},
            {"phase", to_string(s.phase)},
            {"question_count", s.questions.size()},
            {"remaining", s.queue.size()},
            {"turns", std::move(turns)},
            {"cloze", s.cloze ? to_json(*s.cloze) : json(nullptr)}};
}

json turns_json(const std::vector<turn>& ts) {
    json out = json::array();
    for (const auto& t : ts) out.push_back(to_json(t));
    return out;
}

const json& require(const json& body, const char* key) {
    if (!body.is_object() || !body.contains(key)) {
        throw invalid_request(std::string("missing field '") + key + "'");
    }
    return body[key];
}

std::string require_string(const json& body, const char* key) {
    const auto& v = require(body, key);
    if (!v.is_string()) throw invalid_request(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

}  // namespace

chat_service::chat_service(service_config config, dependencies deps)
    : config_(std::move(config)),
      deps_(std::move(deps)),
      prompts_(config_.prompts_dir ? prompt_set::load(*config_.prompts_dir) : prompt_set::defaults()),
      store_(config_.data_dir / "sessions") {
    if (!deps_.clock) deps_.clock = system_timestamp;
    if (!deps_.new_id) deps_.new_id = random_id;
    std::error_code ec;
    fs::create_directories(config_.data_dir / "notes", ec);
    fs::create_directories(config_.data_dir / "cloze", ec);
    for (const auto& entry : fs::directory_iterator(config_.data_dir / "notes")) {
        if (entry.path().extension() != ".json") continue;
        auto n = note_from_json(json::parse(slurp(entry.path())));
        notes_[n.note_id] = std::move(n);
    }
    auto load_cloze_dir = [&](const fs::path& dir) {
        if (!fs::is_directory(dir)) return;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() != ".json") continue;
            auto t = load_cloze_test(entry.path());
            cloze_[t.note_id] = std::move(t);
        }
    };
    if (config_.cloze_dir) load_cloze_dir(*config_.cloze_dir);
    load_cloze_dir(config_.data_dir / "cloze");
}

discharge_note chat_service::note(const std::string& note_id) const {
    std::lock_guard lock(mutex_);
    auto it = notes_.find(note_id);
    if (it == notes_.end()) throw not_found("note " + note_id + " does not exist");
    return it->second;
}

std::optional<cloze_test> chat_service::cloze_for(const std::string& note_id) const {
    std::lock_guard lock(mutex_);
    auto it = cloze_.find(note_id);
    if (it == cloze_.end()) return std::nullopt;
    return it->second;
}

nlohmann::json chat_service::create_note(const json& body) {
    if (!body.is_object()) throw invalid_request("note body must be a JSON object");
    discharge_note n;
    if (body.contains("text")) {
        if (!body["text"].is_string()) throw invalid_request("field 'text' must be a string");
        n = ingest_note(body["text"].get<std::string>(), note_format::plain);
    } else {
        const json& sections = body.contains("sections") ? body["sections"] : body;
        json doc = {{"visit_recap", require_string(sections, "visit_recap")},
                    {"detailed_instructions", require_string(sections, "detailed_instructions")}};
        n = ingest_note(doc.dump(), note_format::sectioned_json);
    }
    if (body.contains("note_id")) {
        const auto id = require_string(body, "note_id");
        if (!valid_id(id)) throw invalid_request("invalid note_id '" + id + "'");
        n.note_id = id;
    }
    n.provenance = note_provenance::user_supplied;
    validate_note(n);

    std::optional<cloze_test> test;
    if (body.contains("cloze_test")) {
        test = cloze_test_from_json([&] {
            json t = body["cloze_test"];
            if (t.is_object()) t["note_id"] = n.note_id;
            return t;
        }());
        validate_cloze_test(*test, &n);
    }

    std::lock_guard lock(mutex_);
    atomic_write(config_.data_dir / "notes" / (n.note_id + ".json"), note_to_json(n).dump(2) + "\n");
    if (test) {
        atomic_write(config_.data_dir / "cloze" / (n.note_id + ".json"), to_json(*test).dump(2) + "\n");
        cloze_[n.note_id] = *test;
    }
    json out = {{"note_id", n.note_id},
                {"visit_recap", {n.visit_recap.begin, n.visit_recap.end}},
                {"detailed_instructions", {n.detailed_instructions.begin, n.detailed_instructions.end}},
                {"has_cloze_test", cloze_.count(n.note_id) != 0}};
    notes_[n.note_id] = std::move(n);
    return out;
}

nlohmann::json chat_service::get_note(const std::string& note_id) const {
    auto j = note_to_json(note(note_id));
    j["has_cloze_test"] = cloze_for(note_id).has_value();
    return j;
}

verifier_fn chat_service::verifier(const discharge_note& n) const {
    verify_options opts;
    opts.model = config_.models.verification_model;
    opts.temperature = config_.models.verification_temperature;
    opts.max_tokens = config_.models.max_tokens;
    opts.answer_key_shortcut = config_.answer_key_shortcut;
    if (!deps_.llm) {
        return [opts](std::span<const qa_exchange>, const question& q, std::string_view answer) {
            if (opts.answer_key_shortcut && !q.answer_key.empty() &&
                text::normalize_answer(q.answer_key) == text::normalize_answer(answer)) {
                return verdict{verdict_label::correct, "Your answer is correct. The answer is " + q.answer_key + ".",
                               false};
            }
            return verdict{verdict_label::unparseable, std::string(degraded_feedback), true};
        };
    }
    return make_llm_verifier(n, *deps_.llm, opts, prompts_);
}

void chat_service::persist(const std::string& session_id, std::vector<session_event>& events,
                           const std::string& request_id) {
    for (auto& e : events) {
        if (!request_id.empty() && e.kind == event_kind::turn_appended &&
            e.payload.value("kind", "") == "Answer") {
            e.payload["request_id"] = request_id;
        }
    }
    store_.persist_events(session_id, events);
}

std::shared_ptr<chat_service::live_session> chat_service::load(const std::string& session_id) {
    {
        std::lock_guard lock(mutex_);
        auto it = sessions_.find(session_id);
        if (it != sessions_.end()) return it->second;
    }
    if (!store_.exists(session_id)) throw not_found("session " + session_id + " does not exist");
    auto live = std::make_shared<live_session>();
    const auto evs = store_.events(session_id);
    live->session = replay_events(evs);

    // Rebuild idempotent replies: bot turns after a tagged answer up to the
    // next wait point.
    std::string capturing;
    json turns = json::array();
    for (const auto& e : evs) {
        if (e.kind == event_kind::turn_appended) {
            if (e.payload.value("kind", "") == "Answer") {
                capturing = e.payload.value("request_id", "");
                turns = json::array();
            } else if (!capturing.empty()) {
                json t = e.payload;
                t.erase("request_id");
                turns.push_back(std::move(t));
            }
        } else if (e.kind == event_kind::phase_changed && !capturing.empty()) {
            const auto to = e.payload.value("to", "");
            if (to == "AwaitingAnswer" || to == "ClozeTest") {
                live->replies[capturing] = {{"phase", to}, {"turns", turns}};
                capturing.clear();
            }
        }
    }
    if (!capturing.empty()) {
        live->replies[capturing] = {{"phase", to_string(live->session.phase)}, {"turns", turns}};
    }

    std::lock_guard lock(mutex_);
    return sessions_.try_emplace(session_id, std::move(live)).first->second;
}

nlohmann::json chat_service::create_session(const json& body) {
    const auto note_id = require_string(body, "note_id");
    const auto& n = note(note_id);
    const auto cond = parse_condition(require_string(body, "condition"));

    std::optional<qgen_mode> source;
    if (body.contains("question_source") && !body["question_source"].is_null()) {
        source = parse_qgen_mode(require_string(body, "question_source"));
    }
    std::optional<std::vector<question>> inline_questions;
    if (body.contains("questions")) {
        inline_questions = human_questions_from_json(body["questions"], note_id);
        if (!source) source = qgen_mode::human;
    }

    question_set qs;
    qs.note_id = note_id;
    if (cond != condition::none) {
        if (!source) throw session_config_error("question_source is required for Q and QA sessions");
        qgen_config qc;
        qc.n_min = config_.n_min;
        qc.cloze.fallback = config_.cloze_fallback;
        qc.cloze.model = qc.direct.model = config_.models.generation_model;
        qc.cloze.temperature = qc.direct.temperature = config_.models.generation_temperature;
        std::vector<question> human;
        if (*source == qgen_mode::human) {
            if (inline_questions) {
                human = *inline_questions;
            } else if (config_.human_questions) {
                human = load_human_questions(*config_.human_questions, note_id);
            } else {
                throw session_config_error("no human questions configured");
            }
        }
        qs = generate_question_set(n, *source, deps_.ex.get(), deps_.llm.get(), &human, qc, prompts_);
    } else {
        source.reset();
    }

    dialogue_config dc;
    dc.repeat_on_incorrect = config_.repeat_on_incorrect;
    const auto session_id = deps_.new_id();
    auto started = start_session(session_id, n, cond, source, qs, dc, deps_.clock);
    auto first = next_turn(started.session, deps_.clock);
    auto events = std::move(started.events);
    events.insert(events.end(), first.events.begin(), first.events.end());

    std::lock_guard session_lock(store_.session_mutex(session_id));
    if (store_.exists(session_id)) throw consistency_error("session " + session_id + " already exists");
    persist(session_id, events);
    auto live = std::make_shared<live_session>();
    live->session = std::move(started.session);
    json out = public_view(live->session);
    {
        std::lock_guard lock(mutex_);
        sessions_[session_id] = std::move(live);
    }
    return out;
}

nlohmann::json chat_service::get_session(const std::string& session_id) {
    auto live = load(session_id);
    std::lock_guard lock(store_.session_mutex(session_id));
    return public_view(live->session);
}

nlohmann::json chat_service::answer(const std::string& session_id, const json& body) {
    const auto text_in = require_string(body, "text");
    std::string request_id;
    if (body.contains("request_id") && !body["request_id"].is_null()) request_id = require_string(body, "request_id");

    auto live = load(session_id);
    std::lock_guard lock(store_.session_mutex(session_id));
    if (!request_id.empty()) {
        auto it = live->replies.find(request_id);
        if (it != live->replies.end()) return it->second;
    }
    auto& s = live->session;
    const auto& n = note(s.note_id);
    dialogue_session working = s;
    auto answered = submit_answer(working, text_in, verifier(n), deps_.clock);
    auto events = std::move(answered.events);
    auto bot = std::move(answered.bot_turns);
    if (working.phase == session_phase::asking) {
        auto next = next_turn(working, deps_.clock);
        events.insert(events.end(), next.events.begin(), next.events.end());
        bot.insert(bot.end(), next.bot_turns.begin(), next.bot_turns.end());
    }
    try {
        persist(session_id, events, request_id);
    } catch (...) {
        std::lock_guard g(mutex_);
        sessions_.erase(session_id);
        throw;
    }
    s = std::move(working);
    json reply = {{"phase", to_string(s.phase)}, {"turns", turns_json(bot)}};
    if (!request_id.empty()) live->replies[request_id] = reply;
    return reply;
}

nlohmann::json chat_service::get_cloze(const std::string& session_id) {
    auto live = load(session_id);
    std::string note_id;
    {
        std::lock_guard lock(store_.session_mutex(session_id));
        note_id = live->session.note_id;
    }
    const auto test = cloze_for(note_id);
    if (!test) throw not_found("note " + note_id + " has no cloze test");
    json items = json::array();
    for (const auto& i : test->items) items.push_back({{"blanked_sentence", i.blanked_sentence}});
    return {{"note_id", note_id}, {"count", test->items.size()}, {"items", std::move(items)}};
}

nlohmann::json chat_service::submit_cloze(const std::string& session_id, const json& body) {
    const auto& raw = require(body, "responses");
    if (!raw.is_array()) throw invalid_request("'responses' must be an array of strings");
    std::vector<std::string> responses;
    for (const auto& r : raw) {
        if (!r.is_string()) throw invalid_request("'responses' must be an array of strings");
        responses.push_back(r.get<std::string>());
    }
    auto live = load(session_id);
    std::lock_guard lock(store_.session_mutex(session_id));
    auto& s = live->session;
    if (s.phase != session_phase::cloze_test) {
        throw protocol_error("quiz is not open (phase " + std::string(to_string(s.phase)) + ")");
    }
    const auto test = cloze_for(s.note_id);
    if (!test) throw not_found("note " + s.note_id + " has no cloze test");
    const auto result = score_cloze(*test, responses);
    dialogue_session working = s;
    auto finished = finish_session(working, result);
    persist(session_id, finished.events);
    s = std::move(working);
    auto out = to_json(result);
    out["phase"] = to_string(s.phase);
    return out;
}

nlohmann::json chat_service::report(const std::string& session_id, bool judge) {
    auto live = load(session_id);
    dialogue_session s;
    {
        std::lock_guard lock(store_.session_mutex(session_id));
        s = live->session;
    }
    std::map<std::string, int> verdicts{{"Correct", 0}, {"PartiallyCorrect", 0}, {"Incorrect", 0}, {"Unparseable", 0}};
    std::size_t prompts = 0, answers = 0, degraded = 0;
    for (const auto& t : s.turns) {
        if (t.kind == turn_kind::prompt) ++prompts;
        if (t.kind == turn_kind::answer) ++answers;
        if (t.verdict) {
            ++verdicts[std::string(to_string(t.verdict->label))];
            if (t.verdict->degraded) ++degraded;
        }
    }
    eval_report r;
    r.cloze = s.cloze;
    if (judge) {
        if (!deps_.llm) throw llm_unavailable("no LLM transport configured for judging");
        judge_options jo;
        jo.model = config_.models.judge_model;
        jo.temperature = config_.models.judge_temperature;
        jo.strict = config_.judge_strict;
        r.judge = judge_session(note(s.note_id), make_record(s), *deps_.llm, jo, prompts_);
    }
    json out = to_json(r);
    out["session_id"] = s.session_id;
    out["note_id"] = s.note_id;
    out["label"] = condition_label(s.condition, s.question_source);
    out["phase"] = to_string(s.phase);
    out["verdicts"] = verdicts;
    out["prompts"] = prompts;
    out["answers"] = answers;
    out["degraded"] = degraded;
    return out;
}

// ─────────────────────────────────────────────────────
// HTTP
// ─────────────────────────────────────────────────────

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <typename F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const json::parse_error& e) {
            send_json(res, 400, {{"error", "ParseError"}, {"message", e.what()}});
        } catch (const std::exception& e) {
            const auto s = classify_exception(e);
            send_json(res, s.status, {{"error", s.code}, {"message", s.message}});
        }
    };
}

json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    return json::parse(req.body);
}

}  // namespace

http_api::http_api(chat_service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    auto& srv = *server_;
    srv.Get("/health", [](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"status", "ok"}});
    });
    srv.Post("/notes", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 201, service_.create_note(body_of(req)));
    }));
    srv.Get(R"(/notes/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, service_.get_note(req.matches[1]));
    }));
    srv.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 201, service_.create_session(body_of(req)));
    }));
    srv.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, service_.get_session(req.matches[1]));
    }));
    srv.Post(R"(/sessions/([^/]+)/answer)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, service_.answer(req.matches[1], body_of(req)));
    }));
    srv.Get(R"(/sessions/([^/]+)/cloze)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, service_.get_cloze(req.matches[1]));
    }));
    srv.Post(R"(/sessions/([^/]+)/cloze)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, service_.submit_cloze(req.matches[1], body_of(req)));
    }));
    srv.Get(R"(/sessions/([^/]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto j = req.get_param_value("judge");
        send_json(res, 200, service_.report(req.matches[1], j == "1" || j == "true"));
    }));
    srv.Get(R"(/sessions/([^/]+)/transcript)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        res.set_content(transcript_jsonl(service_.store().replay_session(id)), "application/x-ndjson");
    }));
    if (service_.config().static_dir) srv.set_mount_point("/", service_.config().static_dir->string());
}

http_api::~http_api() = default;

int http_api::bind(const std::string& host, int port) {
    if (port == 0) return server_->bind_to_any_port(host);
    if (!server_->bind_to_port(host, port)) return -1;
    return port;
}

bool http_api::listen() { return server_->listen_after_bind(); }

void http_api::stop() { server_->stop(); }

// ─────────────────────────────────────────────────────
// Factories
// ─────────────────────────────────────────────────────

std::shared_ptr<llm::transport> make_transport(const service_config& config) {
    if (config.llm_transport == "none") return nullptr;
    if (config.llm_transport == "replay") {
        if (!config.llm_fixture) throw config_error("llm.transport = replay needs llm.fixture");
        return llm::replay_transport::load(*config.llm_fixture);
    }
    if (config.llm_transport == "scripted") {
        auto t = std::make_shared<llm::scripted_transport>();
        if (config.llm_fixture) {
            const auto j = json::parse(slurp(*config.llm_fixture));
            for (const auto& r : j) t->push(r.get<std::string>());
        }
        return t;
    }
    return llm::http_transport::from_env();
}

std::shared_ptr<const extractor> make_extractor(const service_config& config) {
    extractor_backend b;
    if (config.extractor_backend == "external") {
        b.kind = backend_kind::external;
        b.endpoint = config.extractor_endpoint;
    } else {
        if (!config.lexicon) return nullptr;
        b.lexicon = std::make_shared<const gazetteer>(gazetteer::load(*config.lexicon));
    }
    b.relation_threshold = config.relation_threshold;
    b.validate();
    return b.make();
}

}  // namespace dqa
