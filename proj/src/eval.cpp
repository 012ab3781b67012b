#include "dqa/eval.hpp"

#include "dqa/errors.hpp"
#include "dqa/text.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace dqa {

using nlohmann::json;

std::string_view to_string(eval_aspect a) {
    switch (a) {
        case eval_aspect::coverage: return "Coverage";
        case eval_aspect::appropriateness: return "Appropriateness";
        case eval_aspect::education_outcome: return "EducationOutcome";
        case eval_aspect::overall: return "Overall";
    }
    return "Overall";
}

eval_aspect parse_eval_aspect(std::string_view s) {
    std::string k;
    for (char c : s) {
        if (c != ' ' && c != '_' && c != '-') k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (k == "coverage") return eval_aspect::coverage;
    if (k == "appropriateness" || k == "questionappropriateness") return eval_aspect::appropriateness;
    if (k == "educationoutcome") return eval_aspect::education_outcome;
    if (k == "overall") return eval_aspect::overall;
    throw ranking_error("unknown aspect '" + std::string(s) + "'");
}

void validate_ranking(const preference_ranking& r) {
    if (r.ranks.empty()) throw ranking_error("ranking by " + r.evaluator_id + " is empty");
    for (const auto& [label, rank] : r.ranks) {
        if (rank < 1) throw ranking_error(r.evaluator_id + ": rank of " + label + " must be positive");
        const auto better = std::count_if(r.ranks.begin(), r.ranks.end(),
                                          [rank = rank](const auto& kv) { return kv.second < rank; });
        if (rank != better + 1) {
            throw ranking_error(r.evaluator_id + ": rank " + std::to_string(rank) + " of " + label +
                                " is not a competition rank");
        }
    }
}

double compute_mrr(std::span<const preference_ranking> rankings, std::string_view target) {
    if (rankings.empty()) throw ranking_error("no rankings");
    const auto key = canonical_condition_label(target);
    double sum = 0.0;
    for (const auto& r : rankings) {
        auto it = r.ranks.find(key);
        if (it == r.ranks.end()) {
            throw ranking_error("ranking by " + r.evaluator_id + " does not include " + key);
        }
        if (it->second < 1) throw ranking_error("non-positive rank");
        sum += 1.0 / static_cast<double>(it->second);
    }
    return sum / static_cast<double>(rankings.size());
}

std::map<eval_aspect, std::map<std::string, double>> mrr_table(std::span<const preference_ranking> rankings) {
    std::map<eval_aspect, std::map<std::string, std::pair<double, std::size_t>>> acc;
    for (const auto& r : rankings) {
        for (const auto& [label, rank] : r.ranks) {
            auto& slot = acc[r.aspect][label];
            slot.first += 1.0 / static_cast<double>(rank);
            ++slot.second;
        }
    }
    std::map<eval_aspect, std::map<std::string, double>> out;
    for (const auto& [aspect, per] : acc) {
        for (const auto& [label, s] : per) out[aspect][label] = s.first / static_cast<double>(s.second);
    }
    return out;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back(text::trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.emplace_back(text::trim(cur));
    return out;
}

std::vector<std::vector<std::string>> read_csv(std::string_view csv, std::span<const std::string_view> header) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in{std::string(csv)};
    std::string line;
    bool first = true;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (first) {
            first = false;
            bool is_header = cells.size() == header.size();
            for (std::size_t i = 0; is_header && i < cells.size(); ++i) {
                is_header = text::to_lower(cells[i]) == header[i];
            }
            if (is_header) continue;
        }
        if (cells.size() != header.size()) {
            throw parse_error("CSV line " + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " fields");
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

int parse_int(std::string_view s, const char* what) {
    int v = 0;
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || p != end) throw parse_error(std::string("invalid ") + what + " '" + std::string(s) + "'");
    return v;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parse_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::vector<preference_ranking> parse_rankings_csv(std::string_view csv) {
    static constexpr std::array<std::string_view, 4> header{"evaluator_id", "aspect", "condition", "rank"};
    std::vector<preference_ranking> out;
    std::map<std::pair<std::string, eval_aspect>, std::size_t> index;
    for (const auto& row : read_csv(csv, header)) {
        const auto aspect = parse_eval_aspect(row[1]);
        const auto label = canonical_condition_label(row[2]);
        int rank = 0;
        try {
            rank = parse_int(row[3], "rank");
        } catch (const parse_error& e) {
            throw ranking_error(e.what());
        }
        auto [it, fresh] = index.try_emplace({row[0], aspect}, out.size());
        if (fresh) out.push_back({row[0], aspect, {}});
        auto& r = out[it->second];
        if (!r.ranks.emplace(label, rank).second) {
            throw ranking_error(row[0] + " ranks " + label + " twice for " + std::string(to_string(aspect)));
        }
    }
    for (const auto& r : out) validate_ranking(r);
    return out;
}

std::vector<preference_ranking> load_rankings_csv(const std::filesystem::path& path) {
    return parse_rankings_csv(read_text(path));
}

// ─────────────────────────────────────────────────────
// Judge
// ─────────────────────────────────────────────────────

nlohmann::json to_json(const judge_scores& s) {
    return {{"Coverage", s.coverage},
            {"Question Appropriateness", s.question_appropriateness},
            {"Education Outcome", s.education_outcome},
            {"Overall", s.overall},
            {"Correctness", s.correctness},
            {"Education Potential", s.education_potential}};
}

std::string render_conversation(std::span<const turn> turns) {
    std::string out;
    for (const auto& t : turns) {
        if (t.kind == turn_kind::system) continue;
        if (!out.empty()) out += '\n';
        out += t.speaker == speaker::bot ? "Bot: " : "Patient: ";
        out += t.text;
    }
    return out;
}

namespace {

llm::chat_request judge_request(const discharge_note& note, std::span<const turn> turns,
                                const judge_options& opts, const prompt_set& prompts) {
    const std::string& tpl = prompts.judge_template;
    const auto pn = tpl.find(note_placeholder);
    const auto ph = tpl.find(history_placeholder);
    if (pn == std::string::npos || ph == std::string::npos) {
        throw config_error("judge template lacks a placeholder");
    }
    const std::string conversation = render_conversation(turns);
    struct sub {
        std::size_t pos;
        std::size_t len;
        const std::string* with;
    };
    std::array<sub, 2> subs{sub{pn, note_placeholder.size(), &note.full_text},
                            sub{ph, history_placeholder.size(), &conversation}};
    std::sort(subs.begin(), subs.end(), [](const sub& a, const sub& b) { return a.pos < b.pos; });
    std::string body;
    std::size_t at = 0;
    for (const auto& s : subs) {
        body.append(tpl, at, s.pos - at);
        body += *s.with;
        at = s.pos + s.len;
    }
    body.append(tpl, at, std::string::npos);

    llm::chat_request req;
    req.model_id = opts.model;
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;
    req.messages.push_back({llm::role::user, std::move(body)});
    return req;
}

// Candidate JSON objects: balanced {...} substrings, skipping braces inside strings.
std::optional<json> first_object(std::string_view s) {
    for (std::size_t start = s.find('{'); start != std::string_view::npos; start = s.find('{', start + 1)) {
        int depth = 0;
        bool in_str = false;
        for (std::size_t i = start; i < s.size(); ++i) {
            const char c = s[i];
            if (in_str) {
                if (c == '\\') ++i;
                else if (c == '"') in_str = false;
                continue;
            }
            if (c == '"') in_str = true;
            else if (c == '{') ++depth;
            else if (c == '}' && --depth == 0) {
                auto parsed = json::parse(s.substr(start, i - start + 1), nullptr, false);
                if (!parsed.is_discarded() && parsed.is_object()) return parsed;
                break;
            }
        }
    }
    return std::nullopt;
}

int score_value(const json& v, std::string_view key, bool strict) {
    std::optional<int> out;
    if (v.is_number_integer()) {
        out = v.get<int>();
    } else if (!strict && v.is_number_float()) {
        const double d = v.get<double>();
        if (d == static_cast<double>(static_cast<int>(d))) out = static_cast<int>(d);
    } else if (!strict && v.is_string()) {
        const auto s = std::string(text::trim(v.get<std::string>()));
        int x = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
        if (ec == std::errc{} && p == s.data() + s.size()) out = x;
    }
    if (!out) throw judge_parse_error(std::string(key) + " is not an integer: " + v.dump());
    if (*out < 1 || *out > 5) {
        throw judge_parse_error(std::string(key) + " = " + std::to_string(*out) + " is outside 1..5");
    }
    return *out;
}

}  // namespace

llm::chat_request build_judge_prompt(const discharge_note& note, const session_record& record,
                                     const judge_options& opts, const prompt_set& prompts) {
    if (record.note_id != note.note_id) {
        throw protocol_error("session " + record.session_id + " belongs to note " + record.note_id);
    }
    return judge_request(note, record.turns, opts, prompts);
}

llm::chat_request build_judge_prompt(const discharge_note& note, const dialogue_session& session,
                                     const judge_options& opts, const prompt_set& prompts) {
    return build_judge_prompt(note, make_record(session), opts, prompts);
}

judge_scores parse_judge_scores(std::string_view response, bool strict) {
    std::optional<json> obj;
    if (strict) {
        auto parsed = json::parse(text::trim(response), nullptr, false);
        if (!parsed.is_discarded() && parsed.is_object()) obj = std::move(parsed);
        if (!obj) throw judge_parse_error("reply is not a bare JSON object");
    } else {
        obj = first_object(response);
        if (!obj) throw judge_parse_error("no JSON object in reply");
    }
    if (strict && obj->size() != judge_keys.size()) throw judge_parse_error("unexpected keys in judge reply");
    std::array<int, 6> values{};
    for (std::size_t i = 0; i < judge_keys.size(); ++i) {
        const std::string key(judge_keys[i]);
        auto it = obj->find(key);
        if (it == obj->end()) throw judge_parse_error("missing key " + key);
        values[i] = score_value(*it, key, strict);
    }
    return {values[0], values[1], values[2], values[3], values[4], values[5]};
}

judge_scores judge_session(const discharge_note& note, const session_record& record, llm::transport& llm,
                           const judge_options& opts, const prompt_set& prompts) {
    return parse_judge_scores(llm.complete(build_judge_prompt(note, record, opts, prompts)).text, opts.strict);
}

std::map<std::string, double> mean_judge_scores(std::span<const judge_scores> scores) {
    if (scores.empty()) throw aggregation_error("no judge scores");
    std::map<std::string, double> out;
    for (const auto& s : scores) {
        const json j = to_json(s);
        for (const auto& [k, v] : j.items()) out[k] += v.get<double>();
    }
    for (auto& [k, v] : out) v /= static_cast<double>(scores.size());
    return out;
}

// ─────────────────────────────────────────────────────
// Heuristic
// ─────────────────────────────────────────────────────

heuristic_rates aggregate_heuristic(std::span<const heuristic_code> codes) {
    if (codes.empty()) throw aggregation_error("no codes to aggregate");
    heuristic_rates r;
    r.total = codes.size();
    for (const auto& c : codes) {
        r.correctness_positive += c.correctness ? 1 : 0;
        r.education_positive += c.education_potential ? 1 : 0;
    }
    r.correctness_rate = static_cast<double>(r.correctness_positive) / static_cast<double>(r.total);
    r.education_rate = static_cast<double>(r.education_positive) / static_cast<double>(r.total);
    return r;
}

std::vector<heuristic_code> parse_heuristic_csv(std::string_view csv) {
    static constexpr std::array<std::string_view, 3> header{"turn_ref", "correctness", "education_potential"};
    auto flag = [](const std::string& s) {
        const auto l = text::to_lower(s);
        if (l == "1" || l == "true" || l == "yes") return true;
        if (l == "0" || l == "false" || l == "no") return false;
        throw aggregation_error("invalid binary code '" + s + "'");
    };
    std::vector<heuristic_code> out;
    for (const auto& row : read_csv(csv, header)) out.push_back({row[0], flag(row[1]), flag(row[2])});
    return out;
}

nlohmann::json to_json(const heuristic_rates& r) {
    return {{"total", r.total},
            {"correctness_positive", r.correctness_positive},
            {"education_positive", r.education_positive},
            {"correctness_rate", r.correctness_rate},
            {"education_potential_rate", r.education_rate}};
}

nlohmann::json to_json(const eval_report& r) {
    json mrr = json::object();
    for (const auto& [aspect, per] : r.mrr) mrr[std::string(to_string(aspect))] = per;
    return {{"cloze", r.cloze ? to_json(*r.cloze) : json(nullptr)},
            {"mrr", std::move(mrr)},
            {"judge", r.judge ? to_json(*r.judge) : json(nullptr)},
            {"heuristic", r.heuristic ? to_json(*r.heuristic) : json(nullptr)}};
}

}  // namespace dqa
