#include "dqa/qgen.hpp"

#include "dqa/errors.hpp"
#include "dqa/text.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <regex>
#include <set>

namespace dqa {

using nlohmann::json;

std::string_view to_string(question_source s) {
    switch (s) {
        case question_source::human: return "Human";
        case question_source::direct_llm: return "DirectLLM";
        case question_source::template_ie: return "TemplateIE";
        case question_source::cloze_ie: return "ClozeIE";
    }
    return "Human";
}

question_source parse_question_source(std::string_view s) {
    if (s == "Human") return question_source::human;
    if (s == "DirectLLM") return question_source::direct_llm;
    if (s == "TemplateIE") return question_source::template_ie;
    if (s == "ClozeIE") return question_source::cloze_ie;
    throw unknown_type_error("unknown question source '" + std::string(s) + "'");
}

std::string make_question_id(const question& q) {
    std::string key = q.note_id;
    key += '\x1f';
    key += to_string(q.source);
    key += '\x1f';
    key += q.text;
    key += '\x1f';
    key += q.answer_key;
    return "q-" + text::sha256_hex(key).substr(0, 12);
}

namespace {

json span_json(const char_range& r) { return json::array({r.begin, r.end}); }

char_range span_from(const json& j) {
    return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()};
}

json event_json(const medical_event& e) {
    return {{"event_id", e.event_id},
            {"span", span_json(e.span)},
            {"surface", e.surface},
            {"etype", to_string(e.etype)}};
}

medical_event event_from(const json& j) {
    medical_event e;
    e.event_id = j.at("event_id").get<std::string>();
    e.span = span_from(j.at("span"));
    e.surface = j.at("surface").get<std::string>();
    e.etype = parse_event_type(j.at("etype").get<std::string>());
    return e;
}

}  // namespace

nlohmann::json to_json(const question& q) {
    json j = {{"question_id", q.question_id},
              {"text", q.text},
              {"answer_key", q.answer_key},
              {"source", to_string(q.source)},
              {"note_id", q.note_id},
              {"fallback", q.fallback},
              {"trigger", nullptr}};
    if (const auto* r = std::get_if<relation_trigger>(&q.trigger)) {
        j["trigger"] = {{"kind", "relation"},
                        {"rtype", to_string(r->rtype)},
                        {"head", event_json(r->head)},
                        {"tail", event_json(r->tail)}};
    } else if (const auto* e = std::get_if<entity_trigger>(&q.trigger)) {
        j["trigger"] = {{"kind", "entity"},
                        {"span", span_json(e->entity.span)},
                        {"surface", e->entity.surface},
                        {"type", to_string(e->entity.type)}};
    }
    return j;
}

question question_from_json(const nlohmann::json& j) {
    question q;
    try {
        q.text = j.at("text").get<std::string>();
        q.answer_key = j.value("answer_key", "");
        q.source = parse_question_source(j.value("source", "Human"));
        q.note_id = j.value("note_id", "");
        q.fallback = j.value("fallback", false);
        if (j.contains("trigger") && j["trigger"].is_object()) {
            const auto& t = j["trigger"];
            const auto kind = t.at("kind").get<std::string>();
            if (kind == "relation") {
                q.trigger = relation_trigger{event_from(t.at("head")), event_from(t.at("tail")),
                                             parse_relation_type(t.at("rtype").get<std::string>())};
            } else if (kind == "entity") {
                q.trigger = entity_trigger{{span_from(t.at("span")), t.at("surface").get<std::string>(),
                                            parse_detailed_entity_type(t.at("type").get<std::string>())}};
            } else {
                throw parse_error("unknown trigger kind '" + kind + "'");
            }
        }
        q.question_id = j.value("question_id", "");
        if (q.question_id.empty()) q.question_id = make_question_id(q);
    } catch (const json::exception& e) {
        throw parse_error(std::string("question JSON: ") + e.what());
    }
    return q;
}

// ─────────────────────────────────────────────────────
// Templates
// ─────────────────────────────────────────────────────

std::string template_text(relation_type rtype, std::string_view head) {
    const std::string h(head);
    switch (rtype) {
        case relation_type::symptom_caused_by_disease: return "What is the cause of your symptom " + h + "?";
        case relation_type::test_goal: return "What is the goal of test " + h + "?";
        case relation_type::test_result: return "What is the result of test " + h + "?";
        case relation_type::test_implication: return "What does test " + h + " imply?";
        case relation_type::treatment_goal: return "What is the goal of treatment " + h + "?";
        case relation_type::treatment_result: return "What is the result of treatment " + h + "?";
    }
    throw invalid_relation("unknown relation type");
}

namespace {

void require_compliant(const relation_candidate& rel) {
    if (!admits(rel.rtype, rel.head.etype, rel.tail.etype)) {
        throw invalid_relation(std::string(to_string(rel.rtype)) + " does not admit (" +
                               std::string(to_string(rel.head.etype)) + ", " +
                               std::string(to_string(rel.tail.etype)) + ")");
    }
    if (rel.head.surface.empty() || rel.tail.surface.empty()) {
        throw invalid_relation("relation events need non-empty surfaces");
    }
}

}  // namespace

question template_question(std::string_view note_id, const relation_candidate& rel) {
    require_compliant(rel);
    question q;
    q.text = template_text(rel.rtype, rel.head.surface);
    q.answer_key = rel.tail.surface;
    q.source = question_source::template_ie;
    q.trigger = relation_trigger{rel.head, rel.tail, rel.rtype};
    q.note_id = std::string(note_id);
    q.question_id = make_question_id(q);
    return q;
}

std::optional<question> treatment_for_disease_question(std::string_view note_id,
                                                       const relation_candidate& rel) {
    require_compliant(rel);
    if (rel.rtype != relation_type::treatment_goal) {
        return std::nullopt;
    }
    question q;
    q.text = "What treatment is applied to disease " + rel.tail.surface + "?";
    q.answer_key = rel.head.surface;
    q.source = question_source::template_ie;
    q.trigger = relation_trigger{rel.head, rel.tail, rel.rtype};
    q.note_id = std::string(note_id);
    q.question_id = make_question_id(q);
    return q;
}

std::vector<question> template_questions(std::string_view note_id,
                                         std::span<const relation_candidate> relations,
                                         const template_options& opts) {
    std::vector<question> out;
    for (const auto& rel : relations) {
        out.push_back(template_question(note_id, rel));
        if (opts.treatment_for_disease) {
            if (auto extra = treatment_for_disease_question(note_id, rel)) {
                out.push_back(std::move(*extra));
            }
        }
    }
    return out;
}

// ─────────────────────────────────────────────────────
// Cloze
// ─────────────────────────────────────────────────────

cloze_sentence make_cloze_sentence(const discharge_note& note, const detailed_entity& entity) {
    if (!entity.span.valid_for(note.full_text.size()) || entity.span.empty()) {
        throw generation_error("entity span is out of bounds");
    }
    if (!note.detailed_instructions.contains(entity.span)) {
        throw generation_error("entity is not inside the detailed instructions");
    }
    const auto sentence =
        text::containing_sentence(note.full_text, note.detailed_instructions, entity.span);
    cloze_sentence out;
    out.original = std::string(slice(note.full_text, sentence));
    const std::size_t rel = entity.span.begin - sentence.begin;
    out.blanked = out.original;
    out.blanked.replace(rel, entity.span.length(), cloze_blank);
    return out;
}

llm::chat_request cloze_request(std::string_view blanked_sentence, const cloze_options& opts,
                                const prompt_set& prompts) {
    llm::chat_request req;
    req.model_id = opts.model;
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;
    req.messages.push_back(
        {llm::role::user, std::string(blanked_sentence) + "\n" + prompts.cloze_rewrite});
    return req;
}

namespace {

// First non-empty line, without a "Question:" label or wrapping quotes.
std::string clean_rewrite(std::string_view reply) {
    std::string_view line;
    std::size_t pos = 0;
    while (pos <= reply.size()) {
        const auto nl = reply.find('\n', pos);
        const auto cand = text::trim(reply.substr(pos, nl == std::string_view::npos ? reply.npos : nl - pos));
        if (!cand.empty()) {
            line = cand;
            break;
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    for (std::string_view label : {"Question:", "question:", "Q:"}) {
        if (line.substr(0, label.size()) == label) {
            line = text::trim(line.substr(label.size()));
            break;
        }
    }
    if (line.size() >= 2 && line.front() == '"' && line.back() == '"') {
        line = text::trim(line.substr(1, line.size() - 2));
    }
    return std::string(line);
}

}  // namespace

question cloze_question(const discharge_note& note, const detailed_entity& entity,
                        llm::transport* llm, const cloze_options& opts,
                        const prompt_set& prompts) {
    if (!is_priority(entity.type) && !opts.allow_non_priority) {
        throw generation_error(std::string(to_string(entity.type)) +
                               " is not a priority cloze category");
    }
    const auto sentence = make_cloze_sentence(note, entity);

    question q;
    q.answer_key = std::string(slice(note.full_text, entity.span));
    q.source = question_source::cloze_ie;
    q.trigger = entity_trigger{{entity.span, q.answer_key, entity.type}};
    q.note_id = note.note_id;

    std::string failure;
    if (llm == nullptr) {
        failure = "no LLM configured";
    } else {
        try {
            auto reply = llm->complete(cloze_request(sentence.blanked, opts, prompts));
            q.text = clean_rewrite(reply.text);
            if (q.text.empty()) failure = "empty rewrite";
        } catch (const llm_unavailable& e) {
            failure = e.what();
        } catch (const fixture_miss& e) {
            failure = e.what();
        }
    }
    if (!failure.empty()) {
        if (!opts.fallback) throw generation_error("cloze rewrite failed: " + failure);
        q.text = sentence.blanked;
        q.fallback = true;
    }
    q.question_id = make_question_id(q);
    return q;
}

std::vector<question> cloze_questions(const discharge_note& note,
                                      std::span<const detailed_entity> entities,
                                      llm::transport* llm, const cloze_options& opts,
                                      std::size_t max_in_flight, const prompt_set& prompts) {
    std::vector<const detailed_entity*> eligible;
    for (const auto& e : entities) {
        if (is_priority(e.type) || opts.allow_non_priority) eligible.push_back(&e);
    }
    std::vector<question> out;
    out.reserve(eligible.size());
    const std::size_t cap = std::max<std::size_t>(1, max_in_flight);
    for (std::size_t start = 0; start < eligible.size(); start += cap) {
        const std::size_t stop = std::min(eligible.size(), start + cap);
        std::vector<std::future<question>> batch;
        for (std::size_t i = start; i < stop; ++i) {
            batch.push_back(std::async(std::launch::async, [&, e = eligible[i]] {
                return cloze_question(note, *e, llm, opts, prompts);
            }));
        }
        for (auto& f : batch) out.push_back(f.get());
    }
    return out;
}

// ─────────────────────────────────────────────────────
// Direct generation
// ─────────────────────────────────────────────────────

std::string at_least_phrase(std::size_t n) {
    static constexpr std::array<std::string_view, 11> words{
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};
    return "at least " + (n < words.size() ? std::string(words[n]) : std::to_string(n));
}

llm::chat_request direct_request(const discharge_note& note, std::size_t n_min,
                                 const direct_options& opts, const prompt_set& prompts) {
    std::string instruction = prompts.question_generation;
    if (auto p = instruction.find("{N}"); p != std::string::npos) {
        instruction.replace(p, 3, at_least_phrase(n_min));
    }
    llm::chat_request req;
    req.model_id = opts.model;
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;
    req.messages.push_back({llm::role::user, note.full_text + "\n\n" + instruction});
    return req;
}

std::vector<std::string> parse_enumerated_questions(std::string_view response) {
    static const std::regex enumerator(R"((?:^|\s)(?:Q)?\d{1,2}[.):]\s+)");
    const std::string s(response);
    std::vector<std::string> out;

    std::vector<std::pair<std::size_t, std::size_t>> marks;  // (match start, content start)
    for (auto it = std::sregex_iterator(s.begin(), s.end(), enumerator); it != std::sregex_iterator();
         ++it) {
        marks.emplace_back(static_cast<std::size_t>(it->position()),
                           static_cast<std::size_t>(it->position() + it->length()));
    }
    if (!marks.empty()) {
        for (std::size_t i = 0; i < marks.size(); ++i) {
            const std::size_t end = i + 1 < marks.size() ? marks[i + 1].first : s.size();
            auto item = text::collapse_whitespace(
                text::trim(std::string_view(s).substr(marks[i].second, end - marks[i].second)));
            if (!item.empty()) out.push_back(std::move(item));
        }
        return out;
    }

    std::size_t pos = 0;
    while (pos < s.size()) {
        auto nl = s.find('\n', pos);
        if (nl == std::string::npos) nl = s.size();
        auto line = text::trim(std::string_view(s).substr(pos, nl - pos));
        while (!line.empty() && (line.front() == '-' || line.front() == '*')) {
            line = text::trim(line.substr(1));
        }
        if (line.substr(0, 3) == "\xE2\x80\xA2") line = text::trim(line.substr(3));  // bullet
        if (!line.empty() && line.back() == '?') out.push_back(std::string(line));
        pos = nl + 1;
    }
    return out;
}

std::vector<question> direct_llm_questions(const discharge_note& note, std::size_t n_min,
                                           llm::transport& llm, const direct_options& opts,
                                           const prompt_set& prompts) {
    if (n_min < 1) throw generation_error("n_min must be at least 1");
    const auto req = direct_request(note, n_min, opts, prompts);
    std::vector<std::string> parsed;
    for (int attempt = 0; attempt < 2; ++attempt) {
        parsed = parse_enumerated_questions(llm.complete(req).text);
        if (parsed.size() >= n_min) break;
    }
    if (parsed.size() < n_min) {
        throw retryable_generation_error("expected " + std::to_string(n_min) + " questions, parsed " +
                                         std::to_string(parsed.size()));
    }
    std::vector<question> out;
    for (auto& t : parsed) {
        question q;
        q.text = std::move(t);
        q.source = question_source::direct_llm;
        q.note_id = note.note_id;
        q.question_id = make_question_id(q);
        out.push_back(std::move(q));
    }
    return out;
}

// ─────────────────────────────────────────────────────
// Assembly
// ─────────────────────────────────────────────────────

std::string_view to_string(qgen_mode m) {
    switch (m) {
        case qgen_mode::gpt: return "gpt";
        case qgen_mode::gpt_ie: return "gpt-ie";
        case qgen_mode::human: return "human";
    }
    return "gpt";
}

qgen_mode parse_qgen_mode(std::string_view s) {
    const auto l = text::to_lower(s);
    if (l == "gpt" || l == "direct") return qgen_mode::gpt;
    if (l == "gpt-ie" || l == "gpt_ie" || l == "gpt+ie" || l == "enhanced") return qgen_mode::gpt_ie;
    if (l == "human") return qgen_mode::human;
    throw config_error("unknown question mode '" + std::string(s) + "'");
}

nlohmann::json to_json(const question_set& s) {
    json qs = json::array();
    for (const auto& q : s.questions) qs.push_back(to_json(q));
    return {{"note_id", s.note_id}, {"questions", std::move(qs)}, {"generation_config", s.generation_config}};
}

question_set question_set_from_json(const nlohmann::json& j) {
    question_set s;
    try {
        s.note_id = j.at("note_id").get<std::string>();
        for (const auto& q : j.at("questions")) s.questions.push_back(question_from_json(q));
        s.generation_config = j.value("generation_config", json::object());
    } catch (const json::exception& e) {
        throw parse_error(std::string("question set JSON: ") + e.what());
    }
    return s;
}

namespace {

// (section rank, first position, second position); untriggered questions keep input order.
std::tuple<int, std::size_t, std::size_t> order_key(const question& q) {
    if (const auto* r = std::get_if<relation_trigger>(&q.trigger)) {
        return {0, r->head.span.begin, r->tail.span.begin};
    }
    if (const auto* e = std::get_if<entity_trigger>(&q.trigger)) {
        return {1, e->entity.span.begin, e->entity.span.end};
    }
    return {2, 0, 0};
}

}  // namespace

question_set assemble_question_set(std::string_view note_id, const question_pool& pool,
                                   qgen_mode mode, const nlohmann::json& generation_config) {
    for (const auto* list : {&pool.template_qs, &pool.cloze_qs, &pool.direct_qs, &pool.human_qs}) {
        for (const auto& q : *list) {
            if (q.note_id != note_id) {
                throw assembly_error("question '" + q.text + "' belongs to note '" + q.note_id +
                                     "', expected '" + std::string(note_id) + "'");
            }
        }
    }

    std::vector<question> selected;
    auto take = [&](const std::vector<question>& v) { selected.insert(selected.end(), v.begin(), v.end()); };
    switch (mode) {
        case qgen_mode::gpt: take(pool.direct_qs); break;
        case qgen_mode::gpt_ie:
            take(pool.template_qs);
            take(pool.cloze_qs);
            break;
        case qgen_mode::human: take(pool.human_qs); break;
    }

    std::stable_sort(selected.begin(), selected.end(),
                     [](const question& a, const question& b) { return order_key(a) < order_key(b); });

    question_set out;
    out.note_id = std::string(note_id);
    std::set<std::pair<std::string, std::string>> seen;
    for (auto& q : selected) {
        if (seen.emplace(text::normalize_answer(q.text), text::normalize_answer(q.answer_key)).second) {
            out.questions.push_back(std::move(q));
        }
    }
    out.generation_config = generation_config.is_object() ? generation_config : json::object();
    out.generation_config["mode"] = to_string(mode);
    return out;
}

std::vector<question> human_questions_from_json(const nlohmann::json& j, std::string_view note_id) {
    const json* items = nullptr;
    if (j.is_array()) {
        items = &j;
    } else if (j.is_object()) {
        auto it = j.find(std::string(note_id));
        if (it == j.end()) return {};
        items = &*it;
    }
    if (items == nullptr || !items->is_array()) {
        throw parse_error("human question file must be an array or an object of arrays");
    }
    std::vector<question> out;
    for (const auto& item : *items) {
        question q;
        try {
            q.text = item.at("text").get<std::string>();
            q.answer_key = item.value("answer_key", "");
        } catch (const json::exception& e) {
            throw parse_error(std::string("human question: ") + e.what());
        }
        if (text::trim(q.text).empty()) throw parse_error("human question with empty text");
        q.source = question_source::human;
        q.note_id = std::string(note_id);
        q.question_id = make_question_id(q);
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<question> load_human_questions(const std::filesystem::path& path,
                                           std::string_view note_id) {
    std::ifstream in(path);
    if (!in) throw parse_error("cannot open human question file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw parse_error(path.string() + ": " + e.what());
    }
    return human_questions_from_json(j, note_id);
}

question_set generate_question_set(const discharge_note& note, qgen_mode mode, const extractor* ex,
                                   llm::transport* llm, const std::vector<question>* human,
                                   const qgen_config& config, const prompt_set& prompts) {
    question_pool pool;
    json cfg = {{"n_min", config.n_min},
                {"treatment_for_disease", config.templates.treatment_for_disease},
                {"cloze_fallback", config.cloze.fallback},
                {"allow_non_priority", config.cloze.allow_non_priority}};
    switch (mode) {
        case qgen_mode::gpt: {
            if (llm == nullptr) throw generation_error("gpt mode needs an LLM transport");
            pool.direct_qs = direct_llm_questions(note, config.n_min, *llm, config.direct, prompts);
            cfg["generation_model"] = config.direct.model;
            break;
        }
        case qgen_mode::gpt_ie: {
            if (ex == nullptr) throw generation_error("gpt-ie mode needs an extractor");
            const auto rels = extract_relations(note, *ex).positives();
            pool.template_qs = template_questions(note.note_id, rels, config.templates);
            const auto entities = ex->extract_detailed_entities(note);
            pool.cloze_qs =
                cloze_questions(note, entities, llm, config.cloze, config.max_in_flight, prompts);
            cfg["generation_model"] = config.cloze.model;
            break;
        }
        case qgen_mode::human: {
            if (human == nullptr) throw generation_error("human mode needs a question file");
            pool.human_qs = *human;
            for (auto& q : pool.human_qs) {
                if (q.note_id.empty()) q.note_id = note.note_id;
            }
            break;
        }
    }
    return assemble_question_set(note.note_id, pool, mode, cfg);
}

}  // namespace dqa
