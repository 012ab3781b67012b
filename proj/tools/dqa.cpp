// dqa: command-line front end for the dischargeqa library.
//
//   dqa corpus validate|pairs|ingest ...
//   dqa extract events|relations|entities <note> ...
//   dqa qgen <note> --mode gpt|gpt-ie|human --out questions.json
//   dqa llm ping | llm record --fixture f.jsonl -- <subcommand...>
//   dqa eval cloze|mrr|judge|heuristic ...
//   dqa serve --port P --llm-fixture f.jsonl
//   dqa chat <note>

#include "dqa/cloze.hpp"
#include "dqa/corpus.hpp"
#include "dqa/dialogue.hpp"
#include "dqa/errors.hpp"
#include "dqa/eval.hpp"
#include "dqa/extraction.hpp"
#include "dqa/llm.hpp"
#include "dqa/qgen.hpp"
#include "dqa/service.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw dqa::not_found("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_output(const std::string& out, const std::string& content) {
    if (out.empty() || out == "-") {
        std::cout << content;
        return;
    }
    std::ofstream f(out, std::ios::binary);
    if (!f) throw dqa::storage_error("cannot write " + out);
    f << content;
}

dqa::discharge_note load_note(const fs::path& p, const std::string& note_id = {}) {
    const auto raw = read_file(p);
    const auto fmt = p.extension() == ".json" ? dqa::note_format::sectioned_json : dqa::note_format::plain;
    auto n = dqa::ingest_note(raw, fmt);
    if (!note_id.empty()) n.note_id = note_id;
    return n;
}

/// State shared by every subcommand.
struct context {
    std::string llm_fixture;
    std::string config_path;
    /// Set by `llm record` to wrap whatever transport would have been used.
    std::shared_ptr<dqa::llm::transport> override_llm;

    std::shared_ptr<dqa::llm::transport> base_transport() const {
        if (!llm_fixture.empty()) return dqa::llm::replay_transport::load(llm_fixture);
        return dqa::llm::http_transport::from_env();
    }

    std::shared_ptr<dqa::llm::transport> transport() const {
        if (override_llm) return override_llm;
        return base_transport();
    }
};

struct backend_opts {
    std::string backend = "gazetteer";
    std::string lexicon;
    std::string endpoint;
    double threshold = 0.5;

    void add(CLI::App* cmd) {
        cmd->add_option("--backend", backend, "gazetteer | external")
            ->check(CLI::IsMember({"gazetteer", "external"}));
        cmd->add_option("--lexicon", lexicon, "gazetteer lexicon JSON");
        cmd->add_option("--endpoint", endpoint, "external extractor URL");
        cmd->add_option("--threshold", threshold, "relation confidence threshold");
    }

    std::unique_ptr<dqa::extractor> make() const {
        dqa::extractor_backend b;
        if (backend == "external") {
            b.kind = dqa::backend_kind::external;
            if (!endpoint.empty()) b.endpoint = endpoint;
        } else if (!lexicon.empty()) {
            b.lexicon = std::make_shared<const dqa::gazetteer>(dqa::gazetteer::load(lexicon));
        }
        b.relation_threshold = threshold;
        b.validate();
        return b.make();
    }
};

// ─────────────────────────────────────────────────────
// corpus
// ─────────────────────────────────────────────────────

void add_corpus(CLI::App& app, context&) {
    auto* corpus = app.add_subcommand("corpus", "annotation files and notes");
    corpus->require_subcommand(1);

    auto path = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();

    auto* validate = corpus->add_subcommand("validate", "check an annotation file");
    validate->add_option("path", *path)->required()->check(CLI::ExistingFile);
    validate->callback([path] {
        const auto notes = dqa::load_annotations(*path);
        std::size_t events = 0, relations = 0;
        for (const auto& n : notes) {
            events += n.events.size();
            relations += n.relations.size();
        }
        std::cout << "ok: " << notes.size() << " notes, " << events << " events, " << relations
                  << " relations\n";
    });

    auto* pairs = corpus->add_subcommand("pairs", "derive the relation-classification dataset");
    pairs->add_option("path", *path)->required()->check(CLI::ExistingFile);
    pairs->add_option("--out", *out, "JSONL output (default stdout)");
    pairs->callback([path, out] {
        const auto notes = dqa::load_annotations(*path);
        std::string lines;
        for (const auto& r : dqa::derive_relation_dataset(notes)) lines += dqa::to_json(r).dump() + "\n";
        write_output(*out, lines);
    });

    auto note_id = std::make_shared<std::string>();
    auto* ingest = corpus->add_subcommand("ingest", "split a raw note into sections");
    ingest->add_option("note", *path)->required()->check(CLI::ExistingFile);
    ingest->add_option("--note-id", *note_id);
    ingest->add_option("--out", *out);
    ingest->callback([path, out, note_id] {
        const auto n = load_note(*path, *note_id);
        dqa::validate_note(n);
        write_output(*out, dqa::note_to_json(n).dump(2) + "\n");
    });
}

// ─────────────────────────────────────────────────────
// extract
// ─────────────────────────────────────────────────────

void add_extract(CLI::App& app, context&) {
    auto* extract = app.add_subcommand("extract", "events, relations and entities");
    extract->require_subcommand(1);
    auto note_path = std::make_shared<std::string>();
    auto note_id = std::make_shared<std::string>();
    auto be = std::make_shared<backend_opts>();

    auto setup = [&](const char* name, const char* desc) {
        auto* cmd = extract->add_subcommand(name, desc);
        cmd->add_option("note", *note_path)->required()->check(CLI::ExistingFile);
        cmd->add_option("--note-id", *note_id);
        be->add(cmd);
        return cmd;
    };

    setup("events", "salient events in the Visit Recap")->callback([=] {
        const auto n = load_note(*note_path, *note_id);
        const auto ex = be->make();
        json out = json::array();
        for (const auto& e : dqa::extract_events(n, *ex)) out.push_back(dqa::to_json(e));
        std::cout << out.dump(2) << "\n";
    });

    setup("entities", "typed entities in the Detailed Instructions")->callback([=] {
        const auto n = load_note(*note_path, *note_id);
        const auto ex = be->make();
        json out = json::array();
        for (const auto& e : dqa::extract_detailed_entities(n, *ex)) out.push_back(dqa::to_json(e));
        std::cout << out.dump(2) << "\n";
    });

    auto all = std::make_shared<bool>(false);
    auto* rel = setup("relations", "relations between Visit Recap events");
    rel->add_flag("--all", *all, "print every candidate with its decision");
    rel->callback([=] {
        const auto n = load_note(*note_path, *note_id);
        const auto ex = be->make();
        const auto r = dqa::extract_relations(n, *ex);
        json out = json::array();
        for (std::size_t i = 0; i < r.candidates.size(); ++i) {
            if (!*all && !r.decisions[i].related) continue;
            const auto& c = r.candidates[i];
            json j = {{"head", dqa::to_json(c.head)},
                      {"tail", dqa::to_json(c.tail)},
                      {"rtype", dqa::to_string(c.rtype)}};
            if (*all) {
                j["related"] = r.decisions[i].related;
                j["confidence"] = r.decisions[i].confidence;
            }
            out.push_back(std::move(j));
        }
        std::cout << out.dump(2) << "\n";
    });
}

// ─────────────────────────────────────────────────────
// qgen
// ─────────────────────────────────────────────────────

void add_qgen(CLI::App& app, context& ctx) {
    struct opts {
        std::string note;
        std::string note_id;
        std::string mode = "gpt-ie";
        std::string out;
        std::string human;
        std::size_t n_min = 4;
        bool no_fallback = false;
        bool treatment_for_disease = false;
        backend_opts be;
    };
    auto o = std::make_shared<opts>();
    auto* cmd = app.add_subcommand("qgen", "generate a question set for a note");
    cmd->add_option("note", o->note)->required()->check(CLI::ExistingFile);
    cmd->add_option("--note-id", o->note_id);
    cmd->add_option("--mode", o->mode, "gpt | gpt-ie | human");
    cmd->add_option("--out", o->out, "output JSON (default stdout)");
    cmd->add_option("--human", o->human, "human question file");
    cmd->add_option("--n-min", o->n_min, "minimum number of direct questions");
    cmd->add_flag("--no-cloze-fallback", o->no_fallback, "fail instead of keeping blanked sentences");
    cmd->add_flag("--treatment-for-disease", o->treatment_for_disease);
    o->be.add(cmd);
    cmd->callback([o, &ctx] {
        const auto n = load_note(o->note, o->note_id);
        const auto mode = dqa::parse_qgen_mode(o->mode);
        dqa::qgen_config qc;
        qc.n_min = o->n_min;
        qc.cloze.fallback = !o->no_fallback;
        qc.templates.treatment_for_disease = o->treatment_for_disease;

        std::unique_ptr<dqa::extractor> ex;
        if (mode == dqa::qgen_mode::gpt_ie) ex = o->be.make();
        std::vector<dqa::question> human;
        if (mode == dqa::qgen_mode::human) {
            if (o->human.empty()) throw dqa::session_config_error("--human is required for mode human");
            human = dqa::load_human_questions(o->human, n.note_id);
        }
        std::shared_ptr<dqa::llm::transport> llm;
        if (mode != dqa::qgen_mode::human) {
            try {
                llm = ctx.transport();
            } catch (const dqa::auth_error&) {
                if (mode == dqa::qgen_mode::gpt) throw;
            }
        }
        const auto qs = dqa::generate_question_set(n, mode, ex.get(), llm.get(), &human, qc);
        write_output(o->out, dqa::to_json(qs).dump(2) + "\n");
    });
}

// ─────────────────────────────────────────────────────
// llm
// ─────────────────────────────────────────────────────

int run(const std::vector<std::string>& args, context& ctx);

void add_llm(CLI::App& app, context& ctx) {
    auto* llm = app.add_subcommand("llm", "language model client");
    llm->require_subcommand(1);

    auto model = std::make_shared<std::string>(dqa::llm::model_config{}.verification_model);
    auto message = std::make_shared<std::string>("Reply with the single word: pong");
    auto* ping = llm->add_subcommand("ping", "send one request and print the reply");
    ping->add_option("--model", *model);
    ping->add_option("--message", *message);
    ping->callback([model, message, &ctx] {
        dqa::llm::chat_request req;
        req.model_id = *model;
        req.messages = {{dqa::llm::role::user, *message}};
        req.max_tokens = 16;
        const auto t = ctx.transport();
        const auto r = dqa::llm::complete(req, *t);
        std::cout << r.text << "\n";
    });

    auto fixture = std::make_shared<std::string>();
    auto rest = std::make_shared<std::vector<std::string>>();
    auto* record = llm->add_subcommand("record", "run a subcommand and record its LLM traffic");
    record->add_option("--fixture", *fixture, "JSONL fixture to append to")->required();
    record->add_option("command", *rest, "subcommand after --")->required();
    record->callback([fixture, rest, &ctx] {
        context inner = ctx;
        inner.override_llm = std::make_shared<dqa::llm::recording_transport>(ctx.base_transport(), *fixture);
        const int rc = run(*rest, inner);
        if (rc != 0) throw CLI::RuntimeError(rc);
    });
}

// ─────────────────────────────────────────────────────
// eval
// ─────────────────────────────────────────────────────

std::vector<std::string> read_responses(const fs::path& p) {
    const auto raw = read_file(p);
    if (p.extension() == ".json") {
        auto j = json::parse(raw);
        if (j.is_object()) j = j.at("responses");
        return j.get<std::vector<std::string>>();
    }
    std::vector<std::string> out;
    std::istringstream in(raw);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

void add_eval(CLI::App& app, context& ctx) {
    auto* eval = app.add_subcommand("eval", "outcome measures");
    eval->require_subcommand(1);

    auto test = std::make_shared<std::string>();
    auto responses = std::make_shared<std::string>();
    auto* cloze = eval->add_subcommand("cloze", "score cloze responses");
    cloze->add_option("--test", *test, "cloze test JSON")->required()->check(CLI::ExistingFile);
    cloze->add_option("--responses", *responses, "JSON array or one response per line")
        ->required()
        ->check(CLI::ExistingFile);
    cloze->callback([test, responses] {
        const auto t = dqa::load_cloze_test(*test);
        dqa::validate_cloze_test(t);
        const auto r = dqa::score_cloze(t, read_responses(*responses));
        std::cout << dqa::to_json(r).dump(2) << "\n";
    });

    auto csv = std::make_shared<std::string>();
    auto target = std::make_shared<std::string>();
    auto aspect = std::make_shared<std::string>();
    auto* mrr = eval->add_subcommand("mrr", "mean reciprocal rank from a rankings CSV");
    mrr->add_option("rankings", *csv)->required()->check(CLI::ExistingFile);
    mrr->add_option("--target", *target, "single condition label");
    mrr->add_option("--aspect", *aspect, "restrict --target to one aspect");
    mrr->callback([csv, target, aspect] {
        const auto rankings = dqa::load_rankings_csv(*csv);
        if (target->empty()) {
            dqa::eval_report r;
            r.mrr = dqa::mrr_table(rankings);
            std::cout << dqa::to_json(r).at("mrr").dump(2) << "\n";
            return;
        }
        std::vector<dqa::preference_ranking> selected;
        for (const auto& r : rankings) {
            if (aspect->empty() || r.aspect == dqa::parse_eval_aspect(*aspect)) selected.push_back(r);
        }
        std::cout << dqa::compute_mrr(selected, *target) << "\n";
    });

    auto data_dir = std::make_shared<std::string>("dqa-data");
    auto session = std::make_shared<std::string>();
    auto strict = std::make_shared<bool>(false);
    auto* judge = eval->add_subcommand("judge", "score a finished session with the judge model");
    judge->add_option("--data-dir", *data_dir);
    judge->add_option("--session", *session)->required();
    judge->add_flag("--strict", *strict);
    judge->callback([data_dir, session, strict, &ctx] {
        dqa::session_store store(fs::path(*data_dir) / "sessions");
        const auto s = store.replay_session(*session);
        const auto n = dqa::note_from_json(json::parse(read_file(fs::path(*data_dir) / "notes" / (s.note_id + ".json"))));
        dqa::judge_options jo;
        jo.strict = *strict;
        const auto t = ctx.transport();
        const auto scores = dqa::judge_session(n, dqa::make_record(s), *t, jo);
        std::cout << dqa::to_json(scores).dump(2) << "\n";
    });

    auto codes = std::make_shared<std::string>();
    auto* heuristic = eval->add_subcommand("heuristic", "rates from binary-coded turns");
    heuristic->add_option("codes", *codes)->required()->check(CLI::ExistingFile);
    heuristic->callback([codes] {
        const auto r = dqa::aggregate_heuristic(dqa::parse_heuristic_csv(read_file(*codes)));
        std::cout << dqa::to_json(r).dump(2) << "\n";
    });
}

// ─────────────────────────────────────────────────────
// serve
// ─────────────────────────────────────────────────────

dqa::http_api* g_api = nullptr;

void on_signal(int) {
    if (g_api) g_api->stop();
}

void add_serve(CLI::App& app, context& ctx) {
    struct opts {
        std::string host;
        int port = -1;
        std::string data_dir;
        std::string static_dir;
        std::string lexicon;
    };
    auto o = std::make_shared<opts>();
    auto* cmd = app.add_subcommand("serve", "run the REST service");
    cmd->add_option("--host", o->host);
    cmd->add_option("--port", o->port, "0 picks a free port");
    cmd->add_option("--data-dir", o->data_dir);
    cmd->add_option("--static-dir", o->static_dir);
    cmd->add_option("--lexicon", o->lexicon);
    cmd->callback([o, &ctx] {
        dqa::service_config cfg;
        if (!ctx.config_path.empty()) cfg = dqa::service_config::load(ctx.config_path);
        if (!o->host.empty()) cfg.host = o->host;
        if (o->port >= 0) cfg.port = o->port;
        if (!o->data_dir.empty()) cfg.data_dir = o->data_dir;
        if (!o->static_dir.empty()) cfg.static_dir = o->static_dir;
        if (!o->lexicon.empty()) cfg.lexicon = o->lexicon;
        if (!ctx.llm_fixture.empty()) {
            cfg.llm_transport = "replay";
            cfg.llm_fixture = ctx.llm_fixture;
        }

        dqa::chat_service::dependencies deps;
        if (ctx.override_llm) {
            deps.llm = ctx.override_llm;
        } else {
            try {
                deps.llm = dqa::make_transport(cfg);
            } catch (const dqa::auth_error& e) {
                std::cerr << "warning: " << e.what() << "; answers will not be verified\n";
            }
        }
        deps.ex = dqa::make_extractor(cfg);

        dqa::chat_service service(cfg, deps);
        dqa::http_api api(service);
        const int port = api.bind(cfg.host, cfg.port);
        if (port <= 0) throw dqa::storage_error("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
        std::cout << "listening on http://" << cfg.host << ":" << port << std::endl;
        g_api = &api;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        api.listen();
        g_api = nullptr;
    });
}

// ─────────────────────────────────────────────────────
// chat
// ─────────────────────────────────────────────────────

void print_turns(const std::vector<dqa::turn>& turns) {
    for (const auto& t : turns) {
        const char* who = t.speaker == dqa::speaker::bot ? "bot" : "you";
        std::cout << "[" << who << "] " << t.text << "\n";
    }
}

void add_chat(CLI::App& app, context& ctx) {
    struct opts {
        std::string note;
        std::string note_id;
        std::string condition = "QA";
        std::string source = "gpt-ie";
        std::string human;
        std::string cloze;
        std::string transcript;
        bool repeat = false;
        backend_opts be;
    };
    auto o = std::make_shared<opts>();
    auto* cmd = app.add_subcommand("chat", "interactive session in the terminal");
    cmd->add_option("note", o->note)->required()->check(CLI::ExistingFile);
    cmd->add_option("--note-id", o->note_id);
    cmd->add_option("--condition", o->condition, "None | Q | QA");
    cmd->add_option("--source", o->source, "gpt | gpt-ie | human");
    cmd->add_option("--human", o->human, "human question file");
    cmd->add_option("--cloze", o->cloze, "cloze test JSON for the closing quiz");
    cmd->add_option("--transcript", o->transcript, "write the JSONL transcript here");
    cmd->add_flag("--repeat", o->repeat, "re-ask a question once after an incorrect answer");
    o->be.add(cmd);
    cmd->callback([o, &ctx] {
        const auto n = load_note(o->note, o->note_id);
        const auto cond = dqa::parse_condition(o->condition);
        std::optional<dqa::qgen_mode> source;
        dqa::question_set qs;
        qs.note_id = n.note_id;

        std::shared_ptr<dqa::llm::transport> llm;
        try {
            llm = ctx.transport();
        } catch (const dqa::auth_error& e) {
            std::cerr << "warning: " << e.what() << "\n";
        }

        if (cond != dqa::condition::none) {
            source = dqa::parse_qgen_mode(o->source);
            std::unique_ptr<dqa::extractor> ex;
            if (*source == dqa::qgen_mode::gpt_ie) ex = o->be.make();
            std::vector<dqa::question> human;
            if (*source == dqa::qgen_mode::human) human = dqa::load_human_questions(o->human, n.note_id);
            qs = dqa::generate_question_set(n, *source, ex.get(), llm.get(), &human);
        }

        dqa::dialogue_config dc;
        dc.repeat_on_incorrect = o->repeat;
        std::cout << n.full_text << "\n\n";
        auto started = dqa::start_session("cli", n, cond, source, qs, dc);
        auto& s = started.session;
        print_turns(s.turns);

        dqa::verifier_fn verify;
        if (llm) {
            verify = dqa::make_llm_verifier(n, *llm);
        } else {
            verify = [](std::span<const dqa::qa_exchange>, const dqa::question&, std::string_view) {
                return dqa::verdict{dqa::verdict_label::unparseable, std::string(dqa::degraded_feedback), true};
            };
        }

        while (s.phase == dqa::session_phase::reading || s.phase == dqa::session_phase::asking) {
            print_turns(dqa::next_turn(s).bot_turns);
            if (s.phase != dqa::session_phase::awaiting_answer) break;
            std::string line;
            while (true) {
                std::cout << "> " << std::flush;
                if (!std::getline(std::cin, line)) return;
                if (!dqa::text::trim(line).empty()) break;
            }
            print_turns(dqa::submit_answer(s, line, verify).bot_turns);
        }

        if (!o->cloze.empty()) {
            const auto test = dqa::load_cloze_test(o->cloze);
            std::vector<std::string> responses;
            for (const auto& item : test.items) {
                std::cout << item.blanked_sentence << "\n> " << std::flush;
                std::string line;
                if (!std::getline(std::cin, line)) line.clear();
                responses.push_back(line);
            }
            const auto r = dqa::score_cloze(test, responses);
            dqa::finish_session(s, r);
            std::cout << "quiz: " << r.correct << "/" << r.total << " correct\n";
        }
        if (!o->transcript.empty()) write_output(o->transcript, dqa::transcript_jsonl(s));
    });
}

// ─────────────────────────────────────────────────────
// dispatch
// ─────────────────────────────────────────────────────

int run(const std::vector<std::string>& args, context& ctx) {
    CLI::App app{"dischargeqa: question generation, answer verification and evaluation"};
    app.require_subcommand(1);
    app.add_option("--llm-fixture", ctx.llm_fixture, "replay LLM responses from a JSONL fixture");
    app.add_option("--config", ctx.config_path, "service config file");
    add_corpus(app, ctx);
    add_extract(app, ctx);
    add_qgen(app, ctx);
    add_llm(app, ctx);
    add_eval(app, ctx);
    add_serve(app, ctx);
    add_chat(app, ctx);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const dqa::error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    context ctx;
    return run(args, ctx);
}
