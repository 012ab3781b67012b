#include "dqa/cloze.hpp"
#include "dqa/corpus.hpp"
#include "dqa/errors.hpp"
#include "dqa/eval.hpp"
#include "dqa/extraction.hpp"
#include "dqa/llm.hpp"
#include "dqa/qgen.hpp"
#include "dqa/text.hpp"
#include "dqa/verify.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

namespace py = pybind11;
using nlohmann::json;

namespace {

json to_cpp(const py::handle& obj) {
    const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
    return json::parse(text);
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

std::shared_ptr<const dqa::gazetteer> load_lexicon(const py::object& lexicon) {
    if (py::isinstance<py::str>(lexicon)) {
        return std::make_shared<const dqa::gazetteer>(dqa::gazetteer::load(lexicon.cast<std::string>()));
    }
    return std::make_shared<const dqa::gazetteer>(dqa::gazetteer::from_json(to_cpp(lexicon)));
}

std::unique_ptr<dqa::extractor> make_extractor(const py::object& lexicon) {
    dqa::extractor_backend b;
    b.lexicon = load_lexicon(lexicon);
    return b.make();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Discharge-note question generation, answer verification and evaluation";

    static py::exception<dqa::error> dqa_error(m, "DqaError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const dqa::error& e) {
            py::object exc = py::reinterpret_borrow<py::object>(dqa_error.ptr())(e.what());
            exc.attr("code") = e.code();
            PyErr_SetObject(dqa_error.ptr(), exc.ptr());
        }
    });

    m.def("sha256", [](const std::string& data) { return dqa::text::sha256_hex(data); }, py::arg("data"),
          "Lowercase hex SHA-256 digest.");

    m.def(
        "ingest_note",
        [](const std::string& raw, bool sectioned) {
            const auto fmt = sectioned ? dqa::note_format::sectioned_json : dqa::note_format::plain;
            return to_py(dqa::note_to_json(dqa::ingest_note(raw, fmt)));
        },
        py::arg("raw"), py::arg("sectioned") = false,
        "Parses a plain or sectioned-JSON note and returns it as a dict.");

    m.def(
        "extract_events",
        [](const py::object& note, const py::object& lexicon) {
            const auto n = dqa::note_from_json(to_cpp(note));
            json out = json::array();
            for (const auto& e : dqa::extract_events(n, *make_extractor(lexicon))) out.push_back(dqa::to_json(e));
            return to_py(out);
        },
        py::arg("note"), py::arg("lexicon"), "Visit-recap events found by the gazetteer backend.");

    m.def(
        "extract_entities",
        [](const py::object& note, const py::object& lexicon) {
            const auto n = dqa::note_from_json(to_cpp(note));
            json out = json::array();
            for (const auto& e : dqa::extract_detailed_entities(n, *make_extractor(lexicon))) {
                out.push_back(dqa::to_json(e));
            }
            return to_py(out);
        },
        py::arg("note"), py::arg("lexicon"), "Typed entities in the detailed instructions.");

    m.def(
        "extract_relations",
        [](const py::object& note, const py::object& lexicon) {
            const auto n = dqa::note_from_json(to_cpp(note));
            const auto r = dqa::extract_relations(n, *make_extractor(lexicon));
            json out = json::array();
            for (const auto& c : r.positives()) {
                out.push_back({{"head", dqa::to_json(c.head)},
                               {"tail", dqa::to_json(c.tail)},
                               {"rtype", dqa::to_string(c.rtype)}});
            }
            return to_py(out);
        },
        py::arg("note"), py::arg("lexicon"), "Positive relations between extracted events.");

    m.def(
        "template_text",
        [](const std::string& rtype, const std::string& head) {
            return dqa::template_text(dqa::parse_relation_type(rtype), head);
        },
        py::arg("rtype"), py::arg("head"), "Question template filled with the head event surface.");

    m.def(
        "generate_questions",
        [](const py::object& note, const std::string& mode, const py::object& lexicon,
           const std::optional<std::string>& llm_fixture, const py::object& human, std::size_t n_min) {
            const auto n = dqa::note_from_json(to_cpp(note));
            const auto m = dqa::parse_qgen_mode(mode);
            std::unique_ptr<dqa::extractor> ex;
            if (!lexicon.is_none()) ex = make_extractor(lexicon);
            std::unique_ptr<dqa::llm::transport> llm;
            if (llm_fixture) llm = dqa::llm::replay_transport::load(*llm_fixture);
            std::vector<dqa::question> hq;
            if (!human.is_none()) hq = dqa::human_questions_from_json(to_cpp(human), n.note_id);
            dqa::qgen_config qc;
            qc.n_min = n_min;
            return to_py(dqa::to_json(dqa::generate_question_set(n, m, ex.get(), llm.get(), &hq, qc)));
        },
        py::arg("note"), py::arg("mode"), py::arg("lexicon") = py::none(), py::arg("llm_fixture") = py::none(),
        py::arg("human") = py::none(), py::arg("n_min") = 4,
        "Question set for a note. `llm_fixture` replays recorded LLM responses.");

    m.def(
        "parse_verdict",
        [](const std::string& response) { return to_py(dqa::to_json(dqa::parse_verdict(response))); },
        py::arg("response"), "Label and feedback parsed from a verifier reply.");

    m.def(
        "score_cloze",
        [](const py::object& test, const std::vector<std::string>& responses) {
            const auto t = dqa::cloze_test_from_json(to_cpp(test));
            dqa::validate_cloze_test(t);
            return to_py(dqa::to_json(dqa::score_cloze(t, responses)));
        },
        py::arg("test"), py::arg("responses"), "Scores cloze responses against the gold answers.");

    m.def(
        "mrr",
        [](const std::string& csv, const std::optional<std::string>& target, const std::optional<std::string>& aspect)
            -> py::object {
            const auto rankings = dqa::parse_rankings_csv(csv);
            if (!target) {
                dqa::eval_report r;
                r.mrr = dqa::mrr_table(rankings);
                return to_py(dqa::to_json(r).at("mrr"));
            }
            std::vector<dqa::preference_ranking> selected;
            for (const auto& r : rankings) {
                if (!aspect || r.aspect == dqa::parse_eval_aspect(*aspect)) selected.push_back(r);
            }
            return py::float_(dqa::compute_mrr(selected, *target));
        },
        py::arg("csv"), py::arg("target") = py::none(), py::arg("aspect") = py::none(),
        "Mean reciprocal rank. Without a target returns the table per aspect and condition.");

    m.def(
        "parse_judge_scores",
        [](const std::string& response, bool strict) {
            return to_py(dqa::to_json(dqa::parse_judge_scores(response, strict)));
        },
        py::arg("response"), py::arg("strict") = false, "Six integer scores from a judge reply.");
}
