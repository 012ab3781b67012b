#include "../support/scenario.hpp"

#include "dqa/corpus.hpp"
#include "dqa/errors.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

using namespace dqa;
namespace fx = dqa::testing;
using nlohmann::json;

namespace {

json fixture() { return json::parse(fx::read_text(fx::fixture_dir() / "annotations.json")); }

}  // namespace

TEST(IngestNote, SectionedJsonMapsBothSections) {
    const json doc = {{"visit_recap", "You had cholangitis."}, {"detailed_instructions", "Take ciprofloxacin."}};
    const auto n = ingest_note(doc.dump(), note_format::sectioned_json);
    EXPECT_EQ(n.recap_text(), "You had cholangitis.");
    EXPECT_EQ(n.detailed_text(), "Take ciprofloxacin.");
    EXPECT_FALSE(n.visit_recap.overlaps(n.detailed_instructions));
}

TEST(IngestNote, PlainTextSplitsAtMedicationHeading) {
    const std::string raw =
        "You had cholangitis.\nWe made the following changes to your medication regimen: START ciprofloxacin.";
    const auto n = ingest_note(raw, note_format::plain);
    // The heading line starts right after the first newline.
    const auto heading = raw.find("We made");
    EXPECT_EQ(n.detailed_instructions.begin, heading);
    EXPECT_EQ(n.detailed_instructions.end, raw.size());
    EXPECT_EQ(text::trim(n.recap_text()), "You had cholangitis.");
}

TEST(IngestNote, PlainTextSplitsAtFollowupHeading) {
    const std::string raw = "You had a fever.\n\nFollowup Instructions:\nSee your doctor.";
    const auto n = ingest_note(raw, note_format::plain);
    EXPECT_EQ(n.detailed_instructions.begin, raw.find("Followup"));
}

TEST(IngestNote, NoHeadingMeansWholeRecap) {
    const std::string raw = "You had a fever. It went away.";
    const auto n = ingest_note(raw, note_format::plain);
    EXPECT_EQ(n.visit_recap, (char_range{0, raw.size()}));
    EXPECT_TRUE(n.detailed_instructions.empty());
}

TEST(IngestNote, EmptyInputIsInvalid) {
    EXPECT_THROW(ingest_note("   \n ", note_format::plain), invalid_note);
}

TEST(IngestNote, MalformedJsonIsParseError) {
    EXPECT_THROW(ingest_note("{not json", note_format::sectioned_json), parse_error);
}

TEST(IngestNote, DerivedIdIsStableAndContentBased) {
    const auto a = ingest_note("You had a fever.", note_format::plain);
    const auto b = ingest_note("You had a fever.", note_format::plain);
    const auto c = ingest_note("You had a cough.", note_format::plain);
    EXPECT_EQ(a.note_id, b.note_id);
    EXPECT_NE(a.note_id, c.note_id);
    EXPECT_EQ(a.note_id.rfind("note-", 0), 0u);
}

TEST(IngestNote, SampleNoteSplitsAtMedications) {
    const auto n = fx::cholangitis_note();
    EXPECT_EQ(n.detailed_text().substr(0, 12), "Medications:");
    EXPECT_NE(n.recap_text().find("cholangitis"), std::string_view::npos);
    EXPECT_EQ(n.recap_text().find("ciprofloxacin"), std::string_view::npos);
}

TEST(NoteJson, RoundTrip) {
    const auto n = fx::cholangitis_note();
    EXPECT_EQ(note_from_json(note_to_json(n)), n);
}

TEST(ValidateNote, RejectsOverlapAndOutOfBounds) {
    discharge_note n{"x", "abcdef", {0, 4}, {3, 6}, note_provenance::synthetic};
    EXPECT_THROW(validate_note(n), invalid_note);
    n.detailed_instructions = {4, 9};
    EXPECT_THROW(validate_note(n), invalid_note);
    n.detailed_instructions = {4, 6};
    EXPECT_NO_THROW(validate_note(n));
}

TEST(Schema, EventTypeNamesRoundTrip) {
    for (auto t : all_event_types) EXPECT_EQ(parse_event_type(to_string(t)), t);
    EXPECT_THROW(parse_event_type("Vital"), unknown_type_error);
}

TEST(Schema, ExactlyFourPriorityEntityTypes) {
    EXPECT_EQ(std::count_if(all_detailed_entity_types.begin(), all_detailed_entity_types.end(), is_priority), 4);
    EXPECT_TRUE(is_priority(detailed_entity_type::upcoming_appointment));
    EXPECT_FALSE(is_priority(detailed_entity_type::medication_name));
}

TEST(Schema, TreatmentRelationsAcceptProcedureAndMedicine) {
    EXPECT_TRUE(admits(relation_type::treatment_goal, event_type::procedure, event_type::treatment_goal));
    EXPECT_TRUE(admits(relation_type::treatment_goal, event_type::medicine, event_type::treatment_goal));
    EXPECT_FALSE(admits(relation_type::symptom_caused_by_disease, event_type::disease, event_type::symptom));
}

TEST(LoadAnnotations, FixtureWithTwoNotes) {
    const auto notes = parse_annotations(fixture());
    ASSERT_EQ(notes.size(), 2u);
    EXPECT_EQ(notes[0].events.size(), 6u);
    EXPECT_EQ(notes[1].split, data_split::test);
    EXPECT_EQ(notes[1].find_event("f1")->surface, "diverticulitis");
}

TEST(LoadAnnotations, RoundTrip) {
    const auto notes = parse_annotations(fixture());
    EXPECT_EQ(parse_annotations(serialize_annotations(notes)), notes);
}

TEST(LoadAnnotations, MissingRelationEndpointNamesNoteAndField) {
    auto j = fixture();
    j[0]["relations"][0]["tail"] = "nope";
    try {
        parse_annotations(j);
        FAIL() << "expected AnnotationError";
    } catch (const annotation_error& e) {
        EXPECT_EQ(e.note_id(), "n1");
        EXPECT_NE(e.reason().find("relations[0].tail"), std::string::npos);
    }
}

TEST(LoadAnnotations, SignatureViolationIsAnnotationError) {
    auto j = fixture();
    // Disease as the head of SymptomCausedByDisease.
    j[0]["relations"][0] = {{"head", "e2"}, {"tail", "e2"}, {"rtype", "SymptomCausedByDisease"}};
    EXPECT_THROW(parse_annotations(j), annotation_error);
    j = fixture();
    j[1]["relations"][0] = {{"head", "f1"}, {"tail", "f4"}, {"rtype", "SymptomCausedByDisease"}};
    EXPECT_THROW(parse_annotations(j), annotation_error);
}

TEST(LoadAnnotations, UnknownTypeString) {
    auto j = fixture();
    j[0]["events"][0]["etype"] = "Vital";
    EXPECT_THROW(parse_annotations(j), unknown_type_error);
    j = fixture();
    j[0]["relations"][0]["rtype"] = "Causes";
    EXPECT_THROW(parse_annotations(j), unknown_type_error);
}

TEST(LoadAnnotations, DuplicateSpanAndTypeRejected) {
    auto j = fixture();
    auto dup = j[0]["events"][0];
    dup["event_id"] = "e99";
    j[0]["events"].push_back(dup);
    EXPECT_THROW(parse_annotations(j), annotation_error);
}

TEST(DeriveDataset, FixtureCounts) {
    const auto notes = parse_annotations(fixture());
    const auto rows = derive_relation_dataset(notes);
    // n1: three compliant pairs, all annotated. n2: (fever, diverticulitis)
    // annotated, (fever, pneumonia) negative.
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.relation.label; }), 4);
    const auto neg = std::find_if(rows.begin(), rows.end(), [](const auto& r) { return !r.relation.label; });
    ASSERT_NE(neg, rows.end());
    EXPECT_EQ(neg->note_id, "n2");
    EXPECT_EQ(neg->relation.head, "f3");
    EXPECT_EQ(neg->relation.tail, "f4");
    EXPECT_EQ(neg->split, data_split::test);
}

TEST(DeriveDataset, SymptomWithTwoDiseases) {
    const std::string text = "s d1 d2";
    annotated_note n;
    n.note = {"m", text, {0, text.size()}, {text.size(), text.size()}, note_provenance::annotated};
    n.events = {make_event("s1", text, {0, 1}, event_type::symptom), make_event("d1", text, {2, 4}, event_type::disease),
                make_event("d2", text, {5, 7}, event_type::disease)};
    n.relations = {{"s1", "d1", relation_type::symptom_caused_by_disease, true}};
    const auto rows = derive_relation_dataset(std::span(&n, 1));
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_TRUE(rows[0].relation.label);
    EXPECT_EQ(rows[0].relation.tail, "d1");
    EXPECT_FALSE(rows[1].relation.label);
    EXPECT_EQ(rows[1].relation.tail, "d2");
}

TEST(DeriveDataset, SingleEventHasNoPairs) {
    const std::string text = "fever";
    annotated_note n;
    n.note = {"m", text, {0, 5}, {5, 5}, note_provenance::annotated};
    n.events = {make_event("a", text, {0, 5}, event_type::symptom)};
    EXPECT_TRUE(derive_relation_dataset(std::span(&n, 1)).empty());
}

TEST(DeriveDataset, NegativesEqualCompliantPairsMinusPositives) {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = std::uniform_int_distribution<int>(0, 10)(rng);
        std::string text;
        annotated_note n;
        for (int i = 0; i < k; ++i) {
            const auto begin = text.size();
            text += "w" + std::to_string(i) + " ";
            const auto t = all_event_types[rng() % all_event_types.size()];
            n.events.push_back({"e" + std::to_string(i), {begin, begin + 2 + (i >= 10)}, "", t});
        }
        n.note = {"r", text.empty() ? std::string("x") : text, {0, 0}, {0, 0}, note_provenance::annotated};
        n.note.visit_recap = {0, n.note.full_text.size()};
        n.note.detailed_instructions = {n.note.full_text.size(), n.note.full_text.size()};
        for (auto& e : n.events) e.surface = std::string(slice(n.note.full_text, e.span));

        std::size_t compliant = 0;
        for (const auto& h : n.events) {
            for (const auto& t : n.events) {
                if (h.event_id == t.event_id) continue;
                for (auto r : all_relation_types) {
                    if (!admits(r, h.etype, t.etype)) continue;
                    ++compliant;
                    if (rng() % 3 == 0) n.relations.push_back({h.event_id, t.event_id, r, true});
                }
            }
        }
        validate_annotated_note(n);
        const auto rows = derive_relation_dataset(std::span(&n, 1));
        const auto positives = static_cast<std::size_t>(
            std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.relation.label; }));
        EXPECT_EQ(positives, n.relations.size());
        EXPECT_EQ(rows.size() - positives, compliant - n.relations.size());
        for (const auto& r : rows) {
            EXPECT_TRUE(admits(r.relation.rtype, n.find_event(r.relation.head)->etype,
                               n.find_event(r.relation.tail)->etype));
        }
    }
}
