"""Python bindings for the dqa discharge-note dialogue library."""

from ._core import (
    DqaError,
    extract_entities,
    extract_events,
    extract_relations,
    generate_questions,
    ingest_note,
    mrr,
    parse_judge_scores,
    parse_verdict,
    score_cloze,
    sha256,
    template_text,
)

__all__ = [
    "DqaError",
    "extract_entities",
    "extract_events",
    "extract_relations",
    "generate_questions",
    "ingest_note",
    "mrr",
    "parse_judge_scores",
    "parse_verdict",
    "score_cloze",
    "sha256",
    "template_text",
]
