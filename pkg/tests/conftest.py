import io
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kgrag.kg import KnowledgeGraph, Question, load_kg

DATA = Path(__file__).parent / "data"


def graph_from_lines(*lines: str) -> KnowledgeGraph:
    """Graph from 'head relation tail' strings (spaces become tabs)."""
    tsv = "\n".join("\t".join(line.split()) for line in lines)
    return load_kg(io.StringIO(tsv), "tsv")


def make_question(
    g: KnowledgeGraph,
    query: list[str],
    answers: list[str],
    qid: str = "q",
    text: str = "test question",
    scope: list[int] | None = None,
) -> Question:
    return Question(
        id=qid,
        text=text,
        query_entities=frozenset(g.entity_ids[label] for label in query),
        answer_entities=frozenset(g.entity_ids[label] for label in answers),
        scope=frozenset(scope) if scope is not None else None,
    )


@pytest.fixture
def fixture_paths() -> dict[str, Path]:
    return {
        "kg": DATA / "fixture_kg.tsv",
        "questions": DATA / "fixture_questions.jsonl",
    }


def write_fixture_config(tmp_path: Path, **overrides) -> Path:
    """Pipeline config for the hand-built 12-question KG, tuned to separate."""
    import json

    config = {
        "paths": {
            "kg": str(DATA / "fixture_kg.tsv"),
            "questions": str(DATA / "fixture_questions.jsonl"),
            "work_dir": str(tmp_path / "out"),
        },
        "retrieval_level": "triple",
        "top_k": 8,
        "text_dim": 64,
        "chain_length_limit": 2,
        "training": {"epochs": 400, "hidden": [64, 64], "learning_rate": 0.2},
        "seed": 42,
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(config.get(key), dict):
            config[key].update(value)
        else:
            config[key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config, indent=2))
    return path
