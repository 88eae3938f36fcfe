"""Answer extraction and KGQA metrics: Macro-F1, Micro-F1, Hit, Hit@1.

Matching is normalized exact string match (casefold, trim, collapse internal
whitespace) against gold labels; an optional alias table maps alternates onto
canonical forms before matching.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

_WS = re.compile(r"\s+")
_JSON_LIST = re.compile(r"\[[^\[\]]*\]", re.DOTALL)
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*)$")


def normalize(text: str) -> str:
    return _WS.sub(" ", text.strip().casefold())


@dataclass(frozen=True)
class Prediction:
    question_id: str
    answers: tuple[str, ...]  # rank order preserved


@dataclass(frozen=True)
class QuestionScore:
    question_id: str
    precision: float
    recall: float
    f1: float
    hit: bool
    hit_at_1: bool
    predicted: tuple[str, ...]
    gold: tuple[str, ...]


@dataclass(frozen=True)
class EvalReport:
    macro_f1: float
    micro_f1: float
    hit: float
    hit_at_1: float
    per_question: tuple[QuestionScore, ...]

    def to_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "hit": self.hit,
            "hit_at_1": self.hit_at_1,
            "per_question": [
                {
                    "id": row.question_id,
                    "precision": row.precision,
                    "recall": row.recall,
                    "f1": row.f1,
                    "hit": int(row.hit),
                    "hit_at_1": int(row.hit_at_1),
                    "predicted": list(row.predicted),
                    "gold": list(row.gold),
                }
                for row in self.per_question
            ],
        }


def extract_answers(llm_text: str) -> list[str]:
    """Answer strings from model output.

    Prefers the first JSON string list anywhere in the text; otherwise falls
    back to bullet lines, then to the first "label: a, b" style line. Free
    prose without any list yields an empty result. Duplicates are dropped by
    normalized form, order preserved.
    """
    answers: list[str] = []
    for match in _JSON_LIST.finditer(llm_text):
        try:
            parsed = json.loads(match.group(0))
        except json.JSONDecodeError:
            continue
        if isinstance(parsed, list) and all(isinstance(x, str) for x in parsed):
            answers = parsed
            break
    if not answers:
        bullets = []
        for line in llm_text.splitlines():
            m = _BULLET.match(line)
            if m and m.group(1).strip():
                bullets.append(m.group(1).strip())
        answers = bullets
    if not answers:
        for line in llm_text.splitlines():
            if ":" in line:
                _, _, rest = line.partition(":")
                items = [part.strip() for part in rest.split(",") if part.strip()]
                if items:
                    answers = items
                    break
    seen: set[str] = set()
    unique: list[str] = []
    for ans in answers:
        key = normalize(ans)
        if key and key not in seen:
            seen.add(key)
            unique.append(ans)
    return unique


def evaluate(
    preds: Sequence[Prediction],
    gold: Mapping[str, Iterable[str]],
    aliases: Mapping[str, str] | None = None,
) -> EvalReport:
    """Score predictions against per-question gold answer sets.

    Macro-F1 averages per-question F1; Micro-F1 comes from globally summed
    TP/FP/FN. Hit marks any correct answer; Hit@1 the first-ranked one. A
    question with no predictions scores zero across the board.
    """
    alias_map = {normalize(k): normalize(v) for k, v in (aliases or {}).items()}

    def canon(text: str) -> str:
        key = normalize(text)
        return alias_map.get(key, key)

    rows = []
    tp_total = fp_total = fn_total = 0
    for pred in preds:
        if pred.question_id not in gold:
            raise KeyError(f"no gold answers for question {pred.question_id!r}")
        gold_set = {canon(g) for g in gold[pred.question_id]}
        ranked = []
        seen: set[str] = set()
        for ans in pred.answers:
            key = canon(ans)
            if key and key not in seen:
                seen.add(key)
                ranked.append(key)
        pred_set = set(ranked)
        tp = len(pred_set & gold_set)
        fp = len(pred_set - gold_set)
        fn = len(gold_set - pred_set)
        tp_total += tp
        fp_total += fp
        fn_total += fn
        precision = tp / (tp + fp) if (tp + fp) else 0.0
        recall = tp / (tp + fn) if (tp + fn) else 0.0
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
        rows.append(
            QuestionScore(
                question_id=pred.question_id,
                precision=precision,
                recall=recall,
                f1=f1,
                hit=tp > 0,
                hit_at_1=bool(ranked) and ranked[0] in gold_set,
                predicted=tuple(pred.answers),
                gold=tuple(sorted(gold[pred.question_id])),
            )
        )

    n = len(rows)
    macro_f1 = sum(r.f1 for r in rows) / n if n else 0.0
    micro_p = tp_total / (tp_total + fp_total) if (tp_total + fp_total) else 0.0
    micro_r = tp_total / (tp_total + fn_total) if (tp_total + fn_total) else 0.0
    micro_f1 = 2 * micro_p * micro_r / (micro_p + micro_r) if (micro_p + micro_r) else 0.0
    return EvalReport(
        macro_f1=macro_f1,
        micro_f1=micro_f1,
        hit=sum(1 for r in rows if r.hit) / n if n else 0.0,
        hit_at_1=sum(1 for r in rows if r.hit_at_1) / n if n else 0.0,
        per_question=tuple(rows),
    )


def write_report(report: EvalReport, json_sink: IO[str], csv_sink: IO[str] | None = None) -> None:
    json.dump(report.to_dict(), json_sink, sort_keys=True, indent=2)
    json_sink.write("\n")
    if csv_sink is not None:
        writer = csv.writer(csv_sink)
        writer.writerow(["id", "precision", "recall", "f1", "hit", "hit_at_1", "predicted", "gold"])
        for row in report.per_question:
            writer.writerow(
                [
                    row.question_id,
                    f"{row.precision:.6f}",
                    f"{row.recall:.6f}",
                    f"{row.f1:.6f}",
                    int(row.hit),
                    int(row.hit_at_1),
                    "|".join(row.predicted),
                    "|".join(row.gold),
                ]
            )
