"""Pipeline configuration: one JSON file, per-flag overrides at the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(Exception):
    """Invalid configuration; collects every violation before raising."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class TrainingSettings:
    epochs: int = 80
    learning_rate: float = 0.05
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "tanh"
    pos_weight_cap: float = 100.0
    gnn_hidden: int = 64
    gnn_depth: int = 3
    recall_k: int | None = None  # defaults to top_k


@dataclass
class LLMSettings:
    backend: str = "mock"
    temperature: float = 0.0
    seed: int = 42
    max_tokens: int = 1024
    max_inflight: int = 4
    include_explanations: bool = True


@dataclass
class PipelineConfig:
    kg_path: str = ""
    questions_path: str = ""
    work_dir: str = "out"
    replay_path: str | None = None
    refine_demos_path: str | None = None
    qa_demos_path: str | None = None
    aliases_path: str | None = None
    kg_format: str = "tsv"
    retrieval_level: str = "triple"
    top_k: int = 500
    entity_k_bonus: int = 200
    dde_depth: int = 3
    dde_slots: int = 3
    text_dim: int = 256
    chain_length_limit: int | None = 2  # None means unlimited expansion depth
    path_cap: int = 256
    pool_limit: int = 137
    seed: int = 42
    workers: int = 1
    validation_ids: tuple[str, ...] = ()
    training: TrainingSettings = field(default_factory=TrainingSettings)
    llm: LLMSettings = field(default_factory=LLMSettings)

    # -- derived artifact paths ---------------------------------------------

    def artifact(self, name: str) -> Path:
        return Path(self.work_dir) / name

    @property
    def graph_artifact(self) -> Path:
        return self.artifact("graph.tsv")

    @property
    def questions_artifact(self) -> Path:
        return self.artifact("questions.jsonl")

    @property
    def pool_artifact(self) -> Path:
        return self.artifact("pool.jsonl")

    @property
    def supervision_artifact(self) -> Path:
        return self.artifact("supervision.jsonl")

    @property
    def model_artifact(self) -> Path:
        return self.artifact("model.json")

    @property
    def retrieval_artifact(self) -> Path:
        return self.artifact("retrieval.jsonl")

    @property
    def chains_artifact(self) -> Path:
        return self.artifact("chains.jsonl")

    @property
    def answers_artifact(self) -> Path:
        return self.artifact("answers.jsonl")

    @property
    def report_artifact(self) -> Path:
        return self.artifact("report.json")

    @property
    def per_question_artifact(self) -> Path:
        return self.artifact("per_question.csv")

    def recall_k(self) -> int:
        return self.training.recall_k if self.training.recall_k is not None else self.top_k


def _validate(cfg: PipelineConfig) -> list[str]:
    problems = []
    if cfg.kg_format not in ("tsv", "jsonl"):
        problems.append(f"kg_format must be tsv or jsonl, got {cfg.kg_format!r}")
    if cfg.retrieval_level not in ("triple", "entity"):
        problems.append(f"retrieval_level must be triple or entity, got {cfg.retrieval_level!r}")
    for name, value, low in (
        ("top_k", cfg.top_k, 1),
        ("entity_k_bonus", cfg.entity_k_bonus, 0),
        ("dde_depth", cfg.dde_depth, 1),
        ("dde_slots", cfg.dde_slots, 1),
        ("text_dim", cfg.text_dim, 1),
        ("path_cap", cfg.path_cap, 1),
        ("pool_limit", cfg.pool_limit, 1),
        ("workers", cfg.workers, 1),
        ("training.epochs", cfg.training.epochs, 0),
        ("training.gnn_hidden", cfg.training.gnn_hidden, 1),
        ("training.gnn_depth", cfg.training.gnn_depth, 1),
        ("llm.max_inflight", cfg.llm.max_inflight, 1),
        ("llm.max_tokens", cfg.llm.max_tokens, 1),
    ):
        if value < low:
            problems.append(f"{name} must be >= {low}, got {value}")
    if cfg.chain_length_limit is not None and cfg.chain_length_limit < 1:
        problems.append("chain_length_limit must be >= 1 or null")
    if cfg.training.learning_rate <= 0:
        problems.append("training.learning_rate must be positive")
    if cfg.training.activation not in ("tanh", "relu"):
        problems.append(f"training.activation must be tanh or relu, got {cfg.training.activation!r}")
    if cfg.llm.backend not in ("mock", "replay", "remote"):
        problems.append(f"llm.backend must be mock, replay, or remote, got {cfg.llm.backend!r}")
    if cfg.llm.temperature < 0:
        problems.append("llm.temperature must be >= 0")
    if not cfg.kg_path:
        problems.append("paths.kg is required")
    if not cfg.questions_path:
        problems.append("paths.questions is required")
    return problems


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a config file, reporting every violation at once."""
    try:
        with Path(path).open(encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc.msg} (line {exc.lineno})"]) from None

    paths = raw.get("paths", {})
    training_raw = raw.get("training", {})
    llm_raw = raw.get("llm", {})
    cfg = PipelineConfig(
        kg_path=str(paths.get("kg", "")),
        questions_path=str(paths.get("questions", "")),
        work_dir=str(paths.get("work_dir", "out")),
        replay_path=paths.get("replay"),
        refine_demos_path=paths.get("refine_demos"),
        qa_demos_path=paths.get("qa_demos"),
        aliases_path=paths.get("aliases"),
        kg_format=str(raw.get("kg_format", "tsv")),
        retrieval_level=str(raw.get("retrieval_level", "triple")),
        top_k=int(raw.get("top_k", 500)),
        entity_k_bonus=int(raw.get("entity_k_bonus", 200)),
        dde_depth=int(raw.get("dde_depth", 3)),
        dde_slots=int(raw.get("dde_slots", 3)),
        text_dim=int(raw.get("text_dim", 256)),
        chain_length_limit=(
            None if raw.get("chain_length_limit", 2) is None else int(raw.get("chain_length_limit", 2))
        ),
        path_cap=int(raw.get("path_cap", 256)),
        pool_limit=int(raw.get("pool_limit", 137)),
        seed=int(raw.get("seed", 42)),
        workers=int(raw.get("workers", 1)),
        validation_ids=tuple(str(x) for x in raw.get("validation_ids", [])),
        training=TrainingSettings(
            epochs=int(training_raw.get("epochs", 80)),
            learning_rate=float(training_raw.get("learning_rate", 0.05)),
            hidden=tuple(int(h) for h in training_raw.get("hidden", (256, 256))),
            activation=str(training_raw.get("activation", "tanh")),
            pos_weight_cap=float(training_raw.get("pos_weight_cap", 100.0)),
            gnn_hidden=int(training_raw.get("gnn_hidden", 64)),
            gnn_depth=int(training_raw.get("gnn_depth", 3)),
            recall_k=(
                int(training_raw["recall_k"]) if training_raw.get("recall_k") is not None else None
            ),
        ),
        llm=LLMSettings(
            backend=str(llm_raw.get("backend", "mock")),
            temperature=float(llm_raw.get("temperature", 0.0)),
            seed=int(llm_raw.get("seed", 42)),
            max_tokens=int(llm_raw.get("max_tokens", 1024)),
            max_inflight=int(llm_raw.get("max_inflight", 4)),
            include_explanations=bool(llm_raw.get("include_explanations", True)),
        ),
    )
    problems = _validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg
