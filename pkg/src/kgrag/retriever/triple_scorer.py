"""Binary triple classifier: feedforward net over text + structural features.

Training maximizes per-question binary cross-entropy with all non-positive
triples of the working graph as negatives, class-weighted per question.
Plain fixed-step gradient descent, fixed iteration order: training twice with
the same seed gives bitwise-identical weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ..kg import KnowledgeGraph, Question, Triple
from .features import (
    DEFAULT_DDE_DEPTH,
    DEFAULT_DDE_SLOTS,
    DEFAULT_TEXT_DIM,
    HashedBowEncoder,
    TextEncoder,
    TripleFeatureBuilder,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 42
    epochs: int = 80
    learning_rate: float = 0.05
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "tanh"
    text_dim: int = DEFAULT_TEXT_DIM
    dde_depth: int = DEFAULT_DDE_DEPTH
    dde_slots: int = DEFAULT_DDE_SLOTS
    pos_weight_cap: float = 100.0
    recall_k: int = 5  # used for validation checkpoint selection
    gnn_hidden: int = 64
    gnn_depth: int = 3


class TrainSample(NamedTuple):
    question: Question
    graph: KnowledgeGraph  # the question's working graph
    positives: set[Triple]


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def _activate_grad(a: np.ndarray, z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(z.dtype)


def weighted_bce_from_logits(
    z: np.ndarray, y: np.ndarray, pos_weight: float
) -> tuple[float, np.ndarray]:
    """Class-weighted binary cross entropy and its gradient wrt the logits.

    Uses logaddexp for stability; the loss is normalized by the total weight
    so the step size does not scale with graph size.
    """
    w = np.where(y > 0.5, pos_weight, 1.0)
    total = float(w.sum())
    log_p = -np.logaddexp(0.0, -z)
    log_1p = -np.logaddexp(0.0, z)
    loss = float(-(w * (y * log_p + (1.0 - y) * log_1p)).sum() / total)
    sigma = 1.0 / (1.0 + np.exp(-z))
    dz = w * (sigma - y) / total
    return loss, dz


class TripleScorer:
    """MLP over triple feature rows with a sigmoid head."""

    kind = "triple"

    def __init__(
        self,
        input_dim: int,
        hidden: Sequence[int],
        activation: str,
        encoder_tag: str,
        dde_depth: int,
        dde_slots: int,
        seed: int,
        rng: np.random.Generator | None = None,
    ):
        self.input_dim = input_dim
        self.hidden = tuple(hidden)
        self.activation = activation
        self.encoder_tag = encoder_tag
        self.dde_depth = dde_depth
        self.dde_slots = dde_slots
        self.seed = seed
        self.epoch_losses: list[float] = []
        if rng is not None:
            self.params: list[np.ndarray] = []
            fan_in = input_dim
            for width in self.hidden:
                self.params.append(rng.normal(0.0, np.sqrt(1.0 / fan_in), (fan_in, width)))
                self.params.append(np.zeros(width))
                fan_in = width
            # output weights start near zero so untrained scores sit near 0.5
            self.params.append(rng.normal(0.0, 0.01, (fan_in, 1)))
            self.params.append(np.zeros(1))

    # -- serialization hooks -------------------------------------------------

    def arch(self) -> dict:
        return {
            "type": "mlp",
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        names = []
        for i in range(len(self.hidden)):
            names += [f"W{i}", f"b{i}"]
        names += ["w_out", "b_out"]
        return list(zip(names, self.params))

    @classmethod
    def from_payload(cls, payload: dict, weights: dict[str, np.ndarray]) -> "TripleScorer":
        arch = payload["arch"]
        model = cls(
            input_dim=int(arch["input_dim"]),
            hidden=tuple(arch["hidden"]),
            activation=arch["activation"],
            encoder_tag=payload["encoder_tag"],
            dde_depth=int(payload["dde_depth"]),
            dde_slots=int(payload["dde_slots"]),
            seed=int(payload["seed"]),
        )
        model.params = []
        for i in range(len(model.hidden)):
            model.params += [weights[f"W{i}"], weights[f"b{i}"]]
        model.params += [weights["w_out"], weights["b_out"].reshape(-1)]
        return model

    # -- forward / backward --------------------------------------------------

    def _forward(self, X: np.ndarray) -> tuple[np.ndarray, list]:
        caches = []
        h = X
        for i in range(len(self.hidden)):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ W + b
            a = _activate(z, self.activation)
            caches.append((h, z, a))
            h = a
        w_out, b_out = self.params[-2], self.params[-1]
        logits = (h @ w_out).ravel() + b_out[0]
        caches.append((h,))
        return logits, caches

    def logits(self, X: np.ndarray) -> np.ndarray:
        self._check_dim(X)
        return self._forward(X)[0]

    def scores(self, X: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits(X)))

    def loss_and_grad(
        self, X: np.ndarray, y: np.ndarray, pos_weight: float
    ) -> tuple[float, list[np.ndarray]]:
        self._check_dim(X)
        logits, caches = self._forward(X)
        loss, dz = weighted_bce_from_logits(logits, y, pos_weight)
        grads: list[np.ndarray | None] = [None] * len(self.params)
        h_last = caches[-1][0]
        w_out = self.params[-2]
        grads[-2] = h_last.T @ dz[:, None]
        grads[-1] = np.array([dz.sum()])
        grad_h = dz[:, None] @ w_out.T.reshape(1, -1) if h_last.size else np.zeros_like(h_last)
        for i in reversed(range(len(self.hidden))):
            h_in, z, a = caches[i]
            dz_layer = grad_h * _activate_grad(a, z, self.activation)
            grads[2 * i] = h_in.T @ dz_layer
            grads[2 * i + 1] = dz_layer.sum(axis=0)
            grad_h = dz_layer @ self.params[2 * i].T
        return loss, grads  # type: ignore[return-value]

    def _check_dim(self, X: np.ndarray) -> None:
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(
                f"feature dimension mismatch: got {X.shape}, model expects (*, {self.input_dim})"
            )

    # -- flat parameter access (used by gradient checks) ----------------------

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_parameter_vector(self, vec: np.ndarray) -> None:
        offset = 0
        for i, p in enumerate(self.params):
            self.params[i] = vec[offset : offset + p.size].reshape(p.shape).copy()
            offset += p.size


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    for p, g in zip(params, grads):
        p -= lr * g


def _pos_weight(n_pos: int, n_neg: int, cap: float) -> float:
    if n_pos == 0:
        raise ValueError("sample has zero positive triples")
    return float(min(cap, max(1.0, n_neg / n_pos)))


@dataclass
class _Prepared:
    tids: list[int]
    X: np.ndarray
    y: np.ndarray
    pos_weight: float
    pos_tids: set[int] = field(default_factory=set)


def _prepare_triple_samples(
    samples: Sequence[TrainSample], config: TrainConfig, encoder: TextEncoder
) -> list[_Prepared]:
    prepared = []
    for question, graph, positives in samples:
        builder = TripleFeatureBuilder(
            graph, question, encoder, config.dde_depth, config.dde_slots
        )
        tids, X = builder.matrix()
        y = np.array([1.0 if graph.triple(t) in positives else 0.0 for t in tids])
        n_pos = int(y.sum())
        if n_pos == 0:
            raise ValueError(f"question {question.id}: no positive triples in working graph")
        prepared.append(
            _Prepared(
                tids=tids,
                X=X,
                y=y,
                pos_weight=_pos_weight(n_pos, len(tids) - n_pos, config.pos_weight_cap),
                pos_tids={t for t, flag in zip(tids, y) if flag > 0.5},
            )
        )
    return prepared


def recall_at_k(scored: Sequence[tuple[int, float]], positives: set[int], k: int) -> float:
    if not positives:
        return 0.0
    ranked = sorted(scored, key=lambda pair: (-pair[1], pair[0]))[:k]
    hit = sum(1 for tid, _ in ranked if tid in positives)
    return hit / len(positives)


def _validation_recall(model, prepared: Sequence[_Prepared], k: int) -> float:
    total = 0.0
    for sample in prepared:
        scores = model.scores(sample.X)
        total += recall_at_k(list(zip(sample.tids, scores)), sample.pos_tids, k)
    return total / len(prepared)


def train_triple_scorer(
    samples: Sequence[TrainSample],
    config: TrainConfig = TrainConfig(),
    val_samples: Sequence[TrainSample] | None = None,
    encoder: TextEncoder | None = None,
) -> TripleScorer:
    """Train the triple classifier; returns the best-validation or final model.

    With a validation split, the checkpoint with the highest validation
    recall@k is returned (earliest epoch on ties); otherwise the final epoch.
    """
    if not samples:
        raise ValueError("no training samples")
    encoder = encoder or HashedBowEncoder(config.text_dim)
    prepared = _prepare_triple_samples(samples, config, encoder)
    val_prepared = (
        _prepare_triple_samples(val_samples, config, encoder) if val_samples else None
    )

    rng = np.random.default_rng(config.seed)
    model = TripleScorer(
        input_dim=prepared[0].X.shape[1],
        hidden=config.hidden,
        activation=config.activation,
        encoder_tag=encoder.tag,
        dde_depth=config.dde_depth,
        dde_slots=config.dde_slots,
        seed=config.seed,
        rng=rng,
    )

    best_recall = -1.0
    best_params: list[np.ndarray] | None = None
    for epoch in range(config.epochs):
        losses = []
        for sample in prepared:
            loss, grads = model.loss_and_grad(sample.X, sample.y, sample.pos_weight)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}")
            sgd_step(model.params, grads, config.learning_rate)
            losses.append(loss)
        model.epoch_losses.append(float(np.mean(losses)))
        if val_prepared is not None:
            recall = _validation_recall(model, val_prepared, config.recall_k)
            if recall > best_recall:
                best_recall = recall
                best_params = [p.copy() for p in model.params]
    if best_params is not None:
        model.params = best_params
        logger.info("selected checkpoint with validation recall %.4f", best_recall)
    return model


def score_triples(
    model: TripleScorer,
    q: Question,
    g: KnowledgeGraph,
    encoder: TextEncoder | None = None,
) -> list[tuple[int, float]]:
    """One score per visible triple, in triple-id order."""
    encoder = encoder or _encoder_from_tag(model.encoder_tag)
    if encoder.tag != model.encoder_tag:
        raise ValueError(
            f"encoder mismatch: model trained with {model.encoder_tag!r}, got {encoder.tag!r}"
        )
    builder = TripleFeatureBuilder(g, q, encoder, model.dde_depth, model.dde_slots)
    tids, X = builder.matrix()
    if not tids:
        return []
    return list(zip(tids, model.scores(X).tolist()))


def _encoder_from_tag(tag: str) -> TextEncoder:
    if tag.startswith("hashed-bow-"):
        return HashedBowEncoder(int(tag.rsplit("-", 1)[1]))
    raise ValueError(f"cannot rebuild encoder from tag {tag!r}; pass one explicitly")
