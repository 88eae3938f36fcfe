"""Entity-level scorer: a degree-scaled message-passing network over the working graph.

Each layer sends a message along every edge in both directions (direction-
specific weights, relation embedding concatenated to the sender state) and
combines three smooth aggregation channels per node: mean, sum, and a
degree-amplified mean scaled by log(1+deg) normalized over the graph. Entity
positives are the entities appearing in the refined supervision triples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..kg import KnowledgeGraph, Question, Triple
from .features import HashedBowEncoder, TextEncoder, entity_feature_matrix
from .triple_scorer import (
    TrainConfig,
    TrainSample,
    _encoder_from_tag,
    _pos_weight,
    sgd_step,
    weighted_bce_from_logits,
)

logger = logging.getLogger(__name__)


def entity_positives(positives: set[Triple]) -> set[int]:
    """Entities appearing in the positive triple set (heads and tails)."""
    out: set[int] = set()
    for h, _, t in positives:
        out.add(h)
        out.add(t)
    return out


@dataclass
class GraphTensors:
    """Precomputed per-question arrays the network runs on."""

    node_ids: list[int]  # global entity id per local row
    X: np.ndarray  # (V, F) node features
    edge_src: np.ndarray  # (E,) local indices
    edge_dst: np.ndarray
    R: np.ndarray  # (E, T) relation embeddings
    recipients: np.ndarray  # (2E,) delivery targets for [forward; backward] messages
    degree: np.ndarray  # (V,) message count per node
    scale: np.ndarray  # (V,) log(1+deg) / mean(log(1+deg))


def prepare_graph_tensors(
    g: KnowledgeGraph,
    q: Question,
    encoder: TextEncoder,
    depth: int,
    slots: int,
) -> GraphTensors:
    node_ids = sorted({e for _, tr in g.iter_triples() for e in (tr.head, tr.tail)})
    local = {e: i for i, e in enumerate(node_ids)}
    full = entity_feature_matrix(g, q, encoder, depth, slots)
    X = full[node_ids] if node_ids else full[:0]
    src, dst, rels = [], [], []
    for _, tr in g.iter_triples():
        src.append(local[tr.head])
        dst.append(local[tr.tail])
        rels.append(encoder(g.relation_label(tr.relation)))
    edge_src = np.array(src, dtype=np.intp)
    edge_dst = np.array(dst, dtype=np.intp)
    R = np.stack(rels) if rels else np.zeros((0, encoder.dim))
    recipients = np.concatenate([edge_dst, edge_src])
    degree = np.bincount(recipients, minlength=len(node_ids)).astype(np.float64)
    log_deg = np.log1p(degree)
    norm = float(log_deg.mean()) if len(log_deg) and log_deg.mean() > 0 else 1.0
    return GraphTensors(
        node_ids=node_ids,
        X=X,
        edge_src=edge_src,
        edge_dst=edge_dst,
        R=R,
        recipients=recipients,
        degree=degree,
        scale=log_deg / norm,
    )


class EntityScorer:
    """Message-passing scorer with a sigmoid head per entity."""

    kind = "entity"

    def __init__(
        self,
        input_dim: int,
        rel_dim: int,
        hidden: int,
        depth: int,
        encoder_tag: str,
        dde_depth: int,
        dde_slots: int,
        seed: int,
        rng: np.random.Generator | None = None,
    ):
        self.input_dim = input_dim
        self.rel_dim = rel_dim
        self.hidden = hidden
        self.depth = depth
        self.encoder_tag = encoder_tag
        self.dde_depth = dde_depth
        self.dde_slots = dde_slots
        self.seed = seed
        self.epoch_losses: list[float] = []
        if rng is None:
            return
        self.params: list[np.ndarray] = []
        in_dim = input_dim
        for _ in range(depth):
            msg_in = in_dim + rel_dim
            upd_in = in_dim + 3 * hidden
            for shape in ((msg_in, hidden), (hidden,), (msg_in, hidden), (hidden,)):
                self.params.append(
                    rng.normal(0.0, np.sqrt(1.0 / shape[0]), shape)
                    if len(shape) == 2
                    else np.zeros(shape)
                )
            self.params.append(rng.normal(0.0, np.sqrt(1.0 / upd_in), (upd_in, hidden)))
            self.params.append(np.zeros(hidden))
            in_dim = hidden
        self.params.append(rng.normal(0.0, 0.01, (hidden, 1)))
        self.params.append(np.zeros(1))

    # six arrays per layer: Wf, bf, Wb, bb, Wu, bu
    def _layer_params(self, layer: int) -> tuple[np.ndarray, ...]:
        base = 6 * layer
        return tuple(self.params[base : base + 6])

    def arch(self) -> dict:
        return {
            "type": "mpnn",
            "input_dim": self.input_dim,
            "rel_dim": self.rel_dim,
            "hidden": self.hidden,
            "depth": self.depth,
        }

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        names = []
        for layer in range(self.depth):
            names += [f"{n}{layer}" for n in ("Wf", "bf", "Wb", "bb", "Wu", "bu")]
        names += ["w_out", "b_out"]
        return list(zip(names, self.params))

    @classmethod
    def from_payload(cls, payload: dict, weights: dict[str, np.ndarray]) -> "EntityScorer":
        arch = payload["arch"]
        model = cls(
            input_dim=int(arch["input_dim"]),
            rel_dim=int(arch["rel_dim"]),
            hidden=int(arch["hidden"]),
            depth=int(arch["depth"]),
            encoder_tag=payload["encoder_tag"],
            dde_depth=int(payload["dde_depth"]),
            dde_slots=int(payload["dde_slots"]),
            seed=int(payload["seed"]),
        )
        model.params = []
        for layer in range(model.depth):
            for n in ("Wf", "bf", "Wb", "bb", "Wu", "bu"):
                model.params.append(weights[f"{n}{layer}"])
        model.params += [weights["w_out"], weights["b_out"].reshape(-1)]
        return model

    # -- forward / backward ---------------------------------------------------

    def _forward(self, gt: GraphTensors) -> tuple[np.ndarray, list]:
        h = gt.X
        n_nodes = h.shape[0]
        n_edges = len(gt.edge_src)
        caches = []
        for layer in range(self.depth):
            Wf, bf, Wb, bb, Wu, bu = self._layer_params(layer)
            if n_edges:
                in_f = np.concatenate([h[gt.edge_src], gt.R], axis=1)
                in_b = np.concatenate([h[gt.edge_dst], gt.R], axis=1)
                mf = np.tanh(in_f @ Wf + bf)
                mb = np.tanh(in_b @ Wb + bb)
                M = np.vstack([mf, mb])
            else:
                in_f = in_b = np.zeros((0, h.shape[1] + self.rel_dim))
                mf = mb = np.zeros((0, self.hidden))
                M = np.zeros((0, self.hidden))
            total = np.zeros((n_nodes, self.hidden))
            np.add.at(total, gt.recipients, M)
            denom = np.clip(gt.degree, 1.0, None)[:, None]
            mean = total / denom
            amp = mean * gt.scale[:, None]
            u_in = np.concatenate([h, mean, total, amp], axis=1)
            h_out = np.tanh(u_in @ Wu + bu)
            caches.append((h, in_f, in_b, mf, mb, mean, u_in, h_out))
            h = h_out
        w_out, b_out = self.params[-2], self.params[-1]
        logits = (h @ w_out).ravel() + b_out[0]
        return logits, caches

    def logits(self, gt: GraphTensors) -> np.ndarray:
        return self._forward(gt)[0]

    def scores(self, gt: GraphTensors) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits(gt)))

    def loss_and_grad(
        self, gt: GraphTensors, y: np.ndarray, pos_weight: float
    ) -> tuple[float, list[np.ndarray]]:
        logits, caches = self._forward(gt)
        loss, dz = weighted_bce_from_logits(logits, y, pos_weight)
        grads: list[np.ndarray | None] = [None] * len(self.params)
        h_last = caches[-1][-1]
        w_out = self.params[-2]
        grads[-2] = h_last.T @ dz[:, None]
        grads[-1] = np.array([dz.sum()])
        grad_h = dz[:, None] @ w_out.T.reshape(1, -1)
        n_edges = len(gt.edge_src)
        denom = np.clip(gt.degree, 1.0, None)[:, None]
        for layer in reversed(range(self.depth)):
            Wf, bf, Wb, bb, Wu, bu = self._layer_params(layer)
            h_in, in_f, in_b, mf, mb, mean, u_in, h_out = caches[layer]
            dzu = grad_h * (1.0 - h_out * h_out)
            base = 6 * layer
            grads[base + 4] = u_in.T @ dzu
            grads[base + 5] = dzu.sum(axis=0)
            grad_u_in = dzu @ Wu.T
            d_in = h_in.shape[1]
            grad_h_direct = grad_u_in[:, :d_in]
            g_mean = grad_u_in[:, d_in : d_in + self.hidden]
            g_total = grad_u_in[:, d_in + self.hidden : d_in + 2 * self.hidden]
            g_amp = grad_u_in[:, d_in + 2 * self.hidden :]
            g_mean_all = g_mean + g_amp * gt.scale[:, None]
            g_sum_all = g_total + g_mean_all / denom
            grad_h_prev = grad_h_direct.copy()
            if n_edges:
                grad_M = g_sum_all[gt.recipients]
                dzf = grad_M[:n_edges] * (1.0 - mf * mf)
                dzb = grad_M[n_edges:] * (1.0 - mb * mb)
                grads[base + 0] = in_f.T @ dzf
                grads[base + 1] = dzf.sum(axis=0)
                grads[base + 2] = in_b.T @ dzb
                grads[base + 3] = dzb.sum(axis=0)
                g_in_f = dzf @ Wf.T
                g_in_b = dzb @ Wb.T
                np.add.at(grad_h_prev, gt.edge_src, g_in_f[:, :d_in])
                np.add.at(grad_h_prev, gt.edge_dst, g_in_b[:, :d_in])
            else:
                grads[base + 0] = np.zeros_like(Wf)
                grads[base + 1] = np.zeros_like(bf)
                grads[base + 2] = np.zeros_like(Wb)
                grads[base + 3] = np.zeros_like(bb)
            grad_h = grad_h_prev
        return loss, grads  # type: ignore[return-value]

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_parameter_vector(self, vec: np.ndarray) -> None:
        offset = 0
        for i, p in enumerate(self.params):
            self.params[i] = vec[offset : offset + p.size].reshape(p.shape).copy()
            offset += p.size


@dataclass
class _PreparedEntities:
    gt: GraphTensors
    y: np.ndarray
    pos_weight: float
    pos_entities: set[int]


def _prepare_entity_samples(
    samples: Sequence[TrainSample], config: TrainConfig, encoder: TextEncoder
) -> list[_PreparedEntities]:
    prepared = []
    for question, graph, positives in samples:
        gt = prepare_graph_tensors(graph, question, encoder, config.dde_depth, config.dde_slots)
        pos = entity_positives(positives)
        y = np.array([1.0 if e in pos else 0.0 for e in gt.node_ids])
        n_pos = int(y.sum())
        if n_pos == 0:
            raise ValueError(f"question {question.id}: no positive entities in working graph")
        prepared.append(
            _PreparedEntities(
                gt=gt,
                y=y,
                pos_weight=_pos_weight(n_pos, len(gt.node_ids) - n_pos, config.pos_weight_cap),
                pos_entities=pos,
            )
        )
    return prepared


def train_entity_scorer(
    samples: Sequence[TrainSample],
    config: TrainConfig = TrainConfig(),
    val_samples: Sequence[TrainSample] | None = None,
    encoder: TextEncoder | None = None,
) -> EntityScorer:
    """Train the entity scorer; checkpoint selection mirrors the triple scorer."""
    if not samples:
        raise ValueError("no training samples")
    encoder = encoder or HashedBowEncoder(config.text_dim)
    prepared = _prepare_entity_samples(samples, config, encoder)
    val_prepared = (
        _prepare_entity_samples(val_samples, config, encoder) if val_samples else None
    )

    rng = np.random.default_rng(config.seed)
    model = EntityScorer(
        input_dim=prepared[0].gt.X.shape[1],
        rel_dim=encoder.dim,
        hidden=config.gnn_hidden,
        depth=config.gnn_depth,
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
            loss, grads = model.loss_and_grad(sample.gt, sample.y, sample.pos_weight)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}")
            sgd_step(model.params, grads, config.learning_rate)
            losses.append(loss)
        model.epoch_losses.append(float(np.mean(losses)))
        if val_prepared is not None:
            total = 0.0
            for sample in val_prepared:
                scores = model.scores(sample.gt)
                ranked = sorted(
                    zip(sample.gt.node_ids, scores), key=lambda pair: (-pair[1], pair[0])
                )[: config.recall_k]
                hits = sum(1 for e, _ in ranked if e in sample.pos_entities)
                total += hits / len(sample.pos_entities)
            recall = total / len(val_prepared)
            if recall > best_recall:
                best_recall = recall
                best_params = [p.copy() for p in model.params]
    if best_params is not None:
        model.params = best_params
        logger.info("selected checkpoint with validation recall %.4f", best_recall)
    return model


def score_entities(
    model: EntityScorer,
    q: Question,
    g: KnowledgeGraph,
    encoder: TextEncoder | None = None,
) -> list[tuple[int, float]]:
    """One score per entity incident to a visible triple, ascending entity id."""
    encoder = encoder or _encoder_from_tag(model.encoder_tag)
    if encoder.tag != model.encoder_tag:
        raise ValueError(
            f"encoder mismatch: model trained with {model.encoder_tag!r}, got {encoder.tag!r}"
        )
    gt = prepare_graph_tensors(g, q, encoder, model.dde_depth, model.dde_slots)
    if not gt.node_ids:
        return []
    return list(zip(gt.node_ids, model.scores(gt).tolist()))


def entity_to_triple_scores(
    entity_scores: Sequence[tuple[int, float]] | dict[int, float],
    g: KnowledgeGraph,
) -> tuple[list[tuple[int, float]], dict[int, str]]:
    """Triple scores ``s(h,r,t) = p(h) + p(t)`` with parallel relations merged.

    Triples sharing head and tail collapse to the smallest triple id; their
    relation labels join with " | ". Returns (scored representative triples in
    triple-id order, merged relation label per representative).
    """
    p = dict(entity_scores) if not isinstance(entity_scores, dict) else entity_scores
    by_pair: dict[tuple[int, int], list[int]] = {}
    for tid, tr in g.iter_triples():
        by_pair.setdefault((tr.head, tr.tail), []).append(tid)
    scored: list[tuple[int, float]] = []
    merged_labels: dict[int, str] = {}
    for (h, t), tids in sorted(by_pair.items(), key=lambda kv: kv[1][0]):
        rep = tids[0]
        score = p.get(h, 0.0) + p.get(t, 0.0)
        scored.append((rep, score))
        if len(tids) > 1:
            merged_labels[rep] = " | ".join(
                g.relation_label(g.triple(tid).relation) for tid in tids
            )
    return scored, merged_labels
