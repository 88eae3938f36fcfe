"""Query/triple text embeddings and directional distance encoding (DDE).

The default text encoder is a hashed bag-of-tokens: stable across runs and
processes, no model weights involved. DDE records, for every entity, the
forward BFS hop distance (following edge direction) and the backward distance
from an anchor set, each capped at the configured depth with a separate
"unreachable" bucket, one-hot encoded.
"""

from __future__ import annotations

import hashlib
import re
from collections import deque
from typing import Callable, Iterable, Protocol

import numpy as np

from ..kg import KnowledgeGraph, Question

_TOKEN = re.compile(r"\w+")

DEFAULT_TEXT_DIM = 256
DEFAULT_DDE_DEPTH = 3
DEFAULT_DDE_SLOTS = 3


class TextEncoder(Protocol):
    tag: str

    def __call__(self, text: str) -> np.ndarray: ...

    @property
    def dim(self) -> int: ...


class HashedBowEncoder:
    """L2-normalized hashed bag-of-tokens into a fixed dimension."""

    def __init__(self, dim: int = DEFAULT_TEXT_DIM):
        self._dim = dim
        self.tag = f"hashed-bow-{dim}"
        self._cache: dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self._dim

    def __call__(self, text: str) -> np.ndarray:
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        vec = np.zeros(self._dim, dtype=np.float64)
        for token in _TOKEN.findall(text.lower()):
            digest = hashlib.md5(token.encode("utf-8")).digest()
            vec[int.from_bytes(digest[:8], "big") % self._dim] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        self._cache[text] = vec
        return vec


def encode_text(text: str, dim: int = DEFAULT_TEXT_DIM) -> np.ndarray:
    """One-off hashed bag-of-tokens embedding (empty text gives the zero vector)."""
    return HashedBowEncoder(dim)(text)


# -- directional distances ----------------------------------------------------


def _directed_bfs(g: KnowledgeGraph, anchors: Iterable[int], direction: str) -> dict[int, int]:
    dist: dict[int, int] = {}
    queue: deque[int] = deque()
    for a in sorted(set(anchors)):
        if a not in dist:
            dist[a] = 0
            queue.append(a)
    index = g.out_index if direction == "out" else g.in_index
    while queue:
        u = queue.popleft()
        for tid in index.get(u, ()):
            tr = g.triple(tid)
            v = tr.tail if direction == "out" else tr.head
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _one_hot(distance: int | None, depth: int) -> np.ndarray:
    # buckets: 0..depth, then one "unreachable" bucket
    vec = np.zeros(depth + 2, dtype=np.float64)
    vec[depth + 1 if distance is None else min(distance, depth)] = 1.0
    return vec


def compute_dde(
    g: KnowledgeGraph, anchors: set[int], depth: int = DEFAULT_DDE_DEPTH
) -> dict[int, np.ndarray]:
    """Per-entity one-hot codes ``[forward | backward]`` of hop distances from anchors.

    Forward follows edge direction from the anchor set, backward runs against
    it. Finite distances beyond ``depth`` land in the depth bucket; entities
    with no path at all land in the unreachable bucket.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    fwd = _directed_bfs(g, anchors, "out")
    bwd = _directed_bfs(g, anchors, "in")
    codes: dict[int, np.ndarray] = {}
    touched = set(range(len(g.entities)))
    for e in touched:
        codes[e] = np.concatenate([_one_hot(fwd.get(e), depth), _one_hot(bwd.get(e), depth)])
    return codes


def anchor_slots(anchors: set[int], slots: int = DEFAULT_DDE_SLOTS) -> list[set[int]]:
    """Distribute query entities over a fixed number of anchor slots.

    Entities fill slots in ascending id order; when there are more entities
    than slots, the overflow is pooled into the last slot (one BFS from the
    pooled set, i.e. minimum distance to any member, keeping codes one-hot).
    Unused slots stay empty, which encodes as "unreachable".
    """
    if slots < 1:
        raise ValueError("slots must be >= 1")
    ids = sorted(anchors)
    if len(ids) <= slots:
        return [{e} for e in ids] + [set() for _ in range(slots - len(ids))]
    pooled: list[set[int]] = [{e} for e in ids[: slots - 1]]
    pooled.append(set(ids[slots - 1 :]))
    return pooled


class TripleFeatureBuilder:
    """Feature rows for every triple of a question's working graph.

    A row is ``[query | head text | relation text | tail text | DDE]`` where
    the DDE block holds, per anchor slot, head-forward / head-backward /
    tail-forward / tail-backward one-hot codes.
    """

    def __init__(
        self,
        g: KnowledgeGraph,
        q: Question,
        encoder: TextEncoder | None = None,
        depth: int = DEFAULT_DDE_DEPTH,
        slots: int = DEFAULT_DDE_SLOTS,
        relation_text: Callable[[int], str] | None = None,
    ):
        self.g = g
        self.depth = depth
        self.slots = slots
        self.encoder = encoder or HashedBowEncoder()
        self.query_vec = self.encoder(q.text)
        self._relation_text = relation_text or (lambda rid: g.relation_label(rid))
        self._slot_codes = [
            compute_dde(g, slot, depth) if slot else None
            for slot in anchor_slots(set(q.query_entities), slots)
        ]
        self._empty = np.concatenate([_one_hot(None, depth), _one_hot(None, depth)])

    @property
    def dim(self) -> int:
        return 4 * self.encoder.dim + self.slots * 4 * (self.depth + 2)

    def _entity_codes(self, e: int) -> list[np.ndarray]:
        return [
            codes[e] if codes is not None else self._empty for codes in self._slot_codes
        ]

    def row(self, tid: int) -> np.ndarray:
        tr = self.g.triple(tid)
        blocks = [
            self.query_vec,
            self.encoder(self.g.entity_label(tr.head)),
            self.encoder(self._relation_text(tr.relation)),
            self.encoder(self.g.entity_label(tr.tail)),
        ]
        for head_code, tail_code in zip(self._entity_codes(tr.head), self._entity_codes(tr.tail)):
            half = len(head_code) // 2
            blocks += [head_code[:half], head_code[half:], tail_code[:half], tail_code[half:]]
        return np.concatenate(blocks)

    def matrix(self, tids: Iterable[int] | None = None) -> tuple[list[int], np.ndarray]:
        ids = list(tids) if tids is not None else [tid for tid, _ in self.g.iter_triples()]
        if not ids:
            return [], np.zeros((0, self.dim), dtype=np.float64)
        return ids, np.stack([self.row(tid) for tid in ids])


def entity_feature_matrix(
    g: KnowledgeGraph,
    q: Question,
    encoder: TextEncoder | None = None,
    depth: int = DEFAULT_DDE_DEPTH,
    slots: int = DEFAULT_DDE_SLOTS,
) -> np.ndarray:
    """Node features ``[query | entity text | DDE]`` for every entity id."""
    encoder = encoder or HashedBowEncoder()
    query_vec = encoder(q.text)
    slot_codes = [
        compute_dde(g, slot, depth) if slot else None
        for slot in anchor_slots(set(q.query_entities), slots)
    ]
    empty = np.concatenate([_one_hot(None, depth), _one_hot(None, depth)])
    rows = []
    for e in range(len(g.entities)):
        blocks = [query_vec, encoder(g.entity_label(e))]
        blocks += [codes[e] if codes is not None else empty for codes in slot_codes]
        rows.append(np.concatenate(blocks))
    return np.stack(rows) if rows else np.zeros((0, 2 * encoder.dim + slots * 2 * (depth + 2)))
