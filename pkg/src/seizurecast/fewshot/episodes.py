"""N-shot episodes over the labelled forecasting pool."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from seizurecast.errors import ProtocolError

SHOTS = (2, 3, 4)
POOL_PER_CLASS = 20


@dataclass(frozen=True)
class Episode:
    shot: int
    support: tuple[tuple[str, int], ...]
    query: tuple[tuple[str, int], ...]
    seed: int

    @property
    def support_ids(self) -> list[str]:
        return [i for i, _ in self.support]

    @property
    def query_ids(self) -> list[str]:
        return [i for i, _ in self.query]


def _pool_items(pool) -> list[tuple[str, int]]:
    items = []
    for entry in pool:
        if hasattr(entry, "meta"):
            items.append((entry.meta.id, int(entry.label)))
        else:
            cid, label = entry
            items.append((str(cid), int(label)))
    return items


def validate_pool(pool, per_class: int = POOL_PER_CLASS) -> list[tuple[str, int]]:
    items = _pool_items(pool)
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise ProtocolError("pool ids are not unique")
    labels = [y for _, y in items]
    if any(y not in (0, 1) for y in labels):
        raise ProtocolError("pool labels must be 0/1")
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    if n_pos != per_class or n_neg != per_class:
        raise ProtocolError(f"pool must hold {per_class} positives and {per_class} negatives, got {n_pos}/{n_neg}")
    return items


def sample_episode(pool, shot: int, seed: int, per_class: int = POOL_PER_CLASS) -> Episode:
    """Draw ``shot`` positives and ``shot`` negatives uniformly for support;
    every other pool clip becomes the query set. Both keep pool order."""
    if shot not in SHOTS:
        raise ProtocolError(f"shot must be one of {SHOTS}, got {shot}")
    items = validate_pool(pool, per_class)
    rng = np.random.default_rng(seed)
    pos = [k for k, (_, y) in enumerate(items) if y == 1]
    neg = [k for k, (_, y) in enumerate(items) if y == 0]
    chosen = set(rng.choice(pos, size=shot, replace=False).tolist()) | set(rng.choice(neg, size=shot, replace=False).tolist())
    support = tuple(items[k] for k in sorted(chosen, key=lambda k: (-items[k][1], k)))
    query = tuple(items[k] for k in range(len(items)) if k not in chosen)
    return Episode(shot, support, query, int(seed))


def check_episode(ep: Episode, pool, per_class: int = POOL_PER_CLASS) -> list[str]:
    """Protocol violations for ``ep`` (empty list when valid)."""
    problems = []
    try:
        items = validate_pool(pool, per_class)
    except ProtocolError as exc:
        return [str(exc)]
    known = dict(items)
    s_ids, q_ids = set(ep.support_ids), set(ep.query_ids)
    if s_ids & q_ids:
        problems.append("support and query overlap")
    if len(s_ids) != len(ep.support) or len(q_ids) != len(ep.query):
        problems.append("duplicate ids inside a set")
    if not (s_ids | q_ids) <= known.keys():
        problems.append("ids outside the pool")
    if any(known.get(i) != y for i, y in ep.support + ep.query):
        problems.append("labels disagree with pool")
    if sum(y for _, y in ep.support) != ep.shot or sum(1 - y for _, y in ep.support) != ep.shot:
        problems.append("support is not exactly N per class")
    if not ep.query:
        problems.append("empty query")
    return problems
