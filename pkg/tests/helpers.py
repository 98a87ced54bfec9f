"""Shared builders and independent oracles used across test modules."""

from __future__ import annotations

import numpy as np

from edgekg.store import Dictionary, Triple, TripleStore


def make_store(triples, num_entities=None, num_relations=None, splits=None) -> TripleStore:
    """Store over synthetic labels e0.., r0.. with all triples in one list.

    ``splits`` defaults to everything in train; pass a dict of index lists
    to override.
    """
    trips = [Triple(*t) for t in triples]
    if num_entities is None:
        num_entities = 1 + max(max(t.head, t.tail) for t in trips)
    if num_relations is None:
        num_relations = 1 + max(t.relation for t in trips)
    ents = Dictionary(f"e{i}" for i in range(num_entities))
    rels = Dictionary(f"r{i}" for i in range(num_relations))
    if splits is None:
        splits = {"train": list(range(len(trips))), "valid": [], "test": []}
    return TripleStore(trips, ents, rels, splits)


def oracle_rank(scores, true_index, tie_rule, mask=None) -> float:
    """Rank of the true candidate by explicit pairwise counting.

    Independent of the library's implementation: walks every allowed
    candidate and counts strictly-better and tied scores directly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    true_score = scores[true_index]
    greater = ties = 0
    for j in range(scores.shape[0]):
        if j == true_index:
            continue
        if mask is not None and not mask[j]:
            continue
        if scores[j] > true_score:
            greater += 1
        elif scores[j] == true_score:
            ties += 1
    if tie_rule == "optimistic":
        return float(greater + 1)
    if tie_rule == "pessimistic":
        return float(greater + ties + 1)
    return greater + 1 + ties / 2.0


def numeric_gradient(fn, x, eps=1e-5) -> np.ndarray:
    """Central finite differences of a scalar function over a flat array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    grad = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        grad[i] = (hi - lo) / (2 * eps)
    return out
