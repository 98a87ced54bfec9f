"""Link-prediction evaluation: ranked queries, hits@N, AMRI, rank spread.

Every test triple yields two queries: replace the head with every entity,
and replace the tail with every entity. Filtered evaluation removes
candidates that form known-true triples (union of all three splits) other
than the query's own answer. Ties are resolved by one of three rules:

* optimistic    rank above all equal-scored competitors
* pessimistic   rank below all equal-scored competitors
* realistic     the mean of the two (may be half-integer), the default

The adjusted mean rank index is ``1 - 2 * sum(rank_i - 1) / sum(|S_i| - 1)``
over candidate sets S_i: 1 means every answer ranked first, 0 matches the
expectation of a random scorer, negative is worse than random. The
unadjusted ratio ``2 * sum(rank_i - 1) / sum |S_i|`` is exposed for audit
as ``amri_raw``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IdError, ShapeError, UndefinedMetricError
from .models import EmbeddingModel, score_all_heads, score_all_tails
from .store import TripleStore

TIE_RULES = ("optimistic", "pessimistic", "realistic")


@dataclass
class EvalOptions:
    filtered: bool = True
    tie_rule: str = "realistic"
    hits_at: tuple[int, ...] = (1, 5, 10)
    sample_triples: int | None = None
    sample_seed: int = 0

    def validate(self) -> None:
        if self.tie_rule not in TIE_RULES:
            raise ConfigError(f"unknown tie rule {self.tie_rule!r}")
        if any(n < 1 for n in self.hits_at):
            raise ConfigError("hits cutoffs must be at least 1")
        if self.sample_triples is not None and self.sample_triples < 1:
            raise ConfigError("sample_triples must be positive")


def rank_with_ties(scores: np.ndarray, true_index: int, tie_rule: str = "realistic",
                   candidate_mask: np.ndarray | None = None):
    """Rank of the true candidate within (optionally masked) scores.

    Returns (rank, candidate_count). The true candidate always competes,
    whatever the mask says.
    """
    if tie_rule not in TIE_RULES:
        raise ConfigError(f"unknown tie rule {tie_rule!r}")
    scores = np.asarray(scores)
    s_true = scores[true_index]
    if candidate_mask is None:
        greater = int(np.count_nonzero(scores > s_true))
        ties = int(np.count_nonzero(scores == s_true)) - 1
        size = scores.shape[0]
    else:
        cand = scores[candidate_mask]
        greater = int(np.count_nonzero(cand > s_true))
        ties = int(np.count_nonzero(cand == s_true))
        size = int(candidate_mask.sum())
        if candidate_mask[true_index]:
            ties -= 1
        else:
            size += 1
    if tie_rule == "optimistic":
        rank = greater + 1.0
    elif tie_rule == "pessimistic":
        rank = greater + ties + 1.0
    else:
        rank = greater + 1.0 + ties / 2.0
    return rank, size


def _known_maps(store: TripleStore):
    by_query_tail: dict[tuple[int, int], list[int]] = {}
    by_query_head: dict[tuple[int, int], list[int]] = {}
    for h, r, t in store.as_array().tolist():
        by_query_tail.setdefault((h, r), []).append(t)
        by_query_head.setdefault((r, t), []).append(h)
    return (
        {k: np.asarray(v, dtype=np.int64) for k, v in by_query_tail.items()},
        {k: np.asarray(v, dtype=np.int64) for k, v in by_query_head.items()},
    )


def _select_triples(store: TripleStore, split: str, options: EvalOptions) -> np.ndarray:
    triples = store.split_triples(split)
    if options.sample_triples is not None and options.sample_triples < triples.shape[0]:
        rng = np.random.default_rng(options.sample_seed)
        pick = rng.choice(triples.shape[0], size=options.sample_triples, replace=False)
        triples = triples[np.sort(pick)]
    return triples


def _check_eval_ids(model: EmbeddingModel, store: TripleStore, triples: np.ndarray) -> None:
    if triples.size == 0:
        return
    ents = triples[:, (0, 2)]
    if ents.max() >= model.num_entities or triples[:, 1].max() >= model.num_relations:
        for h, r, t in triples.tolist():
            if h >= model.num_entities or t >= model.num_entities or r >= model.num_relations:
                raise IdError(f"query ({h}, {r}, {t}) uses ids unseen by the model")


def rank_queries(model: EmbeddingModel, store: TripleStore, split: str = "test",
                 filtered: bool = True, tie_rule: str = "realistic",
                 options: EvalOptions | None = None):
    """Ranks and candidate-set sizes for all queries of a split.

    Output order is all head-replacement queries in split order, then all
    tail-replacement queries in split order. Returns (ranks, sizes) as
    float64 and int64 arrays of length 2 * n_triples.
    """
    if options is None:
        options = EvalOptions(filtered=filtered, tie_rule=tie_rule)
    options.validate()
    triples = _select_triples(store, split, options)
    _check_eval_ids(model, store, triples)
    n = triples.shape[0]
    num_entities = model.num_entities
    ranks = np.empty(2 * n, dtype=np.float64)
    sizes = np.empty(2 * n, dtype=np.int64)

    by_query_tail = by_query_head = None
    if options.filtered:
        by_query_tail, by_query_head = _known_maps(store)

    cache: dict = {}
    for i, (h, r, t) in enumerate(triples.tolist()):
        scores = score_all_heads(model, r, t, cache=cache)
        mask = None
        if options.filtered:
            known = by_query_head.get((r, t))
            if known is not None and known.shape[0] > 1:
                mask = np.ones(num_entities, dtype=bool)
                mask[known] = False
                mask[h] = True
        ranks[i], sizes[i] = rank_with_ties(scores, h, options.tie_rule, mask)

        scores = score_all_tails(model, h, r, cache=cache)
        mask = None
        if options.filtered:
            known = by_query_tail.get((h, r))
            if known is not None and known.shape[0] > 1:
                mask = np.ones(num_entities, dtype=bool)
                mask[known] = False
                mask[t] = True
        ranks[n + i], sizes[n + i] = rank_with_ties(scores, t, options.tie_rule, mask)
    return ranks, sizes


def hits_at_n(ranks, n: int) -> float:
    """Fraction of queries ranked at or above the cutoff."""
    if n < 1:
        raise ConfigError("hits cutoff must be at least 1")
    arr = np.asarray(ranks, dtype=np.float64)
    if arr.size == 0:
        raise UndefinedMetricError("hits@N over zero queries")
    return float(np.count_nonzero(arr <= n) / arr.size)


def amri(ranks, candidate_sizes) -> float:
    """Adjusted mean rank index: 1 - 2 sum(rank - 1) / sum(|S| - 1)."""
    r = np.asarray(ranks, dtype=np.float64)
    s = np.asarray(candidate_sizes, dtype=np.float64)
    if r.shape != s.shape:
        raise ShapeError(f"ranks shape {r.shape} != sizes shape {s.shape}")
    if r.size == 0:
        raise UndefinedMetricError("AMRI over zero queries")
    denom = float((s - 1.0).sum())
    if denom == 0.0:
        return 1.0  # every candidate set is a singleton, all ranks forced to 1
    return 1.0 - 2.0 * float((r - 1.0).sum()) / denom


def amri_raw(ranks, candidate_sizes) -> float:
    """Unadjusted ratio 2 sum(rank - 1) / sum |S|, kept for audit."""
    r = np.asarray(ranks, dtype=np.float64)
    s = np.asarray(candidate_sizes, dtype=np.float64)
    if r.shape != s.shape:
        raise ShapeError(f"ranks shape {r.shape} != sizes shape {s.shape}")
    if r.size == 0:
        raise UndefinedMetricError("AMRI over zero queries")
    total = float(s.sum())
    if total == 0.0:
        return 0.0
    return 2.0 * float((r - 1.0).sum()) / total


def rank_stddev(ranks) -> float:
    """Population standard deviation of the ranks."""
    arr = np.asarray(ranks, dtype=np.float64)
    if arr.size == 0:
        raise UndefinedMetricError("rank stddev over zero queries")
    return float(np.sqrt(np.mean(np.square(arr - arr.mean()))))


@dataclass
class RankingReport:
    ranks: np.ndarray
    candidate_sizes: np.ndarray
    hits: dict[int, float]
    amri: float
    amri_raw: float
    rank_stddev: float
    eval_seconds: float
    filtered: bool
    tie_rule: str
    head_hits: dict[int, float] = field(default_factory=dict)
    tail_hits: dict[int, float] = field(default_factory=dict)

    def metric_rows(self):
        """(name, value) pairs, stable order, no wall-clock entries."""
        rows = [(f"hits@{n}", v) for n, v in sorted(self.hits.items())]
        rows += [(f"head_hits@{n}", v) for n, v in sorted(self.head_hits.items())]
        rows += [(f"tail_hits@{n}", v) for n, v in sorted(self.tail_hits.items())]
        rows += [
            ("amri", self.amri),
            ("amri_raw", self.amri_raw),
            ("rank_stddev", self.rank_stddev),
            ("num_queries", float(self.ranks.size)),
        ]
        return rows

    def to_text(self) -> str:
        lines = [f"{name} = {value:.6f}" for name, value in self.metric_rows()]
        lines.append(f"filtered = {self.filtered}")
        lines.append(f"tie_rule = {self.tie_rule}")
        lines.append(f"eval_seconds = {self.eval_seconds:.3f}")
        return "\n".join(lines) + "\n"

    def write_metrics_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("metric,value\n")
            for name, value in self.metric_rows():
                f.write(f"{name},{value!r}\n")

    def write_ranks_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("query,rank,candidates\n")
            for i, (rank, size) in enumerate(zip(self.ranks.tolist(), self.candidate_sizes.tolist())):
                f.write(f"{i},{rank!r},{size}\n")


def evaluate(model: EmbeddingModel, store: TripleStore, split: str = "test",
             options: EvalOptions | None = None) -> RankingReport:
    """Rank every query of a split and aggregate the ranking metrics."""
    if options is None:
        options = EvalOptions()
    options.validate()
    t0 = time.perf_counter()
    ranks, sizes = rank_queries(model, store, split=split, options=options)
    if ranks.size == 0:
        raise UndefinedMetricError(f"split {split!r} has no triples to evaluate")
    n = ranks.size // 2
    hits = {k: hits_at_n(ranks, k) for k in options.hits_at}
    head_hits = {k: hits_at_n(ranks[:n], k) for k in options.hits_at}
    tail_hits = {k: hits_at_n(ranks[n:], k) for k in options.hits_at}
    return RankingReport(
        ranks=ranks,
        candidate_sizes=sizes,
        hits=hits,
        amri=amri(ranks, sizes),
        amri_raw=amri_raw(ranks, sizes),
        rank_stddev=rank_stddev(ranks),
        eval_seconds=time.perf_counter() - t0,
        filtered=options.filtered,
        tie_rule=options.tie_rule,
        head_hits=head_hits,
        tail_hits=tail_hits,
    )
