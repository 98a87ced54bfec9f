"""Plausibility screening of triples by score standardization.

A batch of triples is scored by a trained model; scores are standardized
as z = (x - mean) / stddev with the *population* standard deviation, and
records falling below a z threshold (default -1) are flagged as suspect.
Two modes share the same flagging rule:

* self-fit   the reference distribution is fit on the assessed batch itself
* streaming  a frozen reference distribution standardizes incoming batches
             one by one, so single records can be screened

Self-fit can optionally standardize within each relation instead of
globally, since raw scores of distance-style models are not comparable
across relations with different typical offsets.

Triples that reference ids outside the model's tables are flagged with the
reason "out-of-vocabulary" instead of raising; their z is -inf so they sort
first, and their raw score is NaN.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDistributionError, ParseError
from .models import EmbeddingModel, score
from .store import Triple, TripleStore

REASON_LOW_Z = "low-z"
REASON_OOV = "out-of-vocabulary"


@dataclass(frozen=True)
class ScoreDistribution:
    mean: float
    stddev: float
    n: int


def fit_distribution(scores) -> ScoreDistribution:
    """Mean and population standard deviation of a score sample."""
    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    if arr.size < 2:
        raise DegenerateDistributionError(f"need at least 2 scores, got {arr.size}")
    mean = float(arr.mean())
    stddev = float(np.sqrt(np.mean(np.square(arr - mean))))
    if stddev == 0.0:
        raise DegenerateDistributionError("scores have zero spread")
    return ScoreDistribution(mean, stddev, int(arr.size))


def zscores(scores, distribution: ScoreDistribution) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64)
    return (arr - distribution.mean) / distribution.stddev


@dataclass(frozen=True)
class AnomalyRecord:
    index: int
    triple: Triple
    raw_score: float
    z_score: float
    flagged: bool
    reason: str


@dataclass
class AnomalyReport:
    records: list[AnomalyRecord]
    distribution: ScoreDistribution | None
    threshold: float

    @property
    def flagged(self) -> list[AnomalyRecord]:
        return [rec for rec in self.records if rec.flagged]


def _normalize_batch(batch) -> list[Triple]:
    out = []
    for item in batch:
        h, r, t = item
        out.append(Triple(int(h), int(r), int(t)))
    return out


def _split_vocabulary(model: EmbeddingModel, triples: list[Triple]):
    in_vocab, oov = [], []
    for i, trip in enumerate(triples):
        known = (
            0 <= trip.head < model.num_entities
            and 0 <= trip.tail < model.num_entities
            and 0 <= trip.relation < model.num_relations
        )
        (in_vocab if known else oov).append(i)
    return in_vocab, oov


def _score_some(model: EmbeddingModel, triples: list[Triple], indices: list[int]) -> np.ndarray:
    batch = np.asarray([triples[i] for i in indices], dtype=np.int64).reshape(-1, 3)
    return score(model, batch).astype(np.float64)


def _build_report(triples, in_vocab, oov, raw, z, distribution, threshold) -> AnomalyReport:
    records = []
    for pos, i in enumerate(in_vocab):
        zi = float(z[pos])
        flagged = zi < threshold
        records.append(AnomalyRecord(i, triples[i], float(raw[pos]), zi,
                                     flagged, REASON_LOW_Z if flagged else ""))
    for i in oov:
        records.append(AnomalyRecord(i, triples[i], float("nan"), float("-inf"),
                                     True, REASON_OOV))
    records.sort(key=lambda rec: (rec.z_score, rec.index))
    return AnomalyReport(records, distribution, threshold)


def assess(model: EmbeddingModel, batch, threshold: float = -1.0,
           per_relation: bool = False) -> AnomalyReport:
    """Self-fit screening: standardize the batch against itself.

    The reference distribution is fit on the in-vocabulary scores of the
    batch, which therefore needs at least two of them and nonzero spread.
    With ``per_relation`` each relation's scores are standardized against
    that relation's own fit (every relation present then needs two scores
    and spread of its own); the report's ``distribution`` is None since no
    single fit applies.
    """
    triples = _normalize_batch(batch)
    in_vocab, oov = _split_vocabulary(model, triples)
    if len(in_vocab) < 2:
        raise DegenerateDistributionError(
            f"self-fit assessment needs at least 2 in-vocabulary triples, got {len(in_vocab)}")
    raw = _score_some(model, triples, in_vocab)
    if not per_relation:
        distribution = fit_distribution(raw)
        return _build_report(triples, in_vocab, oov, raw, zscores(raw, distribution),
                             distribution, threshold)
    relations = np.asarray([triples[i].relation for i in in_vocab])
    z = np.empty_like(raw)
    for rel in np.unique(relations):
        group = relations == rel
        try:
            dist = fit_distribution(raw[group])
        except DegenerateDistributionError as exc:
            raise DegenerateDistributionError(f"relation {int(rel)}: {exc}") from None
        z[group] = zscores(raw[group], dist)
    return _build_report(triples, in_vocab, oov, raw, z, None, threshold)


def assess_streaming(model: EmbeddingModel, reference: ScoreDistribution, batch,
                     threshold: float = -1.0) -> AnomalyReport:
    """Screen a batch (possibly empty or singleton) against a frozen reference."""
    triples = _normalize_batch(batch)
    in_vocab, oov = _split_vocabulary(model, triples)
    raw = _score_some(model, triples, in_vocab)
    return _build_report(triples, in_vocab, oov, raw, zscores(raw, reference),
                         reference, threshold)


def write_report_csv(report: AnomalyReport, store: TripleStore, path) -> None:
    """Anomaly records as CSV with labels, in report (ascending z) order."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["head", "relation", "tail", "score", "z", "flagged", "reason"])
        for rec in report.records:
            trip = rec.triple
            in_vocab = (
                0 <= trip.head < store.num_entities
                and 0 <= trip.tail < store.num_entities
                and 0 <= trip.relation < store.num_relations
            )
            if in_vocab:
                h, r, t = store.labels_of(trip)
            else:
                h, r, t = str(trip.head), str(trip.relation), str(trip.tail)
            writer.writerow([h, r, t, repr(rec.raw_score), repr(rec.z_score),
                             str(rec.flagged).lower(), rec.reason])


def save_distribution(distribution: ScoreDistribution, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"mean = {distribution.mean!r}\n")
        f.write(f"stddev = {distribution.stddev!r}\n")
        f.write(f"n = {distribution.n}\n")


def load_distribution(path) -> ScoreDistribution:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(path, line_no, "expected key = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    try:
        return ScoreDistribution(float(values["mean"]), float(values["stddev"]), int(values["n"]))
    except (KeyError, ValueError) as exc:
        raise ParseError(path, 0, f"incomplete distribution file: {exc}") from None
