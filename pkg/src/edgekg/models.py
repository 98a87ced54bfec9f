"""Embedding model storage, initialization, scoring, and analytic gradients.

Seven model families over integer-encoded triples, all oriented so that a
higher score means a more plausible triple (distance families return the
negated distance):

* transe    -|| h + r - t ||            (L1 by default, L2 selectable)
* transr    -|| M_r h + r - M_r t ||    per-relation d x d projection
* distmult  sum_i h_i r_i t_i
* complex   Re(sum_i h_i r_i conj(t_i)) over complex-valued h, r, t
* hole      r . (h corr t), circular correlation computed directly in O(d^2)
* rotate    -|| h o e^{i theta} - t ||  complex entities, phase relations
* pairre    -|| h' o r_h - t' o r_t ||  entities L2-normalized before scoring

Parameters live in flat contiguous row-major float32 tables (float64 is
available for gradient checking). Complex-valued entity rows interleave
real and imaginary parts: [re0, im0, re1, im1, ...].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IdError, ShapeError

TRANSE = "transe"
TRANSR = "transr"
DISTMULT = "distmult"
COMPLEX = "complex"
HOLE = "hole"
ROTATE = "rotate"
PAIRRE = "pairre"
MODEL_KINDS = (TRANSE, TRANSR, DISTMULT, COMPLEX, HOLE, ROTATE, PAIRRE)

DISTANCE_KINDS = (TRANSE, TRANSR, ROTATE, PAIRRE)
_DEFAULT_NORM = {TRANSE: 1, TRANSR: 2, ROTATE: 1, PAIRRE: 1}

# Memory cap for kinds that materialize batch x dim x dim intermediates.
_CHUNK = 256


def entity_width(kind: str, dim: int) -> int:
    return 2 * dim if kind in (COMPLEX, ROTATE) else dim


def relation_width(kind: str, dim: int) -> int:
    if kind == ROTATE:
        return dim  # one rotation phase per dimension
    if kind in (COMPLEX, PAIRRE):
        return 2 * dim
    return dim


@dataclass
class EmbeddingModel:
    kind: str
    dim: int
    entity_table: np.ndarray
    relation_table: np.ndarray
    projection_table: np.ndarray | None = None
    norm: int = 1
    masked: bool = False

    @property
    def num_entities(self) -> int:
        return self.entity_table.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation_table.shape[0]

    @property
    def dtype(self):
        return self.entity_table.dtype

    def tables(self) -> dict[str, np.ndarray]:
        out = {"entity": self.entity_table, "relation": self.relation_table}
        if self.projection_table is not None:
            out["projection"] = self.projection_table
        return out

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            self.kind,
            self.dim,
            self.entity_table.copy(),
            self.relation_table.copy(),
            None if self.projection_table is None else self.projection_table.copy(),
            self.norm,
            self.masked,
        )

    def parameter_count(self) -> int:
        return sum(int(t.size) for t in self.tables().values())


def init_model(kind: str, dim: int, num_entities: int, num_relations: int,
               seed: int = 0, dtype=np.float32, norm: int | None = None) -> EmbeddingModel:
    """Deterministically initialize a model.

    Entity and relation vectors are uniform in [-6/sqrt(dim), +6/sqrt(dim)];
    rotate relations are phases uniform in (-pi, pi]; transr projections
    start as the identity.
    """
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    if dim < 1 or num_entities < 1 or num_relations < 1:
        raise ConfigError("dim and table sizes must be positive")
    if norm is None:
        norm = _DEFAULT_NORM.get(kind, 2)
    if norm not in (1, 2):
        raise ConfigError(f"norm must be 1 or 2, got {norm!r}")

    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, size=(num_entities, entity_width(kind, dim)))
    if kind == ROTATE:
        # negate a [-pi, pi) draw to land in (-pi, pi]
        rel = -rng.uniform(-np.pi, np.pi, size=(num_relations, dim))
    else:
        rel = rng.uniform(-bound, bound, size=(num_relations, relation_width(kind, dim)))
    proj = None
    if kind == TRANSR:
        proj = np.tile(np.eye(dim).reshape(1, dim * dim), (num_relations, 1))
        proj = np.ascontiguousarray(proj, dtype=dtype)
    return EmbeddingModel(kind, dim, ent.astype(dtype), rel.astype(dtype), proj, norm)


def _as_batch(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeError(f"triple batch must have shape (n, 3), got {arr.shape}")
    return arr


def _check_ids(model: EmbeddingModel, batch: np.ndarray) -> None:
    ents = batch[:, (0, 2)]
    if ents.size and (ents.min() < 0 or ents.max() >= model.num_entities):
        bad = batch[(ents < 0).any(axis=1) | (ents >= model.num_entities).any(axis=1)][0]
        raise IdError(f"entity id out of range in triple {tuple(bad.tolist())}")
    rels = batch[:, 1]
    if rels.size and (rels.min() < 0 or rels.max() >= model.num_relations):
        bad = batch[(rels < 0) | (rels >= model.num_relations)][0]
        raise IdError(f"relation id out of range in triple {tuple(bad.tolist())}")


def _re(x: np.ndarray) -> np.ndarray:
    return x[:, 0::2]


def _im(x: np.ndarray) -> np.ndarray:
    return x[:, 1::2]


def _interleave(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    out = np.empty((re.shape[0], 2 * re.shape[1]), dtype=re.dtype)
    out[:, 0::2] = re
    out[:, 1::2] = im
    return out


def _batch_norm(x: np.ndarray, p: int) -> np.ndarray:
    if p == 1:
        return np.abs(x).sum(axis=1)
    return np.sqrt(np.square(x).sum(axis=1))


_corr_index_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _circ_indices(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Index grids for circular correlation and convolution at a given dim."""
    cached = _corr_index_cache.get(dim)
    if cached is None:
        i = np.arange(dim)
        corr = (i[:, None] + i[None, :]) % dim  # corr[i, k] = (i + k) mod d
        conv = (i[None, :] - i[:, None]) % dim  # conv[i, j] = (j - i) mod d
        cached = (corr, conv)
        _corr_index_cache[dim] = cached
    return cached


def _circular_correlation(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(x corr y)_k = sum_i x_i y_{(i+k) mod d}, rows independently."""
    corr, _ = _circ_indices(x.shape[1])
    out = np.empty_like(x)
    for lo in range(0, x.shape[0], _CHUNK):
        hi = lo + _CHUNK
        out[lo:hi] = np.einsum("bi,bik->bk", x[lo:hi], y[lo:hi][:, corr])
    return out


def _circular_convolution(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(x conv y)_j = sum_i x_i y_{(j-i) mod d}, rows independently."""
    _, conv = _circ_indices(x.shape[1])
    out = np.empty_like(x)
    for lo in range(0, x.shape[0], _CHUNK):
        hi = lo + _CHUNK
        out[lo:hi] = np.einsum("bi,bij->bj", x[lo:hi], y[lo:hi][:, conv])
    return out


def _l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.square(x).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1)
    return x / safe


# ---------------------------------------------------------------------------
# scoring


def score(model: EmbeddingModel, triples) -> np.ndarray:
    """Score a batch of triples; returns one value per triple in input order."""
    batch = _as_batch(triples)
    _check_ids(model, batch)
    h, r, t = batch[:, 0], batch[:, 1], batch[:, 2]
    eh = model.entity_table[h]
    et = model.entity_table[t]
    rel = model.relation_table[r]
    kind = model.kind

    if kind == TRANSE:
        return -_batch_norm(eh + rel - et, model.norm)

    if kind == TRANSR:
        d = model.dim
        out = np.empty(batch.shape[0], dtype=model.dtype)
        for lo in range(0, batch.shape[0], _CHUNK):
            hi = lo + _CHUNK
            proj = model.projection_table[r[lo:hi]].reshape(-1, d, d)
            u = np.einsum("bij,bj->bi", proj, eh[lo:hi] - et[lo:hi]) + rel[lo:hi]
            out[lo:hi] = -_batch_norm(u, model.norm)
        return out

    if kind == DISTMULT:
        return (eh * rel * et).sum(axis=1)

    if kind == COMPLEX:
        a, b = _re(eh), _im(eh)
        c, dd = _re(rel), _im(rel)
        e, f = _re(et), _im(et)
        return (a * c * e + b * c * f + a * dd * f - b * dd * e).sum(axis=1)

    if kind == HOLE:
        return (rel * _circular_correlation(eh, et)).sum(axis=1)

    if kind == ROTATE:
        a, b = _re(eh), _im(eh)
        cos, sin = np.cos(rel), np.sin(rel)
        u_re = a * cos - b * sin - _re(et)
        u_im = a * sin + b * cos - _im(et)
        if model.norm == 1:
            return -np.hypot(u_re, u_im).sum(axis=1)
        return -np.sqrt((np.square(u_re) + np.square(u_im)).sum(axis=1))

    if kind == PAIRRE:
        hn = _l2_normalize_rows(eh)
        tn = _l2_normalize_rows(et)
        d = model.dim
        u = hn * rel[:, :d] - tn * rel[:, d:]
        return -_batch_norm(u, model.norm)

    raise ConfigError(f"unknown model kind {kind!r}")


def score_all_tails(model: EmbeddingModel, head: int, relation: int, cache: dict | None = None) -> np.ndarray:
    """Scores of (head, relation, e) for every entity e, as one array."""
    return _score_against_all(model, relation, head, tail_side=True, cache=cache)


def score_all_heads(model: EmbeddingModel, relation: int, tail: int, cache: dict | None = None) -> np.ndarray:
    """Scores of (e, relation, tail) for every entity e, as one array."""
    return _score_against_all(model, relation, tail, tail_side=False, cache=cache)


def _cached(cache: dict | None, key, build):
    if cache is None:
        return build()
    if key not in cache:
        if len(cache) > 96:
            cache.clear()
        cache[key] = build()
    return cache[key]


def _score_against_all(model: EmbeddingModel, relation: int, anchor: int,
                       tail_side: bool, cache: dict | None) -> np.ndarray:
    if not 0 <= anchor < model.num_entities:
        raise IdError(f"entity id {anchor} out of range")
    if not 0 <= relation < model.num_relations:
        raise IdError(f"relation id {relation} out of range")
    ent = model.entity_table
    rel = model.relation_table[relation]
    kind = model.kind
    a = ent[anchor]

    if kind == TRANSE:
        target = a + rel if tail_side else rel - a  # tail: q - T ; head: H + (r - t)
        diff = (target - ent) if tail_side else (ent + target)
        return -_batch_norm(diff, model.norm)

    if kind == TRANSR:
        d = model.dim
        proj = model.projection_table[relation].reshape(d, d)
        projected = _cached(cache, ("transr_proj", relation), lambda: ent @ proj.T)
        q = projected[anchor]
        diff = (q + rel) - projected if tail_side else projected + (rel - q)
        return -_batch_norm(diff, model.norm)

    if kind == DISTMULT:
        return ent @ (a * rel)

    if kind == COMPLEX:
        e_re = _cached(cache, ("re",), lambda: np.ascontiguousarray(_re(ent)))
        e_im = _cached(cache, ("im",), lambda: np.ascontiguousarray(_im(ent)))
        ar, ai = a[0::2], a[1::2]
        c, dd = rel[0::2], rel[1::2]
        if tail_side:
            # group score by tail components e, f
            return e_re @ (ar * c - ai * dd) + e_im @ (ai * c + ar * dd)
        # group by head components a, b (anchor is the tail here)
        return e_re @ (c * ar + dd * ai) + e_im @ (c * ai - dd * ar)

    if kind == HOLE:
        if tail_side:
            vec = _circular_convolution(a.reshape(1, -1), rel.reshape(1, -1))[0]
        else:
            vec = _circular_correlation(rel.reshape(1, -1), a.reshape(1, -1))[0]
        return ent @ vec

    if kind == ROTATE:
        e_re = _cached(cache, ("re",), lambda: np.ascontiguousarray(_re(ent)))
        e_im = _cached(cache, ("im",), lambda: np.ascontiguousarray(_im(ent)))
        ar, ai = a[0::2], a[1::2]
        cos, sin = np.cos(rel), np.sin(rel)
        if tail_side:
            q_re = ar * cos - ai * sin
            q_im = ar * sin + ai * cos
        else:
            # |h e^{i theta} - t| = |h - t e^{-i theta}|
            q_re = ar * cos + ai * sin
            q_im = ai * cos - ar * sin
        u_re = q_re[None, :] - e_re
        u_im = q_im[None, :] - e_im
        if model.norm == 1:
            return -np.hypot(u_re, u_im).sum(axis=1)
        return -np.sqrt((np.square(u_re) + np.square(u_im)).sum(axis=1))

    if kind == PAIRRE:
        d = model.dim
        normalized = _cached(cache, ("pairre_norm",), lambda: _l2_normalize_rows(ent))
        an = normalized[anchor]
        if tail_side:
            q = an * rel[:d]
            diff = q[None, :] - normalized * rel[d:]
        else:
            q = an * rel[d:]
            diff = normalized * rel[:d] - q[None, :]
        return -_batch_norm(diff, model.norm)

    raise ConfigError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# gradients


@dataclass
class Gradients:
    """Per-row gradients of a weighted score sum; untouched rows are absent."""

    entity_rows: np.ndarray
    entity: np.ndarray
    relation_rows: np.ndarray
    relation: np.ndarray
    projection_rows: np.ndarray | None = None
    projection: np.ndarray | None = None

    def items(self):
        yield "entity", self.entity_rows, self.entity
        yield "relation", self.relation_rows, self.relation
        if self.projection_rows is not None:
            yield "projection", self.projection_rows, self.projection


def _distance_upstream(u: np.ndarray, norm: int, weight: np.ndarray) -> np.ndarray:
    """d(sum_b w_b * (-||u_b||)) / du, for L1 or L2 row norms."""
    if norm == 1:
        return -np.sign(u) * weight[:, None]
    n = np.sqrt(np.square(u).sum(axis=1, keepdims=True))
    unit = np.where(n > 0, u / np.where(n > 0, n, 1), 0)
    return -unit * weight[:, None]


def grad(model: EmbeddingModel, triples, upstream) -> Gradients:
    """Analytic gradient of sum_i upstream_i * score(triple_i) w.r.t. touched rows."""
    batch = _as_batch(triples)
    _check_ids(model, batch)
    weight = np.asarray(upstream, dtype=model.dtype).reshape(-1)
    if weight.shape[0] != batch.shape[0]:
        raise ShapeError(f"upstream length {weight.shape[0]} != batch length {batch.shape[0]}")
    h, r, t = batch[:, 0], batch[:, 1], batch[:, 2]
    eh = model.entity_table[h]
    et = model.entity_table[t]
    rel = model.relation_table[r]
    kind = model.kind
    gproj_flat = None

    if kind == TRANSE:
        gu = _distance_upstream(eh + rel - et, model.norm, weight)
        gh, gr, gt = gu, gu.copy(), -gu

    elif kind == TRANSR:
        d = model.dim
        n = batch.shape[0]
        gh = np.empty_like(eh)
        gt = np.empty_like(et)
        gr = np.empty_like(rel)
        gproj_flat = np.empty((n, d * d), dtype=model.dtype)
        for lo in range(0, n, _CHUNK):
            hi = lo + _CHUNK
            proj = model.projection_table[r[lo:hi]].reshape(-1, d, d)
            diff = eh[lo:hi] - et[lo:hi]
            u = np.einsum("bij,bj->bi", proj, diff) + rel[lo:hi]
            gu = _distance_upstream(u, model.norm, weight[lo:hi])
            ghd = np.einsum("bij,bi->bj", proj, gu)  # M^T gu
            gh[lo:hi] = ghd
            gt[lo:hi] = -ghd
            gr[lo:hi] = gu
            gproj_flat[lo:hi] = np.einsum("bi,bj->bij", gu, diff).reshape(-1, d * d)

    elif kind == DISTMULT:
        w = weight[:, None]
        gh = w * rel * et
        gr = w * eh * et
        gt = w * eh * rel

    elif kind == COMPLEX:
        a, b = _re(eh), _im(eh)
        c, dd = _re(rel), _im(rel)
        e, f = _re(et), _im(et)
        w = weight[:, None]
        gh = _interleave(w * (c * e + dd * f), w * (c * f - dd * e))
        gr = _interleave(w * (a * e + b * f), w * (a * f - b * e))
        gt = _interleave(w * (a * c - b * dd), w * (b * c + a * dd))

    elif kind == HOLE:
        w = weight[:, None]
        gh = w * _circular_correlation(rel, et)
        gt = w * _circular_convolution(eh, rel)
        gr = w * _circular_correlation(eh, et)

    elif kind == ROTATE:
        a, b = _re(eh), _im(eh)
        e, f = _re(et), _im(et)
        cos, sin = np.cos(rel), np.sin(rel)
        rot_re = a * cos - b * sin
        rot_im = a * sin + b * cos
        u_re = rot_re - e
        u_im = rot_im - f
        if model.norm == 1:
            m = np.hypot(u_re, u_im)
            safe = np.where(m > 0, m, 1)
            gu_re = -np.where(m > 0, u_re / safe, 0) * weight[:, None]
            gu_im = -np.where(m > 0, u_im / safe, 0) * weight[:, None]
        else:
            n = np.sqrt((np.square(u_re) + np.square(u_im)).sum(axis=1, keepdims=True))
            safe = np.where(n > 0, n, 1)
            gu_re = -np.where(n > 0, u_re / safe, 0) * weight[:, None]
            gu_im = -np.where(n > 0, u_im / safe, 0) * weight[:, None]
        gh = _interleave(gu_re * cos + gu_im * sin, -gu_re * sin + gu_im * cos)
        gt = _interleave(-gu_re, -gu_im)
        gr = gu_re * (-rot_im) + gu_im * rot_re

    elif kind == PAIRRE:
        d = model.dim
        rh, rt = rel[:, :d], rel[:, d:]
        nh = np.sqrt(np.square(eh).sum(axis=1, keepdims=True))
        nt = np.sqrt(np.square(et).sum(axis=1, keepdims=True))
        hn = np.where(nh > 0, eh / np.where(nh > 0, nh, 1), 0)
        tn = np.where(nt > 0, et / np.where(nt > 0, nt, 1), 0)
        gu = _distance_upstream(hn * rh - tn * rt, model.norm, weight)
        v = gu * rh
        wv = -gu * rt
        # back through row normalization: (I - x x^T) / ||x||
        gh = np.where(nh > 0, (v - hn * (hn * v).sum(axis=1, keepdims=True)) / np.where(nh > 0, nh, 1), 0)
        gt = np.where(nt > 0, (wv - tn * (tn * wv).sum(axis=1, keepdims=True)) / np.where(nt > 0, nt, 1), 0)
        gr = np.concatenate([gu * hn, -gu * tn], axis=1)

    else:
        raise ConfigError(f"unknown model kind {kind!r}")

    ent_ids = np.concatenate([h, t])
    ent_grads = np.concatenate([gh, gt], axis=0)
    ent_rows, inv = np.unique(ent_ids, return_inverse=True)
    ent_acc = np.zeros((ent_rows.shape[0], ent_grads.shape[1]), dtype=model.dtype)
    np.add.at(ent_acc, inv, ent_grads)

    rel_rows, rinv = np.unique(r, return_inverse=True)
    rel_acc = np.zeros((rel_rows.shape[0], gr.shape[1]), dtype=model.dtype)
    np.add.at(rel_acc, rinv, gr)

    proj_rows = proj_acc = None
    if gproj_flat is not None:
        proj_rows = rel_rows
        proj_acc = np.zeros((rel_rows.shape[0], gproj_flat.shape[1]), dtype=model.dtype)
        np.add.at(proj_acc, rinv, gproj_flat)

    return Gradients(ent_rows, ent_acc, rel_rows, rel_acc, proj_rows, proj_acc)


# ---------------------------------------------------------------------------
# constraints


def project_constraints(model: EmbeddingModel) -> EmbeddingModel:
    """Clamp parameters back into their model family's feasible region, in place.

    Translation-family entity rows (transe, transr, pairre) are rescaled to
    L2 norm at most 1; rotate phases are wrapped into (-pi, pi]. Applying the
    projection twice changes nothing, bit for bit.
    """
    if model.kind in (TRANSE, TRANSR, PAIRRE):
        ent = model.entity_table
        while True:
            norms = np.sqrt(np.square(ent).sum(axis=1))
            over = norms > 1.0
            if not over.any():
                break
            ent[over] = ent[over] / norms[over, None]
    elif model.kind == ROTATE:
        rel = model.relation_table
        pi = np.asarray(np.pi, dtype=rel.dtype)
        two_pi = np.asarray(2 * np.pi, dtype=rel.dtype)
        k = np.ceil((rel - pi) / two_pi)
        np.subtract(rel, two_pi * k, out=rel)
    return model
