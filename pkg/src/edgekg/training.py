"""Negative sampling, ranking losses, and the training loop.

Negatives corrupt exactly one slot (head or tail, chosen uniformly) with a
uniform replacement entity; candidates colliding with known-true training
triples are redrawn a bounded number of times and then kept, so filtering
is approximate. Two losses are available:

* margin-ranking            mean over pairs of max(0, margin - s+ + s-)
* self-adversarial-logistic -log sigmoid(s+) - sum_j w_j log sigmoid(-s-_j)
                            with w_j = softmax(temperature * s-_j), the
                            weights treated as constants in the gradient

Both add l2_coefficient times the mean squared L2 norm of the parameter
rows touched by the batch. The default loss follows the tuned rotate
deployment (self-adversarial-logistic over basic uniform sampling).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NonFiniteLossError
from .models import EmbeddingModel, Gradients, grad, init_model, project_constraints, score
from .optim import AdamState
from .store import TripleStore

LOSS_KINDS = ("margin-ranking", "self-adversarial-logistic")
SAMPLER_KINDS = ("basic-uniform", "self-adversarial")
_NEGATIVE_RETRIES = 10


@dataclass
class TrainConfig:
    kind: str = "rotate"
    dim: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 1024
    num_negatives: int = 8
    epochs: int = 30
    l2_coefficient: float = 0.01
    loss_kind: str = "self-adversarial-logistic"
    margin: float = 1.0
    adversarial_temperature: float = 1.0
    sampler_kind: str = "basic-uniform"
    patience: int = 3
    eval_every: int = 5
    seed: int = 0
    norm: int | None = None
    eval_sample: int = 500
    num_workers: int = 1
    dtype: str = "float32"

    def validate(self) -> None:
        from .models import MODEL_KINDS

        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError("dim must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.l2_coefficient < 0:
            raise ConfigError("l2_coefficient must be non-negative")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss_kind!r}")
        if self.sampler_kind not in SAMPLER_KINDS:
            raise ConfigError(f"unknown sampler {self.sampler_kind!r}")
        if self.adversarial_temperature <= 0:
            raise ConfigError("adversarial_temperature must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be at least 1")
        if self.eval_sample < 1:
            raise ConfigError("eval_sample must be at least 1")
        if self.num_workers < 1:
            raise ConfigError("num_workers must be at least 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")


PROFILES: dict[str, TrainConfig] = {
    # shared baseline settings used across model families
    "paper-basic": TrainConfig(
        kind="transe", dim=400, learning_rate=1e-3, batch_size=5000,
        num_negatives=50, epochs=100, l2_coefficient=0.01,
        loss_kind="margin-ranking", margin=1.0, sampler_kind="basic-uniform",
        patience=3, eval_every=5,
    ),
    # the tuned rotate deployment configuration
    "paper-tuned-rotate": TrainConfig(
        kind="rotate", dim=976, learning_rate=1e-3, batch_size=4096,
        num_negatives=8, epochs=100, l2_coefficient=0.01,
        loss_kind="self-adversarial-logistic", adversarial_temperature=1.0,
        sampler_kind="basic-uniform", patience=3, eval_every=5,
    ),
}


def profile(name: str) -> TrainConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; have {sorted(PROFILES)}")
    return replace(PROFILES[name])


@dataclass
class TrainReport:
    epochs_run: int
    final_train_loss: float
    best_validation_metric: float
    wall_clock_train_seconds: float
    loss_curve: list[float] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"epochs_run = {self.epochs_run}",
            f"final_train_loss = {self.final_train_loss!r}",
            f"best_validation_metric = {self.best_validation_metric!r}",
            f"wall_clock_train_seconds = {self.wall_clock_train_seconds:.3f}",
        ]
        return "\n".join(lines) + "\n"

    def write_loss_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch,loss\n")
            for i, value in enumerate(self.loss_curve, start=1):
                f.write(f"{i},{value!r}\n")


class KnownTriples:
    """Sorted, integer-encoded view of a triple set for vector membership tests."""

    def __init__(self, triples: np.ndarray, num_entities: int, num_relations: int):
        self.num_entities = int(num_entities)
        self.num_relations = int(num_relations)
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        self._encoded = np.unique(self._encode(arr))

    def _encode(self, arr: np.ndarray) -> np.ndarray:
        return (arr[..., 0] * self.num_relations + arr[..., 1]) * self.num_entities + arr[..., 2]

    def contains(self, arr: np.ndarray) -> np.ndarray:
        """Boolean membership for an (..., 3) array of triples."""
        enc = self._encode(np.asarray(arr, dtype=np.int64))
        pos = np.searchsorted(self._encoded, enc)
        pos = np.minimum(pos, self._encoded.shape[0] - 1)
        return (self._encoded[pos] == enc) if self._encoded.size else np.zeros(enc.shape, bool)

    def __len__(self) -> int:
        return int(self._encoded.shape[0])


def sample_negatives(rng: np.random.Generator, positives: np.ndarray, num_entities: int,
                     num_negatives: int, known: KnownTriples | None) -> np.ndarray:
    """Draw (B, k, 3) negatives grouped per positive.

    Each negative differs from its positive in exactly one slot (head or
    tail, chosen uniformly), the replacement uniform over other entities.
    Candidates colliding with ``known`` are redrawn up to a fixed retry
    budget and then kept, so filtering is approximate.
    """
    if num_entities < 2:
        raise ConfigError("negative sampling needs at least 2 entities")
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    b = positives.shape[0]
    k = num_negatives
    neg = np.repeat(positives[:, None, :], k, axis=1)
    col = np.where(rng.integers(0, 2, size=(b, k)) == 0, 0, 2)
    rows = np.broadcast_to(np.arange(b)[:, None], (b, k))
    cols = np.broadcast_to(np.arange(k)[None, :], (b, k))
    orig = neg[rows, cols, col]

    repl = rng.integers(0, num_entities - 1, size=(b, k))
    neg[rows, cols, col] = repl + (repl >= orig)  # uniform over entities != original

    if known is not None and len(known):
        for _ in range(_NEGATIVE_RETRIES):
            collide = known.contains(neg)
            if not collide.any():
                break
            o = orig[collide]
            fresh = rng.integers(0, num_entities - 1, size=o.shape[0])
            neg[rows[collide], cols[collide], col[collide]] = fresh + (fresh >= o)
    return neg


def selfadv_weights(neg_scores: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax of temperature * scores; rows sum to one."""
    z = temperature * np.asarray(neg_scores, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def regularization(model: EmbeddingModel, rows_by_table: dict[str, np.ndarray],
                   coefficient: float):
    """L2 penalty: coefficient * mean over touched rows of the squared row norm.

    Returns (value, per-table gradient dict aligned with rows_by_table).
    """
    tables = model.tables()
    total_rows = sum(int(rows.shape[0]) for rows in rows_by_table.values())
    if coefficient == 0.0 or total_rows == 0:
        return 0.0, {name: 0.0 for name in rows_by_table}
    value = 0.0
    grads = {}
    for name, rows in rows_by_table.items():
        sub = tables[name][rows].astype(np.float64)
        value += float(np.square(sub).sum())
        grads[name] = (2.0 * coefficient / total_rows) * tables[name][rows]
    return coefficient * value / total_rows, grads


def compute_loss(model: EmbeddingModel, positives: np.ndarray, negatives: np.ndarray,
                 config: TrainConfig, batch_index: int = -1):
    """Loss value and parameter gradients for one batch.

    ``positives`` is (B, 3); ``negatives`` is (B, k, 3) grouped per positive.
    """
    b, k = negatives.shape[0], negatives.shape[1]
    s_pos = score(model, positives).astype(np.float64)
    neg_flat = negatives.reshape(-1, 3)
    s_neg = score(model, neg_flat).astype(np.float64).reshape(b, k)
    # catch diverged parameters here: a nan score would otherwise read as
    # "no margin violation" and silently zero the loss
    if not (np.isfinite(s_pos).all() and np.isfinite(s_neg).all()):
        raise NonFiniteLossError(batch_index)

    if config.loss_kind == "margin-ranking":
        viol = config.margin - s_pos[:, None] + s_neg
        active = viol > 0
        data = float(np.where(active, viol, 0.0).sum() / (b * k))
        w_pos = -active.sum(axis=1).astype(np.float64) / (b * k)
        w_neg = active.astype(np.float64) / (b * k)
    else:
        w = selfadv_weights(s_neg, config.adversarial_temperature)
        data = float(np.mean(-_log_sigmoid(s_pos) - (w * _log_sigmoid(-s_neg)).sum(axis=1)))
        # d/ds of -log sigmoid(s) is -sigmoid(-s); of -log sigmoid(-s) is sigmoid(s)
        w_pos = -_sigmoid(-s_pos) / b
        w_neg = w * _sigmoid(s_neg) / b

    all_triples = np.concatenate([positives, neg_flat], axis=0)
    upstream = np.concatenate([w_pos, w_neg.reshape(-1)])
    grads = grad(model, all_triples, upstream)

    rows_by_table = {name: rows for name, rows, _ in grads.items()}
    reg_value, reg_grads = regularization(model, rows_by_table, config.l2_coefficient)
    if reg_value:
        grads.entity += reg_grads["entity"]
        grads.relation += reg_grads["relation"]
        if grads.projection is not None:
            grads.projection += reg_grads["projection"]

    total = data + reg_value
    if not np.isfinite(total):
        raise NonFiniteLossError(batch_index)
    return total, grads


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _merge_gradients(parts: list[Gradients], dtype) -> Gradients:
    def merge(rows_list, grad_list):
        rows = np.concatenate(rows_list)
        grads = np.concatenate(grad_list, axis=0)
        uniq, inv = np.unique(rows, return_inverse=True)
        acc = np.zeros((uniq.shape[0], grads.shape[1]), dtype=dtype)
        np.add.at(acc, inv, grads)
        return uniq, acc

    ent = merge([p.entity_rows for p in parts], [p.entity for p in parts])
    rel = merge([p.relation_rows for p in parts], [p.relation for p in parts])
    proj_rows = proj = None
    if parts[0].projection_rows is not None:
        proj_rows, proj = merge([p.projection_rows for p in parts], [p.projection for p in parts])
    return Gradients(*ent, *rel, proj_rows, proj)


def _apply_mask_to_grads(grads: Gradients, masks: dict[str, np.ndarray]) -> None:
    for name, rows, g in grads.items():
        if name in masks:
            g *= masks[name][rows]


def _rezero_masked_rows(model: EmbeddingModel, grads: Gradients, masks: dict[str, np.ndarray]) -> None:
    tables = model.tables()
    for name, rows, _ in grads.items():
        if name in masks:
            table = tables[name]
            table[rows] = np.where(masks[name][rows], table[rows], 0)


def train(store: TripleStore, config: TrainConfig, model: EmbeddingModel | None = None,
          mask: dict[str, np.ndarray] | None = None, step_callback=None):
    """Train a model on the store's train split.

    Starts from ``model`` when given (otherwise initializes one from the
    config). With ``mask`` (per-table boolean keep arrays), gradients at
    masked positions are dropped and every optimizer step re-zeroes them,
    so pruned parameters stay exactly zero. Early stopping watches filtered
    hits@10 on a fixed validation sample and keeps the best snapshot.

    Returns (model, TrainReport).
    """
    from .evaluation import EvalOptions, evaluate  # deferred: evaluation imports models

    config.validate()
    t0 = time.perf_counter()
    train_triples = store.split_triples("train")
    if train_triples.shape[0] == 0:
        raise ConfigError("train split is empty")

    dtype = np.float32 if config.dtype == "float32" else np.float64
    if model is None:
        model = init_model(config.kind, config.dim, store.num_entities,
                           store.num_relations, seed=config.seed, dtype=dtype,
                           norm=config.norm)
    if mask is not None:
        model.masked = True

    rng = np.random.default_rng(config.seed)
    known = KnownTriples(train_triples, store.num_entities, store.num_relations)

    valid_idx = store.split_indices("valid")
    do_eval = len(valid_idx) > 0 and config.epochs > 0
    if config.epochs > 0 and not do_eval:
        warnings.warn("validation split is empty; early stopping disabled", stacklevel=2)
    eval_options = EvalOptions(filtered=True, sample_triples=config.eval_sample,
                               sample_seed=config.seed)

    best_metric = -np.inf
    best_model: EmbeddingModel | None = None
    epochs_since_improve = 0
    loss_curve: list[float] = []
    epochs_run = 0
    n = train_triples.shape[0]

    pool = None
    if config.num_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        pool = ThreadPoolExecutor(max_workers=config.num_workers)
    adam = AdamState()
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            batch_losses = []
            for bi, lo in enumerate(range(0, n, config.batch_size)):
                pos = train_triples[order[lo:lo + config.batch_size]]
                neg = sample_negatives(rng, pos, store.num_entities,
                                       config.num_negatives, known)
                if pool is None or pos.shape[0] < 2 * config.num_workers:
                    loss, grads = compute_loss(model, pos, neg, config, bi)
                else:
                    shards = np.array_split(np.arange(pos.shape[0]), config.num_workers)
                    futures = [
                        pool.submit(compute_loss, model, pos[s], neg[s], config, bi)
                        for s in shards if s.size
                    ]
                    results = [f.result() for f in futures]
                    sizes = [s.size for s in shards if s.size]
                    loss = float(sum(l * sz for (l, _), sz in zip(results, sizes)) / sum(sizes))
                    if not np.isfinite(loss):
                        raise NonFiniteLossError(bi)
                    parts = [g for (_, g) in results]
                    weightings = [sz / sum(sizes) for sz in sizes]
                    for part, wgt in zip(parts, weightings):
                        part.entity *= wgt
                        part.relation *= wgt
                        if part.projection is not None:
                            part.projection *= wgt
                    grads = _merge_gradients(parts, model.dtype)
                if mask is not None:
                    _apply_mask_to_grads(grads, mask)
                adam.step(model, grads, config.learning_rate)
                if mask is not None:
                    _rezero_masked_rows(model, grads, mask)
                project_constraints(model)
                if mask is not None:
                    _rezero_masked_rows(model, grads, mask)
                if step_callback is not None:
                    step_callback(model, grads)
                batch_losses.append(loss)
            loss_curve.append(float(np.mean(batch_losses)))
            epochs_run = epoch + 1

            if do_eval and (epoch + 1) % config.eval_every == 0:
                report = evaluate(model, store, split="valid", options=eval_options)
                metric = report.hits[10]
                if metric > best_metric:
                    best_metric = metric
                    best_model = model.copy()
                    epochs_since_improve = 0
                else:
                    epochs_since_improve += config.eval_every
                    if epochs_since_improve >= config.patience:
                        break
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    final = best_model if best_model is not None else model
    report = TrainReport(
        epochs_run=epochs_run,
        final_train_loss=loss_curve[-1] if loss_curve else float("nan"),
        best_validation_metric=float(best_metric) if best_model is not None else float("nan"),
        wall_clock_train_seconds=time.perf_counter() - t0,
        loss_curve=loss_curve,
    )
    return final, report
