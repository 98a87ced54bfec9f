"""Gradient-sensitivity pruning and mask-preserving fine-tuning.

A parameter's sensitivity is the mean absolute gradient of the training
loss at that parameter, estimated over batches drawn from a held-out
split; parameters a batch never touches contribute zero. The lowest
fraction of parameters by sensitivity is zeroed (rank selection with
index-order tie-breaking, so the pruned count is exact), and fine-tuning
re-trains the survivors while pinning pruned positions to zero after
every optimizer step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .checkpoint import dense_byte_size, sparse_byte_size
from .errors import ConfigError, ShapeError
from .models import (
    COMPLEX,
    DISTMULT,
    HOLE,
    MODEL_KINDS,
    PAIRRE,
    ROTATE,
    TRANSE,
    TRANSR,
    EmbeddingModel,
)
from .store import TripleStore
from .training import KnownTriples, TrainConfig, TrainReport, compute_loss, sample_negatives, train


def sensitivity(model: EmbeddingModel, store: TripleStore, config: TrainConfig,
                split: str = "valid", num_batches: int | None = None,
                seed: int = 0, weight_scaled: bool = False) -> dict[str, np.ndarray]:
    """Per-parameter mean absolute loss gradient over batches of a split.

    Batches are drawn by a seeded shuffle of the split and corrupted with
    the same negative sampler used in training (filtered against the train
    split). ``num_batches`` caps how many are consumed; None uses them all.
    With ``weight_scaled`` the accumulated quantity is |gradient * weight|
    instead of the plain gradient magnitude.
    """
    positives = store.split_triples(split)
    if positives.shape[0] == 0:
        raise ConfigError(f"split {split!r} is empty; nothing to estimate sensitivity on")
    if num_batches is not None and num_batches < 1:
        raise ConfigError(f"num_batches must be positive, got {num_batches}")
    config.validate()
    known = KnownTriples(store.split_triples("train"), store.num_entities, store.num_relations)
    rng = np.random.default_rng(seed)
    shuffled = positives[rng.permutation(positives.shape[0])]

    tables = model.tables()
    acc = {name: np.zeros(table.shape, dtype=np.float64) for name, table in tables.items()}
    batches = 0
    for start in range(0, shuffled.shape[0], config.batch_size):
        if num_batches is not None and batches >= num_batches:
            break
        batch = shuffled[start:start + config.batch_size]
        negatives = sample_negatives(rng, batch, store.num_entities,
                                     config.num_negatives, known)
        _, grads = compute_loss(model, batch, negatives, config, batch_index=batches)
        for name, rows, g in grads.items():
            contribution = np.abs(g.astype(np.float64))
            if weight_scaled:
                contribution *= np.abs(tables[name][rows].astype(np.float64))
            acc[name][rows] += contribution  # rows unique per gradient batch
        batches += 1
    for name in acc:
        acc[name] /= batches
    return acc


@dataclass
class PruneMask:
    """Boolean keep-masks per table (True survives) plus selection metadata.

    ``threshold`` is the sensitivity of the lowest-ranked survivor (the
    value the percentile cut landed on); with ``per_table`` selection it is
    the largest of the per-table cut values.
    """

    masks: dict[str, np.ndarray]
    pruning_ratio: float
    threshold: float
    per_table: bool = False

    def total_parameters(self) -> int:
        return sum(int(m.size) for m in self.masks.values())

    def pruned_parameters(self) -> int:
        return sum(int(m.size - np.count_nonzero(m)) for m in self.masks.values())


def _rank_select(values: np.ndarray, count: int) -> np.ndarray:
    """Boolean keep-mask over flat values with the `count` smallest dropped.

    Stable sort makes equal sensitivities drop in index order.
    """
    keep = np.ones(values.size, dtype=bool)
    if count > 0:
        order = np.argsort(values, kind="stable")
        keep[order[:count]] = False
    return keep


def build_mask(sens: dict[str, np.ndarray], pruning_ratio: float,
               per_table: bool = False) -> PruneMask:
    """Keep-mask dropping the `pruning_ratio` least sensitive parameters.

    The pruned count is exactly round(ratio * total); global selection pools
    every table, per-table selection applies the ratio inside each table.
    """
    if not 0.0 <= pruning_ratio < 1.0:
        raise ConfigError(f"pruning ratio must be in [0, 1), got {pruning_ratio!r}")
    if not sens:
        raise ConfigError("empty sensitivity map")
    masks: dict[str, np.ndarray] = {}
    if per_table:
        cuts = []
        for name, table in sens.items():
            flat = np.asarray(table, dtype=np.float64).reshape(-1)
            count = int(round(pruning_ratio * flat.size))
            keep = _rank_select(flat, count)
            masks[name] = keep.reshape(table.shape)
            cuts.append(float(np.min(flat[keep])) if keep.any() else float("inf"))
        return PruneMask(masks, pruning_ratio, max(cuts), per_table=True)

    names = list(sens)
    flats = [np.asarray(sens[name], dtype=np.float64).reshape(-1) for name in names]
    pooled = np.concatenate(flats)
    count = int(round(pruning_ratio * pooled.size))
    keep = _rank_select(pooled, count)
    threshold = float(np.sort(pooled, kind="stable")[count]) if count < pooled.size else float("inf")
    offset = 0
    for name, flat in zip(names, flats):
        masks[name] = keep[offset:offset + flat.size].reshape(sens[name].shape)
        offset += flat.size
    return PruneMask(masks, pruning_ratio, threshold)


def apply_mask(model: EmbeddingModel, mask: PruneMask) -> None:
    """Zero pruned positions in place and flag the model as masked."""
    tables = model.tables()
    if set(mask.masks) != set(tables):
        raise ShapeError(f"mask tables {sorted(mask.masks)} != model tables {sorted(tables)}")
    for name, table in tables.items():
        if mask.masks[name].shape != table.shape:
            raise ShapeError(
                f"mask for {name!r} has shape {mask.masks[name].shape}, "
                f"table has {table.shape}")
        np.multiply(table, mask.masks[name].astype(table.dtype), out=table)
    model.masked = True


def finetune(model: EmbeddingModel, mask: PruneMask, store: TripleStore,
             config: TrainConfig | None = None,
             step_callback=None) -> tuple[EmbeddingModel, TrainReport]:
    """Continue training a pruned model with pruned positions pinned to zero.

    Gradients at pruned positions are dropped and the positions re-zeroed
    after every optimizer step and constraint projection, so they stay
    exactly 0 throughout. Optimizer moments start fresh, which also keeps
    dead positions free of stale momentum. Without an explicit config the
    model's own geometry is reused with a long 300-epoch schedule.
    """
    if config is None:
        config = TrainConfig(kind=model.kind, dim=model.dim, norm=model.norm, epochs=300)
    if config.kind != model.kind or config.dim != model.dim:
        config = replace(config, kind=model.kind, dim=model.dim, norm=model.norm)
    return train(store, config, model=model, mask=mask.masks, step_callback=step_callback)


def score_flops(kind: str, dim: int) -> int:
    """Multiply-accumulate count of one triple score, from the written formula.

    Conventions, counting one MAC per multiply and per add:
      transe    h + r - t then a d-term norm                       -> 3d
      transr    two dxd projections, translation, norm             -> 2d^2 + 3d
      distmult  elementwise three-way product summed               -> 2d
      complex   4 real products of 3 factors per component, summed -> 8d
      hole      circular correlation then a dot product            -> d^2 + d
      rotate    complex rotation, difference, modulus accumulation -> 8d
      pairre    two normalizations, two Hadamards, difference norm -> 8d
    """
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    return {
        TRANSE: 3 * dim,
        TRANSR: 2 * dim * dim + 3 * dim,
        DISTMULT: 2 * dim,
        COMPLEX: 8 * dim,
        HOLE: dim * dim + dim,
        ROTATE: 8 * dim,
        PAIRRE: 8 * dim,
    }[kind]


@dataclass
class PruneReport:
    """Before/after accounting for one prune (and optional fine-tune) run."""

    pruning_ratio: float
    parameters_total: int
    parameters_nonzero: int
    checkpoint_bytes_dense: int
    checkpoint_bytes_sparse: int
    flops_per_query: int
    pre_prune_hits10: float
    post_prune_hits10: float
    post_finetune_hits10: float | None = None

    def metric_rows(self) -> list[tuple[str, object]]:
        return [
            ("pruning_ratio", self.pruning_ratio),
            ("parameters_total", self.parameters_total),
            ("parameters_nonzero", self.parameters_nonzero),
            ("checkpoint_bytes_dense", self.checkpoint_bytes_dense),
            ("checkpoint_bytes_sparse", self.checkpoint_bytes_sparse),
            ("flops_per_query", self.flops_per_query),
            ("pre_prune_hits10", self.pre_prune_hits10),
            ("post_prune_hits10", self.post_prune_hits10),
            ("post_finetune_hits10", self.post_finetune_hits10),
        ]

    def to_text(self) -> str:
        lines = [f"{key} = {'' if value is None else value}" for key, value in self.metric_rows()]
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        rows = self.metric_rows()
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([key for key, _ in rows])
            writer.writerow(["" if value is None else value for _, value in rows])


def nonzero_parameters(model: EmbeddingModel) -> int:
    return sum(int(np.count_nonzero(t)) for t in model.tables().values())


def make_report(model_before: EmbeddingModel, model_after: EmbeddingModel, mask: PruneMask,
                pre_hits10: float, post_hits10: float,
                post_finetune_hits10: float | None = None) -> PruneReport:
    return PruneReport(
        pruning_ratio=mask.pruning_ratio,
        parameters_total=model_after.parameter_count(),
        parameters_nonzero=nonzero_parameters(model_after),
        checkpoint_bytes_dense=dense_byte_size(model_before),
        checkpoint_bytes_sparse=sparse_byte_size(model_after, mask.masks),
        flops_per_query=score_flops(model_after.kind, model_after.dim),
        pre_prune_hits10=pre_hits10,
        post_prune_hits10=post_hits10,
        post_finetune_hits10=post_finetune_hits10,
    )
