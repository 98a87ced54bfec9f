"""Command line front end: data preparation, training, screening, pruning, serving.

Every subcommand reads and writes plain files so stages compose:

    edgekg synth --out data/
    edgekg split --data data/ --ratio 0.8,0.1,0.1 --out data/
    edgekg train --data data/ --model-out model.ckpt
    edgekg eval  --data data/ --model model.ckpt
    edgekg prune --data data/ --model model.ckpt --ratio 0.67 --model-out small.ckpt

Hyperparameters come from (lowest to highest precedence) built-in defaults
or a named --profile, a flat key=value --config file, then explicit flags.
Exit codes: 0 success, 1 engine or file errors (and pdqa with any flagged
record), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import types
import typing
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load, save_dense, save_sparse
from .errors import ConfigError, KGEngineError
from .evaluation import EvalOptions, TIE_RULES, evaluate
from .models import MODEL_KINDS, score as score_triples
from .pruning import PruneMask, apply_mask, build_mask, finetune, make_report, sensitivity
from .quality import (
    assess,
    assess_streaming,
    fit_distribution,
    load_distribution,
    save_distribution,
    write_report_csv,
)
from .service import RuntimeConfig, serve as run_service, InferenceEngine
from .store import (
    TripleStore,
    canonicalize,
    export_graph,
    ingest,
    load_dir,
    save_dir,
    split as split_store,
)
from .synth import (
    SynthConfig,
    generate,
    inject_corruptions,
    read_corruption_labels,
    write_corruption_labels,
)
from .training import LOSS_KINDS, PROFILES, SAMPLER_KINDS, TrainConfig, profile, train


def _read_kv_file(path) -> dict[str, str]:
    """Flat `key = value` file; '#' comments and blank lines ignored."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _coerce(text: str, hint):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if text.lower() in ("none", ""):
            return None
        hint = args[0]
    if hint is bool:
        return text.lower() in ("1", "true", "yes", "on")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def _apply_kv(config, values: dict[str, str]):
    """Overlay matching key=value entries onto a dataclass instance.

    Keys that do not name a field are left for other stages (one file can
    configure several subcommands), so typos are not caught here.
    """
    hints = typing.get_type_hints(type(config))
    updates = {}
    for f in fields(config):
        if f.name in values:
            try:
                updates[f.name] = _coerce(values[f.name], hints[f.name])
            except ValueError as exc:
                raise ConfigError(f"bad value for {f.name}: {values[f.name]!r} ({exc})") from None
    return replace(config, **updates) if updates else config


_TRAIN_FLAG_FIELDS = {
    "kind": "kind",
    "dim": "dim",
    "lr": "learning_rate",
    "batch": "batch_size",
    "negatives": "num_negatives",
    "epochs": "epochs",
    "l2": "l2_coefficient",
    "loss": "loss_kind",
    "margin": "margin",
    "temperature": "adversarial_temperature",
    "sampler": "sampler_kind",
    "patience": "patience",
    "eval_every": "eval_every",
    "seed": "seed",
    "norm": "norm",
    "eval_sample": "eval_sample",
    "workers": "num_workers",
}


def _train_config(args) -> TrainConfig:
    config = profile(args.profile) if args.profile else TrainConfig()
    if args.config:
        config = _apply_kv(config, _read_kv_file(args.config))
    overrides = {}
    for flag, field_name in _TRAIN_FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    if getattr(args, "deterministic", False):
        overrides["num_workers"] = 1
    config = replace(config, **overrides) if overrides else config
    config.validate()
    return config


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=sorted(PROFILES), help="named hyperparameter preset")
    p.add_argument("--kind", choices=MODEL_KINDS, help="model kind")
    p.add_argument("--dim", type=int, help="embedding dimension")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int, help="batch size")
    p.add_argument("--negatives", type=int, help="negatives per positive")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--l2", type=float, help="L2 coefficient")
    p.add_argument("--loss", choices=LOSS_KINDS)
    p.add_argument("--margin", type=float)
    p.add_argument("--temperature", type=float, help="self-adversarial temperature")
    p.add_argument("--sampler", choices=SAMPLER_KINDS)
    p.add_argument("--patience", type=int, help="early-stopping patience in epochs")
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--norm", type=int, choices=(1, 2), help="distance norm")
    p.add_argument("--eval-sample", dest="eval_sample", type=int,
                   help="validation queries sampled during training")
    p.add_argument("--workers", type=int, help="loss shards computed in parallel")
    p.add_argument("--deterministic", action="store_true",
                   help="force single-threaded loss computation")


def _load_store(args) -> TripleStore:
    return load_dir(args.data)


def _resolve_mask(model, mask, what: str):
    """Mask from the checkpoint, or from nonzero positions of a masked model."""
    if mask is not None:
        return mask
    if model.masked:
        return {name: table != 0 for name, table in model.tables().items()}
    raise ConfigError(f"{what} needs a pruned checkpoint (masked or sparse)")


def cmd_ingest(args) -> int:
    fmt = args.format
    if fmt is None:
        fmt = "csv" if str(args.infile).lower().endswith(".csv") else "tsv"
    store = ingest(args.infile, delimiter="," if fmt == "csv" else "\t",
                   skip_header=args.skip_header)
    save_dir(store, args.out)
    print(f"ingested {len(store.triples)} triples "
          f"({store.num_entities} entities, {store.num_relations} relations) -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    config = SynthConfig(num_people=args.people, num_occupations=args.occupations,
                         num_locations=args.locations, noise_rate=args.noise,
                         seed=args.seed, marriage_rate=args.marriage_rate,
                         child_rate=args.child_rate)
    store = generate(config)
    save_dir(store, args.out)
    print(f"generated {len(store.triples)} triples "
          f"({store.num_entities} entities, {store.num_relations} relations) -> {args.out}")
    return 0


def cmd_split(args) -> int:
    store = _load_store(args)
    try:
        ratio = tuple(float(x) for x in args.ratio.split(","))
    except ValueError:
        raise ConfigError(f"bad ratio {args.ratio!r}; expected three comma-separated numbers")
    store = canonicalize(split_store(store, ratio, seed=args.seed))
    labels = []
    if args.corrupt is not None:
        store, labels = inject_corruptions(store, args.corrupt, seed=args.seed)
    save_dir(store, args.out)  # creates the directory the labels land in
    if labels:
        labels_out = args.labels_out or str(Path(args.out) / "corruptions.csv")
        write_corruption_labels(labels, store, labels_out)
    sizes = {name: len(idx) for name, idx in store.splits.items()}
    note = f", {len(labels)} corruptions injected" if labels else ""
    print(f"split {len(store.triples)} triples into {sizes}{note} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    store = _load_store(args)
    config = _train_config(args)
    model, report = train(store, config)
    save_dense(model, args.model_out)
    if args.loss_out:
        report.write_loss_csv(args.loss_out)
    print(report.to_text(), end="")
    print(f"saved {config.kind} checkpoint -> {args.model_out}")
    return 0


def _eval_options(args) -> EvalOptions:
    return EvalOptions(filtered=args.filtered, tie_rule=args.tie_rule,
                       sample_triples=args.sample, sample_seed=args.seed)


def cmd_eval(args) -> int:
    store = _load_store(args)
    model, _ = load(args.model)
    report = evaluate(model, store, split=args.split, options=_eval_options(args))
    if args.metrics_out:
        report.write_metrics_csv(args.metrics_out)
    if args.ranks_out:
        report.write_ranks_csv(args.ranks_out)
    print(report.to_text(), end="")
    return 0


def cmd_pdqa(args) -> int:
    store = _load_store(args)
    model, _ = load(args.model)
    indices = store.split_indices(args.split)
    batch = [store.triples[i] for i in indices]
    if args.reference and args.fit_reference:
        raise ConfigError("--reference and --fit-reference are mutually exclusive")
    if args.reference:
        report = assess_streaming(model, load_distribution(args.reference), batch,
                                  threshold=args.threshold)
    elif args.fit_reference:
        train_arr = store.split_triples("train")
        reference = fit_distribution(score_triples(model, train_arr))
        save_distribution(reference, args.fit_reference)
        report = assess_streaming(model, reference, batch, threshold=args.threshold)
    else:
        report = assess(model, batch, threshold=args.threshold,
                        per_relation=args.per_relation)
    if args.out:
        write_report_csv(report, store, args.out)
    flagged = report.flagged
    print(f"assessed {len(report.records)} triples from split {args.split!r}: "
          f"{len(flagged)} flagged at threshold {report.threshold}")
    if args.labels:
        labels = read_corruption_labels(args.labels, store)
        corrupted_positions = {
            pos for pos, gi in enumerate(indices)
            if gi in {lab.triple_index for lab in labels}
        }
        caught = {rec.index for rec in flagged} & corrupted_positions
        recall = len(caught) / len(corrupted_positions) if corrupted_positions else float("nan")
        print(f"corruption recall = {recall:.4f} "
              f"({len(caught)} of {len(corrupted_positions)} injected)")
    return 1 if flagged else 0


def cmd_prune(args) -> int:
    store = _load_store(args)
    model, _ = load(args.model)
    config = _train_config(args)
    config = replace(config, kind=model.kind, dim=model.dim, norm=model.norm)
    options = _eval_options(args)

    pre = evaluate(model, store, split=args.split, options=options)
    sens = sensitivity(model, store, config, num_batches=args.batches,
                       seed=config.seed, weight_scaled=args.weighted_sensitivity)
    mask = build_mask(sens, args.ratio, per_table=args.per_table)
    pruned = model.copy()
    apply_mask(pruned, mask)
    post = evaluate(pruned, store, split=args.split, options=options)

    save_sparse(pruned, mask.masks, args.model_out)
    report = make_report(model, pruned, mask, pre.hits[10], post.hits[10])
    if args.report_out:
        report.write_csv(args.report_out)
    print(report.to_text(), end="")
    print(f"saved pruned checkpoint -> {args.model_out}")
    return 0


def cmd_finetune(args) -> int:
    store = _load_store(args)
    model, mask_tables = load(args.model)
    mask_tables = _resolve_mask(model, mask_tables, "finetune")
    config = _train_config(args)
    config = replace(config, kind=model.kind, dim=model.dim, norm=model.norm)
    ratio = 1.0 - sum(int(np.count_nonzero(m)) for m in mask_tables.values()) / max(
        1, sum(m.size for m in mask_tables.values()))
    mask = PruneMask(mask_tables, pruning_ratio=ratio, threshold=float("nan"))
    tuned, report = finetune(model, mask, store, config)
    save_sparse(tuned, mask_tables, args.model_out)
    print(report.to_text(), end="")
    print(f"saved fine-tuned checkpoint -> {args.model_out}")
    return 0


def cmd_export(args) -> int:
    store = _load_store(args)
    export_graph(store, args.nodes_out, args.edges_out)
    print(f"exported {store.num_entities} nodes -> {args.nodes_out}, "
          f"{len(store.triples)} edges -> {args.edges_out}")
    return 0


def _runtime_config(args) -> RuntimeConfig:
    data = Path(args.data)
    config = RuntimeConfig(
        model_checkpoint_path=args.model,
        entities_path=str(data / "entities.tsv"),
        relations_path=str(data / "relations.tsv"),
    )
    if args.config:
        config = _apply_kv(config, _read_kv_file(args.config))
    if args.reference:
        config = replace(config, reference_distribution_path=args.reference)
    if args.trusted:
        config = replace(config, trusted_data_path=args.trusted)
    if args.bind:
        config = replace(config, bind_address=args.bind)
    if args.threshold is not None:
        config = replace(config, pdqa_threshold=args.threshold)
    if args.max_batch is not None:
        config = replace(config, max_batch=args.max_batch)
    if args.top_k is not None:
        config = replace(config, top_k_default=args.top_k)
    config.validate()
    return config


def cmd_serve(args) -> int:
    run_service(_runtime_config(args))
    return 0


def cmd_score(args) -> int:
    engine = InferenceEngine(_runtime_config(args))
    result = engine.score_triple(args.head, args.relation, args.tail)
    print(json.dumps(result, separators=(",", ":")))
    return 0


def cmd_complete(args) -> int:
    if (args.head is None) == (args.tail is None):
        raise ConfigError("provide exactly one of --head or --tail")
    engine = InferenceEngine(_runtime_config(args))
    result = engine.complete(args.head, args.relation, args.tail, args.k)
    print(json.dumps(result, separators=(",", ":")))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgekg",
        description="knowledge graph embedding engine: train, screen, complete, prune, serve")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read a delimited triple file into a store directory")
    p.add_argument("--in", dest="infile", required=True, help="TSV or CSV triple file")
    p.add_argument("--out", required=True, help="store directory to write")
    p.add_argument("--format", choices=("tsv", "csv"), help="default: by file extension")
    p.add_argument("--skip-header", dest="skip_header", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate the synthetic personnel graph")
    p.add_argument("--out", required=True)
    p.add_argument("--people", type=int, default=4950)
    p.add_argument("--occupations", type=int, default=11)
    p.add_argument("--locations", type=int, default=30)
    p.add_argument("--marriage-rate", dest="marriage_rate", type=float, default=0.4)
    p.add_argument("--child-rate", dest="child_rate", type=float, default=0.9)
    p.add_argument("--noise", type=float, default=0.0, help="noise triple rate")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="partition a store into train/valid/test")
    p.add_argument("--data", required=True, help="store directory to read")
    p.add_argument("--out", required=True, help="store directory to write")
    p.add_argument("--ratio", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", type=float,
                   help="also corrupt this fraction of the test split")
    p.add_argument("--labels-out", dest="labels_out",
                   help="corruption ground-truth CSV (default OUT/corruptions.csv)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train an embedding model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="key=value defaults file")
    p.add_argument("--model-out", dest="model_out", default="model.ckpt")
    p.add_argument("--loss-out", dest="loss_out", help="write per-epoch loss CSV")
    p.add_argument("--seed", type=int, default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ranking metrics of a checkpoint on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test")
    filt = p.add_mutually_exclusive_group()
    filt.add_argument("--filtered", dest="filtered", action="store_true", default=True)
    filt.add_argument("--raw", dest="filtered", action="store_false")
    p.add_argument("--tie-rule", dest="tie_rule", choices=TIE_RULES, default="realistic")
    p.add_argument("--sample", type=int, help="evaluate this many sampled triples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics-out", dest="metrics_out")
    p.add_argument("--ranks-out", dest="ranks_out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pdqa", help="screen a split for implausible triples")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=-1.0)
    p.add_argument("--per-relation", dest="per_relation", action="store_true",
                   help="standardize scores within each relation")
    p.add_argument("--reference", help="frozen reference distribution file")
    p.add_argument("--fit-reference", dest="fit_reference",
                   help="fit reference on the train split and save it here")
    p.add_argument("--labels", help="corruption ground truth for recall reporting")
    p.add_argument("--out", help="write the full report CSV here")
    p.set_defaults(func=cmd_pdqa)

    p = sub.add_parser("prune", help="zero low-sensitivity weights and save sparse")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--model-out", dest="model_out", default="pruned.ckpt")
    p.add_argument("--ratio", type=float, default=0.67, help="fraction of weights to drop")
    p.add_argument("--batches", type=int, help="cap sensitivity estimation batches")
    p.add_argument("--per-table", dest="per_table", action="store_true",
                   help="apply the ratio inside each table instead of globally")
    p.add_argument("--weighted-sensitivity", dest="weighted_sensitivity", action="store_true",
                   help="rank by |gradient * weight| instead of |gradient|")
    p.add_argument("--split", default="test", help="split for before/after metrics")
    filt = p.add_mutually_exclusive_group()
    filt.add_argument("--filtered", dest="filtered", action="store_true", default=True)
    filt.add_argument("--raw", dest="filtered", action="store_false")
    p.add_argument("--tie-rule", dest="tie_rule", choices=TIE_RULES, default="realistic")
    p.add_argument("--sample", type=int, help="sampled triples for before/after metrics")
    p.add_argument("--report-out", dest="report_out", help="write the report as CSV")
    p.add_argument("--config", help="key=value defaults file")
    p.add_argument("--seed", type=int, default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("finetune", help="continue training a pruned checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="masked or sparse checkpoint")
    p.add_argument("--model-out", dest="model_out", default="finetuned.ckpt")
    p.add_argument("--config", help="key=value defaults file")
    p.add_argument("--seed", type=int, default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("export", help="write node/edge CSVs for graph viewers")
    p.add_argument("--data", required=True)
    p.add_argument("--nodes-out", dest="nodes_out", default="nodes.csv")
    p.add_argument("--edges-out", dest="edges_out", default="edges.csv")
    p.set_defaults(func=cmd_export)

    def add_service_flags(p):
        p.add_argument("--data", required=True, help="store directory with dictionaries")
        p.add_argument("--model", required=True)
        p.add_argument("--config", help="key=value defaults file")
        p.add_argument("--reference", help="frozen reference distribution file")
        p.add_argument("--trusted", help="trusted triple TSV for lazy reference fitting")
        p.add_argument("--threshold", type=float, default=None)
        p.add_argument("--max-batch", dest="max_batch", type=int, default=None)
        p.add_argument("--top-k", dest="top_k", type=int, default=None)
        p.add_argument("--bind", help="host:port")

    p = sub.add_parser("serve", help="run the local inference service")
    add_service_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("score", help="score one labeled triple")
    add_service_flags(p)
    p.add_argument("head")
    p.add_argument("relation")
    p.add_argument("tail")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("complete", help="rank completions for a partial triple")
    add_service_flags(p)
    p.add_argument("--head")
    p.add_argument("--tail")
    p.add_argument("--relation", required=True)
    p.add_argument("-k", type=int, default=None)
    p.set_defaults(func=cmd_complete)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KGEngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
