"""Triple storage: ingestion, dictionary encoding, entity fusion, splits, export.

Triples are held as integer id tuples; labels live in two dense dictionaries
(entities and relations). Ids are assigned in first-occurrence order, so the
same input always produces the same encoding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    ConfigError,
    EmptyStoreError,
    IdError,
    ParseError,
    SchemaError,
)

SPLIT_NAMES = ("train", "valid", "test")


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Dictionary:
    """Dense bijective label <-> id mapping, ids in first-occurrence order."""

    __slots__ = ("forward", "reverse")

    def __init__(self, labels=()):
        self.forward: dict[str, int] = {}
        self.reverse: list[str] = []
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self.forward.get(label)
        if idx is None:
            idx = len(self.reverse)
            self.forward[label] = idx
            self.reverse.append(label)
        return idx

    def id_of(self, label: str) -> int:
        try:
            return self.forward[label]
        except KeyError:
            raise IdError(f"unknown label {label!r}") from None

    def label_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.reverse):
            raise IdError(f"id {idx} out of range 0..{len(self.reverse) - 1}")
        return self.reverse[idx]

    def __contains__(self, label) -> bool:
        return label in self.forward

    def __len__(self) -> int:
        return len(self.reverse)

    def __eq__(self, other) -> bool:
        return isinstance(other, Dictionary) and self.reverse == other.reverse

    def __repr__(self) -> str:
        return f"Dictionary({len(self.reverse)} labels)"


@dataclass
class TripleStore:
    """An immutable-by-convention collection of encoded triples plus splits.

    splits maps each of "train"/"valid"/"test" to a sorted list of indices
    into ``triples``. The three lists are disjoint and cover all triples.
    """

    triples: list[Triple]
    entity_dict: Dictionary
    relation_dict: Dictionary
    splits: dict[str, list[int]]
    _array: np.ndarray | None = field(default=None, repr=False, compare=False)
    _triple_set: frozenset | None = field(default=None, repr=False, compare=False)

    @property
    def num_entities(self) -> int:
        return len(self.entity_dict)

    @property
    def num_relations(self) -> int:
        return len(self.relation_dict)

    def as_array(self) -> np.ndarray:
        """All triples as an (N, 3) int64 array (cached)."""
        if self._array is None:
            self._array = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        return self._array

    def split_indices(self, name: str) -> list[int]:
        if name not in self.splits:
            raise ConfigError(f"unknown split {name!r}")
        return self.splits[name]

    def split_triples(self, name: str) -> np.ndarray:
        idx = self.split_indices(name)
        if not idx:
            return np.empty((0, 3), dtype=np.int64)
        return self.as_array()[np.asarray(idx, dtype=np.int64)]

    def triple_set(self) -> frozenset:
        if self._triple_set is None:
            self._triple_set = frozenset(self.triples)
        return self._triple_set

    def labels_of(self, triple: Triple) -> tuple[str, str, str]:
        return (
            self.entity_dict.label_of(triple.head),
            self.relation_dict.label_of(triple.relation),
            self.entity_dict.label_of(triple.tail),
        )


def _default_splits(n: int) -> dict[str, list[int]]:
    return {"train": list(range(n)), "valid": [], "test": []}


def ingest(path, delimiter: str = "\t", skip_header: bool = False) -> TripleStore:
    """Read a delimited triple file into a TripleStore.

    Tab-delimited input is split verbatim on tabs; lines that are empty or
    start with '#' are skipped. Comma-delimited input goes through the csv
    module so quoted fields round-trip. Duplicate triples are collapsed to
    their first occurrence.
    """
    path = Path(path)
    entity_dict = Dictionary()
    relation_dict = Dictionary()
    triples: list[Triple] = []
    seen: set[Triple] = set()

    def add_row(fields, line_no):
        if len(fields) != 3:
            raise ParseError(path, line_no, f"expected 3 fields, got {len(fields)}")
        h, r, t = fields
        trip = Triple(entity_dict.add(h), relation_dict.add(r), entity_dict.add(t))
        if trip not in seen:
            seen.add(trip)
            triples.append(trip)

    if delimiter == ",":
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            for row in reader:
                if reader.line_num == 1 and skip_header:
                    continue
                if not row:
                    continue
                add_row(row, reader.line_num)
    else:
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if line_no == 1 and skip_header:
                    continue
                line = line.rstrip("\r\n")
                if not line or line.startswith("#"):
                    continue
                add_row(line.split(delimiter), line_no)

    if not triples:
        raise EmptyStoreError(f"no triples in {path}")
    return TripleStore(triples, entity_dict, relation_dict, _default_splits(len(triples)))


@dataclass(frozen=True)
class FusionKey:
    """The attribute names whose joint equality identifies one real entity."""

    attributes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.attributes:
            raise ConfigError("fusion key needs at least one attribute")


def fuse_entities(store: TripleStore, key: FusionKey, attribute_table: dict) -> TripleStore:
    """Merge entities whose key attributes all match exactly.

    ``attribute_table`` maps entity label -> {attribute: value}; a value of
    None marks the attribute as missing, and entities with any missing key
    attribute are never merged. Each merge group collapses into its lowest
    id; ids are re-densified afterwards and duplicate triples are dropped
    (their split membership goes with them).
    """
    num = store.num_entities
    groups: dict[tuple, list[int]] = {}
    for eid in range(num):
        label = store.entity_dict.reverse[eid]
        row = attribute_table.get(label)
        if row is None:
            raise SchemaError(f"attribute table does not cover entity {label!r}")
        values = []
        for attr in key.attributes:
            if attr not in row:
                raise SchemaError(f"key attribute {attr!r} absent from table schema for {label!r}")
            values.append(row[attr])
        if any(v is None for v in values):
            continue
        groups.setdefault(tuple(values), []).append(eid)

    mapping = list(range(num))
    for members in groups.values():
        target = members[0]  # ids were scanned ascending
        for eid in members:
            mapping[eid] = target

    survivors = sorted(set(mapping))
    new_of_old = {old: new for new, old in enumerate(survivors)}
    new_entity_dict = Dictionary(store.entity_dict.reverse[old] for old in survivors)

    new_triples: list[Triple] = []
    first_index: dict[Triple, int] = {}
    index_map: list[int | None] = []
    for trip in store.triples:
        nt = Triple(new_of_old[mapping[trip.head]], trip.relation, new_of_old[mapping[trip.tail]])
        if nt in first_index:
            index_map.append(None)
        else:
            first_index[nt] = len(new_triples)
            index_map.append(len(new_triples))
            new_triples.append(nt)

    new_splits = {
        name: sorted(index_map[i] for i in idx if index_map[i] is not None)
        for name, idx in store.splits.items()
    }
    relation_dict = Dictionary(store.relation_dict.reverse)
    return TripleStore(new_triples, new_entity_dict, relation_dict, new_splits)


def split(store: TripleStore, ratio, seed: int = 0) -> TripleStore:
    """Partition triples into train/valid/test by a seeded shuffle and contiguous cut."""
    if len(ratio) != 3:
        raise ConfigError("split ratio needs exactly three proportions")
    parts = [float(x) for x in ratio]
    if any(x < 0 for x in parts):
        raise ConfigError("split proportions must be non-negative")
    if abs(sum(parts) - 1.0) > 1e-9:
        raise ConfigError(f"split proportions must sum to 1, got {sum(parts)!r}")
    n = len(store.triples)
    perm = np.random.default_rng(seed).permutation(n)
    c1 = min(int(round(n * parts[0])), n)
    c2 = min(max(int(round(n * (parts[0] + parts[1]))), c1), n)
    splits = {
        "train": sorted(perm[:c1].tolist()),
        "valid": sorted(perm[c1:c2].tolist()),
        "test": sorted(perm[c2:].tolist()),
    }
    return TripleStore(list(store.triples), store.entity_dict, store.relation_dict, splits)


def canonicalize(store: TripleStore) -> TripleStore:
    """Reorder triples into on-disk order: split files concatenated.

    save_dir writes one file per split and load_dir renumbers triples by
    concatenating them, so global indices only survive a round trip if the
    store is already in that order. Canonicalize first when an index-bearing
    side file (corruption labels) will be read against the reloaded store.
    Triples assigned to no split are dropped, exactly as a round trip would.
    """
    triples: list[Triple] = []
    splits: dict[str, list[int]] = {}
    for name in SPLIT_NAMES:
        idx = store.splits.get(name, [])
        splits[name] = list(range(len(triples), len(triples) + len(idx)))
        triples.extend(store.triples[i] for i in idx)
    return TripleStore(triples, store.entity_dict, store.relation_dict, splits)


def export_graph(store: TripleStore, nodes_path, edges_path) -> None:
    """Write node and edge CSV files consumable by external graph viewers."""
    if not store.triples:
        raise EmptyStoreError("cannot export an empty store")
    with open(nodes_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, quoting=csv.QUOTE_ALL)
        writer.writerow(["id", "label"])
        for i, label in enumerate(store.entity_dict.reverse):
            writer.writerow([i, label])
    with open(edges_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, quoting=csv.QUOTE_ALL)
        writer.writerow(["head", "relation", "tail"])
        for trip in store.triples:
            writer.writerow(store.labels_of(trip))


def _check_label(label: str, path) -> str:
    if "\t" in label or "\n" in label or "\r" in label:
        raise ConfigError(f"label {label!r} contains a delimiter, cannot write {path}")
    return label


def write_triples_tsv(store: TripleStore, path, indices=None) -> None:
    """Write label triples, one tab-separated triple per line."""
    rows = store.triples if indices is None else [store.triples[i] for i in indices]
    with open(path, "w", encoding="utf-8") as f:
        for trip in rows:
            h, r, t = store.labels_of(trip)
            f.write(f"{_check_label(h, path)}\t{_check_label(r, path)}\t{_check_label(t, path)}\n")


def save_dir(store: TripleStore, dirpath) -> None:
    """Write a store as a directory: dictionaries plus one file per split."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for name, dictionary in (("entities.tsv", store.entity_dict), ("relations.tsv", store.relation_dict)):
        with open(dirpath / name, "w", encoding="utf-8") as f:
            for i, label in enumerate(dictionary.reverse):
                f.write(f"{i}\t{_check_label(label, name)}\n")
    for name in SPLIT_NAMES:
        write_triples_tsv(store, dirpath / f"{name}.tsv", store.splits.get(name, []))


def _read_dictionary(path) -> Dictionary:
    d = Dictionary()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError(path, line_no, f"expected 2 fields, got {len(fields)}")
            idx, label = fields
            if int(idx) != len(d):
                raise ParseError(path, line_no, f"ids must be dense and ascending, got {idx}")
            d.add(label)
    return d


def read_dictionary(path) -> Dictionary:
    """Read an ``id<TAB>label`` dictionary file."""
    return _read_dictionary(path)


def load_dir(dirpath) -> TripleStore:
    """Read back a directory written by save_dir."""
    dirpath = Path(dirpath)
    entity_dict = _read_dictionary(dirpath / "entities.tsv")
    relation_dict = _read_dictionary(dirpath / "relations.tsv")
    triples: list[Triple] = []
    seen: set[Triple] = set()
    splits: dict[str, list[int]] = {}
    for name in SPLIT_NAMES:
        path = dirpath / f"{name}.tsv"
        indices: list[int] = []
        if path.exists():
            with open(path, encoding="utf-8") as f:
                for line_no, line in enumerate(f, start=1):
                    line = line.rstrip("\r\n")
                    if not line or line.startswith("#"):
                        continue
                    fields = line.split("\t")
                    if len(fields) != 3:
                        raise ParseError(path, line_no, f"expected 3 fields, got {len(fields)}")
                    h, r, t = fields
                    if h not in entity_dict or t not in entity_dict:
                        raise ParseError(path, line_no, "entity label missing from entities.tsv")
                    if r not in relation_dict:
                        raise ParseError(path, line_no, "relation label missing from relations.tsv")
                    trip = Triple(entity_dict.id_of(h), relation_dict.id_of(r), entity_dict.id_of(t))
                    if trip in seen:
                        raise ParseError(path, line_no, "duplicate triple across split files")
                    seen.add(trip)
                    indices.append(len(triples))
                    triples.append(trip)
        splits[name] = indices
    if not triples:
        raise EmptyStoreError(f"no triples under {dirpath}")
    return TripleStore(triples, entity_dict, relation_dict, splits)
