"""Synthetic personnel-relations graph with labeled corruption injection.

The generator builds a rule-governed social graph over three entity classes
(people, occupations, locations) and five relation families:

* spouse          symmetric, both directions always emitted
* parent/child    ``parent_of`` and its exact inverse ``child_of``
* sibling         symmetric closure over children sharing a family
* works_as        each person has exactly one occupation, skewed toward a
                  dominant "unknown" class
* lives_in        each person has exactly one location, roughly uniform

Everything is driven by one seeded generator, so a config maps to exactly
one graph, bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GenerationError, ParseError
from .store import Triple, Dictionary, TripleStore

RULE_SPOUSE = "spouse"
RULE_PARENT_CHILD = "parent_child"
RULE_SIBLING = "sibling"
RULE_WORKS_AS = "works_as"
RULE_LIVES_IN = "lives_in"
ALL_RULES = (RULE_SPOUSE, RULE_PARENT_CHILD, RULE_SIBLING, RULE_WORKS_AS, RULE_LIVES_IN)

REL_SPOUSE = "spouse"
REL_PARENT = "parent_of"
REL_CHILD = "child_of"
REL_SIBLING = "sibling_of"
REL_WORKS = "works_as"
REL_LIVES = "lives_in"

CORRUPTION_KINDS = ("head-swap", "tail-swap", "relation-swap")


@dataclass(frozen=True)
class SynthConfig:
    num_people: int = 4950
    num_occupations: int = 11
    num_locations: int = 30
    relation_rules: tuple[str, ...] = ALL_RULES
    noise_rate: float = 0.0
    seed: int = 0
    marriage_rate: float = 0.4
    child_rate: float = 0.9
    unknown_share: float = 0.35

    def validate(self) -> None:
        if self.num_people < 1:
            raise ConfigError("num_people must be at least 1")
        if self.num_occupations < 1 or self.num_locations < 1:
            raise ConfigError("need at least one occupation and one location")
        unknown = set(self.relation_rules) - set(ALL_RULES)
        if unknown:
            raise ConfigError(f"unknown relation rules: {sorted(unknown)}")
        if not self.relation_rules:
            raise ConfigError("at least one relation rule must be enabled")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError("noise_rate must lie in [0, 1]")
        for name in ("marriage_rate", "child_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.unknown_share <= 1.0:
            raise ConfigError("unknown_share must lie in (0, 1]")
        family = {RULE_SPOUSE, RULE_PARENT_CHILD, RULE_SIBLING} & set(self.relation_rules)
        if family and self.num_people < 2:
            raise ConfigError(f"rules {sorted(family)} need at least 2 people")


def expected_triple_count(config: SynthConfig) -> float:
    """Closed-form expectation of the clean triple count under the rule fan-outs."""
    p = config.num_people
    rules = set(config.relation_rules)
    couples = int(round(config.marriage_rate * p / 2))
    if {RULE_SPOUSE, RULE_PARENT_CHILD, RULE_SIBLING} & rules and p >= 2:
        couples = max(1, couples)
    children = int(round(config.child_rate * p))
    total = 0.0
    if RULE_SPOUSE in rules:
        total += 2 * couples
    if RULE_PARENT_CHILD in rules:
        total += 4 * children
    if RULE_SIBLING in rules and couples > 0:
        # children land on couples uniformly; E[sum k(k-1)] = n(n-1)/C
        total += children * (children - 1) / couples
    if RULE_WORKS_AS in rules:
        total += p
    if RULE_LIVES_IN in rules:
        total += p
    return total * (1.0 + config.noise_rate)


def _occupation_weights(num: int, unknown_share: float) -> np.ndarray:
    if num == 1:
        return np.array([1.0])
    rest = 0.8 ** np.arange(num - 1)
    rest *= (1.0 - unknown_share) / rest.sum()
    return np.concatenate([[unknown_share], rest])


def generate(config: SynthConfig) -> TripleStore:
    """Produce the rule-governed graph for a config. Pure in the config."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    p = config.num_people
    rules = set(config.relation_rules)

    pw = max(4, len(str(p - 1)))
    people = [f"per_{i:0{pw}d}" for i in range(p)]
    occupations = ["occ_unknown"] + [f"occ_{i:02d}" for i in range(1, config.num_occupations)]
    locations = [f"loc_{i:02d}" for i in range(config.num_locations)]
    entity_dict = Dictionary(people + occupations + locations)
    occ_base = p
    loc_base = p + config.num_occupations

    relation_dict = Dictionary()
    if RULE_SPOUSE in rules:
        relation_dict.add(REL_SPOUSE)
    if RULE_PARENT_CHILD in rules:
        relation_dict.add(REL_PARENT)
        relation_dict.add(REL_CHILD)
    if RULE_SIBLING in rules:
        relation_dict.add(REL_SIBLING)
    if RULE_WORKS_AS in rules:
        relation_dict.add(REL_WORKS)
    if RULE_LIVES_IN in rules:
        relation_dict.add(REL_LIVES)

    triples: list[Triple] = []
    seen: set[Triple] = set()

    def emit(h: int, r: str, t: int) -> None:
        trip = Triple(h, relation_dict.id_of(r), t)
        if trip not in seen:
            seen.add(trip)
            triples.append(trip)

    need_families = bool({RULE_SPOUSE, RULE_PARENT_CHILD, RULE_SIBLING} & rules)
    couples: list[tuple[int, int]] = []
    if need_families:
        num_couples = int(round(config.marriage_rate * p / 2))
        num_couples = max(1, min(num_couples, p // 2))
        perm = rng.permutation(p)
        couples = [(int(perm[2 * i]), int(perm[2 * i + 1])) for i in range(num_couples)]

    if RULE_SPOUSE in rules:
        for a, b in couples:
            emit(a, REL_SPOUSE, b)
            emit(b, REL_SPOUSE, a)

    if {RULE_PARENT_CHILD, RULE_SIBLING} & rules:
        num_children = int(round(config.child_rate * p))
        child_ids = rng.choice(p, size=num_children, replace=False)
        families: dict[int, list[int]] = {}
        for cid in child_ids.tolist():
            fam = None
            for _ in range(100):
                cand = int(rng.integers(len(couples)))
                if cid not in couples[cand]:
                    fam = cand
                    break
            if fam is None:
                continue  # tiny graphs: nobody outside this child's own couple
            families.setdefault(fam, []).append(cid)
            if RULE_PARENT_CHILD in rules:
                a, b = couples[fam]
                emit(a, REL_PARENT, cid)
                emit(b, REL_PARENT, cid)
                emit(cid, REL_CHILD, a)
                emit(cid, REL_CHILD, b)
        if RULE_SIBLING in rules:
            for fam in sorted(families):
                members = families[fam]
                for x in members:
                    for y in members:
                        if x != y:
                            emit(x, REL_SIBLING, y)

    if RULE_WORKS_AS in rules:
        weights = _occupation_weights(config.num_occupations, config.unknown_share)
        occ_of = rng.choice(config.num_occupations, size=p, p=weights)
        for person in range(p):
            emit(person, REL_WORKS, occ_base + int(occ_of[person]))

    if RULE_LIVES_IN in rules:
        loc_of = rng.integers(config.num_locations, size=p)
        for person in range(p):
            emit(person, REL_LIVES, loc_base + int(loc_of[person]))

    if config.noise_rate > 0.0:
        signatures = {
            REL_SPOUSE: ("per", "per"),
            REL_PARENT: ("per", "per"),
            REL_CHILD: ("per", "per"),
            REL_SIBLING: ("per", "per"),
            REL_WORKS: ("per", "occ"),
            REL_LIVES: ("per", "loc"),
        }
        ranges = {
            "per": (0, p),
            "occ": (occ_base, occ_base + config.num_occupations),
            "loc": (loc_base, loc_base + config.num_locations),
        }
        labels = list(relation_dict.reverse)
        count = int(config.noise_rate * len(triples) + 0.5)
        for _ in range(count):
            placed = False
            for _ in range(200):
                rel = labels[int(rng.integers(len(labels)))]
                hk, tk = signatures[rel]
                h = int(rng.integers(*ranges[hk]))
                t = int(rng.integers(*ranges[tk]))
                if hk == tk and h == t:
                    continue
                trip = Triple(h, relation_dict.id_of(rel), t)
                if trip not in seen:
                    emit(h, rel, t)
                    placed = True
                    break
            if not placed:
                raise GenerationError("could not place a noise triple without collision")

    splits = {"train": list(range(len(triples))), "valid": [], "test": []}
    return TripleStore(triples, entity_dict, relation_dict, splits)


@dataclass(frozen=True)
class CorruptionLabel:
    """Where a corruption landed and what it replaced."""

    triple_index: int
    kind: str
    original: Triple


def _entity_classes(store: TripleStore) -> dict[str, np.ndarray]:
    buckets: dict[str, list[int]] = {}
    for eid, label in enumerate(store.entity_dict.reverse):
        buckets.setdefault(label.split("_", 1)[0], []).append(eid)
    return {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}


def _relation_signatures(store: TripleStore) -> dict[int, tuple[str, str]]:
    """Modal (head class, tail class) per relation, derived from the data."""
    counts: dict[int, dict[tuple[str, str], int]] = {}
    classes = {}
    for eid, label in enumerate(store.entity_dict.reverse):
        classes[eid] = label.split("_", 1)[0]
    for trip in store.triples:
        sig = (classes[trip.head], classes[trip.tail])
        counts.setdefault(trip.relation, {})
        counts[trip.relation][sig] = counts[trip.relation].get(sig, 0) + 1
    return {
        rel: max(sigs.items(), key=lambda kv: (kv[1], kv[0]))[0]
        for rel, sigs in counts.items()
    }


def inject_corruptions(store: TripleStore, fraction: float, seed: int = 0):
    """Swap one slot of round(fraction * |test|) test triples, type-plausibly.

    Returns (corrupted_store, labels). Replacement entities come from the
    same class as the original (people for people and so on); replacement
    relations must share the original's class signature. No corrupted triple
    collides with a clean one, and restoring each label's original triple at
    its index recovers the clean store.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError("corruption fraction must lie strictly between 0 and 1")
    test_idx = store.splits.get("test", [])
    count = int(fraction * len(test_idx) + 0.5)
    if count == 0:
        return store, []

    rng = np.random.default_rng(seed)
    classes = _entity_classes(store)
    class_of = {}
    for name, members in classes.items():
        for eid in members.tolist():
            class_of[eid] = name
    signatures = _relation_signatures(store)
    compatible = {
        rel: [r for r, s in signatures.items() if r != rel and s == sig]
        for rel, sig in signatures.items()
    }

    clean = set(store.triples)
    corrupted: set[Triple] = set()
    chosen = rng.choice(len(test_idx), size=count, replace=False)
    chosen_indices = sorted(test_idx[i] for i in chosen.tolist())

    new_triples = list(store.triples)
    labels: list[CorruptionLabel] = []
    for idx in chosen_indices:
        orig = store.triples[idx]
        result = None
        for k in rng.permutation(len(CORRUPTION_KINDS)).tolist():
            kind = CORRUPTION_KINDS[k]
            for _ in range(50):
                if kind == "head-swap":
                    pool = classes[class_of[orig.head]]
                    if len(pool) < 2:
                        break
                    repl = int(pool[int(rng.integers(len(pool)))])
                    if repl == orig.head:
                        continue
                    cand = Triple(repl, orig.relation, orig.tail)
                elif kind == "tail-swap":
                    pool = classes[class_of[orig.tail]]
                    if len(pool) < 2:
                        break
                    repl = int(pool[int(rng.integers(len(pool)))])
                    if repl == orig.tail:
                        continue
                    cand = Triple(orig.head, orig.relation, repl)
                else:
                    pool = compatible.get(orig.relation, [])
                    if not pool:
                        break
                    repl = pool[int(rng.integers(len(pool)))]
                    cand = Triple(orig.head, repl, orig.tail)
                if cand not in clean and cand not in corrupted:
                    result = (kind, cand)
                    break
            if result:
                break
        if result is None:
            raise GenerationError(f"could not corrupt triple at index {idx}")
        kind, cand = result
        new_triples[idx] = cand
        corrupted.add(cand)
        labels.append(CorruptionLabel(idx, kind, orig))

    out = TripleStore(new_triples, store.entity_dict, store.relation_dict,
                      {k: list(v) for k, v in store.splits.items()})
    return out, labels


def write_corruption_labels(labels, store: TripleStore, path) -> None:
    """CSV of injected corruptions: index, kind, and the original triple's labels."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "kind", "orig_head", "orig_rel", "orig_tail"])
        for lab in labels:
            h, r, t = store.labels_of(lab.original)
            writer.writerow([lab.triple_index, lab.kind, h, r, t])


def read_corruption_labels(path, store: TripleStore) -> list[CorruptionLabel]:
    labels = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["index", "kind", "orig_head", "orig_rel", "orig_tail"]:
            raise ParseError(path, 1, "unexpected corruption label header")
        for row in reader:
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(path, reader.line_num, f"expected 5 fields, got {len(row)}")
            idx, kind, h, r, t = row
            if kind not in CORRUPTION_KINDS:
                raise ParseError(path, reader.line_num, f"unknown corruption kind {kind!r}")
            orig = Triple(store.entity_dict.id_of(h), store.relation_dict.id_of(r),
                          store.entity_dict.id_of(t))
            labels.append(CorruptionLabel(int(idx), kind, orig))
    return labels
