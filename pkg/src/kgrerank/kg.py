"""Knowledge-graph loading, indexing, and relation co-occurrence statistics.

Datasets are directories of UTF-8 text files: ``train.txt`` / ``valid.txt`` /
``test.txt`` hold one tab-separated triple per line (raw identifier strings),
``entity2text.txt`` and ``relation2text.txt`` map identifiers to surface
names, and ``entity2textlong.txt`` maps identifiers to descriptions.
Dense integer ids are assigned by order of first appearance in the text
files, so id assignment is independent of triple order.
"""

from __future__ import annotations

import logging
import os
from collections import defaultdict
from typing import Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TRAIN_FILE = "train.txt"
VALID_FILE = "valid.txt"
TEST_FILE = "test.txt"
ENTITY_NAME_FILE = "entity2text.txt"
ENTITY_DESC_FILE = "entity2textlong.txt"
RELATION_NAME_FILE = "relation2text.txt"


class DataError(Exception):
    """Missing, malformed, or internally inconsistent dataset files."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class CooccurrenceTable:
    """Symmetric relation co-occurrence counts over train-split incidence.

    ``count(r, s)`` for r != s is the number of entities incident (as head
    or tail of a training fact) to both r and s; the diagonal ``count(r, r)``
    is the number of entities incident to r.
    """

    def __init__(self, matrix: np.ndarray):
        self.matrix = matrix

    def count(self, r1: int, r2: int) -> int:
        return int(self.matrix[r1, r2])


class KnowledgeGraph:
    """Immutable multi-relational graph with text attributes and indexes.

    Construction validates ids, enforces split disjointness, deduplicates
    triples within a split, and precomputes the adjacency lists, the
    all-splits truth set used by filtered ranking, and the relation
    co-occurrence table.
    """

    def __init__(
        self,
        entity_keys: Sequence[str],
        entity_names: Sequence[str],
        entity_descriptions: Sequence[str],
        relation_keys: Sequence[str],
        relation_names: Sequence[str],
        train: Iterable[Triple],
        valid: Iterable[Triple],
        test: Iterable[Triple],
    ):
        if not (len(entity_keys) == len(entity_names) == len(entity_descriptions)):
            raise DataError("entity tables have inconsistent lengths")
        if len(relation_keys) != len(relation_names):
            raise DataError("relation tables have inconsistent lengths")
        self.entity_keys = list(entity_keys)
        self.entity_names = list(entity_names)
        self.entity_descriptions = list(entity_descriptions)
        self.relation_keys = list(relation_keys)
        self.relation_names = list(relation_names)

        self.train = self._dedup([Triple(*t) for t in train], "train")
        self.valid = self._dedup([Triple(*t) for t in valid], "valid")
        self.test = self._dedup([Triple(*t) for t in test], "test")
        for split_name, triples in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            for t in triples:
                if not (0 <= t.head < self.num_entities and 0 <= t.tail < self.num_entities):
                    raise DataError(f"{split_name}: entity id out of range in {t}")
                if not (0 <= t.relation < self.num_relations):
                    raise DataError(f"{split_name}: relation id out of range in {t}")

        train_set = frozenset(self.train)
        valid_set = frozenset(self.valid)
        test_set = frozenset(self.test)
        if train_set & valid_set or train_set & test_set or valid_set & test_set:
            raise DataError("splits share triples; they must be disjoint")
        self.train_set = train_set
        self.all_true = train_set | valid_set | test_set

        adjacency: list[list[Triple]] = [[] for _ in range(self.num_entities)]
        for t in self.train:
            adjacency[t.head].append(t)
            if t.tail != t.head:
                adjacency[t.tail].append(t)
        self.adjacency = adjacency

        true_tails: dict[tuple[int, int], set[int]] = defaultdict(set)
        true_heads: dict[tuple[int, int], set[int]] = defaultdict(set)
        for h, r, t in self.all_true:
            true_tails[(h, r)].add(t)
            true_heads[(r, t)].add(h)
        self.true_tails = dict(true_tails)
        self.true_heads = dict(true_heads)

        self.cooc = build_cooccurrence(self)

    @property
    def num_entities(self) -> int:
        return len(self.entity_keys)

    @property
    def num_relations(self) -> int:
        return len(self.relation_keys)

    @staticmethod
    def _dedup(triples: list[Triple], split_name: str) -> list[Triple]:
        seen: set[Triple] = set()
        out = []
        for t in triples:
            if t in seen:
                continue
            seen.add(t)
            out.append(t)
        dropped = len(triples) - len(out)
        if dropped:
            logger.warning("%s split: dropped %d duplicated triple(s)", split_name, dropped)
        return out


def neighbors(kg: KnowledgeGraph, entity: int) -> tuple[Triple, ...]:
    """Training facts incident to ``entity``, in train-file order."""
    if not 0 <= entity < kg.num_entities:
        raise ValueError(f"entity id {entity} out of range [0, {kg.num_entities})")
    return tuple(kg.adjacency[entity])


def build_cooccurrence(kg: KnowledgeGraph) -> CooccurrenceTable:
    """Count, for every relation pair, the entities incident to both."""
    n = kg.num_relations
    matrix = np.zeros((n, n), dtype=np.int64)
    for facts in kg.adjacency:
        rels = sorted({f.relation for f in facts})
        for i, r1 in enumerate(rels):
            matrix[r1, r1] += 1
            for r2 in rels[i + 1 :]:
                matrix[r1, r2] += 1
                matrix[r2, r1] += 1
    return CooccurrenceTable(matrix)


def _read_lines(path: str) -> list[str]:
    if not os.path.isfile(path):
        raise DataError(f"missing dataset file: {path}")
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n").rstrip("\r") for line in f]


def _read_text_table(path: str) -> list[tuple[str, str]]:
    rows = []
    seen: set[str] = set()
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line:
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{lineno}: expected '<id>\\t<text>'")
        key, text = line.split("\t", 1)
        if key in seen:
            raise DataError(f"{path}:{lineno}: duplicate identifier {key!r}")
        seen.add(key)
        rows.append((key, text))
    return rows


def _read_triples(path: str, entity_ids: dict[str, int], relation_ids: dict[str, int]) -> list[Triple]:
    triples = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
        h, r, t = fields
        if h not in entity_ids:
            raise DataError(f"{path}:{lineno}: unknown entity {h!r}")
        if t not in entity_ids:
            raise DataError(f"{path}:{lineno}: unknown entity {t!r}")
        if r not in relation_ids:
            raise DataError(f"{path}:{lineno}: unknown relation {r!r}")
        triples.append(Triple(entity_ids[h], relation_ids[r], entity_ids[t]))
    return triples


def load_kg(dataset_dir: str) -> KnowledgeGraph:
    """Load and validate a dataset directory."""
    ent_rows = _read_text_table(os.path.join(dataset_dir, ENTITY_NAME_FILE))
    rel_rows = _read_text_table(os.path.join(dataset_dir, RELATION_NAME_FILE))
    entity_keys = [k for k, _ in ent_rows]
    entity_names = [v for _, v in ent_rows]
    relation_keys = [k for k, _ in rel_rows]
    relation_names = [v for _, v in rel_rows]
    entity_ids = {k: i for i, k in enumerate(entity_keys)}
    relation_ids = {k: i for i, k in enumerate(relation_keys)}

    descriptions = [""] * len(entity_keys)
    for key, text in _read_text_table(os.path.join(dataset_dir, ENTITY_DESC_FILE)):
        if key not in entity_ids:
            raise DataError(f"{ENTITY_DESC_FILE}: description for unknown entity {key!r}")
        descriptions[entity_ids[key]] = text

    train = _read_triples(os.path.join(dataset_dir, TRAIN_FILE), entity_ids, relation_ids)
    valid = _read_triples(os.path.join(dataset_dir, VALID_FILE), entity_ids, relation_ids)
    test = _read_triples(os.path.join(dataset_dir, TEST_FILE), entity_ids, relation_ids)
    return KnowledgeGraph(
        entity_keys, entity_names, descriptions, relation_keys, relation_names, train, valid, test
    )


def write_kg(kg: KnowledgeGraph, out_dir: str) -> None:
    """Serialize a graph back to the dataset file format (round-trip safe)."""
    os.makedirs(out_dir, exist_ok=True)

    def dump(name: str, lines: Iterable[str]) -> None:
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as f:
            for line in lines:
                f.write(line + "\n")

    dump(ENTITY_NAME_FILE, (f"{k}\t{n}" for k, n in zip(kg.entity_keys, kg.entity_names)))
    dump(
        ENTITY_DESC_FILE,
        (f"{k}\t{d}" for k, d in zip(kg.entity_keys, kg.entity_descriptions) if d),
    )
    dump(RELATION_NAME_FILE, (f"{k}\t{n}" for k, n in zip(kg.relation_keys, kg.relation_names)))
    for name, triples in ((TRAIN_FILE, kg.train), (VALID_FILE, kg.valid), (TEST_FILE, kg.test)):
        dump(
            name,
            (
                f"{kg.entity_keys[h]}\t{kg.relation_keys[r]}\t{kg.entity_keys[t]}"
                for h, r, t in triples
            ),
        )
