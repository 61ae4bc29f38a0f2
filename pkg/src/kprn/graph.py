"""Triplet/interaction ingestion and the enriched graph.

The enriched graph merges the knowledge graph with user-item interactions.
Users become entities of their own type, every observed interaction becomes
an ``interact`` triplet, and every triplet is mirrored by an inverse edge so
the path extractor only ever walks forward adjacency.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConflictingType, DataError, MalformedRecord, SnapshotError, UnknownEntity

INTERACT = "interact"
INTERACTED_BY = "interacted_by"
NULL_RELATION = "<null>"
INVERSE_SUFFIX = "_inv"
USER_TYPE = "user"
ITEM_TYPE = "item"
ENTITY_TYPE = "entity"

GRAPH_MAGIC = b"KPRN-GRAPH 1\n"


class Vocab:
    """Bidirectional string <-> dense id map; ids are assigned in insertion order."""

    def __init__(self, names: Iterable[str] = ()):
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self.index.get(name)
        if idx is None:
            idx = len(self.names)
            self.index[name] = idx
            self.names.append(name)
        return idx

    def __getitem__(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise UnknownEntity(f"unknown identifier {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self.index

    def __len__(self) -> int:
        return len(self.names)

    def name(self, idx: int) -> str:
        return self.names[idx]


# ---------------------------------------------------------------------------
# file loaders
# ---------------------------------------------------------------------------


def _read_records(path, min_fields, max_fields):
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if not min_fields <= len(fields) <= max_fields:
                want = str(min_fields) if min_fields == max_fields else f"{min_fields}-{max_fields}"
                raise MalformedRecord(path, lineno, f"expected {want} tab-separated fields, got {len(fields)}")
            yield lineno, fields


def load_triplets(path) -> list[tuple[str, str, str]]:
    """Read a tab-separated ``head<TAB>relation<TAB>tail`` file in file order."""
    return [tuple(fields) for _, fields in _read_records(path, 3, 3)]


def load_interactions(path) -> list[tuple[str, str]]:
    """Read ``user<TAB>item[<TAB>label]`` records and return the positive pairs.

    A missing label means positive. Records labelled ``0`` are dropped.
    """
    pairs = []
    for lineno, fields in _read_records(path, 2, 3):
        if len(fields) == 3:
            try:
                label = float(fields[2])
            except ValueError:
                raise MalformedRecord(path, lineno, f"label {fields[2]!r} is not numeric") from None
            if label <= 0:
                continue
        pairs.append((fields[0], fields[1]))
    return pairs


def load_entity_types(path) -> dict[str, str]:
    types: dict[str, str] = {}
    for lineno, (entity, etype) in _read_records(path, 2, 2):
        prev = types.setdefault(entity, etype)
        if prev != etype:
            raise ConflictingType(f"{path}:{lineno}: entity {entity!r} typed both {prev!r} and {etype!r}")
    return types


def write_pairs(path, pairs: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")


# ---------------------------------------------------------------------------
# interactions
# ---------------------------------------------------------------------------


@dataclass
class InteractionSet:
    """Positive interactions with a per-user train/test holdout.

    Works equally over string names and interned integer ids.
    """

    train: dict
    test: dict
    items: list = field(default_factory=list)

    @property
    def users(self) -> list:
        return sorted(set(self.train) | set(self.test))

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @cached_property
    def positives(self) -> dict:
        """user -> frozenset of every positive item (train and test)."""
        out = {}
        for u in self.users:
            out[u] = frozenset(self.train.get(u, ())) | frozenset(self.test.get(u, ()))
        return out

    def train_pairs(self) -> list:
        return [(u, i) for u in sorted(self.train) for i in self.train[u]]

    def test_pairs(self) -> list:
        return [(u, i) for u in sorted(self.test) for i in self.test[u]]


def split_interactions(interactions: Sequence[tuple], train_fraction: float, seed: int) -> InteractionSet:
    """Randomly hold out ``1 - train_fraction`` of each user's items.

    Users are visited in sorted order and each gets its own shuffle, so the
    split only depends on the interaction multiset and ``seed``. A user with
    a single interaction keeps it in train.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    by_user: dict = defaultdict(list)
    items: dict = {}
    for u, i in interactions:
        items.setdefault(i, None)
        if i not in by_user[u]:
            by_user[u].append(i)
    rng = np.random.default_rng(seed)
    train, test = {}, {}
    for u in sorted(by_user):
        its = sorted(by_user[u])
        order = rng.permutation(len(its))
        n_train = min(len(its), max(1, int(round(train_fraction * len(its)))))
        train[u] = [its[k] for k in sorted(order[:n_train])]
        test[u] = [its[k] for k in sorted(order[n_train:])]
    return InteractionSet(train=train, test=test, items=sorted(items))


# ---------------------------------------------------------------------------
# enriched graph
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class EnrichedGraph:
    entities: Vocab
    relations: Vocab
    types: Vocab
    entity_type: np.ndarray  # int32[n_entities]
    users: np.ndarray  # sorted int64
    items: np.ndarray  # sorted int64
    triplets: np.ndarray  # int64[n, 3], forward facts (KG + interact)
    inverse: np.ndarray  # int32[n_relations], relation -> its inverse (null -> null)
    indptr: np.ndarray  # int64[n_entities + 1]
    nbr: np.ndarray  # int32[n_edges]
    rel: np.ndarray  # int32[n_edges]
    n_kg_triplets: int = 0

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def n_edges(self) -> int:
        return int(self.nbr.shape[0])

    @property
    def interact_rel(self) -> int:
        return self.relations[INTERACT]

    @property
    def interacted_by_rel(self) -> int:
        return self.relations[INTERACTED_BY]

    @property
    def null_rel(self) -> int:
        return self.relations[NULL_RELATION]

    @cached_property
    def user_set(self) -> frozenset:
        return frozenset(self.users.tolist())

    @cached_property
    def item_set(self) -> frozenset:
        return frozenset(self.items.tolist())

    def neighbors(self, entity: int) -> list[tuple[int, int]]:
        """Outgoing ``(relation, entity)`` steps, sorted."""
        lo, hi = self.indptr[entity], self.indptr[entity + 1]
        return list(zip(self.rel[lo:hi].tolist(), self.nbr[lo:hi].tolist()))

    @cached_property
    def edge_set(self) -> frozenset:
        heads = np.repeat(np.arange(self.n_entities), np.diff(self.indptr))
        return frozenset(zip(heads.tolist(), self.rel.tolist(), self.nbr.tolist()))

    def has_edge(self, head: int, relation: int, tail: int) -> bool:
        return (head, relation, tail) in self.edge_set

    def entity_id(self, name: str) -> int:
        return self.entities[name]

    def encode_pairs(self, pairs: Iterable[tuple[str, str]]) -> list[tuple[int, int]]:
        return [(self.entities[u], self.entities[i]) for u, i in pairs]

    def encode_interactions(self, iset: InteractionSet) -> InteractionSet:
        enc = lambda d: {self.entities[u]: [self.entities[i] for i in its] for u, its in d.items()}
        return InteractionSet(train=enc(iset.train), test=enc(iset.test), items=self.items.tolist())

    def self_loops(self) -> list[tuple[int, int, int]]:
        """Forward facts whose head equals their tail. Legal, but usually a data bug."""
        mask = self.triplets[:, 0] == self.triplets[:, 2]
        return [tuple(t) for t in self.triplets[mask].tolist()]


def build_enriched_graph(
    triplets: Sequence[tuple[str, str, str]],
    interactions: Sequence[tuple[str, str]],
    entity_types: dict[str, str] | None = None,
    withhold: Iterable[tuple[str, str]] = (),
) -> EnrichedGraph:
    """Merge KG triplets and interactions into one traversable graph.

    Items are unified with KG entities by exact name match. Every user and
    item in ``interactions`` becomes an entity, but pairs listed in
    ``withhold`` (held-out test positives) get no edges.
    """
    entity_types = entity_types or {}
    withhold = set(withhold)
    reserved = {INTERACT, INTERACTED_BY, NULL_RELATION}

    kg = list(dict.fromkeys(tuple(t) for t in triplets))
    users = list(dict.fromkeys(u for u, _ in interactions))
    items = list(dict.fromkeys(i for _, i in interactions))
    user_names, item_names = set(users), set(items)
    clash = user_names & item_names
    if clash:
        raise ConflictingType(f"name(s) used both as user and item: {sorted(clash)[:5]}")

    entities = Vocab()
    for h, _, t in kg:
        entities.add(h)
        entities.add(t)
    kg_names = set(entities.names)
    clash = user_names & kg_names
    if clash:
        raise ConflictingType(f"user name(s) collide with knowledge-graph entities: {sorted(clash)[:5]}")
    for i in items:
        entities.add(i)
    for u in users:
        entities.add(u)

    types = Vocab()
    for name in entity_types.values():
        types.add(name)
    etype = np.empty(len(entities), dtype=np.int32)
    for idx, name in enumerate(entities.names):
        declared = entity_types.get(name)
        if name in user_names:
            if declared is not None and declared != USER_TYPE:
                raise ConflictingType(f"user {name!r} declared with type {declared!r}")
            etype[idx] = types.add(USER_TYPE)
        elif declared is not None:
            if declared == USER_TYPE:
                raise ConflictingType(f"non-user entity {name!r} declared with type {USER_TYPE!r}")
            etype[idx] = types[declared]
        else:
            etype[idx] = types.add(ITEM_TYPE if name in item_names else ENTITY_TYPE)
    # users always carry their own type even when absent from the type file
    types.add(USER_TYPE)

    relations = Vocab()
    for _, r, _ in kg:
        if r in reserved or r.endswith(INVERSE_SUFFIX):
            raise DataError(f"relation name {r!r} is reserved")
        relations.add(r)
    n_kg_rel = len(relations)
    for r in list(relations.names):
        relations.add(r + INVERSE_SUFFIX)
    interact = relations.add(INTERACT)
    interacted_by = relations.add(INTERACTED_BY)
    null = relations.add(NULL_RELATION)
    inverse = np.empty(len(relations), dtype=np.int32)
    inverse[:n_kg_rel] = np.arange(n_kg_rel) + n_kg_rel
    inverse[n_kg_rel : 2 * n_kg_rel] = np.arange(n_kg_rel)
    inverse[interact], inverse[interacted_by], inverse[null] = interacted_by, interact, null

    facts = [(entities.index[h], relations.index[r], entities.index[t]) for h, r, t in kg]
    n_kg = len(facts)
    seen = set()
    for u, i in interactions:
        if (u, i) in withhold or (u, i) in seen:
            continue
        seen.add((u, i))
        facts.append((entities.index[u], interact, entities.index[i]))
    fwd = np.asarray(facts, dtype=np.int64).reshape(-1, 3)

    heads = np.concatenate([fwd[:, 0], fwd[:, 2]])
    rels = np.concatenate([fwd[:, 1], inverse[fwd[:, 1]]])
    tails = np.concatenate([fwd[:, 2], fwd[:, 0]])
    order = np.lexsort((tails, rels, heads))
    heads, rels, tails = heads[order], rels[order], tails[order]
    indptr = np.zeros(len(entities) + 1, dtype=np.int64)
    np.cumsum(np.bincount(heads, minlength=len(entities)), out=indptr[1:])

    user_ids = np.array(sorted(entities.index[u] for u in users), dtype=np.int64)
    item_ids = np.array(sorted(entities.index[i] for i in items), dtype=np.int64)
    return EnrichedGraph(
        entities=entities,
        relations=relations,
        types=types,
        entity_type=etype,
        users=user_ids,
        items=item_ids,
        triplets=fwd,
        inverse=inverse,
        indptr=indptr,
        nbr=tails.astype(np.int32),
        rel=rels.astype(np.int32),
        n_kg_triplets=n_kg,
    )


# ---------------------------------------------------------------------------
# snapshot
# ---------------------------------------------------------------------------

_GRAPH_ARRAYS = (
    ("entity_type", "<i4"),
    ("users", "<i8"),
    ("items", "<i8"),
    ("triplets", "<i8"),
    ("inverse", "<i4"),
    ("indptr", "<i8"),
    ("nbr", "<i4"),
    ("rel", "<i4"),
)


def save_graph(graph: EnrichedGraph, path) -> None:
    header = {
        "entities": graph.entities.names,
        "relations": graph.relations.names,
        "types": graph.types.names,
        "n_kg_triplets": graph.n_kg_triplets,
        "arrays": [[name, dtype, list(getattr(graph, name).shape)] for name, dtype in _GRAPH_ARRAYS],
    }
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8"))
        fh.write(b"\n")
        for name, dtype in _GRAPH_ARRAYS:
            fh.write(np.ascontiguousarray(getattr(graph, name), dtype=dtype).tobytes())


def load_graph(path) -> EnrichedGraph:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    if not data.startswith(GRAPH_MAGIC):
        raise SnapshotError(f"{path}: not a graph snapshot (bad version header)")
    try:
        pos = len(GRAPH_MAGIC)
        end = data.index(b"\n", pos)
        header = json.loads(data[pos:end].decode("utf-8"))
        pos = end + 1
        arrays = {}
        for name, dtype, shape in header["arrays"]:
            n = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(data, dtype=dtype, count=n, offset=pos).reshape(shape).copy()
            pos += n * np.dtype(dtype).itemsize
    except (ValueError, KeyError) as exc:
        raise SnapshotError(f"{path}: corrupt graph snapshot ({exc})") from None
    if pos != len(data):
        raise SnapshotError(f"{path}: trailing bytes in graph snapshot")
    return EnrichedGraph(
        entities=Vocab(header["entities"]),
        relations=Vocab(header["relations"]),
        types=Vocab(header["types"]),
        n_kg_triplets=header["n_kg_triplets"],
        **arrays,
    )
