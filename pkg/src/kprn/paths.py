"""Bounded simple-path enumeration between users and items."""

from __future__ import annotations

import struct
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Callable, Iterable, NamedTuple

import numpy as np

from . import _backend
from .errors import DataError, SnapshotError, UnknownEntity
from .graph import EnrichedGraph

DEFAULT_MAX_NODES = 6
PATHS_MAGIC = b"KPRN-PATHS 1\n"
TEXT_HEADER = "# kprn-paths 1"


class Path(NamedTuple):
    entities: tuple
    relations: tuple  # same length as entities; last entry is the null relation

    def __len__(self):
        return len(self.entities)


@dataclass(eq=False)
class PathSet:
    """All (or a sample of the) paths connecting one user-item pair.

    Paths are stored flat: path ``k`` spans ``entities[offsets[k]:offsets[k+1]]``.
    """

    user: int
    item: int
    entities: np.ndarray
    relations: np.ndarray
    offsets: np.ndarray

    @classmethod
    def empty(cls, user, item):
        z = np.zeros(0, dtype=np.int32)
        return cls(int(user), int(item), z, z.copy(), np.zeros(1, dtype=np.int64))

    @classmethod
    def from_paths(cls, user, item, paths: Iterable[tuple[Iterable[int], Iterable[int]]]):
        ents, rels, offs = [], [], [0]
        for e, r in paths:
            e, r = list(e), list(r)
            if len(e) != len(r):
                raise ValueError("entity and relation sequences differ in length")
            ents.extend(e)
            rels.extend(r)
            offs.append(len(ents))
        return cls(
            int(user),
            int(item),
            np.asarray(ents, dtype=np.int32),
            np.asarray(rels, dtype=np.int32),
            np.asarray(offs, dtype=np.int64),
        )

    def __len__(self):
        return len(self.offsets) - 1

    def __getitem__(self, k) -> Path:
        a, b = self.offsets[k], self.offsets[k + 1]
        return Path(tuple(self.entities[a:b].tolist()), tuple(self.relations[a:b].tolist()))

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def subset(self, index) -> "PathSet":
        return PathSet.from_paths(self.user, self.item, ((p.entities, p.relations) for p in (self[k] for k in index)))

    def same_as(self, other: "PathSet") -> bool:
        return (
            self.user == other.user
            and self.item == other.item
            and np.array_equal(self.entities, other.entities)
            and np.array_equal(self.relations, other.relations)
            and np.array_equal(self.offsets, other.offsets)
        )


class PathCorpus(dict):
    """Mapping ``(user, item) -> PathSet``.

    With an ``extractor`` attached, missing pairs are extracted and cached on
    first access; without one they read as empty path sets.
    """

    def __init__(self, *args, extractor: Callable[[int, int], PathSet] | None = None, **kw):
        super().__init__(*args, **kw)
        self.extractor = extractor

    def __missing__(self, pair):
        u, i = pair
        if self.extractor is None:
            return PathSet.empty(u, i)
        ps = self.extractor(u, i)
        self[pair] = ps
        return ps

    def n_paths(self) -> int:
        return sum(len(ps) for ps in self.values())

    def mean_path_nodes(self) -> float:
        total = sum(int(ps.offsets[-1]) for ps in self.values())
        n = self.n_paths()
        return total / n if n else 0.0


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------


def _adjacency(graph: EnrichedGraph, kernels):
    cache = graph.__dict__.setdefault("_adjacency_cache", {})
    if kernels.BACKEND not in cache:
        cache[kernels.BACKEND] = kernels.make_adjacency(graph.indptr, graph.nbr, graph.rel)
    return cache[kernels.BACKEND]


def _check_endpoints(graph, user, item, max_nodes):
    if max_nodes < 2:
        raise ValueError(f"max_nodes must be >= 2, got {max_nodes}")
    if user not in graph.user_set:
        raise UnknownEntity(f"entity {user} is not a user")
    if item not in graph.item_set:
        raise UnknownEntity(f"entity {item} is not an item")


def _sample(ps: PathSet, cap, seed) -> PathSet:
    if cap is None or len(ps) <= cap:
        return ps
    rng = np.random.default_rng([seed, ps.user, ps.item])
    keep = np.sort(rng.choice(len(ps), size=cap, replace=False))
    return ps.subset(keep)


def _run(graph, kernels, adj, dist, user, item, min_nodes, max_nodes, cap, seed):
    ents, rels, offs = kernels.enumerate_paths(adj, dist, user, item, min_nodes, max_nodes, graph.null_rel)
    return _sample(PathSet(int(user), int(item), ents, rels, offs), cap, seed)


def extract_paths(
    graph: EnrichedGraph,
    user: int,
    item: int,
    max_nodes: int = DEFAULT_MAX_NODES,
    cap: int | None = None,
    seed: int = 0,
    min_nodes: int = 2,
    backend: str | None = None,
) -> PathSet:
    """Enumerate simple user -> item paths with ``min_nodes..max_nodes`` nodes.

    Paths come out in lexicographic order of their (relation, entity) step
    sequence. When ``cap`` is set and exceeded, a uniform sample of ``cap``
    paths is kept (still in that order); the sample depends only on
    ``(seed, user, item)``.
    """
    _check_endpoints(graph, user, item, max_nodes)
    kernels = _backend.get(backend)
    adj = _adjacency(graph, kernels)
    dist = kernels.bfs_distances(adj, item, max_nodes - 1)
    return _run(graph, kernels, adj, dist, user, item, min_nodes, max_nodes, cap, seed)


def extract_corpus(
    graph: EnrichedGraph,
    pairs: Iterable[tuple[int, int]],
    max_nodes: int = DEFAULT_MAX_NODES,
    cap: int | None = None,
    seed: int = 0,
    min_nodes: int = 2,
    threads: int = 1,
    backend: str | None = None,
) -> PathCorpus:
    """Batch ``extract_paths`` over many pairs.

    Pairs are grouped by item so each target's distance map is computed once.
    The result is identical for any ``threads`` value.
    """
    pairs = list(dict.fromkeys((int(u), int(i)) for u, i in pairs))
    if not pairs:
        raise DataError("no pairs to extract")
    for u, i in pairs:
        _check_endpoints(graph, u, i, max_nodes)
    kernels = _backend.get(backend)
    adj = _adjacency(graph, kernels)
    by_item = defaultdict(list)
    for u, i in pairs:
        by_item[i].append(u)

    def work(item):
        dist = kernels.bfs_distances(adj, item, max_nodes - 1)
        return [((u, item), _run(graph, kernels, adj, dist, u, item, min_nodes, max_nodes, cap, seed)) for u in by_item[item]]

    targets = sorted(by_item)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, targets))
    else:
        chunks = [work(i) for i in targets]
    found = {pair: ps for chunk in chunks for pair, ps in chunk}
    corpus = PathCorpus((pair, found[pair]) for pair in pairs)
    corpus.extractor = lambda u, i: extract_paths(graph, u, i, max_nodes, cap, seed, min_nodes, backend)
    return corpus


def validate_path(graph: EnrichedGraph, path: Path) -> list[str]:
    """Return every path invariant ``path`` violates (empty list if valid)."""
    problems = []
    ents, rels = path.entities, path.relations
    if len(ents) != len(rels):
        return ["entity/relation length mismatch"]
    if len(ents) < 2:
        problems.append("fewer than two entities")
    if ents and ents[0] not in graph.user_set:
        problems.append(f"path starts at non-user {ents[0]}")
    if ents and ents[-1] not in graph.item_set:
        problems.append(f"path ends at non-item {ents[-1]}")
    if rels and rels[-1] != graph.null_rel:
        problems.append("last relation is not the null relation")
    if len(set(ents)) != len(ents):
        problems.append("repeated entity")
    for l in range(len(ents) - 1):
        if not graph.has_edge(ents[l], rels[l], ents[l + 1]):
            problems.append(f"missing edge ({ents[l]}, {rels[l]}, {ents[l + 1]})")
    return problems


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------


def save_corpus_text(corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TEXT_HEADER + "\n")
        for (u, i), ps in corpus.items():
            fh.write(f"{u} {i} {len(ps)}\n")
            for p in ps:
                fh.write(" ".join(f"{e} {r}" for e, r in zip(p.entities, p.relations)))
                fh.write("\n")


def load_corpus_text(path) -> PathCorpus:
    corpus = PathCorpus()
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != TEXT_HEADER:
            raise SnapshotError(f"{path}: missing '{TEXT_HEADER}' header")
        lineno = 1
        for line in fh:
            lineno += 1
            fields = line.split()
            if len(fields) != 3:
                raise SnapshotError(f"{path}:{lineno}: expected 'user item K'")
            try:
                u, i, k = map(int, fields)
            except ValueError:
                raise SnapshotError(f"{path}:{lineno}: non-integer id") from None
            paths = []
            for _ in range(k):
                lineno += 1
                try:
                    ids = list(map(int, fh.readline().split()))
                except ValueError:
                    raise SnapshotError(f"{path}:{lineno}: non-integer id") from None
                if not ids or len(ids) % 2:
                    raise SnapshotError(f"{path}:{lineno}: path line needs alternating entity/relation ids")
                paths.append((ids[0::2], ids[1::2]))
            corpus[(u, i)] = PathSet.from_paths(u, i, paths)
    return corpus


def save_corpus(corpus, path) -> None:
    """Compact binary corpus: version header, counts, then little-endian arrays."""
    keys = list(corpus)
    users = np.array([u for u, _ in keys], dtype="<i8")
    items = np.array([i for _, i in keys], dtype="<i8")
    counts = np.array([len(corpus[k]) for k in keys], dtype="<i8")
    lengths = [corpus[k].lengths() for k in keys]
    lengths = np.concatenate(lengths).astype("<i8") if lengths else np.zeros(0, "<i8")
    ents = [corpus[k].entities for k in keys]
    rels = [corpus[k].relations for k in keys]
    ents = np.concatenate(ents).astype("<i4") if ents else np.zeros(0, "<i4")
    rels = np.concatenate(rels).astype("<i4") if rels else np.zeros(0, "<i4")
    with open(path, "wb") as fh:
        fh.write(PATHS_MAGIC)
        fh.write(struct.pack("<qqq", len(keys), len(lengths), len(ents)))
        for arr in (users, items, counts, lengths, ents, rels):
            fh.write(arr.tobytes())


def load_corpus(path) -> PathCorpus:
    try:
        data = FsPath(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    if not data.startswith(PATHS_MAGIC):
        raise SnapshotError(f"{path}: not a binary path corpus (bad version header)")
    pos = len(PATHS_MAGIC)
    try:
        n_pairs, n_paths, n_nodes = struct.unpack_from("<qqq", data, pos)
    except struct.error:
        raise SnapshotError(f"{path}: truncated path corpus") from None
    pos += 24

    def take(dtype, n):
        nonlocal pos
        try:
            arr = np.frombuffer(data, dtype=dtype, count=n, offset=pos)
        except ValueError:
            raise SnapshotError(f"{path}: truncated path corpus") from None
        pos += arr.nbytes
        return arr

    users, items, counts, lengths = take("<i8", n_pairs), take("<i8", n_pairs), take("<i8", n_pairs), take("<i8", n_paths)
    ents, rels = take("<i4", n_nodes), take("<i4", n_nodes)
    if pos != len(data):
        raise SnapshotError(f"{path}: trailing bytes in path corpus")
    corpus = PathCorpus()
    offs = np.zeros(n_paths + 1, dtype=np.int64)
    np.cumsum(lengths, out=offs[1:])
    p0 = 0
    for u, i, c in zip(users.tolist(), items.tolist(), counts.tolist()):
        a, b = offs[p0], offs[p0 + c]
        corpus[(u, i)] = PathSet(
            u, i, ents[a:b].astype(np.int32), rels[a:b].astype(np.int32), (offs[p0 : p0 + c + 1] - a).astype(np.int64)
        )
        p0 += c
    return corpus
