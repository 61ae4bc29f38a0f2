"""Path scoring network: embeddings -> LSTM -> two dense layers -> pooling.

Every path element is embedded as ``entity ⊕ entity-type ⊕ relation``
(the relation being the edge leaving that element; the last element carries
the null relation). An LSTM consumes the sequence, its final hidden state is
scored by two dense layers, and the per-path scores of one user-item pair
are pooled with a temperature-scaled log-sum-exp before a sigmoid.

All forward passes operate on a :class:`PathBatch`, which groups the paths of
many pairs into equal-length buckets so each bucket runs as dense matrix
products. Gradients are derived by hand; embedding gradients are sparse.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath
from typing import Sequence

import numpy as np

from .errors import DataError, NonFiniteActivation, SnapshotError, TraceMismatch
from .paths import PathSet

GATES = ("z", "i", "f", "o")
EMBEDDINGS = ("entity_emb", "type_emb", "relation_emb")
MODEL_MAGIC = b"KPRN-MODEL 1\n"


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class ModelDims:
    n_entities: int
    n_types: int
    n_relations: int
    entity_dim: int = 64
    type_dim: int = 32
    relation_dim: int = 32
    hidden: int = 256
    dense: int | None = None  # defaults to hidden // 2
    ablate_relations: bool = False
    shared_recurrent: bool = False

    def __post_init__(self):
        if self.dense is None:
            object.__setattr__(self, "dense", max(1, self.hidden // 2))
        for name in ("n_entities", "n_types", "n_relations", "entity_dim", "type_dim", "relation_dim", "hidden", "dense"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def input_dim(self) -> int:
        return self.entity_dim + self.type_dim + (0 if self.ablate_relations else self.relation_dim)

    @classmethod
    def for_graph(cls, graph, **kw) -> "ModelDims":
        return cls(n_entities=graph.n_entities, n_types=graph.n_types, n_relations=graph.n_relations, **kw)

    def shapes(self) -> dict[str, tuple]:
        """Parameter shapes in canonical (snapshot) order."""
        H, D = self.hidden, self.input_dim
        out = {"entity_emb": (self.n_entities, self.entity_dim), "type_emb": (self.n_types, self.type_dim)}
        if not self.ablate_relations:
            out["relation_emb"] = (self.n_relations, self.relation_dim)
        for g in GATES:
            out[f"W_{g}"] = (H, D)
        if self.shared_recurrent:
            out["U_h"] = (H, H)
        else:
            for g in GATES:
                out[f"U_{g}"] = (H, H)
        for g in GATES:
            out[f"b_{g}"] = (H,)
        out["W1"] = (self.dense, H)
        out["b1"] = (self.dense,)
        out["W2"] = (1, self.dense)
        out["b2"] = (1,)
        return out


@dataclass
class PoolConfig:
    gamma: float = 1.0
    mode: str = "weighted"  # or "mean"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.mode not in ("weighted", "mean"):
            raise ValueError(f"unknown pooling mode {self.mode!r}")


@dataclass(eq=False)
class ModelParams:
    """Trainable tensors plus the (frozen) entity -> type lookup."""

    dims: ModelDims
    tensors: dict[str, np.ndarray]
    entity_type: np.ndarray

    def __getitem__(self, name) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def dtype(self):
        return self.tensors["W1"].dtype

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {k: v.copy() for k, v in self.tensors.items()}, self.entity_type.copy())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.dims, {k: v.astype(dtype) for k, v in self.tensors.items()}, self.entity_type)

    def sq_norm(self) -> float:
        return float(sum(np.vdot(v, v) for v in self.tensors.values()))

    def check(self) -> None:
        for name, shape in self.dims.shapes().items():
            t = self.tensors.get(name)
            if t is None or t.shape != shape:
                raise ValueError(f"parameter {name} has shape {None if t is None else t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"parameter {name} has non-finite entries")


def init_params(dims: ModelDims, seed: int, entity_type=None) -> ModelParams:
    """Embeddings ~ U[-0.1, 0.1]; weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)];
    forget-gate bias 1, other biases 0."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in dims.shapes().items():
        if name in EMBEDDINGS:
            tensors[name] = rng.uniform(-0.1, 0.1, size=shape)
        elif len(shape) == 2:
            bound = 1.0 / math.sqrt(shape[1])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        elif name == "b_f":
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    if entity_type is None:
        entity_type = np.zeros(dims.n_entities, dtype=np.int32)
    entity_type = np.asarray(entity_type, dtype=np.int32)
    if entity_type.shape != (dims.n_entities,):
        raise ValueError("entity_type must have one entry per entity")
    return ModelParams(dims, tensors, entity_type)


# ---------------------------------------------------------------------------
# single-element building blocks
# ---------------------------------------------------------------------------


def embed_step(params: ModelParams, entity: int, type_: int, relation: int, ablate_relation: bool | None = None):
    """Input vector for one path element: entity ⊕ type ⊕ relation embedding."""
    ablate = params.dims.ablate_relations if ablate_relation is None else ablate_relation
    if ablate_relation is False and params.dims.ablate_relations:
        raise ValueError("model was built without relation embeddings")
    for name, idx in (("entity_emb", entity), ("type_emb", type_), ("relation_emb", relation)):
        if name == "relation_emb" and ablate:
            continue
        if not 0 <= idx < params[name].shape[0]:
            raise IndexError(f"{name} id {idx} out of range [0, {params[name].shape[0]})")
    parts = [params["entity_emb"][entity], params["type_emb"][type_]]
    if not ablate:
        parts.append(params["relation_emb"][relation])
    return np.concatenate(parts)


def _stacked(params: ModelParams):
    Wx = np.concatenate([params[f"W_{g}"] for g in GATES], axis=0)
    if params.dims.shared_recurrent:
        Wh = np.concatenate([params["U_h"]] * 4, axis=0)
    else:
        Wh = np.concatenate([params[f"U_{g}"] for g in GATES], axis=0)
    b = np.concatenate([params[f"b_{g}"] for g in GATES])
    return Wx, Wh, b


def _lstm_forward(Wx, Wh, b, X):
    """Run the LSTM over ``X`` of shape (n, L, D) from zero state."""
    n, L, _ = X.shape
    H = Wh.shape[1]
    XW = (X.reshape(n * L, -1) @ Wx.T).reshape(n, L, 4 * H) + b
    hs = np.zeros((L + 1, n, H), dtype=X.dtype)
    cs = np.zeros((L + 1, n, H), dtype=X.dtype)
    tcs = np.empty((L, n, H), dtype=X.dtype)
    gates = np.empty((L, n, 4 * H), dtype=X.dtype)
    for t in range(L):
        a = XW[:, t] + hs[t] @ Wh.T
        gates[t, :, :H] = np.tanh(a[:, :H])
        gates[t, :, H:] = sigmoid(a[:, H:])
        z, i, f = gates[t, :, :H], gates[t, :, H : 2 * H], gates[t, :, 2 * H : 3 * H]
        cs[t + 1] = f * cs[t] + i * z
        tcs[t] = np.tanh(cs[t + 1])
        hs[t + 1] = gates[t, :, 3 * H :] * tcs[t]
    return {"X": X, "hs": hs, "cs": cs, "tcs": tcs, "gates": gates}


def _lstm_backward(Wx, Wh, cache, dh):
    X, hs, cs, tcs, gates = cache["X"], cache["hs"], cache["cs"], cache["tcs"], cache["gates"]
    n, L, D = X.shape
    H = Wh.shape[1]
    dA = np.empty((n, L, 4 * H), dtype=X.dtype)
    dWh = np.zeros_like(Wh)
    dc = np.zeros((n, H), dtype=X.dtype)
    for t in range(L - 1, -1, -1):
        g = gates[t]
        z, i, f, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
        tc = tcs[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        da = dA[:, t]
        da[:, :H] = dc * i * (1.0 - z * z)
        da[:, H : 2 * H] = dc * z * i * (1.0 - i)
        da[:, 2 * H : 3 * H] = dc * cs[t] * f * (1.0 - f)
        da[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dWh += da.T @ hs[t]
        dh = da @ Wh
        dc = dc * f
    flat = dA.reshape(n * L, 4 * H)
    dWx = flat.T @ X.reshape(n * L, D)
    db = flat.sum(axis=0)
    dX = (flat @ Wx).reshape(n, L, D)
    return dWx, dWh, db, dX


def lstm_forward(params: ModelParams, inputs):
    """Encode one path's input sequence (L x D). Returns ``(h_L, trace)``."""
    X = np.asarray(inputs, dtype=params.dtype)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("lstm_forward needs a non-empty (L, D) input sequence")
    Wx, Wh, b = _stacked(params)
    cache = _lstm_forward(Wx, Wh, b, X[None])
    if not np.all(np.isfinite(cache["hs"])):
        raise NonFiniteActivation("non-finite LSTM state")
    H = params.dims.hidden
    g = cache["gates"][:, 0]
    trace = {
        "x": X,
        "z": g[:, :H],
        "i": g[:, H : 2 * H],
        "f": g[:, 2 * H : 3 * H],
        "o": g[:, 3 * H :],
        "c": cache["cs"][1:, 0],
        "h": cache["hs"][1:, 0],
    }
    return cache["hs"][-1, 0].copy(), trace


def score_path(params: ModelParams, h_last) -> float:
    """Two dense layers: ``W2 · relu(W1 · h + b1) + b2``."""
    a = params["W1"] @ np.asarray(h_last) + params["b1"]
    return float(params["W2"][0] @ np.maximum(a, 0.0) + params["b2"][0])


def pool(scores, cfg: PoolConfig | None = None):
    """Aggregate per-path scores. Returns ``(g, dg/ds)``.

    Weighted mode is a max-shifted ``log Σ exp(s/γ)``; mean mode averages.
    """
    cfg = cfg or PoolConfig()
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValueError("cannot pool an empty score set")
    if cfg.mode == "mean":
        return float(s.mean()), np.full(s.size, 1.0 / s.size)
    u = s / cfg.gamma
    m = u.max()
    e = np.exp(u - m)
    tot = e.sum()
    return float(m + np.log(tot)), e / (tot * cfg.gamma)


# ---------------------------------------------------------------------------
# batched forward / backward
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Bucket:
    length: int
    path_ids: np.ndarray
    entities: np.ndarray  # (n, L)
    types: np.ndarray
    relations: np.ndarray


@dataclass(eq=False)
class PathBatch:
    """Paths of several pairs, bucketed by node count."""

    pairs: list
    offsets: np.ndarray  # path range of pair j: offsets[j]:offsets[j+1]
    buckets: list

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_paths(self) -> int:
        return int(self.offsets[-1])

    def path_counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @classmethod
    def from_pathsets(cls, pathsets: Sequence[PathSet], entity_type) -> "PathBatch":
        counts = np.array([len(ps) for ps in pathsets], dtype=np.int64)
        offsets = np.zeros(len(pathsets) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        nonempty = [ps for ps in pathsets if len(ps)]
        buckets = []
        if nonempty:
            ents = np.concatenate([ps.entities for ps in nonempty])
            rels = np.concatenate([ps.relations for ps in nonempty])
            node_off = np.concatenate([[0], np.cumsum([ps.offsets[-1] for ps in nonempty])])
            starts = np.concatenate([ps.offsets[:-1] + base for ps, base in zip(nonempty, node_off[:-1])])
            lengths = np.concatenate([ps.lengths() for ps in nonempty])
            for L in np.unique(lengths).tolist():
                ids = np.flatnonzero(lengths == L)
                gather = starts[ids, None] + np.arange(L)
                e = ents[gather]
                buckets.append(Bucket(L, ids, e, entity_type[e], rels[gather]))
        return cls([(ps.user, ps.item) for ps in pathsets], offsets, buckets)


@dataclass(eq=False)
class ForwardTrace:
    batch: PathBatch
    pool_cfg: PoolConfig
    caches: list = field(default_factory=list)
    scores: np.ndarray | None = None  # per path
    weights: np.ndarray | None = None  # dg/ds per path
    logits: np.ndarray | None = None  # g per pair, -inf when K == 0
    yhat: np.ndarray | None = None


def _inputs(params: ModelParams, bucket: Bucket):
    parts = [params["entity_emb"][bucket.entities], params["type_emb"][bucket.types]]
    if not params.dims.ablate_relations:
        parts.append(params["relation_emb"][bucket.relations])
    return np.concatenate(parts, axis=-1)


def _segment_pool(scores, offsets, cfg: PoolConfig):
    n_pairs = len(offsets) - 1
    counts = np.diff(offsets)
    logits = np.full(n_pairs, -np.inf, dtype=scores.dtype)
    weights = np.zeros_like(scores)
    has = counts > 0
    if not has.any():
        return logits, weights
    starts = offsets[:-1][has]
    owner = np.repeat(np.arange(n_pairs), counts)
    if cfg.mode == "mean":
        logits[has] = np.add.reduceat(scores, starts) / counts[has]
        weights[:] = 1.0 / counts[owner]
        return logits, weights
    u = scores / cfg.gamma
    m = np.full(n_pairs, -np.inf, dtype=scores.dtype)
    m[has] = np.maximum.reduceat(u, starts)
    e = np.exp(u - m[owner])
    tot = np.zeros(n_pairs, dtype=scores.dtype)
    tot[has] = np.add.reduceat(e, starts)
    logits[has] = m[has] + np.log(tot[has])
    weights[:] = e / (tot[owner] * cfg.gamma)
    return logits, weights


def forward(params: ModelParams, batch: PathBatch, cfg: PoolConfig | None = None) -> ForwardTrace:
    """Score every path in ``batch`` and pool per pair."""
    cfg = cfg or PoolConfig()
    Wx, Wh, b = _stacked(params)
    trace = ForwardTrace(batch, cfg)
    scores = np.zeros(batch.n_paths, dtype=params.dtype)
    for bucket in batch.buckets:
        cache = _lstm_forward(Wx, Wh, b, _inputs(params, bucket))
        h = cache["hs"][-1]
        a1 = h @ params["W1"].T + params["b1"]
        r1 = np.maximum(a1, 0.0)
        scores[bucket.path_ids] = r1 @ params["W2"][0] + params["b2"][0]
        cache["a1"], cache["r1"] = a1, r1
        trace.caches.append(cache)
    if not np.all(np.isfinite(scores)):
        raise NonFiniteActivation("non-finite path score")
    trace.scores = scores
    trace.logits, trace.weights = _segment_pool(scores, batch.offsets, cfg)
    trace.yhat = sigmoid(trace.logits)
    return trace


class Gradients:
    """Dense gradients for weight tensors, (rows, values) pairs for embeddings."""

    def __init__(self, dense: dict, sparse: dict):
        self.dense = dense
        self.sparse = sparse

    def __contains__(self, name):
        return name in self.dense or name in self.sparse

    def to_dense(self, params: ModelParams) -> dict[str, np.ndarray]:
        out = {}
        for name in params.names():
            if name in self.sparse:
                rows, vals = self.sparse[name]
                full = np.zeros_like(params[name])
                full[rows] = vals
                out[name] = full
            else:
                out[name] = self.dense[name]
        return out

    def touched(self, name) -> np.ndarray:
        return self.sparse[name][0]

    def scale(self, c: float) -> "Gradients":
        return Gradients(
            {k: v * c for k, v in self.dense.items()},
            {k: (r, v * c) for k, (r, v) in self.sparse.items()},
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.dense.values()) and all(
            np.all(np.isfinite(v)) for _, v in self.sparse.values()
        )


def _reduce_rows(rows, vals, width, dtype):
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros((0, width), dtype=dtype)
    rows = np.concatenate(rows)
    vals = np.concatenate(vals)
    uniq, inv = np.unique(rows, return_inverse=True)
    acc = np.zeros((len(uniq), width), dtype=dtype)
    np.add.at(acc, inv, vals)
    return uniq.astype(np.int64), acc


def backward(params: ModelParams, trace: ForwardTrace, upstream=None, *, dlogit=None) -> Gradients:
    """Gradients of a per-pair loss w.r.t. every parameter.

    Pass either ``upstream`` (dL/dŷ per pair) or ``dlogit`` (dL/dg per pair).
    Pairs without paths receive no gradient.
    """
    batch = trace.batch
    if (upstream is None) == (dlogit is None):
        raise ValueError("pass exactly one of upstream / dlogit")
    if dlogit is None:
        upstream = np.asarray(upstream, dtype=params.dtype).reshape(-1)
        if upstream.shape[0] != batch.n_pairs:
            raise TraceMismatch(f"upstream has {upstream.shape[0]} entries, trace covers {batch.n_pairs} pairs")
        dlogit = upstream * trace.yhat * (1.0 - trace.yhat)
    dlogit = np.asarray(dlogit, dtype=params.dtype).reshape(-1)
    if dlogit.shape[0] != batch.n_pairs or len(trace.caches) != len(batch.buckets):
        raise TraceMismatch("trace does not match this batch")
    dlogit = np.where(batch.path_counts() > 0, dlogit, 0.0)
    ds = np.repeat(dlogit, batch.path_counts()) * trace.weights

    dims = params.dims
    Wx, Wh, _ = _stacked(params)
    dWx, dWh = np.zeros_like(Wx), np.zeros_like(Wh)
    db = np.zeros(Wx.shape[0], dtype=params.dtype)
    dW1, db1 = np.zeros_like(params["W1"]), np.zeros_like(params["b1"])
    dW2, db2 = np.zeros_like(params["W2"]), np.zeros_like(params["b2"])
    rows = {k: [] for k in EMBEDDINGS}
    vals = {k: [] for k in EMBEDDINGS}
    de, dt = dims.entity_dim, dims.type_dim
    for bucket, cache in zip(batch.buckets, trace.caches):
        dsb = ds[bucket.path_ids]
        r1, a1, h = cache["r1"], cache["a1"], cache["hs"][-1]
        dW2[0] += dsb @ r1
        db2[0] += dsb.sum()
        da1 = np.outer(dsb, params["W2"][0]) * (a1 > 0)
        dW1 += da1.T @ h
        db1 += da1.sum(axis=0)
        dh = da1 @ params["W1"]
        gWx, gWh, gb, dX = _lstm_backward(Wx, Wh, cache, dh)
        dWx += gWx
        dWh += gWh
        db += gb
        rows["entity_emb"].append(bucket.entities.ravel())
        vals["entity_emb"].append(dX[..., :de].reshape(-1, de))
        rows["type_emb"].append(bucket.types.ravel())
        vals["type_emb"].append(dX[..., de : de + dt].reshape(-1, dt))
        if not dims.ablate_relations:
            rows["relation_emb"].append(bucket.relations.ravel())
            vals["relation_emb"].append(dX[..., de + dt :].reshape(-1, dims.relation_dim))

    H = dims.hidden
    dense = {}
    for k, g in enumerate(GATES):
        dense[f"W_{g}"] = dWx[k * H : (k + 1) * H]
        dense[f"b_{g}"] = db[k * H : (k + 1) * H]
    if dims.shared_recurrent:
        dense["U_h"] = sum(dWh[k * H : (k + 1) * H] for k in range(4))
    else:
        for k, g in enumerate(GATES):
            dense[f"U_{g}"] = dWh[k * H : (k + 1) * H]
    dense.update(W1=dW1, b1=db1, W2=dW2, b2=db2)
    sparse = {}
    for name in EMBEDDINGS:
        if name in params.tensors:
            sparse[name] = _reduce_rows(rows[name], vals[name], params[name].shape[1], params.dtype)
    return Gradients(dense, sparse)


def predict(params: ModelParams, path_set: PathSet, cfg: PoolConfig | None = None):
    """Score one pair. Returns ``(ŷ, per-path scores, trace)``; ŷ = 0 when there are no paths."""
    batch = PathBatch.from_pathsets([path_set], params.entity_type)
    trace = forward(params, batch, cfg)
    return float(trace.yhat[0]), trace.scores.copy(), trace


def predict_many(params: ModelParams, pathsets: Sequence[PathSet], cfg: PoolConfig | None = None, chunk: int = 4096):
    """Logits ``g`` (``-inf`` for pairs without paths) for many pairs, chunked by path count."""
    out = np.full(len(pathsets), -np.inf)
    start = 0
    while start < len(pathsets):
        stop, n = start, 0
        while stop < len(pathsets) and (n == 0 or n + len(pathsets[stop]) <= chunk):
            n += len(pathsets[stop])
            stop += 1
        batch = PathBatch.from_pathsets(pathsets[start:stop], params.entity_type)
        out[start:stop] = forward(params, batch, cfg).logits
        start = stop
    return out


# ---------------------------------------------------------------------------
# snapshot
# ---------------------------------------------------------------------------


def save_params(params: ModelParams, path, pool_cfg: PoolConfig | None = None) -> None:
    """Versioned header, then the entity-type table and every tensor as
    little-endian float64 in canonical order."""
    pool_cfg = pool_cfg or PoolConfig()
    header = {
        "dims": asdict(params.dims),
        "pool": asdict(pool_cfg),
        "tensors": [[name, list(shape)] for name, shape in params.dims.shapes().items()],
    }
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(params.entity_type, dtype="<i4").tobytes())
        for name in params.dims.shapes():
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_params(path) -> tuple[ModelParams, PoolConfig]:
    try:
        data = FsPath(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    if not data.startswith(MODEL_MAGIC):
        raise SnapshotError(f"{path}: not a model snapshot (bad version header)")
    try:
        pos = len(MODEL_MAGIC)
        end = data.index(b"\n", pos)
        header = json.loads(data[pos:end].decode("utf-8"))
        pos = end + 1
        dims = ModelDims(**header["dims"])
        etype = np.frombuffer(data, dtype="<i4", count=dims.n_entities, offset=pos).astype(np.int32)
        pos += 4 * dims.n_entities
        tensors = {}
        for name, shape in header["tensors"]:
            n = int(np.prod(shape))
            tensors[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
    except (ValueError, KeyError, TypeError) as exc:
        raise SnapshotError(f"{path}: corrupt model snapshot ({exc})") from None
    if pos != len(data):
        raise SnapshotError(f"{path}: trailing bytes in model snapshot")
    params = ModelParams(dims, tensors, etype)
    params.check()
    return params, PoolConfig(**header["pool"])
