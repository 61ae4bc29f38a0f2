"""Implicit-feedback training: negative sampling, log-likelihood loss, Adam."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import EmptyTrainingSet, NonFiniteGradient
from .evaluate import K_MAX, NegativeSampler, build_eval_lists, evaluate
from .graph import EnrichedGraph, InteractionSet
from .model import Gradients, ModelDims, ModelParams, PathBatch, PoolConfig, backward, forward, init_params

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


@dataclass
class TrainConfig:
    lr: float = 0.002
    l2: float = 1e-5
    l2_scope: str = "touched"  # "touched": batch rows + weights, "all": every parameter
    batch_size: int = 256
    negatives: int = 4
    gamma: float = 1.0
    pool: str = "weighted"
    epochs: int = 50
    patience: int = 5
    seed: int = 0
    monitor: str = "valid"  # or "test"
    valid_fraction: float = 0.1
    monitor_negatives: int = 100
    monitor_k: int = K_MAX
    entity_dim: int = 64
    type_dim: int = 32
    relation_dim: int = 32
    hidden: int = 256
    dense: int | None = None
    ablate_relations: bool = False
    shared_recurrent: bool = False

    def __post_init__(self):
        for name in ("lr", "batch_size", "negatives", "gamma", "epochs", "patience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.monitor not in ("valid", "test"):
            raise ValueError(f"monitor must be 'valid' or 'test', got {self.monitor!r}")
        if self.l2_scope not in ("touched", "all"):
            raise ValueError(f"l2_scope must be 'touched' or 'all', got {self.l2_scope!r}")

    @property
    def pool_cfg(self) -> PoolConfig:
        return PoolConfig(self.gamma, self.pool)

    def dims(self, graph: EnrichedGraph) -> ModelDims:
        return ModelDims.for_graph(
            graph,
            entity_dim=self.entity_dim,
            type_dim=self.type_dim,
            relation_dim=self.relation_dim,
            hidden=self.hidden,
            dense=self.dense,
            ablate_relations=self.ablate_relations,
            shared_recurrent=self.shared_recurrent,
        )

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def sample_negatives(interactions: InteractionSet, user, count: int, seed) -> list:
    """``count`` distinct items ``user`` never interacted with (train or test)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return NegativeSampler(interactions.items).sample(rng, interactions.positives.get(user, frozenset()), count)


def nll(yhat_pos, yhat_neg) -> float:
    p = np.clip(np.asarray(yhat_pos, dtype=float), PROB_CLAMP, 1 - PROB_CLAMP)
    n = np.clip(np.asarray(yhat_neg, dtype=float), PROB_CLAMP, 1 - PROB_CLAMP)
    return float(-np.log(p).sum() - np.log1p(-n).sum())


def loss(yhat_pos, yhat_neg, params: ModelParams | None = None, l2: float = 0.0) -> float:
    """Negative log-likelihood plus ``l2 * ||params||^2``; probabilities are
    clamped to [1e-12, 1 - 1e-12] before the log."""
    if len(yhat_pos) + len(yhat_neg) == 0:
        raise ValueError("loss needs at least one prediction")
    reg = l2 * params.sq_norm() if (params is not None and l2) else 0.0
    return nll(yhat_pos, yhat_neg) + reg


def batch_objective(params: ModelParams, pathsets, labels, pool_cfg: PoolConfig, l2: float = 0.0, l2_scope: str = "all"):
    """Loss and gradients for one mini-batch.

    The likelihood gradient is taken w.r.t. the pooled logit (``ŷ - y``), which
    equals the derivative of the clamped loss wherever the clamp is inactive
    and keeps flowing where it is not.
    """
    labels = np.asarray(labels, dtype=float)
    batch = PathBatch.from_pathsets(pathsets, params.entity_type)
    trace = forward(params, batch, pool_cfg)
    value = nll(trace.yhat[labels == 1], trace.yhat[labels == 0])
    grads = backward(params, trace, dlogit=trace.yhat - labels)
    if l2:
        value += _add_l2(params, grads, l2, l2_scope)
    return value, grads, trace


def _add_l2(params: ModelParams, grads: Gradients, l2: float, scope: str) -> float:
    reg = 0.0
    for name, t in params.tensors.items():
        if name in grads.sparse:
            if scope == "all":
                rows = np.arange(t.shape[0])
                old_rows, old_vals = grads.sparse[name]
                full = np.zeros_like(t)
                full[old_rows] = old_vals
                grads.sparse[name] = (rows, full + 2 * l2 * t)
                reg += float(np.vdot(t, t))
            else:
                rows, vals = grads.sparse[name]
                sub = t[rows]
                grads.sparse[name] = (rows, vals + 2 * l2 * sub)
                reg += float(np.vdot(sub, sub))
        else:
            grads.dense[name] = grads.dense[name] + 2 * l2 * t
            reg += float(np.vdot(t, t))
    return l2 * reg


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams, **kw) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.tensors.items()}, {k: np.zeros_like(v) for k, v in params.tensors.items()}, **kw)


def adam_step(params: ModelParams, grads: Gradients, state: AdamState, lr: float):
    """Bias-corrected Adam, in place. Embedding rows absent from the gradient
    keep their parameters and moments untouched."""
    if not grads.all_finite():
        raise NonFiniteGradient("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.tensors.items():
        m, v = state.m[name], state.v[name]
        if name in grads.sparse:
            rows, g = grads.sparse[name]
            if len(rows) == 0:
                continue
            m[rows] = b1 * m[rows] + (1 - b1) * g
            v[rows] = b2 * v[rows] + (1 - b2) * g * g
            p[rows] -= lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + state.eps)
        else:
            g = grads.dense[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")


def split_monitor(interactions: InteractionSet, config: TrainConfig):
    """Return ``(fit_pairs, monitor_pairs)`` according to ``config.monitor``."""
    pairs = interactions.train_pairs()
    if config.monitor == "test":
        return pairs, interactions.test_pairs()
    rng = np.random.default_rng([config.seed, 1])
    n_valid = int(round(config.valid_fraction * len(pairs)))
    chosen = set(rng.permutation(len(pairs))[:n_valid].tolist())
    fit = [p for k, p in enumerate(pairs) if k not in chosen]
    valid = [p for k, p in enumerate(pairs) if k in chosen]
    return fit, valid


def train(
    graph: EnrichedGraph,
    corpus,
    interactions: InteractionSet,
    config: TrainConfig,
    params: ModelParams | None = None,
    log_file=None,
    monitor_lists=None,
) -> TrainResult:
    """Fit a model; early-stop on monitor hit@``monitor_k`` and return the best snapshot.

    ``corpus`` maps (user, item) to path sets; pairs it cannot supply (for a
    :class:`~kprn.paths.PathCorpus` with an extractor, pairs are extracted on
    demand) and pairs without paths are skipped.
    """
    fit_pairs, monitor_pairs = split_monitor(interactions, config)
    if not fit_pairs:
        raise EmptyTrainingSet("no training positives")
    if monitor_lists is None and monitor_pairs:
        monitor_lists = build_eval_lists(interactions, config.monitor_negatives, config.seed + 7, monitor_pairs)
    if params is None:
        params = init_params(config.dims(graph), config.seed, graph.entity_type)
    state = AdamState.zeros_like(params)
    sampler = NegativeSampler(interactions.items)
    rng = np.random.default_rng(config.seed)
    pool_cfg = config.pool_cfg
    result = TrainResult(params=params.copy())
    bad = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        pairs, labels = [], []
        for u, i in fit_pairs:
            pairs.append((u, i))
            labels.append(1.0)
            for j in sampler.sample(rng, interactions.positives[u], config.negatives):
                pairs.append((u, j))
                labels.append(0.0)
        keep = [k for k, p in enumerate(pairs) if len(corpus[p])]
        if not keep:
            raise EmptyTrainingSet("no training pair has any path")
        order = rng.permutation(len(keep))
        total, n_seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = [keep[k] for k in order[start : start + config.batch_size]]
            value, grads, _ = batch_objective(
                params, [corpus[pairs[k]] for k in idx], [labels[k] for k in idx], pool_cfg, config.l2, config.l2_scope
            )
            adam_step(params, grads, state, config.lr)
            total += value
            n_seen += len(idx)
        record = {"epoch": epoch, "loss": total / n_seen, "n_pairs": n_seen}
        if monitor_lists:
            m = evaluate(params, corpus, monitor_lists, pool_cfg, config.monitor_k)
            hit, ndcg = m.at(config.monitor_k)
            record[f"hit@{config.monitor_k}"] = hit
            record[f"ndcg@{config.monitor_k}"] = ndcg
        else:
            hit = -record["loss"]
        record["wall_time"] = round(time.perf_counter() - t0, 4)
        result.log.append(record)
        log.info("epoch %d loss %.5f monitor %.4f", epoch, record["loss"], hit)
        if log_file is not None:
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log_file.flush()
        # a tie still moves the snapshot forward but counts toward patience
        if hit >= result.best_metric:
            result.params = params.copy()
            result.best_epoch = epoch
        if hit > result.best_metric:
            result.best_metric = hit
            bad = 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    return result
