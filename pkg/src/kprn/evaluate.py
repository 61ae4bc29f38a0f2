"""Ranking evaluation under the 1-positive : N-negatives protocol."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import InsufficientNegatives
from .graph import InteractionSet
from .model import ModelParams, PoolConfig, predict_many

K_MAX = 15


class EvalList(NamedTuple):
    user: int
    positive: int
    negatives: tuple


@dataclass
class RankedList:
    """Candidates sorted by score (descending), ties by ascending item id."""

    user: int
    items: list
    scores: list
    positive: int
    path_scores: list | None = None

    @property
    def rank(self) -> int:
        """1-based rank of the positive item."""
        return self.items.index(self.positive) + 1


def rank_candidates(user, items, scores, positive, path_scores=None) -> RankedList:
    items = [int(i) for i in items]
    scores = [float(s) for s in scores]
    order = sorted(range(len(items)), key=lambda k: (-scores[k], items[k]))
    return RankedList(
        user=int(user),
        items=[items[k] for k in order],
        scores=[scores[k] for k in order],
        positive=int(positive),
        path_scores=None if path_scores is None else [path_scores[k] for k in order],
    )


def hit_at_k(ranked: RankedList, k: int) -> int:
    if not 1 <= k <= len(ranked.items):
        raise ValueError(f"k={k} outside 1..{len(ranked.items)}")
    return int(ranked.rank <= k)


def ndcg_at_k(ranked: RankedList, k: int) -> float:
    # single relevant item, so the ideal DCG is 1
    if not 1 <= k <= len(ranked.items):
        raise ValueError(f"k={k} outside 1..{len(ranked.items)}")
    r = ranked.rank
    return 1.0 / math.log2(r + 1) if r <= k else 0.0


class NegativeSampler:
    """Uniform sampling of distinct items outside a user's positive set."""

    def __init__(self, items):
        self.universe = np.asarray(sorted(items), dtype=np.int64)
        self.universe_set = frozenset(self.universe.tolist())

    def sample(self, rng, exclude, count: int) -> list[int]:
        n_free = len(self.universe) - len(self.universe_set & frozenset(exclude))
        if n_free < count:
            raise InsufficientNegatives(f"only {n_free} candidate negatives, {count} requested")
        if 2 * (len(self.universe) - n_free) < len(self.universe):
            # rejection sampling; positives are the minority
            picked, seen = [], set()
            while len(picked) < count:
                for i in self.universe[rng.integers(0, len(self.universe), size=count - len(picked))].tolist():
                    if i not in exclude and i not in seen:
                        seen.add(i)
                        picked.append(i)
            return picked
        free = np.array([i for i in self.universe.tolist() if i not in exclude], dtype=np.int64)
        return rng.choice(free, size=count, replace=False).tolist()


def build_eval_lists(
    interactions: InteractionSet,
    negatives: int = 100,
    seed: int = 0,
    pairs: Sequence[tuple] | None = None,
) -> list[EvalList]:
    """One list per held-out positive: the positive plus ``negatives`` items the
    user never interacted with (train or test)."""
    pairs = interactions.test_pairs() if pairs is None else list(pairs)
    if not pairs:
        raise ValueError("no positives to evaluate")
    sampler = NegativeSampler(interactions.items)
    rng = np.random.default_rng(seed)
    out = []
    for u, pos in pairs:
        negs = sampler.sample(rng, interactions.positives[u], negatives)
        out.append(EvalList(u, pos, tuple(negs)))
    return out


class MetricsTable(NamedTuple):
    k: np.ndarray
    hit: np.ndarray
    ndcg: np.ndarray
    n_lists: int

    def at(self, k: int) -> tuple[float, float]:
        return float(self.hit[k - 1]), float(self.ndcg[k - 1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "hit", "ndcg"])
        for k, h, n in zip(self.k.tolist(), self.hit.tolist(), self.ndcg.tolist()):
            w.writerow([k, repr(h), repr(n)])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{"k": k, "hit": h, "ndcg": n} for k, h, n in zip(self.k.tolist(), self.hit.tolist(), self.ndcg.tolist())]
        return json.dumps({"n_lists": self.n_lists, "metrics": rows}, indent=2, sort_keys=True) + "\n"


def metrics_from_ranks(ranks: Sequence[int], k_max: int = K_MAX) -> MetricsTable:
    ranks = np.asarray(ranks, dtype=np.int64)
    ks = np.arange(1, k_max + 1)
    within = ranks[None, :] <= ks[:, None]
    gain = 1.0 / np.log2(ranks + 1.0)
    hit = within.mean(axis=1)
    ndcg = (within * gain[None, :]).mean(axis=1)
    return MetricsTable(ks, hit, ndcg, len(ranks))


def evaluate_scores(
    eval_lists: Sequence[EvalList], score_fn: Callable[[int, list], Sequence[float]], k_max: int = K_MAX
) -> MetricsTable:
    """Metrics for an arbitrary scorer ``score_fn(user, candidates) -> scores``."""
    ranks = []
    for lst in eval_lists:
        cands = [lst.positive, *lst.negatives]
        ranks.append(rank_candidates(lst.user, cands, score_fn(lst.user, cands), lst.positive).rank)
    return metrics_from_ranks(ranks, k_max)


def evaluate(
    params: ModelParams,
    corpus,
    eval_lists: Sequence[EvalList],
    cfg: PoolConfig | None = None,
    k_max: int = K_MAX,
) -> MetricsTable:
    """hit@k / ndcg@k for k = 1..k_max, averaged over ``eval_lists``.

    Candidates are ranked by the pooled logit, a strictly monotone transform
    of ŷ that does not saturate; pairs without paths rank last.
    """
    pairs = [(lst.user, i) for lst in eval_lists for i in (lst.positive, *lst.negatives)]
    logits = predict_many(params, [corpus[p] for p in pairs], cfg)
    ranks, pos = [], 0
    for lst in eval_lists:
        n = 1 + len(lst.negatives)
        cands = [lst.positive, *lst.negatives]
        ranks.append(rank_candidates(lst.user, cands, logits[pos : pos + n], lst.positive).rank)
        pos += n
    return metrics_from_ranks(ranks, k_max)


def popularity_scorer(interactions: InteractionSet):
    """Score items by their number of training interactions."""
    counts: dict = {}
    for _, i in interactions.train_pairs():
        counts[i] = counts.get(i, 0) + 1
    return lambda user, items: [counts.get(i, 0) for i in items]
