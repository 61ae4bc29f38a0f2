"""Path-level explanations for a single recommendation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NoPaths
from .graph import INTERACT, INTERACTED_BY, EnrichedGraph
from .model import ModelParams, PoolConfig, predict
from .paths import DEFAULT_MAX_NODES, PathSet, extract_paths

DEFAULT_TEMPLATE = {
    "sentence": "{item} is recommended since you {chain}",
    "relations": {INTERACT: "interacted with", INTERACTED_BY: "also chosen by"},
}


@dataclass
class PathContribution:
    entities: list
    relations: list
    score: float
    weight: float


@dataclass
class Explanation:
    user: str
    item: str
    yhat: float
    n_paths: int
    paths: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def contribution_weights(scores, cfg: PoolConfig) -> np.ndarray:
    """Share of each path in the pooled score: softmax(s/γ) (uniform in mean mode)."""
    s = np.asarray(scores, dtype=float)
    if cfg.mode == "mean":
        return np.full(s.size, 1.0 / s.size)
    u = s / cfg.gamma
    e = np.exp(u - u.max())
    return e / e.sum()


def explain_pathset(params: ModelParams, graph: EnrichedGraph, path_set: PathSet, cfg: PoolConfig, top_n: int | None = None) -> Explanation:
    if len(path_set) == 0:
        raise NoPaths(f"no paths connect {graph.entities.name(path_set.user)} and {graph.entities.name(path_set.item)}")
    yhat, scores, _ = predict(params, path_set, cfg)
    weights = contribution_weights(scores, cfg)
    # stable sort keeps lexicographic path order among equal weights
    order = np.argsort(-weights, kind="stable")
    if top_n is not None:
        order = order[:top_n]
    paths = []
    for k in order.tolist():
        p = path_set[k]
        paths.append(
            PathContribution(
                entities=[graph.entities.name(e) for e in p.entities],
                relations=[graph.relations.name(r) for r in p.relations],
                score=float(scores[k]),
                weight=float(weights[k]),
            )
        )
    return Explanation(
        user=graph.entities.name(path_set.user),
        item=graph.entities.name(path_set.item),
        yhat=yhat,
        n_paths=len(path_set),
        paths=paths,
    )


def explain(
    params: ModelParams,
    graph: EnrichedGraph,
    user: int,
    item: int,
    cfg: PoolConfig | None = None,
    top_n: int | None = 3,
    max_nodes: int = DEFAULT_MAX_NODES,
    min_nodes: int = 3,
    cap: int | None = None,
    seed: int = 0,
) -> Explanation:
    """Rank the paths connecting ``user`` and ``item`` by contribution.

    Weights are normalised over all paths, so the reported ``top_n`` may sum
    to less than one.
    """
    ps = extract_paths(graph, user, item, max_nodes=max_nodes, cap=cap, seed=seed, min_nodes=min_nodes)
    return explain_pathset(params, graph, ps, cfg or PoolConfig(), top_n)


def _merge_template(template):
    if not template:
        return DEFAULT_TEMPLATE
    return {
        "sentence": template.get("sentence") or DEFAULT_TEMPLATE["sentence"],
        "relations": {**DEFAULT_TEMPLATE["relations"], **template.get("relations", {})},
    }


def render_path(item: str, entities, relations, template=None) -> str:
    """One sentence for one path. The final hop into ``item`` is left implicit."""
    tpl = _merge_template(template)
    phrases = tpl["relations"]
    words = [phrases.get(relations[0], relations[0])]
    for l in range(1, len(entities) - 1):
        words.append(entities[l])
        if l < len(entities) - 2:
            words.append(phrases.get(relations[l], relations[l]))
    return tpl["sentence"].format(item=item, user=entities[0], chain=" ".join(words))


def render_explanation(explanation: Explanation, template=None) -> str:
    """Plain-text rendering, one line per reported path.

    ``template`` is ``{"sentence": ..., "relations": {name: phrase}}``; missing
    or empty parts fall back to defaults and unknown relations print raw.
    """
    return "\n".join(render_path(explanation.item, p.entities, p.relations, template) for p in explanation.paths)
