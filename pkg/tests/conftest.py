import numpy as np
import pytest

from kprn.graph import build_enriched_graph, split_interactions
from kprn.model import ModelDims, init_params
from kprn.paths import PathSet

MUSIC_KG = [
    ("songA", "sung_by", "X"),
    ("songB", "sung_by", "X"),
    ("songC", "sung_by", "Y"),
    ("songA", "written_by", "Z"),
    ("songC", "written_by", "Z"),
]
MUSIC_INTERACTIONS = [("alice", "songA"), ("bob", "songA"), ("bob", "songB"), ("carol", "songC")]
MUSIC_TYPES = {"songA": "song", "songB": "song", "songC": "song", "X": "person", "Y": "person", "Z": "person"}


@pytest.fixture
def music_graph():
    return build_enriched_graph(MUSIC_KG, MUSIC_INTERACTIONS, MUSIC_TYPES)


@pytest.fixture
def small_dataset():
    """A synthetic dataset small enough for end-to-end tests in seconds."""
    from kprn import synth

    data = synth.generate(users=30, items=30, attributes=5, per_user=6, seed=3)
    split = split_interactions(data.interactions, 0.8, 3)
    graph = build_enriched_graph(data.triplets, data.interactions, data.entity_types, withhold=split.test_pairs())
    return data, graph, graph.encode_interactions(split)


def random_pathset(rng, n_entities, n_types, n_relations, k, max_len, user=0, item=1):
    paths = []
    for _ in range(k):
        L = int(rng.integers(1, max_len + 1))
        paths.append((rng.integers(0, n_entities, L).tolist(), rng.integers(0, n_relations, L).tolist()))
    return PathSet.from_paths(user, item, paths)


def random_model(rng, seed, ablate=False, shared=False, dtype=np.float64):
    """Micro model with entity/type/relation dims <= 6 and hidden <= 8."""
    n_e, n_t, n_r = int(rng.integers(3, 9)), int(rng.integers(1, 4)), int(rng.integers(2, 6))
    dims = ModelDims(
        n_entities=n_e,
        n_types=n_t,
        n_relations=n_r,
        entity_dim=int(rng.integers(1, 7)),
        type_dim=int(rng.integers(1, 7)),
        relation_dim=int(rng.integers(1, 7)),
        hidden=int(rng.integers(1, 9)),
        dense=int(rng.integers(1, 5)),
        ablate_relations=ablate,
        shared_recurrent=shared,
    )
    etype = rng.integers(0, n_t, n_e).astype(np.int32)
    params = init_params(dims, seed, etype).astype(dtype)
    # larger-than-default weights so every gate and ReLU is exercised
    for name, t in params.tensors.items():
        t += rng.normal(0.0, 0.3, t.shape)
    return params


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
