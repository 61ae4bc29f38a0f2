import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kprn.errors import SnapshotError, UnknownEntity
from kprn.graph import build_enriched_graph
from kprn.paths import (
    PathCorpus,
    PathSet,
    extract_corpus,
    extract_paths,
    load_corpus,
    load_corpus_text,
    save_corpus,
    save_corpus_text,
    validate_path,
)

BACKENDS = ["python", "cython"]


def brute_force_paths(kg, interactions, user, item, min_nodes, max_nodes):
    """Every simple path user -> item, by unpruned DFS over name-level edges."""
    adj = {}
    for h, r, t in kg:
        adj.setdefault(h, set()).add((r, t))
        adj.setdefault(t, set()).add((r + "_inv", h))
    for u, i in interactions:
        adj.setdefault(u, set()).add(("interact", i))
        adj.setdefault(i, set()).add(("interacted_by", u))
    found = set()

    def walk(ents, rels):
        if ents[-1] == item:
            if len(ents) >= min_nodes:
                found.add((tuple(ents), tuple(rels + ["<null>"])))
            return
        if len(ents) == max_nodes:
            return
        for r, t in adj.get(ents[-1], ()):
            if t not in ents:
                walk(ents + [t], rels + [r])

    walk([user], [])
    return found


def named(graph, ps):
    return {
        (tuple(graph.entities.name(e) for e in p.entities), tuple(graph.relations.name(r) for r in p.relations))
        for p in ps
    }


def random_graph(rng, n_nodes, p_edge):
    n_users = int(rng.integers(1, max(2, n_nodes // 3)))
    n_items = int(rng.integers(1, max(2, n_nodes // 3)))
    users = [f"u{k}" for k in range(n_users)]
    items = [f"i{k}" for k in range(n_items)]
    others = [f"e{k}" for k in range(n_nodes - n_users - n_items)]
    kg_nodes = items + others
    kg, inter = [], []
    for h in kg_nodes:
        for t in kg_nodes:
            if h != t and rng.random() < p_edge:
                kg.append((h, f"r{int(rng.integers(0, 3))}", t))
    for u in users:
        for i in items:
            if rng.random() < p_edge:
                inter.append((u, i))
    # every user and item must appear in some interaction
    for u in users:
        inter.append((u, items[int(rng.integers(0, n_items))]))
    for i in items:
        inter.append((users[int(rng.integers(0, n_users))], i))
    return kg, inter


@pytest.mark.parametrize("backend", BACKENDS)
def test_matches_brute_force(backend):
    rng = np.random.default_rng(11)
    for _ in range(40):
        kg, inter = random_graph(rng, int(rng.integers(5, 15)), rng.uniform(0.2, 0.5))
        g = build_enriched_graph(kg, inter)
        for u in g.users[:2].tolist():
            for i in g.items[:3].tolist():
                for min_nodes, max_nodes in ((2, 4), (3, 5)):
                    ps = extract_paths(g, u, i, max_nodes=max_nodes, min_nodes=min_nodes, backend=backend)
                    want = brute_force_paths(kg, inter, g.entities.name(u), g.entities.name(i), min_nodes, max_nodes)
                    assert named(g, ps) == want
                    assert len(ps) == len(want)  # no duplicates


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), max_nodes=st.integers(2, 5))
def test_backends_agree_exactly(seed, max_nodes):
    rng = np.random.default_rng(seed)
    kg, inter = random_graph(rng, 10, 0.35)
    g = build_enriched_graph(kg, inter)
    u, i = int(g.users[0]), int(g.items[-1])
    a = extract_paths(g, u, i, max_nodes=max_nodes, backend="python")
    b = extract_paths(g, u, i, max_nodes=max_nodes, backend="cython")
    assert a.same_as(b)


def test_paths_are_valid_and_lexicographic(music_graph):
    g = music_graph
    ps = extract_paths(g, g.entity_id("alice"), g.entity_id("songB"), max_nodes=6)
    assert len(ps) > 0
    keys = []
    for p in ps:
        assert validate_path(g, p) == []
        assert p.entities[0] == g.entity_id("alice") and p.entities[-1] == g.entity_id("songB")
        assert p.relations[-1] == g.null_rel
        keys.append(tuple(x for step in zip(p.relations[:-1], p.entities[1:]) for x in step))
    assert keys == sorted(keys)


def test_expected_music_paths(music_graph):
    g = music_graph
    ps = extract_paths(g, g.entity_id("alice"), g.entity_id("songB"), max_nodes=4, min_nodes=3)
    assert named(g, ps) == {
        (("alice", "songA", "X", "songB"), ("interact", "sung_by", "sung_by_inv", "<null>")),
        (("alice", "songA", "bob", "songB"), ("interact", "interacted_by", "interact", "<null>")),
    }


def test_min_nodes_excludes_direct_edge(music_graph):
    g = music_graph
    alice, songA = g.entity_id("alice"), g.entity_id("songA")
    direct = extract_paths(g, alice, songA, max_nodes=2)
    assert named(g, direct) == {(("alice", "songA"), ("interact", "<null>"))}
    assert len(extract_paths(g, alice, songA, max_nodes=2, min_nodes=3)) == 0


def test_cap_sample_is_deterministic_subset(small_dataset):
    _, g, _ = small_dataset
    u, i = int(g.users[0]), int(g.items[0])
    full = extract_paths(g, u, i, max_nodes=4)
    assert len(full) > 3
    a = extract_paths(g, u, i, max_nodes=4, cap=3, seed=5)
    b = extract_paths(g, u, i, max_nodes=4, cap=3, seed=5)
    c = extract_paths(g, u, i, max_nodes=4, cap=3, seed=6)
    assert not a.same_as(c) or len(full) <= 3
    assert a.same_as(b) and len(a) == 3
    all_paths = list(full)
    idx = [all_paths.index(p) for p in a]
    assert idx == sorted(idx)


def test_endpoints_checked(music_graph):
    g = music_graph
    with pytest.raises(UnknownEntity):
        extract_paths(g, g.entity_id("X"), g.entity_id("songA"))
    with pytest.raises(UnknownEntity):
        extract_paths(g, g.entity_id("alice"), g.entity_id("X"))
    with pytest.raises(ValueError):
        extract_paths(g, g.entity_id("alice"), g.entity_id("songA"), max_nodes=1)


def test_validate_path_flags_bad_paths(music_graph):
    g = music_graph
    ps = extract_paths(g, g.entity_id("alice"), g.entity_id("songB"), max_nodes=4, min_nodes=3)
    p = ps[0]
    broken = type(p)(p.entities, (p.relations[1],) + p.relations[1:])
    assert validate_path(g, broken)
    looped = type(p)(p.entities[:1] + p.entities[:1] + p.entities[2:], p.relations)
    assert validate_path(g, looped)


def test_corpus_threads_and_lazy_extraction(music_graph):
    g = music_graph
    pairs = [(u, i) for u in g.users.tolist() for i in g.items.tolist()]
    one = extract_corpus(g, pairs, max_nodes=5, cap=4, seed=1, min_nodes=3, threads=1)
    four = extract_corpus(g, pairs, max_nodes=5, cap=4, seed=1, min_nodes=3, threads=4)
    assert set(one) == set(pairs) == set(four)
    for k in pairs:
        assert one[k].same_as(four[k])
    lazy = extract_corpus(g, pairs[:1], max_nodes=5, cap=4, seed=1, min_nodes=3)
    assert lazy[pairs[-1]].same_as(one[pairs[-1]])
    assert PathCorpus()[(0, 1)].offsets.tolist() == [0]


@pytest.mark.parametrize("fmt", ["binary", "text"])
def test_corpus_round_trip(tmp_path, music_graph, fmt):
    g = music_graph
    pairs = [(u, i) for u in g.users.tolist() for i in g.items.tolist()]
    corpus = extract_corpus(g, pairs, max_nodes=5)
    save, load = (save_corpus, load_corpus) if fmt == "binary" else (save_corpus_text, load_corpus_text)
    path = tmp_path / "c"
    save(corpus, path)
    back = load(path)
    assert set(back) == set(corpus)
    for k in corpus:
        assert back[k].same_as(corpus[k])
    save(back, tmp_path / "c2")
    assert (tmp_path / "c2").read_bytes() == path.read_bytes()


def test_text_corpus_format(tmp_path):
    c = PathCorpus({(0, 3): PathSet.from_paths(0, 3, [([0, 5, 3], [4, 1, 6])])})
    save_corpus_text(c, tmp_path / "p.txt")
    assert (tmp_path / "p.txt").read_text() == "# kprn-paths 1\n0 3 1\n0 4 5 1 3 6\n"


def test_corrupt_corpus(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"KPRN-PATHS 1\n\x01")
    with pytest.raises(SnapshotError):
        load_corpus(bad)
    bad.write_text("# kprn-paths 1\n0 3 x\n")
    with pytest.raises(SnapshotError):
        load_corpus_text(bad)


def test_toy_examples():
    # u -interact-> a, b -r-> a, so u a b follows r's inverse
    g = build_enriched_graph([("b", "r", "a")], [("u", "a"), ("v", "b")], withhold=[("v", "b")])
    ps = extract_paths(g, g.entity_id("u"), g.entity_id("b"), max_nodes=6)
    assert named(g, ps) == {(("u", "a", "b"), ("interact", "r_inv", "<null>"))}
    # a user whose only interaction is withheld has no outgoing edges
    assert len(extract_paths(g, g.entity_id("v"), g.entity_id("a"), max_nodes=6)) == 0
    # diamond: two parallel three-node routes
    g = build_enriched_graph([("x", "r", "t"), ("y", "r", "t")], [("u", "x"), ("u", "y"), ("w", "t")], withhold=[("w", "t")])
    ps = extract_paths(g, g.entity_id("u"), g.entity_id("t"), max_nodes=3)
    assert len(ps) == 2
