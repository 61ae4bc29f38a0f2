from collections import Counter

import pytest

from kprn import synth
from kprn.graph import load_entity_types, load_interactions, load_triplets


def test_planted_rule_holds():
    d = synth.generate(users=100, items=100, attributes=10, rule_strength=0.9, per_user=10, seed=1)
    hits = sum(d.predictive_attr[i] == d.hidden[u] for u, i in d.interactions)
    assert 0.8 < hits / len(d.interactions) <= 1.0
    per_user = Counter(u for u, _ in d.interactions)
    assert set(per_user.values()) == {10}
    assert len(set(d.interactions)) == len(d.interactions)


def test_rule_strength_zero_is_uninformative():
    d = synth.generate(users=100, items=100, attributes=10, rule_strength=0.0, per_user=10, seed=1)
    hits = sum(d.predictive_attr[i] == d.hidden[u] for u, i in d.interactions)
    assert hits / len(d.interactions) < 0.2


def test_contrast_avoids_side_attribute():
    d = synth.generate(users=50, items=100, attributes=10, per_user=5, contrast=True, seed=2)
    assert all(d.side_attr[i] != d.hidden[u] for u, i in d.interactions)


def test_noise_tags_and_determinism():
    a = synth.generate(users=10, items=20, attributes=5, per_user=3, noise_tags=2, seed=4)
    b = synth.generate(users=10, items=20, attributes=5, per_user=3, noise_tags=2, seed=4)
    assert a.triplets == b.triplets and a.interactions == b.interactions
    tags = Counter(h for h, r, _ in a.triplets if r == synth.TAGGED)
    assert set(tags.values()) == {2}
    assert a.interactions != synth.generate(users=10, items=20, attributes=5, per_user=3, seed=5).interactions


def test_write_round_trip(tmp_path):
    d = synth.generate(users=10, items=20, attributes=5, per_user=3, seed=0)
    files = d.write(tmp_path)
    assert load_triplets(files["triplets"]) == d.triplets
    assert load_interactions(files["interactions"]) == d.interactions
    assert load_entity_types(files["types"]) == d.entity_types


def test_invalid_arguments():
    with pytest.raises(ValueError):
        synth.generate(users=1)
    with pytest.raises(ValueError):
        synth.generate(rule_strength=1.5)
    with pytest.raises(ValueError):
        synth.generate(items=10, per_user=10)


def test_rule_strength_one_is_exact():
    d = synth.generate(users=40, items=60, attributes=6, rule_strength=1.0, per_user=5, seed=3)
    assert all(d.predictive_attr[i] == d.hidden[u] for u, i in d.interactions)
