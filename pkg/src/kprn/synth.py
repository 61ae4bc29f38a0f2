"""Synthetic knowledge graphs with planted user preferences.

Every item is linked to one attribute entity through a *predictive* relation
(``sung_by``) and to one, independently drawn, attribute entity from the same
pool through a *side* relation (``written_by``). Each user has a hidden
attribute and, with probability ``rule_strength`` per interaction, picks an
item whose predictive attribute matches it; otherwise the pick is uniform.

``contrast=True`` additionally makes the side relation anti-predictive: users
never pick items whose side attribute equals their hidden attribute. Since
both relations point into the same attribute entities, only a model that sees
relations can tell the two kinds of path apart.

``noise_tags > 0`` attaches that many random tag entities per item, which
adds many parallel, uninformative paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

PREDICTIVE = "sung_by"
SIDE = "written_by"
TAGGED = "tagged"


@dataclass
class SyntheticData:
    triplets: list
    interactions: list
    entity_types: dict
    hidden: dict  # user -> hidden attribute name
    predictive_attr: dict  # item -> attribute via PREDICTIVE
    side_attr: dict  # item -> attribute via SIDE

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {"triplets": out / "kg.tsv", "interactions": out / "interactions.tsv", "types": out / "types.tsv"}
        with open(files["triplets"], "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{h}\t{r}\t{t}\n" for h, r, t in self.triplets)
        with open(files["interactions"], "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{u}\t{i}\n" for u, i in self.interactions)
        with open(files["types"], "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{e}\t{t}\n" for e, t in self.entity_types.items())
        return files


def _name(prefix, k, n):
    return f"{prefix}{k:0{len(str(max(n - 1, 1)))}d}"


def generate(
    users: int = 200,
    items: int = 200,
    attributes: int = 20,
    rule_strength: float = 0.9,
    per_user: int = 10,
    noise_tags: int = 0,
    contrast: bool = False,
    seed: int = 0,
) -> SyntheticData:
    if min(users, items, attributes) < 2:
        raise ValueError("users, items and attributes must all be >= 2")
    if not 0.0 <= rule_strength <= 1.0:
        raise ValueError("rule_strength must lie in [0, 1]")
    if per_user >= items:
        raise ValueError("per_user must be smaller than the number of items")
    rng = np.random.default_rng(seed)
    item_names = [_name("item", k, items) for k in range(items)]
    attr_names = [_name("attr", k, attributes) for k in range(attributes)]
    user_names = [_name("user", k, users) for k in range(users)]
    tag_names = [_name("tag", k, attributes) for k in range(attributes)]

    pred = rng.permutation(np.arange(items) % attributes)
    side = rng.integers(0, attributes, size=items)
    triplets = []
    for k, it in enumerate(item_names):
        triplets.append((it, PREDICTIVE, attr_names[pred[k]]))
        triplets.append((it, SIDE, attr_names[side[k]]))
        if noise_tags:
            for t in np.sort(rng.choice(attributes, size=min(noise_tags, attributes), replace=False)):
                triplets.append((it, TAGGED, tag_names[t]))

    hidden = rng.permutation(np.arange(users) % attributes)
    interactions = []
    for u, un in enumerate(user_names):
        a = hidden[u]
        allowed = np.ones(items, dtype=bool)
        if contrast:
            allowed &= side != a
        liked = np.flatnonzero(allowed & (pred == a))
        picked: list[int] = []
        for _ in range(per_user):
            if rng.random() < rule_strength:
                pool = np.setdiff1d(liked, picked)
            else:
                pool = np.array([], dtype=np.int64)
            if pool.size == 0:
                pool = np.setdiff1d(np.flatnonzero(allowed), picked)
            picked.append(int(rng.choice(pool)))
        interactions.extend((un, item_names[i]) for i in sorted(picked))

    types = {**{i: "item" for i in item_names}, **{a: "attribute" for a in attr_names}}
    if noise_tags:
        types.update({t: "tag" for t in tag_names})
    return SyntheticData(
        triplets=triplets,
        interactions=interactions,
        entity_types=types,
        hidden={un: attr_names[hidden[u]] for u, un in enumerate(user_names)},
        predictive_attr={it: attr_names[pred[k]] for k, it in enumerate(item_names)},
        side_attr={it: attr_names[side[k]] for k, it in enumerate(item_names)},
    )
