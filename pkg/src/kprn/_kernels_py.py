"""Pure-Python path-enumeration kernels (fallback for ``kprn._kernels``)."""

import numpy as np

BACKEND = "python"


def make_adjacency(indptr, nbr, rel):
    indptr = np.asarray(indptr).tolist()
    nbr = np.asarray(nbr).tolist()
    rel = np.asarray(rel).tolist()
    return [list(zip(rel[a:b], nbr[a:b])) for a, b in zip(indptr[:-1], indptr[1:])]


def bfs_distances(adj, target, limit):
    dist = [limit + 1] * len(adj)
    dist[target] = 0
    frontier = [target]
    d = 0
    while frontier and d < limit:
        d += 1
        nxt = []
        for v in frontier:
            for _, w in adj[v]:
                if dist[w] > d:
                    dist[w] = d
                    nxt.append(w)
        frontier = nxt
    return np.asarray(dist, dtype=np.int32)


def enumerate_paths(adj, dist, src, dst, min_nodes, max_nodes, null_rel):
    dist = dist.tolist() if isinstance(dist, np.ndarray) else dist
    ents, rels, offs = [], [], [0]
    nodes, steps = [src], []
    visited = {src}

    def walk(v):
        nn = len(nodes) + 1
        for r, w in adj[v]:
            if w in visited:
                continue
            if w == dst:
                if nn >= min_nodes:
                    ents.extend(nodes)
                    ents.append(w)
                    rels.extend(steps)
                    rels.append(r)
                    rels.append(null_rel)
                    offs.append(len(ents))
                continue
            if nn >= max_nodes or dist[w] > max_nodes - nn:
                continue
            nodes.append(w)
            steps.append(r)
            visited.add(w)
            walk(w)
            visited.discard(w)
            steps.pop()
            nodes.pop()

    walk(src)
    return (
        np.asarray(ents, dtype=np.int32),
        np.asarray(rels, dtype=np.int32),
        np.asarray(offs, dtype=np.int64),
    )
