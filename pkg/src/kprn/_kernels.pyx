# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled path-enumeration kernels.

Same contract as ``kprn._kernels_py``; the DFS itself runs without the GIL so
``extract_corpus`` can spread targets over threads.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int32_t, int64_t
from libcpp.vector cimport vector

cnp.import_array()

BACKEND = "cython"


def make_adjacency(indptr, nbr, rel):
    return (
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(nbr, dtype=np.int32),
        np.ascontiguousarray(rel, dtype=np.int32),
    )


def bfs_distances(adj, int64_t target, int limit):
    """Hop distance from every entity to ``target`` (edges are symmetric),
    explored up to ``limit`` hops; unreached entities get ``limit + 1``."""
    cdef const int64_t[::1] indptr = adj[0]
    cdef const int32_t[::1] nbr = adj[1]
    cdef Py_ssize_t n = indptr.shape[0] - 1
    dist_arr = np.full(n, limit + 1, dtype=np.int32)
    cdef int32_t[::1] dist = dist_arr
    cdef vector[int32_t] frontier, nxt
    cdef int32_t v, w, d
    cdef int64_t e
    with nogil:
        dist[target] = 0
        frontier.push_back(<int32_t>target)
        d = 0
        while frontier.size() > 0 and d < limit:
            d += 1
            nxt.clear()
            for k in range(frontier.size()):
                v = frontier[k]
                for e in range(indptr[v], indptr[v + 1]):
                    w = nbr[e]
                    if dist[w] > d:
                        dist[w] = d
                        nxt.push_back(w)
            frontier.swap(nxt)
    return dist_arr


cdef void _dfs(const int64_t[::1] indptr, const int32_t[::1] nbr, const int32_t[::1] rel,
               const int32_t[::1] dist, int32_t src, int32_t dst, int min_nodes,
               int max_nodes, int32_t null_rel, vector[int32_t]& out_ent,
               vector[int32_t]& out_rel, vector[int64_t]& out_off) noexcept nogil:
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef vector[char] visited = vector[char](n, 0)
    cdef vector[int32_t] nodes = vector[int32_t](max_nodes, 0)
    cdef vector[int32_t] rels = vector[int32_t](max_nodes, 0)
    cdef vector[int64_t] cursor = vector[int64_t](max_nodes, 0)
    cdef int depth = 0
    cdef int nn, k
    cdef int32_t v, w
    cdef int64_t e
    nodes[0] = src
    visited[src] = 1
    cursor[0] = indptr[src]
    while depth >= 0:
        v = nodes[depth]
        if cursor[depth] == indptr[v + 1]:
            visited[v] = 0
            depth -= 1
            continue
        e = cursor[depth]
        cursor[depth] += 1
        w = nbr[e]
        if visited[w]:
            continue
        nn = depth + 2
        if w == dst:
            if nn >= min_nodes:
                for k in range(depth + 1):
                    out_ent.push_back(nodes[k])
                for k in range(depth):
                    out_rel.push_back(rels[k])
                out_rel.push_back(rel[e])
                out_ent.push_back(w)
                out_rel.push_back(null_rel)
                out_off.push_back(out_ent.size())
            continue
        if nn >= max_nodes or dist[w] > max_nodes - nn:
            continue
        rels[depth] = rel[e]
        depth += 1
        nodes[depth] = w
        visited[w] = 1
        cursor[depth] = indptr[w]


def enumerate_paths(adj, dist, int64_t src, int64_t dst, int min_nodes, int max_nodes, int64_t null_rel):
    """All simple ``src -> dst`` paths with ``min_nodes..max_nodes`` nodes, in
    DFS order over the (relation, entity)-sorted adjacency.

    Returns flat ``(entities, relations, offsets)`` with ``offsets[0] == 0``.
    """
    cdef const int64_t[::1] indptr = adj[0]
    cdef const int32_t[::1] nbr = adj[1]
    cdef const int32_t[::1] rel = adj[2]
    cdef const int32_t[::1] dv = np.ascontiguousarray(dist, dtype=np.int32)
    cdef vector[int32_t] out_ent, out_rel
    cdef vector[int64_t] out_off
    out_off.push_back(0)
    with nogil:
        _dfs(indptr, nbr, rel, dv, <int32_t>src, <int32_t>dst, min_nodes, max_nodes,
             <int32_t>null_rel, out_ent, out_rel, out_off)
    ents = np.empty(out_ent.size(), dtype=np.int32)
    rels = np.empty(out_rel.size(), dtype=np.int32)
    offs = np.empty(out_off.size(), dtype=np.int64)
    cdef int32_t[::1] ev = ents
    cdef int32_t[::1] rv = rels
    cdef int64_t[::1] ov = offs
    cdef Py_ssize_t k
    for k in range(<Py_ssize_t>out_ent.size()):
        ev[k] = out_ent[k]
        rv[k] = out_rel[k]
    for k in range(<Py_ssize_t>out_off.size()):
        ov[k] = out_off[k]
    return ents, rels, offs
