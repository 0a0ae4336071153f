"""Hot inner loops, with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time from the ``TVGOSSIP_BACKEND``
environment variable (``numba`` or ``numpy``).  When unset, numba is used if
it imports cleanly.  Both implementations are always importable as
``numba_impl`` / ``numpy_impl`` so tests and benchmarks can compare them.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy fallback
# ---------------------------------------------------------------------------


def _dense_adjacency(indptr, indices, n):
    adj = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    adj[rows, indices] = True
    return adj


def _np_all_pairs_bfs(indptr, indices, n):
    adj = _dense_adjacency(indptr, indices, n)
    adj_f = adj.astype(np.float32)
    dist = np.full((n, n), -1, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    frontier = np.eye(n, dtype=bool)
    visited = frontier.copy()
    level = 0
    while frontier.any():
        level += 1
        reach = (frontier.astype(np.float32) @ adj_f) > 0
        frontier = reach & ~visited
        visited |= frontier
        dist[frontier] = level

    pred = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        d = dist[s]
        cand = adj & (d[None, :] == (d[:, None] - 1)) & (d[:, None] > 0)
        has = cand.any(axis=1)
        pred[s, has] = np.argmax(cand[has], axis=1)
    return dist, pred


def _np_path_edge_counts(dist, pred):
    n = dist.shape[0]
    counts = np.zeros((n, n), dtype=np.int64)
    idx = np.arange(n)
    for s in range(n):
        d = dist[s]
        size = (idx > s).astype(np.int64)
        size[d < 0] = 0
        for level in range(int(d.max()), 0, -1):
            nodes = np.flatnonzero(d == level)
            np.add.at(size, pred[s, nodes], size[nodes])
        nodes = np.flatnonzero(d > 0)
        np.add.at(counts, (nodes, pred[s, nodes]), size[nodes])
    return counts + counts.T


def _np_markov_walk(cum, start, uniforms):
    k = cum.shape[0]
    out = np.empty(uniforms.shape[0], dtype=np.int64)
    state = int(start)
    for i in range(uniforms.shape[0]):
        state = min(int(np.searchsorted(cum[state], uniforms[i], side="right")), k - 1)
        out[i] = state
    return out


def _np_neighborhood_union(indptr, indices, held):
    n = held.shape[0]
    adj = _dense_adjacency(indptr, indices, n) | np.eye(n, dtype=bool)
    return (adj.astype(np.int64) @ held.astype(np.int64)) > 0


numpy_impl = SimpleNamespace(
    all_pairs_bfs=_np_all_pairs_bfs,
    path_edge_counts=_np_path_edge_counts,
    markov_walk=_np_markov_walk,
    neighborhood_union=_np_neighborhood_union,
)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------


def _nb_all_pairs_bfs(indptr, indices, n):
    dist = np.full((n, n), -1, dtype=np.int64)
    pred = np.full((n, n), -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        d = dist[s]
        d[s] = 0
        queue[0] = s
        head = 0
        tail = 1
        while head < tail:
            u = queue[head]
            head += 1
            for p in range(indptr[u], indptr[u + 1]):
                v = indices[p]
                if d[v] < 0:
                    d[v] = d[u] + 1
                    queue[tail] = v
                    tail += 1
        # adjacency lists are sorted, so the first hit is the lowest index
        for v in range(n):
            if d[v] <= 0:
                continue
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                if d[u] == d[v] - 1:
                    pred[s, v] = u
                    break
    return dist, pred


def _nb_path_edge_counts(dist, pred):
    n = dist.shape[0]
    counts = np.zeros((n, n), dtype=np.int64)
    size = np.zeros(n, dtype=np.int64)
    for s in range(n):
        d = dist[s]
        dmax = 0
        for v in range(n):
            size[v] = 1 if (v > s and d[v] >= 0) else 0
            if d[v] > dmax:
                dmax = d[v]
        for level in range(dmax, 0, -1):
            for v in range(n):
                if d[v] == level:
                    size[pred[s, v]] += size[v]
        for v in range(n):
            if d[v] > 0 and size[v] > 0:
                u = pred[s, v]
                counts[v, u] += size[v]
                counts[u, v] += size[v]
    return counts


def _nb_markov_walk(cum, start, uniforms):
    k = cum.shape[0]
    out = np.empty(uniforms.shape[0], dtype=np.int64)
    state = start
    for i in range(uniforms.shape[0]):
        nxt = np.searchsorted(cum[state], uniforms[i], side="right")
        state = nxt if nxt < k else k - 1
        out[i] = state
    return out


def _nb_neighborhood_union(indptr, indices, held):
    n, m = held.shape
    out = held.copy()
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            for c in range(m):
                if held[j, c]:
                    out[i, c] = True
    return out


if HAVE_NUMBA:
    numba_impl = SimpleNamespace(
        all_pairs_bfs=njit(cache=True)(_nb_all_pairs_bfs),
        path_edge_counts=njit(cache=True)(_nb_path_edge_counts),
        markov_walk=njit(cache=True)(_nb_markov_walk),
        neighborhood_union=njit(cache=True)(_nb_neighborhood_union),
    )
else:  # pragma: no cover
    numba_impl = None


def _select_backend() -> str:
    requested = os.environ.get("TVGOSSIP_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested == "numba" and not HAVE_NUMBA:
        raise ImportError("TVGOSSIP_BACKEND=numba but numba is not installed")
    if requested not in ("", "numba"):
        raise ValueError(f"unknown TVGOSSIP_BACKEND {requested!r}")
    return "numba" if HAVE_NUMBA else "numpy"


BACKEND = _select_backend()
impl = numba_impl if BACKEND == "numba" else numpy_impl

all_pairs_bfs = impl.all_pairs_bfs
path_edge_counts = impl.path_edge_counts
markov_walk = impl.markov_walk
neighborhood_union = impl.neighborhood_union
