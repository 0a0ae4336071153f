"""Graphs, weighted Laplacians and their spectra.

Every gossip matrix in this package is the weighted Laplacian of some graph,
stored as a dense ``numpy`` array.  Spectral work uses a dense symmetric
eigensolver; graphs up to a couple of thousand vertices are fine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from . import _kernels

#: eigenvalues at or below ``ZERO_TOL * lambda_max`` count as zero
ZERO_TOL = 1e-9


class StructureError(ValueError):
    """A matrix or graph lacks the structure an operation needs."""


def _edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Graph:
    """Undirected loop-less graph on vertices ``0 .. n-1``."""

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"vertex count must be positive, got {self.n}")
        normalized = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
            e = _edge(i, j)
            if e in normalized:
                raise ValueError(f"duplicate edge {e}")
            normalized.add(e)
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        return cls(n, frozenset(_edge(int(i), int(j)) for i, j in edges))

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls.from_edges(n, ((i, j) for i in range(n) for j in range(i + 1, n)))

    @classmethod
    def path(cls, n: int) -> "Graph":
        return cls.from_edges(n, ((i, i + 1) for i in range(n - 1)))

    @classmethod
    def cycle(cls, n: int) -> "Graph":
        return cls.from_edges(n, ((i, (i + 1) % n) for i in range(n)))

    @classmethod
    def star(cls, n: int) -> "Graph":
        """Star on ``n`` vertices with centre 0."""
        return cls.from_edges(n, ((0, i) for i in range(1, n)))

    @cached_property
    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted adjacency lists as ``(indptr, indices)``."""
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(a) for a in nbrs])
        indices = np.array([v for a in nbrs for v in sorted(a)], dtype=np.int64)
        return indptr, indices

    def neighbors(self, i: int) -> np.ndarray:
        indptr, indices = self.csr
        return indices[indptr[i] : indptr[i + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr[0])

    @property
    def d_max(self) -> int:
        return int(self.degrees.max())

    def n_components(self) -> int:
        parent = list(range(self.n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        count = self.n
        for i, j in self.edges:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
                count -= 1
        return count

    def is_connected(self) -> bool:
        return self.n_components() == 1

    @cached_property
    def _bfs(self) -> tuple[np.ndarray, np.ndarray]:
        indptr, indices = self.csr
        return _kernels.all_pairs_bfs(indptr, indices, self.n)

    def distances(self) -> np.ndarray:
        """All-pairs hop distances; ``-1`` marks unreachable pairs."""
        return self._bfs[0]

    def diameter(self) -> int:
        dist = self.distances()
        if (dist < 0).any():
            raise StructureError("diameter of a disconnected graph is undefined")
        return int(dist.max())

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a


@dataclass(frozen=True)
class WeightedGraph:
    """A :class:`Graph` with a positive weight on every edge."""

    graph: Graph
    weights: dict

    def __post_init__(self):
        normalized = {_edge(*e): float(w) for e, w in self.weights.items()}
        if set(normalized) != set(self.graph.edges):
            raise ValueError("weights must be keyed exactly by the edge set")
        bad = [e for e, w in normalized.items() if not (w > 0 and math.isfinite(w))]
        if bad:
            raise ValueError(f"non-positive or non-finite weight on edges {bad[:5]}")
        object.__setattr__(self, "weights", normalized)

    @classmethod
    def unit(cls, graph: Graph) -> "WeightedGraph":
        return cls(graph, {e: 1.0 for e in graph.edges})

    @property
    def n(self) -> int:
        return self.graph.n

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n)
        for (i, j), w in self.weights.items():
            d[i] += w
            d[j] += w
        return d

    def d_max(self) -> float:
        return float(self.degrees().max())

    def reweighted(self, updates: dict) -> "WeightedGraph":
        w = dict(self.weights)
        for e, val in updates.items():
            w[_edge(*e)] = val
        return WeightedGraph(self.graph, w)


class SpectralSummary(NamedTuple):
    lambda_max: float
    lambda_min_plus: float
    chi: float


class GossipCheck(NamedTuple):
    ok: bool
    reason: str

    def __bool__(self):
        return self.ok


def build_laplacian(g: WeightedGraph | Graph) -> np.ndarray:
    """Weighted Laplacian: incident weight sums on the diagonal, ``-a_ij`` off it.

    A bare :class:`Graph` is treated as unit-weighted.
    """
    if isinstance(g, Graph):
        g = WeightedGraph.unit(g)
    lap = np.zeros((g.n, g.n))
    for (i, j), w in g.weights.items():
        lap[i, j] -= w
        lap[j, i] -= w
        lap[i, i] += w
        lap[j, j] += w
    return lap


def mini_laplacian(n: int, i: int, j: int) -> np.ndarray:
    """Laplacian of the single edge ``(i, j)`` embedded in ``n`` dimensions."""
    if i == j:
        raise ValueError("mini-Laplacian needs two distinct vertices")
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"vertices ({i}, {j}) out of range for n={n}")
    ell = np.zeros((n, n))
    ell[i, i] = ell[j, j] = 1.0
    ell[i, j] = ell[j, i] = -1.0
    return ell


def validate_gossip(w: np.ndarray, g: Graph) -> GossipCheck:
    """Check that ``w`` is a gossip matrix for ``g``.

    Tests symmetry, the sparsity pattern of ``g`` and that the kernel is exactly
    the constant vectors.  The returned :class:`GossipCheck` is truthy on success
    and otherwise names the first violated condition.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {w.shape}")
    if w.shape[0] != g.n:
        raise ValueError(f"matrix dimension {w.shape[0]} does not match graph n={g.n}")
    n = g.n
    scale = max(float(np.abs(w).max()), 1e-300)
    if np.abs(w - w.T).max() > 1e-12 * scale:
        return GossipCheck(False, "symmetry: matrix is not symmetric")
    off = np.abs(w) > 1e-12 * scale
    np.fill_diagonal(off, False)
    allowed = g.adjacency() > 0
    stray = np.argwhere(off & ~allowed)
    if len(stray):
        i, j = stray[0]
        return GossipCheck(False, f"sparsity: entry ({i}, {j}) is nonzero but not an edge")
    eig = np.linalg.eigvalsh(w)
    lam_max = float(np.abs(eig).max())
    thr = ZERO_TOL * lam_max
    ones = np.ones(n) / math.sqrt(n)
    if np.linalg.norm(w @ ones) > thr:
        return GossipCheck(False, "kernel: the ones vector is not in the kernel")
    kernel_dim = int((np.abs(eig) <= thr).sum())
    if kernel_dim != 1:
        return GossipCheck(False, f"kernel: dimension {kernel_dim}, expected 1")
    return GossipCheck(True, "ok")


def spectral_summary(w: np.ndarray) -> SpectralSummary:
    """``lambda_max``, smallest positive eigenvalue and their ratio ``chi``."""
    eig = np.linalg.eigvalsh(np.asarray(w, dtype=float))
    lam_max = float(eig[-1])
    if lam_max <= 0:
        raise StructureError("matrix has no positive eigenvalue")
    thr = ZERO_TOL * lam_max
    kernel_dim = int((eig <= thr).sum())
    if kernel_dim != 1:
        raise StructureError(f"kernel dimension is {kernel_dim}, expected 1")
    lam_min = float(eig[1])
    return SpectralSummary(lam_max, lam_min, lam_max / lam_min)


def gershgorin_bound(g: WeightedGraph) -> float:
    """Upper bound ``2 * d_max`` on the largest Laplacian eigenvalue."""
    return 2.0 * g.d_max()


def shortest_path_weighting(g: Graph) -> WeightedGraph:
    """Weight each edge by how many chosen shortest paths cross it.

    One path per unordered vertex pair ``s < t``: BFS from ``s``, each vertex
    stepping back to its lowest-index neighbour one level closer.  The
    resulting Laplacian dominates the complete-graph Laplacian divided by the
    diameter, so ``lambda_min_plus >= n / D`` and ``chi <= 2 n D``.
    """
    if not g.is_connected():
        raise StructureError("shortest-path weighting needs a connected graph")
    dist, pred = g._bfs
    counts = _kernels.path_edge_counts(dist, pred)
    return WeightedGraph(g, {(i, j): float(counts[i, j]) for i, j in g.edges})


def shortest_path_sum(g: Graph, s: int, t: int) -> np.ndarray:
    """Sum of mini-Laplacians along the chosen shortest path from ``s`` to ``t``."""
    s, t = min(s, t), max(s, t)
    dist, pred = g._bfs
    if dist[s, t] < 0:
        raise StructureError(f"no path between {s} and {t}")
    out = np.zeros((g.n, g.n))
    v = t
    while v != s:
        u = int(pred[s, v])
        out += mini_laplacian(g.n, u, v)
        v = u
    return out


def edge_difference(g1: Graph, g2: Graph) -> int:
    """Size of the symmetric difference of the two edge sets."""
    if g1.n != g2.n:
        raise ValueError(f"vertex counts differ: {g1.n} vs {g2.n}")
    return len(g1.edges ^ g2.edges)


def bridges(g: Graph) -> list[tuple[int, int]]:
    """Edges whose removal disconnects their component, in lexicographic order."""
    base = g.n_components()
    out = []
    for e in g.edge_list:
        if Graph(g.n, g.edges - {e}).n_components() > base:
            out.append(e)
    return out


def _retune_edges(g: Graph) -> list[tuple[int, int]]:
    found = bridges(g)
    if found:
        return found[:1]
    # no bridge: cutting off a whole vertex is the only one-knob way to push
    # lambda_min_plus to zero
    deg = g.degrees
    v = int(np.flatnonzero(deg == deg.min())[0])
    return [_edge(v, int(u)) for u in g.neighbors(v)]


def retune_chi(
    g: WeightedGraph,
    chi_target: float,
    rtol: float = 1e-6,
    max_iter: int = 64,
    floor: float = 1e-12,
) -> WeightedGraph:
    """Shrink one knob of edge weights until the Laplacian condition number hits ``chi_target``.

    The knob is the lexicographically first bridge when one exists; otherwise
    all edges at the lowest-index vertex of minimum degree are scaled together.
    Bisection runs on the log of the scale factor in ``[floor, 1]``.
    """
    chi0 = spectral_summary(build_laplacian(g)).chi
    if abs(chi0 - chi_target) <= rtol * chi_target:
        return g
    if chi_target < chi0:
        raise ValueError(f"target chi {chi_target} is below the current chi {chi0}")
    knob = _retune_edges(g.graph)

    def chi_at(scale: float) -> float:
        wg = g.reweighted({e: g.weights[e] * scale for e in knob})
        try:
            return spectral_summary(build_laplacian(wg)).chi
        except StructureError:
            # lambda_min_plus fell under the zero threshold
            return math.inf

    lo, hi = math.log(floor), 0.0  # chi(lo) >= target > chi(hi)
    if chi_at(floor) < chi_target:
        raise StructureError(
            f"cannot reach chi={chi_target}: scale floor {floor} only gives {chi_at(floor)}"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        chi = chi_at(math.exp(mid))
        if abs(chi - chi_target) <= rtol * chi_target:
            return g.reweighted({e: g.weights[e] * math.exp(mid) for e in knob})
        if chi >= chi_target:
            lo = mid
        else:
            hi = mid
    raise StructureError(f"bisection did not reach chi={chi_target} in {max_iter} steps")


def random_connected_graph(n: int, rng: np.random.Generator, p: float = 0.1) -> Graph:
    """Random spanning tree plus independent extra edges with probability ``p``."""
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        edges.add(_edge(int(order[k]), int(order[rng.integers(k)])))
    if p > 0:
        iu, ju = np.triu_indices(n, 1)
        keep = rng.random(iu.size) < p
        edges.update(zip(iu[keep].tolist(), ju[keep].tolist()))
    return Graph(n, frozenset(edges))


def random_graph(n: int, rng: np.random.Generator, p: float) -> Graph:
    """Erdos-Renyi graph; may be disconnected."""
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return Graph(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())))


def random_weights(g: Graph, rng: np.random.Generator, low=0.1, high=10.0) -> WeightedGraph:
    return WeightedGraph(g, {e: float(rng.uniform(low, high)) for e in g.edge_list})


# ---------------------------------------------------------------------------
# text format: "n m" header, then "i j [w]" per edge, '#' starts a comment
# ---------------------------------------------------------------------------


def parse_graph(text: str) -> WeightedGraph:
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows:
        raise ValueError("empty graph file")
    if len(rows[0]) != 2:
        raise ValueError("header must be 'n m'")
    n, m = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != m:
        raise ValueError(f"header declares {m} edges, found {len(body)}")
    weights = {}
    for parts in body:
        if len(parts) not in (2, 3):
            raise ValueError(f"bad edge line {' '.join(parts)!r}")
        e = _edge(int(parts[0]), int(parts[1]))
        if e in weights:
            raise ValueError(f"duplicate edge {e}")
        weights[e] = float(parts[2]) if len(parts) == 3 else 1.0
    return WeightedGraph(Graph(n, frozenset(weights)), weights)


def format_graph(g: WeightedGraph | Graph) -> str:
    if isinstance(g, Graph):
        g = WeightedGraph.unit(g)
    lines = [f"{g.n} {len(g.weights)}"]
    for i, j in g.graph.edge_list:
        lines.append(f"{i} {j} {g.weights[(i, j)]:.17g}")
    return "\n".join(lines) + "\n"


def read_graph(path: str | Path) -> WeightedGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def write_graph(path: str | Path, g: WeightedGraph | Graph) -> None:
    Path(path).write_text(format_graph(g), encoding="utf-8")
