"""Markov-modulated sequences of gossip matrices.

A :class:`GraphFamily` is a finite set of connected weighted graphs sharing a
vertex set, together with a stationary distribution over them.  A
:class:`MarkovGraphChain` walks the family with a row-stochastic kernel and
emits the Laplacian of the current member every communication round.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .graphs import (
    Graph,
    StructureError,
    WeightedGraph,
    build_laplacian,
    read_graph,
    validate_gossip,
)

MAX_DENSE_FAMILY = 1000


@dataclass(frozen=True)
class GraphFamily:
    members: tuple
    pi: np.ndarray

    def __post_init__(self):
        members = tuple(WeightedGraph.unit(g) if isinstance(g, Graph) else g for g in self.members)
        if not members:
            raise ValueError("a family needs at least one member")
        pi = np.asarray(self.pi, dtype=float)
        if pi.shape != (len(members),):
            raise ValueError(f"pi has shape {pi.shape}, expected ({len(members)},)")
        if (pi < 0).any() or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("pi must be a probability vector")
        n = members[0].n
        for k, g in enumerate(members):
            if g.n != n:
                raise ValueError(f"member {k} has {g.n} vertices, expected {n}")
            if not g.graph.is_connected():
                raise StructureError(f"member {k} is disconnected")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "pi", pi)

    @classmethod
    def uniform(cls, members: Sequence[WeightedGraph]) -> "GraphFamily":
        return cls(tuple(members), np.full(len(members), 1.0 / len(members)))

    @property
    def n(self) -> int:
        return self.members[0].n

    @property
    def size(self) -> int:
        return len(self.members)

    @cached_property
    def laplacians(self) -> np.ndarray:
        return np.stack([build_laplacian(g) for g in self.members])

    def union_graph(self) -> Graph:
        edges = set()
        for g, p in zip(self.members, self.pi):
            if p > 0:
                edges |= g.graph.edges
        return Graph(self.n, frozenset(edges))


def mean_gossip(family: GraphFamily) -> np.ndarray:
    """Stationary mean of the member Laplacians.

    Raises :class:`StructureError` if the mean is not a gossip matrix of the
    union graph.
    """
    w = np.tensordot(family.pi, family.laplacians, axes=1)
    check = validate_gossip(w, family.union_graph())
    if not check:
        raise StructureError(f"mean gossip matrix invalid: {check.reason}")
    return w


def rho_bound(family: GraphFamily) -> float:
    """Largest spectral-norm deviation of a member Laplacian from the mean."""
    w = np.tensordot(family.pi, family.laplacians, axes=1)
    return max(float(np.linalg.norm(lap - w, 2)) for lap in family.laplacians)


def check_kernel(kernel: np.ndarray, pi: np.ndarray) -> np.ndarray:
    q = np.asarray(kernel, dtype=float)
    k = len(pi)
    if q.shape != (k, k):
        raise ValueError(f"kernel has shape {q.shape}, expected ({k}, {k})")
    if (q < 0).any():
        raise ValueError("kernel has negative entries")
    if np.abs(q.sum(axis=1) - 1.0).max() > 1e-12:
        raise ValueError("kernel rows must sum to 1")
    if np.abs(pi @ q - pi).max() > 1e-10:
        raise ValueError("pi is not stationary for the kernel")
    return q


def is_primitive(kernel: np.ndarray) -> bool:
    """Irreducible and aperiodic, via positivity of a Wielandt-length power."""
    k = kernel.shape[0]
    if k > MAX_DENSE_FAMILY:
        raise ValueError(f"family of {k} members is too large for dense kernel powers")
    support = (kernel > 0).astype(float)
    power = np.linalg.matrix_power(support, (k - 1) ** 2 + 1)
    return bool((power > 0).all())


def _matrix_power(q: np.ndarray, m: int) -> np.ndarray:
    result = np.eye(q.shape[0])
    base = q.copy()
    while m:
        if m & 1:
            result = result @ base
        base = base @ base
        m >>= 1
    return result


class MarkovGraphChain:
    """Stationary Markov chain over the members of a :class:`GraphFamily`.

    Parameters
    ----------
    family : GraphFamily
    kernel : array_like, shape (K, K)
        Row-stochastic transition matrix with ``family.pi`` stationary.
    tau : int
        Declared mixing time.  Only :func:`mixing_diagnostic` reads it.
    seed : int
        Seed of the chain's private generator.
    state : int, optional
        Starting member.  Drawn from ``pi`` when omitted, so the chain starts
        stationary.
    """

    def __init__(self, family: GraphFamily, kernel, tau: int = 1, seed: int = 0, state=None):
        if int(tau) < 1:
            raise ValueError("tau must be a positive integer")
        self.family = family
        self.kernel = check_kernel(kernel, family.pi)
        self.tau = int(tau)
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        cum = np.cumsum(self.kernel, axis=1)
        cum[:, -1] = 1.0
        self._cum = cum
        self._powers: dict[int, np.ndarray] = {}
        if state is None:
            state = int(self.rng.choice(family.size, p=family.pi))
        if not 0 <= state < family.size:
            raise ValueError(f"state {state} out of range")
        self.state = int(state)
        self.rounds = 0

    @property
    def stack(self) -> np.ndarray:
        return self.family.laplacians

    @property
    def n(self) -> int:
        return self.family.n

    def draw(self, count: int) -> np.ndarray:
        """Advance ``count`` transitions and return the visited member indices."""
        if count <= 0:
            return np.zeros(0, dtype=np.int64)
        states = _kernels.markov_walk(self._cum, self.state, self.rng.random(count))
        self.state = int(states[-1])
        self.rounds += count
        return states

    def step(self) -> np.ndarray:
        """One transition; returns the Laplacian of the new member."""
        return self.stack[self.draw(1)[0]]

    def kernel_power(self, m: int) -> np.ndarray:
        if m not in self._powers:
            self._powers[m] = _matrix_power(self.kernel, m)
        return self._powers[m]

    def skip(self, count: int) -> None:
        """Advance ``count`` transitions by sampling straight from ``Q^count``."""
        if count <= 0:
            return
        if count <= 64:
            self.draw(count)
            return
        row = self.kernel_power(count)[self.state]
        cum = np.cumsum(row)
        cum[-1] = 1.0
        self.state = min(int(np.searchsorted(cum, self.rng.random(), side="right")), len(row) - 1)
        self.rounds += count


def _dobrushin(q: np.ndarray) -> float:
    return max(0.5 * float(np.abs(q - q[i]).sum(axis=1).max()) for i in range(q.shape[0]))


class MixingDiagnostic(NamedTuple):
    delta: float
    bound: float
    ok: bool


def mixing_diagnostic(chain: MarkovGraphChain, m: int) -> MixingDiagnostic:
    """Exact Dobrushin coefficient of ``Q^m`` against the declared ``tau``.

    ``delta`` is the largest total-variation distance between two rows of
    ``Q^m``; ``ok`` says whether it is within ``(1/4) ** (m // tau)``.
    """
    k = chain.family.size
    if k > MAX_DENSE_FAMILY:
        raise ValueError(f"family of {k} members is too large for the diagnostic")
    delta = _dobrushin(_matrix_power(chain.kernel, int(m)))
    bound = 0.25 ** (int(m) // chain.tau)
    return MixingDiagnostic(delta, bound, bool(delta <= bound + 1e-12))


# ---------------------------------------------------------------------------
# kernels and family constructors
# ---------------------------------------------------------------------------


def lazy_uniform_kernel(pi: np.ndarray, p: float) -> np.ndarray:
    """Stay put with probability ``p``, otherwise resample from ``pi``."""
    if not 0 <= p < 1:
        raise ValueError("laziness must lie in [0, 1)")
    pi = np.asarray(pi, dtype=float)
    return p * np.eye(len(pi)) + (1 - p) * np.outer(np.ones(len(pi)), pi)


def ring_kernel(k: int, p: float) -> np.ndarray:
    """Lazy nearest-neighbour walk on a ring of ``k`` members (uniform stationary law)."""
    if not 0 <= p <= 1:
        raise ValueError("laziness must lie in [0, 1]")
    q = p * np.eye(k)
    if k == 1:
        return np.ones((1, 1))
    for i in range(k):
        q[i, (i + 1) % k] += (1 - p) / 2
        q[i, (i - 1) % k] += (1 - p) / 2
    return q


def edge_toggle(
    base: Graph,
    delta: int,
    count: int,
    rng: np.random.Generator,
    max_tries: int = 1000,
) -> GraphFamily:
    """Unit-weight family whose members pairwise differ in at most ``delta`` edges.

    A fixed set of ``delta`` vertex pairs is drawn once; every member is the
    base graph with a random subset of those pairs toggled.  Member 0 is the
    base itself.  Disconnected candidates are rejected.
    """
    if not base.is_connected():
        raise StructureError("base graph must be connected")
    n = base.n
    n_pairs = n * (n - 1) // 2
    if delta < 0 or delta > n_pairs:
        raise ValueError(f"delta={delta} is out of range for n={n}")
    iu, ju = np.triu_indices(n, 1)
    pick = rng.choice(n_pairs, size=delta, replace=False)
    pool = [(int(iu[k]), int(ju[k])) for k in pick]
    members = [WeightedGraph.unit(base)]
    tries = 0
    while len(members) < count:
        tries += 1
        if tries > max_tries:
            raise StructureError("could not find enough connected toggles")
        mask = rng.random(delta) < 0.5
        edges = set(base.edges) ^ {e for e, keep in zip(pool, mask) if keep}
        g = Graph(n, frozenset(edges))
        if g.is_connected():
            members.append(WeightedGraph.unit(g))
    return GraphFamily.uniform(members)


def ring_of_graphs(members: Sequence[WeightedGraph | Graph], p: float = 0.5):
    """Explicit members on a ring with a lazy nearest-neighbour kernel.

    Returns ``(family, kernel)``.
    """
    wgs = [WeightedGraph.unit(g) if isinstance(g, Graph) else g for g in members]
    family = GraphFamily.uniform(wgs)
    return family, ring_kernel(family.size, p)


# ---------------------------------------------------------------------------
# family description files (JSON)
# ---------------------------------------------------------------------------

_KERNEL_RE = re.compile(r"^\s*(lazy-uniform|ring)\s+p\s*=\s*([0-9.eE+-]+)\s*$")


def parse_kernel_spec(spec, pi: np.ndarray) -> np.ndarray:
    if isinstance(spec, str):
        if spec.strip() == "iid":
            return lazy_uniform_kernel(pi, 0.0)
        match = _KERNEL_RE.match(spec)
        if not match:
            raise ValueError(f"unrecognised kernel spec {spec!r}")
        kind, p = match.group(1), float(match.group(2))
        if kind == "lazy-uniform":
            return lazy_uniform_kernel(pi, p)
        if not np.allclose(pi, pi[0]):
            raise ValueError("ring kernel needs a uniform pi")
        return ring_kernel(len(pi), p)
    return np.asarray(spec, dtype=float)


@dataclass
class FamilySpec:
    family: GraphFamily
    kernel: np.ndarray
    tau: int
    seed: int
    member_paths: list

    def chain(self, seed: int | None = None, state: int | None = None) -> MarkovGraphChain:
        return MarkovGraphChain(
            self.family, self.kernel, tau=self.tau, seed=self.seed if seed is None else seed, state=state
        )


def load_family(path: str | Path) -> FamilySpec:
    """Read a family description.

    The file is JSON with keys ``members`` (graph file paths, relative to the
    description), optional ``pi`` (default uniform), ``kernel`` (``"iid"``,
    ``"lazy-uniform p=..."``, ``"ring p=..."`` or an explicit matrix),
    ``tau`` and ``seed``.
    """
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    return family_from_dict(doc, base_dir=path.parent)


def family_from_dict(doc: dict, base_dir: str | Path = ".") -> FamilySpec:
    base_dir = Path(base_dir)
    paths = [base_dir / p for p in doc["members"]]
    members = [read_graph(p) for p in paths]
    k = len(members)
    pi = np.asarray(doc.get("pi", [1.0 / k] * k), dtype=float)
    family = GraphFamily(tuple(members), pi)
    kernel = parse_kernel_spec(doc.get("kernel", "iid"), family.pi)
    check_kernel(kernel, family.pi)
    tau = int(doc.get("tau", 1))
    seed = int(doc.get("seed", 0))
    if tau < 1:
        raise ValueError("tau must be a positive integer")
    return FamilySpec(family, kernel, tau, seed, [str(p) for p in paths])


def expected_level_mean(chain: MarkovGraphChain, x: np.ndarray, count: int) -> np.ndarray:
    """Exact ``E[(1/count) sum_{i=1..count} W_{s_i} x]`` from the current state."""
    y = np.einsum("kij,j...->ki...", chain.stack, x)
    row = np.zeros(chain.family.size)
    cur = np.eye(chain.family.size)[chain.state]
    for _ in range(count):
        cur = cur @ chain.kernel
        row += cur
    return np.tensordot(row / count, y, axes=1)


def mixing_time_estimate(kernel: np.ndarray, max_m: int = 10_000) -> int:
    """Smallest ``tau`` with ``Delta(Q^tau) <= 1/4``; a convenience for choosing ``tau``."""
    q = np.asarray(kernel, dtype=float)
    cur = q.copy()
    for m in range(1, max_m + 1):
        if _dobrushin(cur) <= 0.25:
            return m
        cur = cur @ q
    raise ValueError(f"kernel does not mix within {max_m} steps")

