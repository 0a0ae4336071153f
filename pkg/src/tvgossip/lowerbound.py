"""Adversarial two-edge-per-round graph sequence and its worst-case functions.

Vertex layout of every two-star graph with parameter ``n``:

* ``0`` left center ``l``, ``1`` right center ``r``;
* one connector adjacent to both centers;
* ``2n`` leaves, each hanging off one center.

Vertices ``3 .. 3+h-1`` form ``V1`` and ``3+h .. 3+2h-1`` form ``V2`` where
``h = n // 2``; they never change sides.  The remaining ``t = 2n - 2h``
unmarked vertices (plus vertex 2) shuttle between the sides through the
connector slot.  Phase 1 pushes them left to right, phase 2 back again, so
information can cross from ``V2`` to ``V1`` only once per phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .graphs import (
    Graph,
    WeightedGraph,
    build_laplacian,
    edge_difference,
    retune_chi,
    shortest_path_weighting,
    spectral_summary,
)

LEFT, RIGHT, CONNECTOR = 0, 1, 2
CHI_MIN = 56.0


def n_vertices(n_param: int) -> int:
    return 2 * n_param + 3


def transfer_time(n_param: int) -> int:
    """Rounds one phase needs to carry information across: ``2n - 2 floor(n/2)``."""
    return 2 * n_param - 2 * (n_param // 2)


def two_star_graph(a: int, b: int) -> Graph:
    """Plain ``T_{a,b}``: stars with ``a`` and ``b`` leaves joined through a connector."""
    if a < 0 or b < 0:
        raise ValueError("leaf counts must be non-negative")
    leaves = range(3, 3 + a + b)
    edges = [(LEFT, CONNECTOR), (RIGHT, CONNECTOR)]
    edges += [(LEFT, v) for v in leaves[:a]] + [(RIGHT, v) for v in leaves[a:]]
    return Graph.from_edges(a + b + 3, edges)


@dataclass(frozen=True)
class TwoStarGraph:
    n_param: int
    connector: int
    left: tuple
    right: tuple

    @property
    def h(self) -> int:
        return self.n_param // 2

    @property
    def a(self) -> int:
        return len(self.left)

    @property
    def b(self) -> int:
        return len(self.right)

    @property
    def n(self) -> int:
        return n_vertices(self.n_param)

    @property
    def v1(self) -> tuple:
        return tuple(range(3, 3 + self.h))

    @property
    def v2(self) -> tuple:
        return tuple(range(3 + self.h, 3 + 2 * self.h))

    def marks(self) -> np.ndarray:
        """Per-vertex mark: 1 for V1, 2 for V2, 0 otherwise."""
        m = np.zeros(self.n, dtype=np.int64)
        m[list(self.v1)] = 1
        m[list(self.v2)] = 2
        return m

    def roles(self) -> list[str]:
        out = ["left_center", "right_center"] + [""] * (self.n - 2)
        out[self.connector] = "connector"
        for v in self.left:
            out[v] = "left_leaf"
        for v in self.right:
            out[v] = "right_leaf"
        return out

    @property
    def graph(self) -> Graph:
        edges = [(LEFT, self.connector), (RIGHT, self.connector)]
        edges += [(LEFT, v) for v in self.left] + [(RIGHT, v) for v in self.right]
        return Graph.from_edges(self.n, edges)

    def unmarked(self, side: tuple) -> list:
        lo, hi = 3, 3 + 2 * self.h
        return [v for v in side if not lo <= v < hi]


def build_two_star(n_param: int, a: int, b: int) -> TwoStarGraph:
    """``T_{a,b}`` with ``a + b = 2n`` and the marks in place.

    Vertex 2 is the connector.  Unmarked leaves fill the left side first,
    lowest index first.
    """
    if n_param < 2:
        raise ValueError("n must be at least 2")
    if a + b != 2 * n_param or a < 0 or b < 0:
        raise ValueError(f"need a + b = 2n = {2 * n_param}, got a={a}, b={b}")
    h = n_param // 2
    if a < h or b < h:
        raise ValueError(f"T_{{{a},{b}}} cannot host {h} marked leaves on each side")
    v1 = list(range(3, 3 + h))
    v2 = list(range(3 + h, 3 + 2 * h))
    free = list(range(3 + 2 * h, 3 + 2 * n_param))
    left = v1 + free[: a - h]
    right = v2 + free[a - h :]
    return TwoStarGraph(n_param, CONNECTOR, tuple(sorted(left)), tuple(sorted(right)))


@dataclass(frozen=True)
class CounterexampleSequence:
    """Position in the infinite two-phase sequence; ``step`` counts within the phase."""

    n_param: int
    phase: int
    step: int
    current: TwoStarGraph
    chi_target: float = float("nan")

    @classmethod
    def start(cls, n_param: int, chi_target: float = float("nan")) -> "CounterexampleSequence":
        h = n_param // 2
        return cls(n_param, 1, 0, build_two_star(n_param, 2 * n_param - h, h), chi_target)

    @property
    def t(self) -> int:
        return transfer_time(self.n_param)


class Move(NamedTuple):
    removed: tuple
    added: tuple


def _move(g: TwoStarGraph, phase: int) -> tuple[TwoStarGraph, Move]:
    v = g.connector
    if phase == 1:
        free = g.unmarked(g.left)
        if not free:
            raise AssertionError("no unmarked left leaf to promote")
        u = min(free)
        left = tuple(x for x in g.left if x != u)
        right = tuple(sorted(g.right + (v,)))
        move = Move(tuple(sorted((v, LEFT))), tuple(sorted((u, RIGHT))))
    else:
        free = g.unmarked(g.right)
        if not free:
            raise AssertionError("no unmarked right leaf to promote")
        u = max(free)
        right = tuple(x for x in g.right if x != u)
        left = tuple(sorted(g.left + (v,)))
        move = Move(tuple(sorted((v, RIGHT))), tuple(sorted((u, LEFT))))
    return TwoStarGraph(g.n_param, u, left, right), move


def phase_step(seq: CounterexampleSequence) -> tuple[CounterexampleSequence, Move]:
    """Advance one graph; returns the new position and the edge swap applied.

    Phase 1 moves the connector to the right side and promotes the lowest
    unmarked left leaf; phase 2 mirrors it with the highest unmarked right
    leaf.  A phase lasts ``t`` steps and the last graph of one phase is the
    first of the next.
    """
    nxt, move = _move(seq.current, seq.phase)
    step = seq.step + 1
    phase = seq.phase
    if step == seq.t:
        phase, step = 3 - phase, 0
    return replace(seq, phase=phase, step=step, current=nxt), move


def sequence_graphs(n_param: int, count: int) -> list[tuple[CounterexampleSequence, Move | None]]:
    seq = CounterexampleSequence.start(n_param)
    out = [(seq, None)]
    for _ in range(count - 1):
        seq, move = phase_step(seq)
        out.append((seq, move))
    return out


class PeriodEntry(NamedTuple):
    step: int
    phase: int
    a: int
    b: int
    changed: Move | None
    weighted: WeightedGraph
    laplacian: np.ndarray
    chi: float


@dataclass
class CounterexamplePeriod:
    n_param: int
    chi_target: float
    entries: list = field(default_factory=list)

    @property
    def laplacians(self) -> np.ndarray:
        return np.stack([e.laplacian for e in self.entries])

    @property
    def t(self) -> int:
        return transfer_time(self.n_param)


def weighted_period(n_param: int, chi_min: float = CHI_MIN, rtol: float = 1e-10) -> CounterexamplePeriod:
    """One period (``2t`` graphs) with shortest-path weights retuned to a common chi.

    The common target is the largest chi over the period, raised to
    ``chi_min`` when smaller.
    """
    t = transfer_time(n_param)
    items = sequence_graphs(n_param, 2 * t)
    base = [shortest_path_weighting(s.current.graph) for s, _ in items]
    chis = [spectral_summary(build_laplacian(w)).chi for w in base]
    target = max(max(chis), chi_min)
    period = CounterexamplePeriod(n_param, target)
    for k, ((s, move), w) in enumerate(zip(items, base)):
        tuned = retune_chi(w, target, rtol=rtol)
        lap = build_laplacian(tuned)
        chi = spectral_summary(lap).chi
        period.entries.append(PeriodEntry(k, s.phase, s.current.a, s.current.b, move, tuned, lap, chi))
    return period


def check_structure(n_param: int, periods: int = 3) -> dict:
    """Edge-change counts, connectivity and observed phase length over several periods."""
    t = transfer_time(n_param)
    items = sequence_graphs(n_param, 2 * t * periods + 1)
    graphs = [s.current.graph for s, _ in items]
    diffs = [edge_difference(g1, g2) for g1, g2 in zip(graphs, graphs[1:])]
    phase_switches = [k for k in range(1, len(items)) if items[k][0].phase != items[k - 1][0].phase]
    return dict(
        diffs=diffs,
        connected=all(g.is_connected() for g in graphs),
        t_measured=phase_switches[0] if phase_switches else None,
        periodic=items[2 * t][0].current == items[0][0].current,
        max_diameter=max(g.diameter() for g in graphs),
    )


# ---------------------------------------------------------------------------
# worst-case functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorstCaseFunction:
    """Vertex function on ``R^m_max`` depending on the vertex mark.

    All roles share ``mu/(2n) ||x||^2``.  V1 adds the odd-to-even chain
    ``(L-mu)/(4|V2|) sum (x_{2k-1} - x_{2k})^2``, V2 the even-to-odd chain
    ``(L-mu)/(4|V1|) [(x_1 - 1)^2 + sum (x_{2k} - x_{2k+1})^2]``; coordinates
    are 1-based in these formulas.
    """

    role: str
    n_param: int
    mu: float
    L: float
    m_max: int
    v1_size: int | None = None
    v2_size: int | None = None

    def __post_init__(self):
        if self.role not in ("V1", "V2", "other"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.m_max < 4 or self.m_max % 2:
            raise ValueError("m_max must be even and at least 4")
        if not 0 < self.mu <= self.L:
            raise ValueError("need 0 < mu <= L")
        h = self.n_param // 2
        if self.v1_size is None:
            object.__setattr__(self, "v1_size", h)
        if self.v2_size is None:
            object.__setattr__(self, "v2_size", h)

    @property
    def d(self) -> int:
        return self.m_max

    @property
    def base(self) -> float:
        return self.mu / self.n_param

    @property
    def coef(self) -> float:
        if self.role == "V1":
            return (self.L - self.mu) / (4 * self.v2_size)
        if self.role == "V2":
            return (self.L - self.mu) / (4 * self.v1_size)
        return 0.0

    @property
    def L_loc(self) -> float:
        return 4 * self.coef + self.base

    def _pairs(self) -> tuple[np.ndarray, np.ndarray]:
        # 0-based index pairs coupled by the chain term
        if self.role == "V1":
            lo = np.arange(0, self.m_max, 2)
        elif self.role == "V2":
            lo = np.arange(1, self.m_max - 1, 2)
        else:
            lo = np.zeros(0, dtype=np.int64)
        return lo, lo + 1

    def value(self, x: np.ndarray) -> float:
        x = self._check(x)
        val = 0.5 * self.base * float(x @ x)
        lo, hi = self._pairs()
        chain = float(np.sum((x[lo] - x[hi]) ** 2))
        if self.role == "V2":
            chain += (x[0] - 1.0) ** 2
        return val + self.coef * chain

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        g = self.base * x
        lo, hi = self._pairs()
        diff = 2 * self.coef * (x[lo] - x[hi])
        g[lo] += diff
        g[hi] -= diff
        if self.role == "V2":
            g[0] += 2 * self.coef * (x[0] - 1.0)
        return g

    def hessian(self) -> np.ndarray:
        H = self.base * np.eye(self.m_max)
        lo, hi = self._pairs()
        c = 2 * self.coef
        H[lo, lo] += c
        H[hi, hi] += c
        H[lo, hi] -= c
        H[hi, lo] -= c
        if self.role == "V2":
            H[0, 0] += c
        return H

    def linear(self) -> np.ndarray:
        b = np.zeros(self.m_max)
        if self.role == "V2":
            b[0] = -2 * self.coef
        return b

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.m_max,):
            raise ValueError(f"expected a vector of length {self.m_max}, got shape {x.shape}")
        return x


def worstcase_value_grad(fn: WorstCaseFunction, x: np.ndarray) -> tuple[float, np.ndarray]:
    return fn.value(x), fn.gradient(x)


def vertex_functions(g: TwoStarGraph, mu: float, L: float, m_max: int) -> list[WorstCaseFunction]:
    marks = g.marks()
    names = {0: "other", 1: "V1", 2: "V2"}
    return [WorstCaseFunction(names[int(k)], g.n_param, mu, L, m_max) for k in marks]


def global_kappa(n_param: int, mu: float, L: float) -> float:
    """Condition number of the vertex-averaged problem (before truncation)."""
    return 1.0 + 2 * n_param * (L - mu) / (n_vertices(n_param) * mu)


def solution_ratio(kappa_g: float) -> float:
    s = math.sqrt(kappa_g)
    return (s - 1) / (s + 1)


def closed_form_solution(kappa_g: float, m_max: int) -> np.ndarray:
    """``x*_k = q^k``, ``k = 1..m_max``, with ``q = (sqrt(kg) - 1)/(sqrt(kg) + 1)``."""
    if not kappa_g > 1:
        raise ValueError("kappa_g must exceed 1")
    return solution_ratio(kappa_g) ** np.arange(1, m_max + 1)


def truncated_solution(fns: Sequence[WorstCaseFunction]) -> np.ndarray:
    """Exact minimizer of the vertex-averaged truncated problem."""
    H = np.mean([f.hessian() for f in fns], axis=0)
    b = np.mean([f.linear() for f in fns], axis=0)
    return np.linalg.solve(H, -b)


def tail_mass(q: float, m: int) -> float:
    """``sum_{k > m} q^(2k)``."""
    return q ** (2 * (m + 1)) / (1 - q * q)


class KappaRelations(NamedTuple):
    kappa_l: float
    kappa_l_relation: float
    kappa_l_bound: float
    kappa_g_bound: float


def kappa_relations(mu: float, L: float, n_param: int, v1_size: int | None = None) -> KappaRelations:
    """Local versus global condition numbers for nominal ``kappa_g = L/mu``.

    ``kappa_l`` is computed from its definition, ``kappa_l_relation`` from
    ``(n/|V1|)(kappa_g - 1) + 1``; ``kappa_l_bound = 4(kappa_g - 1) + 1`` and
    ``kappa_g_bound = (kappa_l - 1)/4 + 1`` hold whenever ``|V1| >= n/4``.
    """
    if not 0 < mu <= L:
        raise ValueError("need 0 < mu <= L")
    v1 = n_param // 2 if v1_size is None else v1_size
    kg = L / mu
    kl = ((L - mu) / v1 + mu / n_param) / (mu / n_param)
    return KappaRelations(kl, n_param / v1 * (kg - 1) + 1, 4 * (kg - 1) + 1, (kl - 1) / 4 + 1)


# ---------------------------------------------------------------------------
# information flow
# ---------------------------------------------------------------------------


def empty_span(n: int, m_max: int) -> np.ndarray:
    """Held-coordinate matrix; column ``j`` stands for coordinate ``j + 1``."""
    return np.zeros((n, m_max), dtype=bool)


def span_local(held: np.ndarray, marks: np.ndarray) -> np.ndarray:
    """One local gradient step at every node."""
    out = held.copy()
    m = held.shape[1]
    v1 = marks == 1
    v2 = marks == 2
    # V1 couples (2k-1, 2k): 0-based columns (0,1), (2,3), ...
    a, b = np.arange(0, m - 1, 2), np.arange(1, m, 2)
    out[np.ix_(v1, b)] |= held[np.ix_(v1, a)]
    out[np.ix_(v1, a)] |= held[np.ix_(v1, b)]
    # V2 couples (2k, 2k+1): columns (1,2), (3,4), ... and sources coordinate 1
    a, b = np.arange(1, m - 1, 2), np.arange(2, m, 2)
    out[np.ix_(v2, b)] |= held[np.ix_(v2, a)]
    out[np.ix_(v2, a)] |= held[np.ix_(v2, b)]
    out[v2, 0] = True
    return out


def span_comm(held: np.ndarray, graph: Graph) -> np.ndarray:
    """One communication round: closed-neighborhood union."""
    indptr, indices = graph.csr
    return _kernels.neighborhood_union(indptr, indices, held)


def span_step(held: np.ndarray, kind: str, graph: Graph, marks: np.ndarray) -> np.ndarray:
    if kind == "local":
        return span_local(held, marks)
    if kind == "comm":
        return span_comm(held, graph)
    raise ValueError(f"unknown step kind {kind!r}")


class FlowResult(NamedTuple):
    m: int
    l_m: int | None
    bound: int
    comm_rounds: int | None
    horizon: int

    @property
    def slack(self) -> int | None:
        return None if self.l_m is None else self.l_m - self.bound


def first_nonzero_times(n_param: int, m_max: int, horizon: int | None = None) -> list[FlowResult]:
    """Earliest times at which coordinates ``1..m_max`` can appear anywhere.

    Communication round ``r`` uses graph ``r`` of the sequence.  A local step
    follows every round; one local step already closes each node's set under
    its own gradient, so no schedule with the same number of rounds holds
    more.  Each new coordinate needs its own local step, so
    ``l_m = rounds_m + m`` lower-bounds the true first time under any schedule.
    """
    t = transfer_time(n_param)
    if horizon is None:
        horizon = (m_max + 1) * t + m_max + 2
    items = sequence_graphs(n_param, 2 * t)
    graphs = [s.current.graph for s, _ in items]
    marks = items[0][0].current.marks()
    held = span_local(empty_span(n_vertices(n_param), m_max), marks)
    rounds_needed: dict[int, int] = {}

    def record(r):
        have = np.flatnonzero(held.any(axis=0)) + 1
        for j in have:
            rounds_needed.setdefault(int(j), r)

    record(0)
    r = 0
    while len(rounds_needed) < m_max and r < horizon:
        nxt = span_local(span_comm(held, graphs[r % len(graphs)]), marks)
        if (held & ~nxt).any():
            raise AssertionError("knowledge sets shrank")
        held = nxt
        r += 1
        record(r)
    out = []
    for m in range(1, m_max + 1):
        c = rounds_needed.get(m)
        out.append(FlowResult(m, None if c is None else c + m, (m - 1) * t + m, c, horizon))
    return out


def first_nonzero_time(n_param: int, m: int, horizon: int | None = None) -> FlowResult:
    m_max = m + (m % 2)
    return first_nonzero_times(n_param, max(m_max, 4), horizon)[m - 1]


# ---------------------------------------------------------------------------
# rate floor
# ---------------------------------------------------------------------------


def theoretical_floor(k, chi: float, mu: float, L: float, dist0: float):
    """``(1 - 4 sqrt(mu/L)) ** (72 k / (7 chi) + 2) * dist0``; ``k`` may be an array."""
    if chi < CHI_MIN:
        raise ValueError(f"chi={chi} below {CHI_MIN}")
    if not L > 16 * mu > 0:
        raise ValueError("need L > 16 mu > 0")
    base = 1 - 4 * math.sqrt(mu / L)
    return base ** (72 * np.asarray(k, dtype=float) / (7 * chi) + 2) * dist0


def chi0_below(chi: float) -> float:
    """Largest ``8(2n+3)``, ``n >= 2``, not exceeding ``chi``."""
    if chi < CHI_MIN:
        raise ValueError(f"chi={chi} below {CHI_MIN}")
    n = int((chi / 8 - 3) // 2)
    return 8.0 * (2 * n + 3)


class FloorRow(NamedTuple):
    k: int
    dist2: float
    floor: float


class FloorProblem(NamedTuple):
    period: CounterexamplePeriod
    fns: list
    x_star: np.ndarray
    mu_g: float
    L_g: float
    mu: float
    L: float
    horizon: int

    @property
    def dist0(self) -> float:
        return float(self.x_star @ self.x_star)

    def floor(self, k):
        return theoretical_floor(k, self.period.chi_target, self.mu, self.L, self.dist0)


def floor_problem(n_param: int, mu: float, L: float, m_max: int, chi_min: float = CHI_MIN) -> FloorProblem:
    """Counterexample instance for empirical floor checks, started from ``x0 = 0``.

    ``horizon`` is the last time at which the floor still exceeds the mass of
    the infinite-dimensional solution beyond ``m_max``.
    """
    period = weighted_period(n_param, chi_min)
    g0 = CounterexampleSequence.start(n_param).current
    fns = vertex_functions(g0, mu, L, m_max)
    x_star = truncated_solution(fns)
    H = np.mean([f.hessian() for f in fns], axis=0)
    eig = np.linalg.eigvalsh(H)
    tail = tail_mass(solution_ratio(global_kappa(n_param, mu, L)), m_max)
    dist0 = float(x_star @ x_star)
    base = 1 - 4 * math.sqrt(mu / L)
    # floor(k) >= tail  <=>  k <= 7 chi / 72 * (log(tail/dist0)/log(base) - 2)
    horizon = int(7 * period.chi_target / 72 * (math.log(tail / dist0) / math.log(base) - 2))
    return FloorProblem(period, fns, x_star, float(eig[0]), float(eig[-1]), mu, L, max(horizon, 0))


def floor_rows(problem: FloorProblem, times: Sequence[int], iterates: Sequence[np.ndarray]) -> list[FloorRow]:
    rows = []
    for k, x in zip(times, iterates):
        if k > problem.horizon:
            break
        d = x - problem.x_star
        rows.append(FloorRow(int(k), float(d @ d), float(problem.floor(k))))
    return rows


def floor_run_decopt(problem: FloorProblem, T: int, seed: int = 0) -> list[FloorRow]:
    """Decentralized AGD with inner accelerated consensus on the periodic sequence.

    Time counts communication rounds plus one local step per outer iteration.
    """
    from .consensus import derive_consensus_params
    from .decopt import DecoptParams, NodeStates, momentum, outer_step
    from .sources import PeriodicSource

    laps = problem.period.laplacians
    w_mean = laps.mean(axis=0)
    s = spectral_summary(w_mean)
    lam_top = max(float(np.linalg.eigvalsh(w)[-1]) for w in laps)
    rho = max(float(np.linalg.norm(w - w_mean, 2)) for w in laps)
    cparams = derive_consensus_params(
        s.lambda_max, s.lambda_min_plus, rho, 1, 1, T, gamma=3 / (4 * lam_top), heuristic=True
    )
    params = DecoptParams(1 / problem.L_g, momentum(problem.mu_g, problem.L_g), 0, T)
    source = PeriodicSource(laps)
    rng = np.random.default_rng(seed)
    states = NodeStates.initial(np.zeros(problem.x_star.shape[0]), len(problem.fns))
    times, iterates = [0], [states.mean()]
    k = 0
    while k <= problem.horizon:
        states, comms = outer_step(states, problem.fns, params, source, cparams, rng)
        k += comms + 1
        times.append(k)
        iterates.append(states.mean())
    return floor_rows(problem, times, iterates)


def floor_run_gossip_gradient(problem: FloorProblem, step_size: float | None = None) -> list[FloorRow]:
    """Decentralized gradient descent; each iteration is one round plus one local step."""
    from .decopt import gossip_gradient
    from .sources import PeriodicSource

    if step_size is None:
        step_size = 1.0 / max(f.L_loc for f in problem.fns)
    steps = problem.horizon // 2 + 1
    iterates = gossip_gradient(
        problem.fns, PeriodicSource(problem.period.laplacians), np.zeros(problem.x_star.shape[0]), steps, step_size
    )
    return floor_rows(problem, [2 * i for i in range(len(iterates))], iterates)
