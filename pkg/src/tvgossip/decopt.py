"""Decentralized Nesterov acceleration with inner accelerated consensus.

Each node holds a smooth strongly convex ``f_i``; the goal is the minimizer of
``f = (1/n) sum_i f_i``.  Every outer step evaluates the local gradients at
``y_i``, runs the accelerated consensus loop on the stacked gradients to get
an approximate mean gradient ``v_i`` at every node, and takes a Nesterov step

    x_i <- y_i - gamma v_i,    y_i <- x_i + eta (x_i - x_i_prev)

with ``gamma = 1/L`` and ``eta = (sqrt L - sqrt mu) / (sqrt L + sqrt mu)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from .consensus import ConsensusParams, accelerated_consensus
from .sources import GossipSource


class LocalObjective(Protocol):
    d: int
    mu: float
    L: float

    def value(self, x: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class QuadraticObjective:
    """``f(x) = 1/2 x^T A x + c^T x + const``."""

    A: np.ndarray
    c: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or c.shape != (A.shape[0],):
            raise ValueError("A must be d x d and c of length d")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)
        eig = np.linalg.eigvalsh(A)
        object.__setattr__(self, "_eig", (float(eig[0]), float(eig[-1])))

    @property
    def d(self) -> int:
        return self.c.shape[0]

    @property
    def mu(self) -> float:
        return self._eig[0]

    @property
    def L(self) -> float:
        return self._eig[1]

    def value(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ self.A @ x) + float(self.c @ x) + self.const

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x + self.c


def random_quadratics(n: int, d: int, mu: float, L: float, rng: np.random.Generator) -> list[QuadraticObjective]:
    """``n`` quadratics whose average has Hessian spectrum spanning exactly ``[mu, L]``.

    The per-node Hessians are the common mean plus zero-sum symmetric
    perturbations of norm at most ``mu / 2``, so every local function stays
    strongly convex.
    """
    if not 0 < mu <= L:
        raise ValueError("need 0 < mu <= L")
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    spectrum = np.linspace(mu, L, d) if d > 1 else np.array([mu])
    H = (q * spectrum) @ q.T
    H = 0.5 * (H + H.T)
    pert = rng.standard_normal((n, d, d))
    pert = 0.5 * (pert + pert.transpose(0, 2, 1))
    pert -= pert.mean(axis=0)
    if n > 1:
        scale = max(np.linalg.norm(p, 2) for p in pert)
        pert *= 0.5 * mu / scale
    else:
        pert[:] = 0.0
    cs = rng.standard_normal((n, d))
    return [QuadraticObjective(H + pert[i], cs[i]) for i in range(n)]


def mean_quadratic(objectives: Sequence[QuadraticObjective]) -> QuadraticObjective:
    A = np.mean([o.A for o in objectives], axis=0)
    c = np.mean([o.c for o in objectives], axis=0)
    return QuadraticObjective(0.5 * (A + A.T), c, float(np.mean([o.const for o in objectives])))


def global_value(objectives: Sequence[LocalObjective], x: np.ndarray) -> float:
    return float(np.mean([o.value(x) for o in objectives]))


def global_gradient(objectives: Sequence[LocalObjective], x: np.ndarray) -> np.ndarray:
    return np.mean([o.gradient(x) for o in objectives], axis=0)


def stacked_gradients(objectives: Sequence[LocalObjective], xs: np.ndarray) -> np.ndarray:
    return np.stack([o.gradient(x) for o, x in zip(objectives, xs)])


def momentum(mu: float, L: float) -> float:
    sl, sm = math.sqrt(L), math.sqrt(mu)
    return (sl - sm) / (sl + sm)


def centralized_agd(
    objectives: Sequence[LocalObjective],
    mu: float,
    L: float,
    x0: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Nesterov AGD on the average objective until ``||grad f|| <= tol``."""
    gamma, eta = 1.0 / L, momentum(mu, L)
    x = y = np.array(x0, dtype=float)
    for _ in range(max_iter):
        g = global_gradient(objectives, y)
        if np.linalg.norm(global_gradient(objectives, x)) <= tol:
            return x
        x_new = y - gamma * g
        y = x_new + eta * (x_new - x)
        x = x_new
    raise RuntimeError(f"centralized AGD did not reach gradient norm {tol} in {max_iter} steps")


def agd_trajectory(objectives, mu: float, L: float, x0: np.ndarray, steps: int) -> np.ndarray:
    """Centralized iterates ``x_0 .. x_steps`` with the same schedule as the decentralized method."""
    gamma, eta = 1.0 / L, momentum(mu, L)
    x = y = np.array(x0, dtype=float)
    out = [x]
    for _ in range(steps):
        x_new = y - gamma * global_gradient(objectives, y)
        y = x_new + eta * (x_new - x)
        x = x_new
        out.append(x)
    return np.array(out)


@dataclass(frozen=True)
class DecoptParams:
    gamma: float
    eta: float
    N: int
    T: int

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 <= self.eta < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.N < 0 or self.T < 1:
            raise ValueError("need N >= 0 and T >= 1")


def outer_iterations(mu: float, L: float, epsilon: float, c0: float) -> int:
    return max(1, math.ceil(math.sqrt(L / mu) * math.log(max(c0 / epsilon, math.e))))


def derive_outer_params(
    mu: float,
    L: float,
    epsilon: float,
    tau: int = 1,
    chi: float = 1.0,
    rho: float = 0.0,
    lambda_min: float = 1.0,
    c0: float = 1.0,
    c_T: float = 4.0,
) -> DecoptParams:
    """Outer schedule and inner consensus length.

    ``N = ceil(sqrt(L/mu) ln(c0/eps))`` and
    ``T = ceil(c_T tau (sqrt(chi) + rho^2/lambda_min^2) ln(1/eps^2))``.
    """
    if not 0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if c0 <= 0 or chi < 1 or lambda_min <= 0 or rho < 0 or tau < 1:
        raise ValueError("invalid chain constants")
    N = outer_iterations(mu, L, epsilon, c0)
    T = math.ceil(c_T * tau * (math.sqrt(chi) + rho**2 / lambda_min**2) * math.log(1.0 / epsilon**2))
    return DecoptParams(gamma=1.0 / L, eta=momentum(mu, L), N=N, T=max(1, T))


@dataclass
class NodeStates:
    x: np.ndarray
    y: np.ndarray

    @classmethod
    def initial(cls, x0: np.ndarray, n: int) -> "NodeStates":
        x0 = np.asarray(x0, dtype=float)
        xs = np.tile(x0, (n, 1)) if x0.ndim == 1 else x0.copy()
        return cls(xs, xs.copy())

    def mean(self) -> np.ndarray:
        return self.x.mean(axis=0)


def outer_step(
    states: NodeStates,
    objectives: Sequence[LocalObjective],
    params: DecoptParams,
    source: GossipSource,
    cparams: ConsensusParams,
    rng: np.random.Generator,
) -> tuple[NodeStates, int]:
    """One outer step; returns the new states and the rounds spent."""
    grads = stacked_gradients(objectives, states.y)
    if len(objectives) == 1:
        v, comms = grads, 0
    else:
        v, comms = accelerated_consensus(grads, source, cparams, rng, iterations=params.T)
    x = states.y - params.gamma * v
    y = x + params.eta * (x - states.x)
    return NodeStates(x, y), comms


class DecoptRow(NamedTuple):
    k: int
    comms: int
    gap: float
    consensus_err: float


def _decopt_row(k, comms, states, objectives, f_star) -> DecoptRow:
    xbar = states.mean()
    err = float(np.linalg.norm(states.x - xbar, axis=1).max())
    return DecoptRow(k, comms, global_value(objectives, xbar) - f_star, err)


def run_decopt(
    objectives: Sequence[LocalObjective],
    source: GossipSource,
    params: DecoptParams,
    cparams: ConsensusParams,
    x0: np.ndarray,
    rng: np.random.Generator,
    f_star: float | None = None,
) -> tuple[NodeStates, list[DecoptRow]]:
    """Run ``params.N`` outer steps and report ``f(xbar) - f*`` and the spread.

    ``f*`` defaults to the value at the centralized AGD solution.
    """
    if f_star is None:
        mu = min(o.mu for o in objectives)
        L = max(o.L for o in objectives)
        x_star = centralized_agd(objectives, mu, L, np.zeros(objectives[0].d))
        f_star = global_value(objectives, x_star)
    states = NodeStates.initial(x0, len(objectives))
    comms = 0
    rows = [_decopt_row(0, comms, states, objectives, f_star)]
    for k in range(1, params.N + 1):
        states, c = outer_step(states, objectives, params, source, cparams, rng)
        comms += c
        rows.append(_decopt_row(k, comms, states, objectives, f_star))
    return states, rows


def gossip_gradient(
    objectives: Sequence[LocalObjective],
    source: GossipSource,
    x0: np.ndarray,
    steps: int,
    step_size: float,
    scale: float | None = None,
) -> list[np.ndarray]:
    """Decentralized gradient descent: one gossip round and one local step per iteration.

    ``x <- x - W x / scale - step_size grad F(x)``.  Returns the node-mean
    iterate after every step, starting with ``x0``.
    """
    if scale is None:
        scale = max(float(np.linalg.eigvalsh(w)[-1]) for w in source.stack)
    states = NodeStates.initial(x0, len(objectives))
    x = states.x
    out = [x.mean(axis=0)]
    for _ in range(steps):
        w = source.stack[source.draw(1)[0]]
        x = x - (w @ x) / scale - step_size * stacked_gradients(objectives, x)
        out.append(x.mean(axis=0))
    return out
