"""Accelerated consensus over Markov-varying graphs.

Consensus is posed as minimizing ``r(x) = 1/2 x^T W x`` over the hyperplane of
vectors with the initial coordinate sum, where ``W`` is the stationary mean
gossip matrix.  Each communication round supplies one realized Laplacian
``W(G_t)``; ``W(G_t) x`` is an unbiased estimate of ``grad r(x)`` under the
stationary law.  The method is Nesterov-type acceleration fed by a
multilevel Monte Carlo (MLMC) batch estimator with geometrically distributed
batch level.

Node payloads may be vectors: arrays of shape ``(n, d)`` are handled as ``d``
scalar problems sharing a single batch-level stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .graphs import spectral_summary
from .sources import GossipSource

P_MOMENTUM = 0.25


def r_value(w_tilde: np.ndarray, x: np.ndarray) -> float:
    """Consensus objective ``1/2 <x, W x>`` (summed over payload columns)."""
    return 0.5 * float(np.sum(x * (w_tilde @ x)))


def r_grad(w_tilde: np.ndarray, x: np.ndarray) -> np.ndarray:
    return w_tilde @ x


def consensus_point(x: np.ndarray) -> np.ndarray:
    """The vector whose every node holds the average of ``x``."""
    return np.broadcast_to(x.mean(axis=0), x.shape).copy()


@dataclass(frozen=True)
class ConsensusParams:
    gamma: float
    beta: float
    eta: float
    theta: float
    M: int
    B: int
    b: int
    N: int
    p: float = P_MOMENTUM

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.p != P_MOMENTUM:
            raise ValueError("p is fixed at 1/4")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta={self.beta} outside (0, 1]")
        if self.eta < 1:
            raise ValueError(f"eta={self.eta} must be at least 1")
        if not 0 < self.theta < 1:
            raise ValueError(f"theta={self.theta} outside (0, 1)")
        if self.M < 2:
            raise ValueError("batch cap M must be at least 2")
        if self.b < 1 or self.B != math.ceil(self.b * math.log2(self.M)):
            raise ValueError(f"B must equal ceil(b log2 M) = {math.ceil(self.b * math.log2(self.M))}")
        if self.N < 0:
            raise ValueError("N must be non-negative")


def gamma_bound(lambda_max: float, lambda_min_plus: float, rho: float, tau: int, b: int) -> float:
    """Largest admissible step size for the given chain constants."""
    smooth = 3.0 / (4.0 * lambda_max)
    denom = (1800.0 * rho**2 * (tau / b + tau**2 / b**2)) ** 2
    if denom == 0:  # rho == 0, or small enough to underflow
        return smooth
    return min(smooth, lambda_min_plus**3 / denom)


def momentum_params(gamma: float, lambda_min_plus: float, b: int) -> dict:
    """``beta, eta, theta, M, B`` as functions of the step size."""
    p = P_MOMENTUM
    beta = math.sqrt(4 * p**2 * lambda_min_plus * gamma / 3)
    eta = math.sqrt(12 / (lambda_min_plus * gamma))
    theta = (p / eta - 1) / (beta * p / eta - 1)
    M = max(2, math.ceil(math.sqrt(0.25 * (1 + 2 / beta))))
    B = math.ceil(b * math.log2(M))
    return dict(beta=beta, eta=eta, theta=theta, M=M, B=B)


def derive_consensus_params(
    lambda_max: float,
    lambda_min_plus: float,
    rho: float,
    tau: int,
    b: int,
    N: int,
    gamma: float | None = None,
    heuristic: bool = False,
) -> ConsensusParams:
    """Parameters for :func:`run_consensus` from the chain constants.

    ``gamma`` defaults to the largest admissible step.  An explicit ``gamma``
    must not exceed it, unless ``heuristic`` is set, in which case only the
    smoothness cap ``3 / (4 lambda_max)`` is enforced.  The noise cap is
    astronomically small for any sizable ``rho``, so experiments on noisy
    families usually run heuristically.
    """
    if min(lambda_max, lambda_min_plus) <= 0 or rho < 0:
        raise ValueError("spectral constants must be positive and rho non-negative")
    if tau < 1 or b < 1:
        raise ValueError("tau and b must be at least 1")
    bound = gamma_bound(lambda_max, lambda_min_plus, rho, tau, b)
    if gamma is None:
        gamma = bound
    cap = 3.0 / (4.0 * lambda_max) if heuristic else bound
    if not 0 < gamma <= cap * (1 + 1e-12):
        raise ValueError(f"gamma={gamma} outside (0, {cap}]")
    return ConsensusParams(gamma=gamma, b=b, N=N, **momentum_params(gamma, lambda_min_plus, b))


@dataclass
class ConsensusState:
    x: np.ndarray
    x_f: np.ndarray
    x_g: np.ndarray
    T: int = 0
    k: int = 0

    @classmethod
    def initial(cls, x0: np.ndarray) -> "ConsensusState":
        x0 = np.array(x0, dtype=float)
        return cls(x0.copy(), x0.copy(), x0.copy())


def sample_level(rng: np.random.Generator) -> int:
    """Batch level ``J >= 1`` with ``P(J = j) = 2^-j``."""
    return int(rng.geometric(0.5))


class MLMCDraw(NamedTuple):
    g: np.ndarray
    J: int
    comms: int


def mlmc_gradient(
    x_g: np.ndarray,
    source: GossipSource,
    params: ConsensusParams,
    rng: np.random.Generator,
    J: int | None = None,
) -> MLMCDraw:
    """MLMC estimate of ``W x_g`` from the next ``2^J B`` communication rounds.

    ``g_j`` averages ``W(G_{T+i}) x_g`` over the first ``2^j B`` rounds.  When
    ``2^J <= M`` the estimate is ``g_0 + 2^J (g_J - g_{J-1})``; otherwise it is
    ``g_0`` alone and the remaining rounds are skipped over.  Either way the
    round counter advances by ``2^J B``.
    """
    if J is None:
        J = sample_level(rng)
    B = params.B
    width = 2**J
    rounds = width * B
    used = rounds if width <= params.M else B
    idx = source.draw(used)
    uniq, inv = np.unique(idx, return_inverse=True)
    y = np.einsum("kij,j...->ki...", source.stack[uniq], x_g)[inv]
    g = y[:B].mean(axis=0)
    if width <= params.M:
        g_hi = y.mean(axis=0)
        g_lo = y[: rounds // 2].mean(axis=0)
        g = g + width * (g_hi - g_lo)
    else:
        source.skip(rounds - used)
    return MLMCDraw(g, J, rounds)


def consensus_step(
    state: ConsensusState,
    source: GossipSource,
    params: ConsensusParams,
    rng: np.random.Generator,
) -> ConsensusState:
    p, gamma, beta, eta, theta = params.p, params.gamma, params.beta, params.eta, params.theta
    x_g = theta * state.x_f + (1 - theta) * state.x
    draw = mlmc_gradient(x_g, source, params, rng)
    x_f = x_g - p * gamma * draw.g
    x = eta * x_f + (p - eta) * state.x_f + (1 - p) * (1 - beta) * state.x + (1 - p) * beta * x_g
    return ConsensusState(x, x_f, x_g, state.T + draw.comms, state.k + 1)


class ConsensusRow(NamedTuple):
    k: int
    T: int
    dist2: float
    r_gap: float
    potential: float


def _row(state: ConsensusState, x_star: np.ndarray, w_tilde, lam_min, r_star) -> ConsensusRow:
    dist2 = float(np.sum((state.x - x_star) ** 2))
    gap = r_value(w_tilde, state.x_f) - r_star
    return ConsensusRow(state.k, state.T, dist2, gap, dist2 + 24.0 / lam_min * gap)


def run_consensus(
    x0: np.ndarray,
    source: GossipSource,
    params: ConsensusParams,
    rng: np.random.Generator,
    w_tilde: np.ndarray,
    lambda_min_plus: float | None = None,
) -> tuple[ConsensusState, list[ConsensusRow]]:
    """Run ``params.N`` accelerated consensus iterations.

    Returns the final state and one :class:`ConsensusRow` per iterate
    (``k = 0 .. N``) with the potential
    ``||x - x*||^2 + 24 / lambda_min_plus * (r(x_f) - r(x*))``.
    """
    if lambda_min_plus is None:
        lambda_min_plus = spectral_summary(w_tilde).lambda_min_plus
    state = ConsensusState.initial(x0)
    x_star = consensus_point(state.x)
    r_star = r_value(w_tilde, x_star)
    rows = [_row(state, x_star, w_tilde, lambda_min_plus, r_star)]
    for _ in range(params.N):
        state = consensus_step(state, source, params, rng)
        rows.append(_row(state, x_star, w_tilde, lambda_min_plus, r_star))
    return state, rows


def accelerated_consensus(
    x0: np.ndarray,
    source: GossipSource,
    params: ConsensusParams,
    rng: np.random.Generator,
    iterations: int | None = None,
) -> tuple[np.ndarray, int]:
    """Bare iteration loop; returns the final ``x`` and the rounds used."""
    state = ConsensusState.initial(x0)
    for _ in range(params.N if iterations is None else iterations):
        state = consensus_step(state, source, params, rng)
    return state.x, state.T


class GossipRow(NamedTuple):
    t: int
    dist2: float


def plain_gossip(
    x0: np.ndarray,
    source: GossipSource,
    steps: int,
    scale: float | None = None,
) -> tuple[np.ndarray, list[GossipRow]]:
    """Non-accelerated baseline ``x <- (I - W / scale) x``, one round per step.

    ``scale`` defaults to the largest eigenvalue over the source's matrices.
    """
    if scale is None:
        scale = max(float(np.linalg.eigvalsh(w)[-1]) for w in source.stack)
    x = np.array(x0, dtype=float)
    x_star = consensus_point(x)
    rows = [GossipRow(0, float(np.sum((x - x_star) ** 2)))]
    for t in range(1, steps + 1):
        w = source.stack[source.draw(1)[0]]
        x = x - (w @ x) / scale
        rows.append(GossipRow(t, float(np.sum((x - x_star) ** 2))))
    return x, rows


def theoretical_rate(params: ConsensusParams, lambda_min_plus: float) -> float:
    """Per-iteration contraction ``1 - sqrt(p^2 lambda_min_plus gamma / 3)``."""
    return 1.0 - math.sqrt(params.p**2 * lambda_min_plus * params.gamma / 3)
