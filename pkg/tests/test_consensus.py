import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvgossip.consensus import (
    ConsensusParams,
    ConsensusState,
    consensus_point,
    consensus_step,
    derive_consensus_params,
    mlmc_gradient,
    momentum_params,
    plain_gossip,
    r_grad,
    r_value,
    run_consensus,
    theoretical_rate,
)
from tvgossip.graphs import Graph, WeightedGraph, build_laplacian, random_connected_graph, spectral_summary
from tvgossip.markov import GraphFamily, MarkovGraphChain, edge_toggle, lazy_uniform_kernel, mean_gossip, rho_bound
from tvgossip.sources import PeriodicSource, StaticSource


def noisy_family(n=8, seed=0):
    rng = np.random.default_rng(seed)
    return edge_toggle(random_connected_graph(n, rng, 0.3), 2, 3, rng)


def static_params(w, N=50):
    s = spectral_summary(w)
    return derive_consensus_params(s.lambda_max, s.lambda_min_plus, 0.0, 1, 1, N)


# --- parameters ------------------------------------------------------------


def test_momentum_formula_chain():
    p = momentum_params(3.0, 1.0, b=2)
    assert p["beta"] == pytest.approx(0.5)
    assert p["eta"] == pytest.approx(2.0)
    assert p["theta"] == pytest.approx(14 / 15)
    assert p["M"] == 2 and p["B"] == 2


def test_noiseless_gamma():
    assert derive_consensus_params(2.0, 0.5, 0.0, 1, 1, 10).gamma == pytest.approx(3 / 8)


def test_noisy_gamma_takes_second_term():
    lam, rho, tau, b = 0.5, 1.0, 2, 1
    expected = lam**3 / (1800 * rho**2 * (tau / b + tau**2 / b**2)) ** 2
    assert derive_consensus_params(4.0, lam, rho, tau, b, 10).gamma == pytest.approx(expected)


@given(
    st.floats(0.1, 100), st.floats(1.0, 1e4), st.floats(0.0, 5.0), st.integers(1, 5), st.integers(1, 5)
)
def test_derived_params_valid(lam_min, chi, rho, tau, b):
    p = derive_consensus_params(lam_min * chi, lam_min, rho, tau, b, 10)
    assert p.p / p.eta < 1 and p.beta * p.p / p.eta < 1
    assert 0 < p.theta < 1
    assert p.B == math.ceil(b * math.log2(p.M))


def test_params_invariants_enforced():
    good = dict(gamma=1.0, beta=0.5, eta=2.0, theta=0.9, M=2, B=1, b=1, N=1)
    ConsensusParams(**good)
    for key, bad in [("theta", 1.0), ("beta", 1.5), ("eta", 0.5), ("M", 1), ("B", 3), ("gamma", 0.0)]:
        with pytest.raises(ValueError):
            ConsensusParams(**{**good, key: bad})
    with pytest.raises(ValueError):
        ConsensusParams(**good, p=0.5)


def test_params_reject_bad_inputs():
    with pytest.raises(ValueError):
        derive_consensus_params(0.0, 1.0, 0.0, 1, 1, 5)
    with pytest.raises(ValueError):
        derive_consensus_params(1.0, 1.0, 0.0, 0, 1, 5)
    with pytest.raises(ValueError):
        derive_consensus_params(2.0, 1.0, 0.0, 1, 1, 5, gamma=1.0)


# --- objective -------------------------------------------------------------


def test_r_on_constants_and_eigenvectors():
    w = build_laplacian(Graph.cycle(6))
    c = np.full(6, 2.5)
    assert r_value(w, c) == pytest.approx(0, abs=1e-12)
    np.testing.assert_allclose(r_grad(w, c), 0, atol=1e-12)
    lam, vecs = np.linalg.eigh(w)
    x = 3 * vecs[:, -1]
    assert r_value(w, x) == pytest.approx(0.5 * lam[-1] * x @ x)


@given(st.integers(0, 2**32 - 1))
def test_r_gradient_finite_difference(seed):
    rng = np.random.default_rng(seed)
    w = mean_gossip(noisy_family(seed=seed % 7))
    x = rng.standard_normal(w.shape[0])
    h = 1e-5
    fd = np.array([(r_value(w, x + h * e) - r_value(w, x - h * e)) / (2 * h) for e in np.eye(len(x))])
    g = r_grad(w, x)
    assert np.linalg.norm(fd - g) <= 1e-6 * max(1.0, np.linalg.norm(g))


@given(st.integers(0, 2**32 - 1))
def test_restricted_strong_convexity(seed):
    rng = np.random.default_rng(seed)
    w = mean_gossip(noisy_family(seed=seed % 5))
    lam = spectral_summary(w).lambda_min_plus
    x = rng.standard_normal(w.shape[0])
    y = rng.standard_normal(w.shape[0])
    y += x.mean() - y.mean()
    lhs = r_value(w, y)
    rhs = r_value(w, x) + r_grad(w, x) @ (y - x) + 0.5 * lam * (x - y) @ (x - y)
    assert lhs >= rhs - 1e-9


@given(st.integers(0, 2**32 - 1))
def test_estimator_noise_bounded_by_rho(seed):
    fam = noisy_family(seed=seed % 5)
    w = mean_gossip(fam)
    rho = rho_bound(fam)
    x = np.random.default_rng(seed).standard_normal(fam.n)
    for wi in fam.laplacians:
        assert np.linalg.norm(wi @ x - w @ x) <= rho * np.linalg.norm(x - consensus_point(x)) + 1e-10


# --- estimator -------------------------------------------------------------


def test_mlmc_capped_level_returns_base_average():
    fam = noisy_family()
    chain = MarkovGraphChain(fam, lazy_uniform_kernel(fam.pi, 0.3), seed=4)
    twin = MarkovGraphChain(fam, lazy_uniform_kernel(fam.pi, 0.3), seed=4)
    params = ConsensusParams(gamma=0.01, beta=0.5, eta=2.0, theta=14 / 15, M=2, B=3, b=3, N=1)
    x = np.random.default_rng(0).standard_normal(fam.n)
    g, J, comms = mlmc_gradient(x, chain, params, np.random.default_rng(0), J=3)
    idx = twin.draw(3)
    np.testing.assert_allclose(g, np.mean([fam.laplacians[i] @ x for i in idx], axis=0), atol=1e-14)
    assert comms == 8 * 3 and chain.rounds == 24


def test_mlmc_constant_family_is_exact():
    w = build_laplacian(Graph.cycle(7))
    params = static_params(w)
    x = np.random.default_rng(1).standard_normal(7)
    rng = np.random.default_rng(2)
    for _ in range(20):
        g, _, _ = mlmc_gradient(x, StaticSource(w), params, rng)
        np.testing.assert_allclose(g, w @ x, atol=1e-12)


def test_mlmc_level_distribution():
    w = build_laplacian(Graph.cycle(4))
    params = static_params(w)
    rng = np.random.default_rng(0)
    levels = np.array([mlmc_gradient(np.zeros(4), StaticSource(w), params, rng).J for _ in range(20000)])
    assert levels.min() >= 1
    for j in (1, 2, 3):
        p = 2.0**-j
        assert abs(np.mean(levels == j) - p) <= 3 * math.sqrt(p * (1 - p) / 20000)


def test_mlmc_handles_matrix_payload():
    fam = noisy_family()
    chain = MarkovGraphChain(fam, lazy_uniform_kernel(fam.pi, 0.3), seed=4)
    w = mean_gossip(fam)
    s = spectral_summary(w)
    params = derive_consensus_params(s.lambda_max, s.lambda_min_plus, 0, 1, 1, 1)
    x = np.random.default_rng(0).standard_normal((fam.n, 3))
    g, J, _ = mlmc_gradient(x, chain, params, np.random.default_rng(5))
    assert g.shape == (fam.n, 3)


# --- iteration -------------------------------------------------------------


def test_consensual_start_is_fixed_point():
    fam = noisy_family()
    chain = MarkovGraphChain(fam, lazy_uniform_kernel(fam.pi, 0.3), seed=4)
    w = mean_gossip(fam)
    params = static_params(w)
    state = ConsensusState.initial(np.full(fam.n, 1.7))
    rng = np.random.default_rng(0)
    for _ in range(10):
        state = consensus_step(state, chain, params, rng)
    for v in (state.x, state.x_f, state.x_g):
        np.testing.assert_allclose(v, 1.7, rtol=1e-13)


@given(st.integers(0, 2**32 - 1))
def test_mean_preserved_each_step(seed):
    fam = noisy_family(seed=seed % 5)
    chain = MarkovGraphChain(fam, lazy_uniform_kernel(fam.pi, 0.3), seed=seed)
    w = mean_gossip(fam)
    s = spectral_summary(w)
    params = derive_consensus_params(s.lambda_max, s.lambda_min_plus, rho_bound(fam), 1, 1, 30,
                                     gamma=3 / (4 * s.lambda_max), heuristic=True)
    x0 = np.random.default_rng(seed).standard_normal(fam.n) + 5
    state = ConsensusState.initial(x0)
    rng = np.random.default_rng(seed + 1)
    m0 = x0.mean()
    for _ in range(30):
        state = consensus_step(state, chain, params, rng)
        for v in (state.x, state.x_f, state.x_g):
            assert abs(v.mean() - m0) <= 1e-10 * (1 + abs(m0))


def test_run_consensus_zero_iterations():
    w = build_laplacian(Graph.cycle(5))
    _, rows = run_consensus(np.arange(5.0), StaticSource(w), static_params(w, N=0), np.random.default_rng(0), w)
    assert len(rows) == 1 and rows[0].k == 0 and rows[0].T == 0


def test_counter_strictly_increasing_and_exact():
    fam = noisy_family()
    chain = MarkovGraphChain(fam, lazy_uniform_kernel(fam.pi, 0.3), seed=2)
    w = mean_gossip(fam)
    params = static_params(w, N=40)
    _, rows = run_consensus(np.random.default_rng(0).standard_normal(fam.n), chain, params,
                            np.random.default_rng(1), w)
    Ts = [r.T for r in rows]
    assert all(b > a for a, b in zip(Ts, Ts[1:]))
    assert chain.rounds == Ts[-1]


def test_shared_level_stream_across_payload_columns():
    # column-wise runs with the same seeds see the same J sequence as a joint run
    w = mean_gossip(noisy_family())
    params = static_params(w, N=15)
    fam = noisy_family()
    X = np.random.default_rng(0).standard_normal((fam.n, 2))
    q = lazy_uniform_kernel(fam.pi, 0.3)
    joint, _ = run_consensus(X, MarkovGraphChain(fam, q, seed=3), params, np.random.default_rng(9), w)
    for c in range(2):
        col, _ = run_consensus(X[:, c], MarkovGraphChain(fam, q, seed=3), params, np.random.default_rng(9), w)
        np.testing.assert_allclose(joint.x[:, c], col.x, atol=1e-12)


def test_potential_decreases_on_static_graph():
    w = build_laplacian(Graph.cycle(10))
    params = static_params(w, N=60)
    s = spectral_summary(w)
    runs = []
    for seed in range(100):
        _, rows = run_consensus(np.random.default_rng(seed).standard_normal(10), StaticSource(w), params,
                                np.random.default_rng(1000 + seed), w)
        runs.append([r.potential for r in rows])
    avg = np.mean(runs, axis=0)
    assert np.all(np.diff(avg) <= 1e-12 * avg[0])
    slope = np.polyfit(np.arange(len(avg)), np.log(avg), 1)[0]
    assert slope <= math.log(theoretical_rate(params, s.lambda_min_plus)) + 0.05


# --- baseline --------------------------------------------------------------


def test_plain_gossip_fixed_point_and_mean():
    w = build_laplacian(Graph.cycle(6))
    x, rows = plain_gossip(np.full(6, 3.0), StaticSource(w), 5)
    np.testing.assert_allclose(x, 3.0)
    x0 = np.random.default_rng(0).standard_normal(6)
    x, _ = plain_gossip(x0, PeriodicSource([w, build_laplacian(Graph.complete(6))]), 9)
    assert x.mean() == pytest.approx(x0.mean(), abs=1e-12)


def test_plain_gossip_contraction():
    g = random_connected_graph(12, np.random.default_rng(3), 0.2)
    w = build_laplacian(WeightedGraph.unit(g))
    s = spectral_summary(w)
    _, rows = plain_gossip(np.random.default_rng(4).standard_normal(12), StaticSource(w), 30)
    factor = 1 - s.lambda_min_plus / s.lambda_max
    for a, b in zip(rows, rows[1:]):
        assert math.sqrt(b.dist2) <= factor * math.sqrt(a.dist2) + 1e-12
