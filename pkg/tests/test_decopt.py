import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvgossip.consensus import derive_consensus_params
from tvgossip.decopt import (
    DecoptParams,
    NodeStates,
    QuadraticObjective,
    agd_trajectory,
    centralized_agd,
    derive_outer_params,
    global_value,
    gossip_gradient,
    mean_quadratic,
    momentum,
    outer_step,
    random_quadratics,
    run_decopt,
)
from tvgossip.graphs import Graph, build_laplacian, spectral_summary
from tvgossip.sources import StaticSource


def complete_setup(n, T):
    w = build_laplacian(Graph.complete(n))
    s = spectral_summary(w)
    return StaticSource(w), derive_consensus_params(s.lambda_max, s.lambda_min_plus, 0.0, 1, 1, T)


def cycle_setup(n, T):
    w = build_laplacian(Graph.cycle(n))
    s = spectral_summary(w)
    return StaticSource(w), derive_consensus_params(s.lambda_max, s.lambda_min_plus, 0.0, 1, 1, T)


def shifted_identities(cs):
    d = cs.shape[1]
    return [QuadraticObjective(np.eye(d), -c, 0.5 * float(c @ c)) for c in cs]


# --- parameters ------------------------------------------------------------


def test_equal_curvature_gives_no_momentum():
    assert momentum(3.0, 3.0) == 0.0
    assert derive_outer_params(2.0, 2.0, 1e-3).eta == 0.0


def test_outer_params_example():
    p = derive_outer_params(1.0, 100.0, 1e-3)
    assert p.eta == pytest.approx(9 / 11)
    assert p.gamma == pytest.approx(0.01)


def test_outer_iterations_scale_with_root_kappa():
    Ns = [derive_outer_params(1.0, k, 1e-6).N for k in (16, 32, 64, 128, 256)]
    for a, b in zip(Ns, Ns[1:]):
        assert 1.3 <= b / a <= 1.5


def test_inner_length_formula():
    p = derive_outer_params(1.0, 10.0, 0.1, tau=2, chi=9.0, rho=1.0, lambda_min=0.5)
    assert p.T == math.ceil(4 * 2 * (3 + 4) * math.log(100))


def test_outer_params_reject():
    with pytest.raises(ValueError):
        derive_outer_params(2.0, 1.0, 1e-3)
    with pytest.raises(ValueError):
        derive_outer_params(1.0, 2.0, 0.0)
    with pytest.raises(ValueError):
        DecoptParams(gamma=0.1, eta=1.0, N=1, T=1)


# --- objectives ------------------------------------------------------------


@given(st.integers(1, 6), st.integers(1, 5), st.floats(0.1, 5), st.floats(1, 50), st.integers(0, 2**32 - 1))
def test_random_quadratics_spectrum(n, d, mu, ratio, seed):
    L = mu * ratio
    objs = random_quadratics(n, d, mu, L, np.random.default_rng(seed))
    m = mean_quadratic(objs)
    assert m.mu == pytest.approx(mu, rel=1e-8)
    if d > 1:
        assert m.L == pytest.approx(L, rel=1e-8)
    assert all(o.mu > 0 for o in objs)


@given(st.integers(0, 2**32 - 1))
def test_quadratic_gradient_finite_difference(seed):
    o = random_quadratics(3, 4, 1.0, 10.0, np.random.default_rng(seed))[0]
    x = np.random.default_rng(seed + 1).standard_normal(4)
    h = 1e-5
    fd = np.array([(o.value(x + h * e) - o.value(x - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.linalg.norm(fd - o.gradient(x)) <= 1e-6 * max(1.0, np.linalg.norm(o.gradient(x)))


def test_centralized_agd_solves_linear_system():
    objs = random_quadratics(4, 5, 1.0, 50.0, np.random.default_rng(0))
    m = mean_quadratic(objs)
    x = centralized_agd(objs, 1.0, 50.0, np.zeros(5))
    np.testing.assert_allclose(x, np.linalg.solve(m.A, -m.c), atol=1e-10)


# --- outer step ------------------------------------------------------------


def test_minimizer_is_fixed_point():
    c = np.array([1.0, -2.0, 0.5])
    objs = shifted_identities(np.tile(c, (5, 1)))
    source, cp = cycle_setup(5, 20)
    states = NodeStates.initial(c, 5)
    params = DecoptParams(1.0, 0.0, 3, 20)
    rng = np.random.default_rng(0)
    for _ in range(3):
        states, _ = outer_step(states, objs, params, source, cp, rng)
    np.testing.assert_allclose(states.x, np.tile(c, (5, 1)), atol=1e-14)


def test_single_node_is_centralized_agd():
    objs = random_quadratics(1, 4, 1.0, 30.0, np.random.default_rng(2))
    params = DecoptParams(1 / 30.0, momentum(1.0, 30.0), 25, 1)
    source, cp = complete_setup(2, 1)
    x0 = np.ones(4)
    states = NodeStates.initial(x0, 1)
    rng = np.random.default_rng(0)
    traj = agd_trajectory(objs, 1.0, 30.0, x0, 25)
    for k in range(1, 26):
        states, comms = outer_step(states, objs, params, source, cp, rng)
        assert comms == 0
        np.testing.assert_array_equal(states.x[0], traj[k])


def test_complete_graph_tracks_centralized_trajectory():
    objs = random_quadratics(8, 5, 1.0, 100.0, np.random.default_rng(0))
    source, cp = complete_setup(8, 300)
    params = DecoptParams(0.01, momentum(1.0, 100.0), 50, 300)
    states, _ = run_decopt(objs, source, params, cp, np.zeros(5), np.random.default_rng(1))
    traj = agd_trajectory(objs, 1.0, 100.0, np.zeros(5), 50)
    assert np.abs(states.x - traj[-1]).max() <= 1e-8


def test_shifted_identity_suite_reaches_mean():
    cs = np.random.default_rng(3).standard_normal((6, 3))
    objs = shifted_identities(cs)
    f_star = global_value(objs, cs.mean(axis=0))
    source, cp = cycle_setup(6, 80)
    params = DecoptParams(1.0, 0.0, 30, 80)
    states, rows = run_decopt(objs, source, params, cp, np.zeros(3), np.random.default_rng(0), f_star=f_star)
    assert rows[-1].gap <= 1e-6
    np.testing.assert_allclose(states.mean(), cs.mean(axis=0), atol=1e-4)


def test_communication_accounting():
    objs = random_quadratics(5, 2, 1.0, 10.0, np.random.default_rng(0))
    source, cp = cycle_setup(5, 7)
    params = DecoptParams(0.1, momentum(1.0, 10.0), 6, 7)
    _, rows = run_decopt(objs, source, params, cp, np.zeros(2), np.random.default_rng(0))
    assert len(rows) == 7
    assert rows[-1].comms == source.rounds
    assert all(b.comms > a.comms for a, b in zip(rows, rows[1:]))


def test_consensus_error_shrinks_with_inner_length():
    objs = random_quadratics(6, 3, 1.0, 20.0, np.random.default_rng(4))
    errs = []
    for T in (5, 10, 20, 40):
        cp = cycle_setup(6, T)[1]
        params = DecoptParams(1 / 20.0, momentum(1.0, 20.0), 15, T)
        # average over level draws so the comparison is about T, not one unlucky J
        e = np.mean([
            run_decopt(objs, cycle_setup(6, T)[0], params, cp, np.zeros(3), np.random.default_rng(s))[1][-1]
            .consensus_err for s in range(10)
        ])
        errs.append(e)
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_windowed_gap_decreases_under_exact_consensus():
    objs = random_quadratics(4, 6, 1.0, 64.0, np.random.default_rng(5))
    source, cp = complete_setup(4, 200)
    params = DecoptParams(1 / 64.0, momentum(1.0, 64.0), 120, 200)
    _, rows = run_decopt(objs, source, params, cp, np.ones(6), np.random.default_rng(0))
    gaps = np.array([r.gap for r in rows])
    w = 8
    mins = [gaps[i:i + w].min() for i in range(0, len(gaps) - w, w)]
    mins = [m for m in mins if m > 1e-13]
    assert all(b < a for a, b in zip(mins, mins[1:]))


# --- baseline --------------------------------------------------------------


def test_gossip_gradient_converges_near_optimum():
    cs = np.random.default_rng(6).standard_normal((5, 2))
    objs = shifted_identities(cs)
    source = StaticSource(build_laplacian(Graph.complete(5)))
    xs = gossip_gradient(objs, source, np.zeros(2), 400, 0.05)
    assert len(xs) == 401
    np.testing.assert_allclose(xs[-1], cs.mean(axis=0), atol=1e-6)
