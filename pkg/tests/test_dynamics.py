import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from passopt import oracle
from passopt.dynamics import (
    AgentState,
    MissingNeighborSignal,
    NegativeMultiplier,
    consensus_gradient_rhs,
    constrained_rhs,
    controller_output,
    delayed_agent_rhs,
    pi_consensus_rhs,
    psi,
)
from passopt.graph import path_graph, ring_graph
from passopt.monitors import lyapunov_rate
from passopt.problem import quadratic_problem
from passopt.scenario import build_graph, build_problem, load_preset
from passopt.simulator import SimConfig, run


@pytest.mark.parametrize("rho,g,expected", [(0.0, -1.0, 0.0), (0.5, -1.0, -1.0), (0.0, 2.0, 2.0)])
def test_psi_cases(rho, g, expected):
    assert psi(rho, g) == expected


def test_psi_vectorized_and_tolerance():
    out = psi(np.array([0.0, 1e-13, 0.3, 0.0]), np.array([-1.0, -1.0, -1.0, 0.5]))
    np.testing.assert_array_equal(out, [0.0, 0.0, -1.0, 0.5])


def test_psi_rejects_negative_multiplier():
    with pytest.raises(NegativeMultiplier):
        psi(-0.1, 1.0)


def test_gradient_consensus_biased_at_optimum(ring5, ring_quadratic):
    X = np.tile([2.0, 2.2], (5, 1))
    assert np.abs(consensus_gradient_rhs(ring_quadratic, ring5, 2.0, X)).max() > 0.1


def test_gradient_consensus_single_agent():
    p = quadratic_problem([[1.0, -1.0]])
    x = np.array([[3.0, 3.0]])
    np.testing.assert_allclose(consensus_gradient_rhs(p, ring_graph(1), 2.0, x), -2.0 * (x - [1.0, -1.0]))


def test_gradient_consensus_identical_targets(ring5):
    p = quadratic_problem([[1.0, 2.0]] * 5)
    np.testing.assert_allclose(consensus_gradient_rhs(p, ring5, 2.0, np.tile([1.0, 2.0], (5, 1))), 0.0)


def test_pi_equilibrium(ring5, ring_quadratic):
    sol = oracle.solve(ring_quadratic, ring5, 2.0)
    dx, dxi = pi_consensus_rhs(ring_quadratic, ring5, 2.0, sol.x_star, sol.xi_star)
    assert max(np.abs(dx).max(), np.abs(dxi).max()) <= 1e-12


def test_pi_integral_sums_and_consensus(ring5, ring_quadratic, rng):
    x, xi = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    _, dxi = pi_consensus_rhs(ring_quadratic, ring5, 2.0, x, xi)
    np.testing.assert_allclose(dxi.sum(0), 0.0, atol=1e-12)
    _, dxi = pi_consensus_rhs(ring_quadratic, ring5, 2.0, np.tile([0.3, -1.0], (5, 1)), xi)
    np.testing.assert_allclose(dxi, 0.0, atol=1e-14)


def test_constrained_reduces_to_pi_bitwise(ring5, ring_quadratic, rng):
    x, xi = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    dx, dxi, drho = constrained_rhs(ring_quadratic, ring5, 2.0, x, xi, np.zeros(0))
    dx2, dxi2 = pi_consensus_rhs(ring_quadratic, ring5, 2.0, x, xi)
    assert np.array_equal(dx, dx2) and np.array_equal(dxi, dxi2) and drho.size == 0


def test_constrained_equilibrium():
    s = load_preset("constrained_delayfree")
    g, p = build_graph(s), build_problem(s)
    sol = oracle.solve(p, g, 2.0)
    dx, dxi, drho = constrained_rhs(p, g, 2.0, sol.x_star, sol.xi_star, sol.lambda_star)
    assert max(np.abs(dx).max(), np.abs(dxi).max(), np.abs(drho).max()) <= 1e-8


def test_multiplier_rests_when_feasible():
    s = load_preset("constrained_delayfree")
    g, p = build_graph(s), build_problem(s)
    X = np.tile(p.params["slater_point"], (p.n, 1))
    _, _, drho = constrained_rhs(p, g, 2.0, X, np.zeros_like(X), np.zeros(p.m_total))
    np.testing.assert_array_equal(drho, 0.0)


def test_controller_output_example():
    np.testing.assert_allclose(controller_output(1.0, 3.0, [0.0], [0.0], [1.0], [0.0]), [1.0, 3.0])


def test_controller_output_zero_when_in_agreement(rng):
    x, xi = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_array_equal(controller_output(2.0, 5.0, x, xi, x, xi), 0.0)


def test_controller_is_passive(rng):
    for _ in range(200):
        a, b = rng.uniform(0.1, 5, size=2)
        x, xi, rx, rxi = rng.normal(size=(4, 2))
        v = controller_output(a, b, x, xi, rx, rxi)
        e = np.concatenate([rx - x, rxi - xi])
        assert v @ e == pytest.approx(a * np.sum((rx - x) ** 2), abs=1e-10)


def test_delayed_rhs_zero_disagreement(ring5, ring_quadratic, rng):
    x, xi = rng.normal(size=2), rng.normal(size=2)
    st = AgentState(x, xi)
    recv = {j: (x, xi) for j in ring5.neighbors(0)}
    dx, dxi, _ = delayed_agent_rhs(ring_quadratic, ring5, 2.0, 0, st, recv)
    np.testing.assert_allclose(dx, -2.0 * ring_quadratic.grads[0](x))
    np.testing.assert_array_equal(dxi, 0.0)


def test_delayed_rhs_matches_stacked_rows(rng):
    s = load_preset("constrained_delayfree")
    g, p = build_graph(s), build_problem(s)
    X, XI = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    rho = rng.uniform(0, 1, p.m_total)
    dx, dxi, drho = constrained_rhs(p, g, 2.0, X, XI, rho)
    parts = p.split(rho)
    for i in range(p.n):
        recv = {j: (X[j], XI[j]) for j in g.neighbors(i)}
        ax, axi, arho = delayed_agent_rhs(p, g, 2.0, i, AgentState(X[i], XI[i], parts[i]), recv)
        np.testing.assert_allclose(ax, dx[i], atol=1e-12)
        np.testing.assert_allclose(axi, dxi[i], atol=1e-12)
        off = p.offsets
        np.testing.assert_allclose(arho, drho[off[i] : off[i + 1]])


def test_delayed_rhs_signs():
    g = path_graph(2, a=1.0, b=2.0)
    p = quadratic_problem([[0.0], [0.0]])
    st = AgentState(np.zeros(1), np.zeros(1))
    # integral disagreement pushes x the opposite way
    dx, dxi, _ = delayed_agent_rhs(p, g, 1.0, 0, st, {1: (np.zeros(1), np.ones(1))})
    assert dx[0] == -2.0 and dxi[0] == 0.0
    dx, dxi, _ = delayed_agent_rhs(p, g, 1.0, 0, st, {1: (np.ones(1), np.zeros(1))})
    assert dx[0] == 1.0 and dxi[0] == 2.0


def test_delayed_rhs_missing_neighbor(ring5, ring_quadratic):
    st = AgentState(np.zeros(2), np.zeros(2))
    with pytest.raises(MissingNeighborSignal):
        delayed_agent_rhs(ring_quadratic, ring5, 2.0, 0, st, {1: (np.zeros(2), np.zeros(2))})


def test_lyapunov_rate_nonpositive(ring5, ring_quadratic):
    sol = oracle.solve(ring_quadratic, ring5, 2.0)
    tel = run(ring_quadratic, ring5, SimConfig(t_end=5.0, h=1e-3, record_every=20))
    assert lyapunov_rate(tel, ring_quadratic, ring5, 2.0, sol).max() <= 1e-10


@settings(max_examples=200, deadline=None)
@given(rho=st.floats(0.0, 10.0), g=st.floats(-10.0, 10.0), h=st.floats(1e-4, 1.0))
def test_projected_step_stays_nonnegative(rho, g, h):
    new = max(rho + h * psi(rho, g), 0.0)
    assert new >= 0.0
    # a multiplier resting on the boundary with slack constraints stays put
    if rho == 0.0 and g < 0:
        assert new == 0.0
