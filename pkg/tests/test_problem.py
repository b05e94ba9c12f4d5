import numpy as np
import pytest

from helpers import fd_grad, fd_jac
from passopt.problem import (
    CoordinateNotCovered,
    DimensionMismatch,
    EmptyHalfplaneSet,
    NonSpdWeight,
    SlaterViolated,
    constrained_quadratic_problem,
    global_gradient,
    kkt_residual,
    localization2d_problem,
    make_problem,
    pack_ellipse,
    partial_quadratic_problem,
    quadratic_problem,
)
from passopt.scenario import build_problem, load_preset

SEG = [[[3.0, 0.2], [-3.0, 0.2]], [[0.0, 3.0], [0.0, -3.0]]]
HALF = [[([1.0, 0.0], 2.0)], [([0.0, 1.0], 1.0), ([-1.0, 0.0], 1.5)]]


def one_d():
    return constrained_quadratic_problem([[2.0]], None, [[[1.0]]], [[1.0]], [0.0])


def loc():
    return localization2d_problem(SEG, HALF, w=1.0)


def random_ellipse_point(rng):
    q = rng.normal(size=2)
    M = rng.normal(size=(2, 2))
    Q = M @ M.T + 0.5 * np.eye(2)
    return pack_ellipse(q, Q)


# --- quadratic families ------------------------------------------------------


def test_two_agent_quadratic_optimum(two_agent_scalar):
    assert np.abs(global_gradient(two_agent_scalar, [1.0])).max() == 0.0


def test_equal_weights_optimum_is_mean(rng):
    C = rng.normal(size=(3, 2))
    p = quadratic_problem(C)
    np.testing.assert_allclose(global_gradient(p, C.mean(0)), 0.0, atol=1e-14)


def test_gradient_vanishes_at_own_target(ring_quadratic):
    for i, c in enumerate(ring_quadratic.params["targets"]):
        np.testing.assert_array_equal(ring_quadratic.grads[i](np.array(c, float)), 0.0)


def test_non_spd_weight_rejected():
    with pytest.raises(NonSpdWeight):
        quadratic_problem([[0.0, 0.0]], [[[1.0, 2.0], [2.0, 1.0]]])


def test_partial_quadratic():
    p = partial_quadratic_problem([0, 1], [3.0, 4.0], N=2)
    np.testing.assert_allclose(global_gradient(p, [3.0, 4.0]), 0.0)
    # agent 1 ignores coordinate 2
    assert p.grads[0](np.array([0.0, 10.0]))[1] == 0.0
    assert p.strict == (frozenset({0}), frozenset({1}))


def test_partial_quadratic_uncovered():
    with pytest.raises(CoordinateNotCovered):
        partial_quadratic_problem([0, 1], [3.0, 4.0], N=3)


# --- constraints -------------------------------------------------------------


def test_constrained_kkt_by_hand():
    res = kkt_residual(one_d(), [1.0], [1.0])
    assert res.as_dict() == {"stationarity": 0.0, "primal_violation": 0.0,
                             "dual_negativity": 0.0, "complementarity": 0.0}


def test_negative_multiplier_shows_in_residual():
    assert kkt_residual(one_d(), [1.0], [-0.5]).dual_negativity > 0


def test_strictly_feasible_interior_point():
    p = one_d()
    res = kkt_residual(p, [0.0], [0.0])
    assert res.stationarity == pytest.approx(2.0)
    assert res.primal_violation == res.dual_negativity == res.complementarity == 0.0


def test_kkt_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        kkt_residual(one_d(), [1.0], [1.0, 2.0])


def test_slater_violation():
    with pytest.raises(SlaterViolated):
        constrained_quadratic_problem([[2.0]], None, [[[1.0]]], [[1.0]], [2.0])


def test_stacked_constraint_helpers():
    p = build_problem(load_preset("constrained_delayfree"))
    X = np.arange(10.0).reshape(5, 2) / 3
    rho = np.linspace(0.1, 0.3, p.m_total)
    manual = np.concatenate([p.cons[i](X[i]) for i in range(p.n)])
    np.testing.assert_allclose(p.cons_stack(X), manual)
    parts = p.split(rho)
    manual = np.array([p.jacs[i](X[i]) @ parts[i] for i in range(p.n)])
    np.testing.assert_allclose(p.jac_rho_stack(X, rho), manual)


# --- localization ------------------------------------------------------------


def test_unit_circle_in_halfplane():
    p = localization2d_problem([SEG[0]], [[([1.0, 0.0], 2.0)]])
    z = pack_ellipse(np.zeros(2), np.eye(2))
    assert p.cons[0](z)[0] == pytest.approx(-1.0)


def test_on_segment_distance_term_vanishes():
    p = loc()
    z = pack_ellipse([0.5, 0.2], np.eye(2))
    g = p.grads[0](z)
    # only the regularizer remains in the position part
    np.testing.assert_allclose(g[:2], 2e-5 * np.array([0.5, 0.2]), atol=1e-15)


def test_logdet_gradient_at_identity():
    p = localization2d_problem([SEG[0]], [[([1.0, 0.0], 2.0)]])
    g = p.grads[0](pack_ellipse([0.0, 0.2], np.eye(2)))
    # -Q^{-1} = -I in (Q11, Q12, Q22) coordinates, Q12 counted twice
    np.testing.assert_allclose(g[2:], [-1.0, 0.0, -1.0], atol=1e-12)


def test_empty_halfplane_set():
    with pytest.raises(EmptyHalfplaneSet):
        localization2d_problem(SEG, [HALF[0], []])


def test_batch_paths_match_scalar(rng):
    p = loc()
    X = np.array([random_ellipse_point(rng) for _ in range(p.n)])
    rho = rng.uniform(0, 1, p.m_total)
    np.testing.assert_allclose(p.grad_stack(X), [p.grads[i](X[i]) for i in range(p.n)], atol=1e-12)
    np.testing.assert_allclose(p.cons_stack(X), np.concatenate([p.cons[i](X[i]) for i in range(p.n)]))
    manual = np.array([p.jacs[i](X[i]) @ r for i, r in enumerate(p.split(rho))])
    np.testing.assert_allclose(p.jac_rho_stack(X, rho), manual, atol=1e-12)
    np.testing.assert_allclose(p.margin_stack(X), [p.domain_margin(x) for x in X])


# --- properties shared by all families -------------------------------------


def families():
    return {
        "quadratic": quadratic_problem([[0, 1], [2, 0], [4, 3]], [[[2, 0.5], [0.5, 1]], np.eye(2), 3 * np.eye(2)]),
        "partial": partial_quadratic_problem([0, 1, 0], [1.0, -2.0, 3.0], N=2),
        "constrained": build_problem(load_preset("constrained_2d")),
        "localization": loc(),
    }


def sample_point(name, rng, N):
    return random_ellipse_point(rng) if name == "localization" else rng.normal(size=N) * 2


@pytest.mark.parametrize("name", ["quadratic", "partial", "constrained", "localization"])
def test_gradients_match_finite_differences(name, rng):
    p = families()[name]
    for _ in range(20):
        z = sample_point(name, rng, p.N)
        for i in range(p.n):
            assert np.abs(p.grads[i](z) - fd_grad(p.costs[i], z)).max() <= 1e-4
            if p.m[i]:
                assert np.abs(p.jacs[i](z) - fd_jac(p.cons[i], z)).max() <= 1e-4


@pytest.mark.parametrize("name", ["quadratic", "partial", "constrained", "localization"])
def test_incremental_passivity(name, rng):
    p = families()[name]
    worst = np.inf
    for _ in range(1000):
        x, y = sample_point(name, rng, p.N), sample_point(name, rng, p.N)
        for i in range(p.n):
            worst = min(worst, (p.grads[i](x) - p.grads[i](y)) @ (x - y))
    assert worst >= -1e-10


@pytest.mark.parametrize("name", ["constrained", "localization"])
def test_constraints_convex_along_segments(name, rng):
    p = families()[name]
    for _ in range(300):
        x, y = sample_point(name, rng, p.N), sample_point(name, rng, p.N)
        th = rng.uniform()
        lhs = p.constraints(th * x + (1 - th) * y)
        rhs = th * p.constraints(x) + (1 - th) * p.constraints(y)
        assert np.all(lhs <= rhs + 1e-10)


def test_make_problem_probes_constraint_counts():
    p = make_problem(
        1,
        [lambda z: float(z @ z), lambda z: float(z @ z)],
        [lambda z: 2 * z, lambda z: 2 * z],
        cons=[None, lambda z: np.array([z[0] - 1.0, -z[0] - 1.0])],
        jacs=[None, lambda z: np.array([[1.0, -1.0]])],
    )
    assert p.m == (0, 2) and p.m_total == 2
    np.testing.assert_allclose(p.constraints(np.zeros(1)), [-1.0, -1.0])
