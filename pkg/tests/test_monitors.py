import numpy as np
import pytest

from passopt import monitors, oracle
from passopt.dynamics import SwarmState
from passopt.graph import ring_graph
from passopt.problem import quadratic_problem
from passopt.scenario import build_config, build_graph, build_init, build_problem, load_preset
from passopt.simulator import SimConfig, Telemetry, draw_delays, run


def telemetry(x, xi=None, rho=None, t=None, h=1e-3, channel="none"):
    x = np.asarray(x, float)
    S = x.shape[0]
    return Telemetry(
        t=np.arange(S) * h if t is None else np.asarray(t, float),
        x=x,
        xi=np.zeros_like(x) if xi is None else np.asarray(xi, float),
        rho=np.zeros((S, 0)) if rho is None else np.asarray(rho, float),
        h=h,
        channel=channel,
        edges=(),
        delay_steps=np.zeros((0, 2), int),
        eta=np.zeros(0),
    )


@pytest.fixture(scope="module")
def scattering_run():
    g = ring_graph(5, 1.0, 3.0)
    p = quadratic_problem([[0, 1], [2, 0], [4, 3], [1, 5], [3, 2]])
    cfg = SimConfig(t_end=10.0, scattering_enabled=True, delays=draw_delays(g, 0.0, 1.0, seed=1))
    sol = oracle.solve(p, g, cfg.alpha)
    return p, g, cfg, sol, run(p, g, cfg)


# --- check_dissipation on synthetic series ----------------------------------


def report(values, supply=None, tol=1e-6):
    t = np.arange(len(values), dtype=float)
    supply = np.zeros(len(values) - 1) if supply is None else np.asarray(supply, float)
    return monitors.StorageReport("S", t, np.asarray(values, float), supply, None, tol)


def test_nonincreasing_storage_passes():
    res = monitors.check_dissipation(report([3.0, 2.0, 2.0, 0.5]))
    assert res.passed and res.max_violation <= 0


def test_growth_beyond_supply_fails():
    res = monitors.check_dissipation(report([1.0, 1.0, 2.0], supply=[0.0, 0.5]))
    assert not res.passed
    assert res.max_violation == pytest.approx(0.5)
    assert res.worst_time == 1.0 and res.violations == [1.0]


def test_negative_storage_fails():
    assert not monitors.check_dissipation(report([1.0, 0.0, -1e-6]))


def test_nan_is_a_violation():
    assert not monitors.check_dissipation(report([1.0, np.nan, 0.0]))


def test_explicit_supply_overrides():
    rep = report([0.0, 1.0, 2.0])
    assert not monitors.check_dissipation(rep)
    assert monitors.check_dissipation(rep, supply=[1.0, 1.0])


def test_label_uses_one_based_ids():
    rep = monitors.StorageReport("V_ij", np.zeros(1), np.zeros(1), np.zeros(0), (0, 4))
    assert rep.label == "V_ij[1-5]"


# --- storages at special points ---------------------------------------------


def test_equilibrium_storages_vanish():
    s = load_preset("constrained_delayfree")
    g, p = build_graph(s), build_problem(s)
    sol = oracle.solve(p, g, 2.0)
    init = SwarmState(sol.x_star.copy(), sol.xi_star.copy(), sol.lambda_star.copy())
    tel = run(p, g, SimConfig(t_end=1.0, algorithm="constrained"), init)
    st = monitors.eval_storage("S_tilde", tel, p, g, 2.0, sol)
    assert st.values.max() <= 1e-16
    for i in range(p.n):
        if p.m[i]:
            assert monitors.eval_storage("U_i", tel, p, g, 2.0, sol, i).values.max() <= 1e-16


def test_s_tilde_two_ways(ring5, ring_quadratic, rng):
    sol = oracle.solve(ring_quadratic, ring5, 2.0)
    x, xi = rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 5, 2))
    rep = monitors.eval_storage("S_tilde", telemetry(x, xi), ring_quadratic, ring5, 2.0, sol)
    direct = 0.5 * (np.sum((x - sol.z_star) ** 2, axis=(1, 2)) + np.sum((xi - sol.xi_star) ** 2, axis=(1, 2)))
    np.testing.assert_allclose(rep.values, direct)


def test_link_storage_zero_without_waves(ring5):
    p = quadratic_problem(np.zeros((5, 2)))
    sol = oracle.solve(p, ring5, 2.0)
    cfg = SimConfig(t_end=0.5, scattering_enabled=True, delays=draw_delays(ring5, 0.0, 0.2, seed=0))
    tel = run(p, ring5, cfg, SwarmState(np.zeros((5, 2)), np.zeros((5, 2)), np.zeros(0)))
    for e in range(ring5.num_edges):
        np.testing.assert_array_equal(monitors.eval_storage("V_ij", tel, p, ring5, 2.0, sol, e).values, 0.0)


def test_missing_oracle_and_applicability(ring5, ring_quadratic):
    tel = telemetry(np.zeros((3, 5, 2)))
    with pytest.raises(monitors.MissingOracle):
        monitors.eval_storage("S_tilde", tel, ring_quadratic, ring5, 2.0, None)
    with pytest.raises(monitors.NotApplicable):
        monitors.eval_storage("W", tel, ring_quadratic, ring5, 2.0, None)
    with pytest.raises(monitors.MonitorError):
        monitors.eval_storage("Q", tel, ring_quadratic, ring5, 2.0, None)


# --- convergence metrics -----------------------------------------------------


def test_metrics_at_optimum(ring5, ring_quadratic):
    sol = oracle.solve(ring_quadratic, ring5, 2.0)
    m = monitors.convergence_metrics(telemetry(np.tile(sol.z_star, (2, 5, 1))), sol, ring_quadratic)
    assert m.terminal()["consensus_error"] == 0.0 and m.terminal()["optimality_gap"] == 0.0


def test_metrics_single_agent_offset():
    p = quadratic_problem([[3.0]])
    sol = oracle.solve(p, ring_graph(1), 1.0)
    m = monitors.convergence_metrics(telemetry([[[4.0]]]), sol, p)
    assert m.optimality_gap[0] == pytest.approx(1.0)
    assert m.consensus_error[0] == 0.0


def test_constrained_run_kkt_terminal():
    s = load_preset("constrained_delayfree")
    g, p = build_graph(s), build_problem(s)
    cfg = build_config(s, g)
    sol = oracle.solve(p, g, cfg.alpha)
    tel = run(p, g, cfg, build_init(s, p))
    m = monitors.convergence_metrics(tel, sol, p)
    assert m.kkt.shape == (tel.num_samples, 4)
    assert m.kkt[-1].max() <= 1e-3


# --- dissipation along simulated runs ----------------------------------------


@pytest.mark.parametrize("algorithm", ["pi-consensus", "gradient-consensus"])
def test_delay_free_checks_pass(algorithm, ring5, ring_quadratic):
    sol = oracle.solve(ring_quadratic, ring5, 2.0)
    tel = run(ring_quadratic, ring5, SimConfig(t_end=10.0, algorithm=algorithm))
    checks = monitors.run_all_checks(tel, ring_quadratic, ring5, 2.0, sol, algorithm)
    assert checks and all(checks.values()), {k: v.max_violation for k, v in checks.items()}


def test_scattering_checks_pass(scattering_run):
    p, g, cfg, sol, tel = scattering_run
    checks = monitors.run_all_checks(tel, p, g, cfg.alpha, sol, "pi-consensus")
    assert set(checks) >= {"W", "V_ij[1-2]", "S_bar_i[3]", "W_i[5]"}
    assert all(checks.values()), {k: v.max_violation for k, v in checks.items() if not v}


def test_total_energy_nonincreasing(scattering_run):
    p, g, cfg, sol, tel = scattering_run
    W = monitors.eval_storage("W", tel, p, g, cfg.alpha, sol)
    tol = monitors.default_tolerance(tel)
    assert np.max(np.diff(W.values) / np.diff(W.t)) <= tol


def test_link_energy_bounds_port_work(scattering_run):
    # integrated port passivity: the link never returns more than it started with
    p, g, cfg, sol, tel = scattering_run
    tol = monitors.default_tolerance(tel)
    for e in range(g.num_edges):
        rep = monitors.eval_storage("V_ij", tel, p, g, cfg.alpha, sol, e)
        work = np.concatenate([[0.0], np.cumsum(rep.supply * np.diff(rep.t))])
        assert np.all(rep.values >= -1e-10)
        assert np.min(rep.values[0] + work) >= -tol * tel.t[-1]


def test_decode_sign_negative_control(scattering_run):
    p, g, cfg, sol, _ = scattering_run
    bad_cfg = SimConfig(t_end=10.0, scattering_enabled=True, delays=cfg.delays, decode_sign=-1.0)
    tel = run(p, g, bad_cfg)
    checks = monitors.run_all_checks(tel, p, g, cfg.alpha, sol, "pi-consensus")
    assert not checks["W"]
    assert not all(v for k, v in checks.items() if k.startswith("V_ij"))
