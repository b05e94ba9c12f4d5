"""Storage functions, dissipation checks and convergence metrics.

Everything here is post-processing of :class:`~passopt.simulator.Telemetry`.
Equilibrium quantities always come from an
:class:`~passopt.oracle.OracleSolution`; nothing is solved here.

Storage tags
------------
``S_P``      ``1/2 |x|^2`` (consensus-gradient loop, input ``u = -alpha phi``)
``S``        ``1/2 |x|^2 + 1/2 |xi|^2`` (PI loop)
``S_tilde``  ``S`` shifted to the equilibrium ``(x*, xi*)``
``U_i``      ``1/2 |rho_i - lambda_i*|^2``
``S_bar_i``  ``1/2 |x_i - z*|^2 + 1/2 |xi_i - 2 xi_i*|^2`` (scattered agent)
``V_ij``     energy of the shifted waves in flight on link ``ij``
``W_i``      ``S_bar_i + alpha U_i``
``W``        ``sum_i W_i + sum_ij V_ij``

The factor 2 on ``xi*`` in ``S_bar_i``: a scattered link with no delay
delivers the midpoint of the two endpoint states, so the scattered loop
behaves like PI consensus with halved weights and its integrator
equilibrium is ``2 xi*``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import NetworkGraph, laplacian
from .oracle import OracleSolution
from .problem import ProblemInstance, kkt_residual
from .simulator import Telemetry

STORAGE_NAMES = ("S_P", "S", "S_tilde", "S_bar_i", "U_i", "V_ij", "W_i", "W")
STORAGE_FLOOR = -1e-10
DISS_GAIN = 50.0


class MonitorError(ValueError):
    pass


class MissingOracle(MonitorError):
    pass


class NotApplicable(MonitorError):
    pass


@dataclass
class StorageReport:
    """One storage time series and its dissipation residuals.

    ``supply[k]`` is the permitted supply rate averaged over
    ``[t[k], t[k+1]]`` and ``dissipation_residuals[k]`` is
    ``(values[k+1] - values[k]) / dt - supply[k]``.
    """

    name: str
    t: np.ndarray
    values: np.ndarray
    supply: np.ndarray
    index: Optional[tuple] = None
    tol_diss: float = np.inf

    @property
    def dissipation_residuals(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.t) - self.supply

    @property
    def label(self) -> str:
        if self.index is None:
            return self.name
        return f"{self.name}[{'-'.join(str(i + 1) for i in self.index)}]"


@dataclass
class DissipationResult:
    passed: bool
    max_violation: float
    tol: float
    worst_time: Optional[float]
    min_storage: float
    violations: list = field(default_factory=list)  # times where residual > tol

    def __bool__(self) -> bool:
        return self.passed


def default_tolerance(tel: Telemetry) -> float:
    """``50 h (1 + peak state norm)``."""
    S = tel.num_samples
    full = np.hstack([tel.x.reshape(S, -1), tel.xi.reshape(S, -1), tel.rho.reshape(S, -1)])
    peak = float(np.max(np.linalg.norm(full, axis=1))) if S else 0.0
    return DISS_GAIN * tel.h * (1.0 + peak)


def check_dissipation(report: StorageReport, supply=None, tol: Optional[float] = None) -> DissipationResult:
    """Forward-difference storage rate against the permitted supply.

    Passes when every residual is below ``tol`` (default: the report's
    ``tol_diss``) and the storage never drops below ``-1e-10``.
    """
    tol = report.tol_diss if tol is None else tol
    if supply is None:
        res = report.dissipation_residuals
    else:
        res = np.diff(report.values) / np.diff(report.t) - np.asarray(supply, float)
    min_storage = float(np.min(report.values)) if report.values.size else 0.0
    if res.size == 0:
        return DissipationResult(min_storage >= STORAGE_FLOOR, 0.0, tol, None, min_storage)
    bad = np.flatnonzero(~(res <= tol))  # also flags NaN
    k = int(np.nanargmax(res)) if np.any(np.isfinite(res)) else 0
    worst = float(res[k]) if np.isfinite(res[k]) else np.inf
    if bad.size and not np.all(np.isfinite(res[bad])):
        worst = np.inf
    return DissipationResult(
        passed=bad.size == 0 and min_storage >= STORAGE_FLOOR,
        max_violation=worst,
        tol=tol,
        worst_time=float(report.t[k]),
        min_storage=min_storage,
        violations=report.t[bad].tolist()[:20],
    )


# --- helpers -----------------------------------------------------------------


def _trap(rate: np.ndarray) -> np.ndarray:
    """Interval averages of a pointwise rate sampled at the telemetry times."""
    return 0.5 * (rate[1:] + rate[:-1])


def _interval(acc: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Average rate over each sample interval from a running integral."""
    shape = (-1,) + (1,) * (acc.ndim - 1)
    return np.diff(acc, axis=0) / np.diff(t).reshape(shape)


def _require(oracle, what):
    if oracle is None:
        raise MissingOracle(f"{what} needs an oracle solution")
    if oracle.xi_star is None and what not in ("U_i",):
        raise MissingOracle(f"{what} needs xi* (use oracle.solve or compute_equilibrium_xi)")


def _u(tel: Telemetry, p: ProblemInstance, alpha: float) -> np.ndarray:
    """Input ``-alpha (phi(x) + Gamma(x) rho)`` per sample, shape (S, n, N)."""
    out = np.empty_like(tel.x)
    for k in range(tel.num_samples):
        G = p.grad_stack(tel.x[k])
        if p.constrained:
            G = G + p.jac_rho_stack(tel.x[k], tel.rho[k])
        out[k] = -alpha * G
    return out


def _nu_tilde(tel: Telemetry, p: ProblemInstance, oracle: OracleSolution) -> np.ndarray:
    """``Gamma_i(x_i) rho_i - Gamma_i(z*) lambda_i*`` per sample, shape (S, n, N)."""
    Xs = np.tile(oracle.z_star, (p.n, 1))
    star = p.jac_rho_stack(Xs, oracle.lambda_star)
    return np.array([p.jac_rho_stack(tel.x[k], tel.rho[k]) - star for k in range(tel.num_samples)])


def _equilibrium_ports(tel: Telemetry, g: NetworkGraph, oracle: OracleSolution):
    """``v*`` at the lower end and ``r*`` per edge, each (E, 2, N)."""
    xs = oracle.xi_star
    lo = np.array([e[0] for e in g.edges])
    hi = np.array([e[1] for e in g.edges])
    b = np.asarray(g.b)[:, None]
    E, N = g.num_edges, xs.shape[1]
    r_star = np.empty((E, 2, N))
    r_star[:, 0] = oracle.z_star
    r_star[:, 1] = xs[lo] + xs[hi]
    v_star = np.zeros((E, 2, N))
    v_star[:, 0] = b * (xs[lo] - xs[hi])
    return v_star, r_star


def _port_bar(tel: Telemetry, g: NetworkGraph, oracle: OracleSolution):
    """Shifted port products, pointwise and per interval.

    Returns ``(pointwise, interval)`` arrays of ``vbar . rbar`` with shapes
    (S, E, 2) and (S-1, E, 2); end 0 is the lower-id endpoint.
    """
    v_lo, r_star = _equilibrium_ports(tel, g, oracle)
    vs = np.stack([v_lo, -v_lo], axis=1)  # (E, 2 ends, 2, N)
    rs = np.stack([r_star, r_star], axis=1)
    vr_star = np.einsum("eacn,eacn->ea", vs, rs)
    pv, pr = tel.port_v - vs, tel.port_r - rs
    point = np.einsum("seacn,seacn->sea", pv, pr)
    acc = (
        tel.acc_vr
        - np.einsum("eacn,seacn->sea", vs, tel.acc_r)
        - np.einsum("eacn,seacn->sea", rs, tel.acc_v)
        + vr_star[None] * tel.t[:, None, None]
    )
    return point, _interval(acc, tel.t)


def _agent_ports(g: NetworkGraph, i: int) -> list[tuple[int, int]]:
    return [(e, 0 if lo == i else 1) for e, (lo, hi) in enumerate(g.edges) if i in (lo, hi)]


def _v_link(tel: Telemetry, g: NetworkGraph, oracle: OracleSolution, point: np.ndarray) -> np.ndarray:
    """Link storages aligned with the state samples, shape (S, E)."""
    v_lo, r_star = _equilibrium_ports(tel, g, oracle)
    eta = tel.eta[:, None, None]
    s_star = np.stack([(v_lo - eta * r_star), (v_lo + eta * r_star)], axis=1) / np.sqrt(2 * eta)[:, None]
    d = tel.delay_steps.astype(float)  # (E, 2)
    quad = tel.wave_sq - 2 * np.einsum("elcn,selcn->sel", s_star, tel.wave_sum) + d * np.einsum(
        "elcn,elcn->el", s_star, s_star
    )
    after = 0.5 * tel.h * quad.sum(axis=2)
    # the window is recorded after the sample's exchange; undo that step's transfer
    return after + tel.h * point.sum(axis=2)


# --- storages ----------------------------------------------------------------


def eval_storage(
    name: str,
    tel: Telemetry,
    p: ProblemInstance,
    g: NetworkGraph,
    alpha: float,
    oracle: Optional[OracleSolution] = None,
    index=None,
) -> StorageReport:
    """Evaluate one storage function and its permitted supply along a run.

    ``index`` selects the agent (``U_i``, ``S_bar_i``, ``W_i``) or edge
    position ``k`` in ``g.edges`` (``V_ij``).

    Raises
    ------
    MissingOracle, NotApplicable
    """
    if name not in STORAGE_NAMES:
        raise MonitorError(f"unknown storage {name!r}; valid: {STORAGE_NAMES}")
    t, x, xi = tel.t, tel.x, tel.xi
    tol = default_tolerance(tel)
    scattered = name in ("S_bar_i", "V_ij", "W_i", "W")
    if scattered and tel.channel != "scattering":
        raise NotApplicable(f"{name} is defined for scattering runs only")
    if name in ("S_P", "S", "S_tilde") and tel.channel != "none":
        raise NotApplicable(f"{name} is defined for delay-free runs only")
    if name == "S_P":
        u = _u(tel, p, alpha)
        vals = 0.5 * np.einsum("skc,skc->s", x, x)
        return StorageReport(name, t, vals, _trap(np.einsum("skc,skc->s", x, u)), None, tol)
    if name == "S":
        u = _u(tel, p, alpha)
        vals = 0.5 * (np.einsum("skc,skc->s", x, x) + np.einsum("skc,skc->s", xi, xi))
        return StorageReport(name, t, vals, _trap(np.einsum("skc,skc->s", x, u)), None, tol)
    if name == "U_i":
        _require(oracle, name)
        if not p.constrained:
            raise NotApplicable("U_i needs constraints")
        off = p.offsets
        i = int(index)
        lam = oracle.lambda_star[off[i] : off[i + 1]]
        d = tel.rho[:, off[i] : off[i + 1]] - lam
        vals = 0.5 * np.einsum("sl,sl->s", d, d)
        nu = _nu_tilde(tel, p, oracle)[:, i]
        rate = np.einsum("sc,sc->s", nu, x[:, i] - oracle.z_star)
        return StorageReport(name, t, vals, _trap(rate), (i,), tol)

    _require(oracle, name)
    if name == "S_tilde":
        u = _u(tel, p, alpha)
        Xs = np.tile(oracle.z_star, (p.n, 1))
        u_star = -alpha * (p.grad_stack(Xs) + p.jac_rho_stack(Xs, oracle.lambda_star))
        xt, xit = x - oracle.z_star, xi - oracle.xi_star
        vals = 0.5 * (np.einsum("skc,skc->s", xt, xt) + np.einsum("skc,skc->s", xit, xit))
        return StorageReport(name, t, vals, _trap(np.einsum("skc,skc->s", xt, u - u_star)), None, tol)

    point, interval = _port_bar(tel, g, oracle)
    if name == "V_ij":
        e = int(index)
        vals = _v_link(tel, g, oracle, point)[:, e]
        return StorageReport(name, t, vals, -interval[:, e].sum(axis=1), g.edges[e], tol)

    def s_bar(i):
        xb = x[:, i] - oracle.z_star
        xib = xi[:, i] - 2 * oracle.xi_star[i]
        return 0.5 * (np.einsum("sc,sc->s", xb, xb) + np.einsum("sc,sc->s", xib, xib))

    def port_supply(i):
        return sum(interval[:, e, end] for e, end in _agent_ports(g, i))

    def u_vals(i):
        if not p.constrained:
            return np.zeros_like(t)
        return eval_storage("U_i", tel, p, g, alpha, oracle, i).values

    if name == "S_bar_i":
        i = int(index)
        supply = port_supply(i)
        if p.constrained:
            nu = _nu_tilde(tel, p, oracle)[:, i]
            supply = supply - alpha * _trap(np.einsum("sc,sc->s", x[:, i] - oracle.z_star, nu))
        return StorageReport(name, t, s_bar(i), supply, (i,), tol)
    if name == "W_i":
        i = int(index)
        return StorageReport(name, t, s_bar(i) + alpha * u_vals(i), port_supply(i), (i,), tol)
    # W
    total = sum(s_bar(i) + alpha * u_vals(i) for i in range(p.n))
    total = total + _v_link(tel, g, oracle, point).sum(axis=1)
    return StorageReport(name, t, total, np.zeros(len(t) - 1), None, tol)


def applicable_storages(tel: Telemetry, p: ProblemInstance, algorithm: str) -> list[tuple[str, Optional[int]]]:
    """(name, index) pairs that carry a dissipation claim for this kind of run."""
    out: list[tuple[str, Optional[int]]] = []
    cons_agents = [i for i in range(p.n) if p.m[i]] if p.constrained else []
    if tel.channel == "none":
        if algorithm == "gradient-consensus":
            out.append(("S_P", None))
        else:
            out += [("S", None), ("S_tilde", None)]
            out += [("U_i", i) for i in cons_agents]
    elif tel.channel == "scattering" and algorithm != "gradient-consensus":
        out += [("S_bar_i", i) for i in range(p.n)]
        out += [("U_i", i) for i in cons_agents]
        out += [("W_i", i) for i in range(p.n)]
        out += [("V_ij", e) for e in range(len(tel.edges))]
        out.append(("W", None))
    return out


def run_all_checks(tel, p, g, alpha, oracle, algorithm, tol=None) -> dict[str, DissipationResult]:
    """Every applicable dissipation check, keyed by report label."""
    out = {}
    for name, idx in applicable_storages(tel, p, algorithm):
        rep = eval_storage(name, tel, p, g, alpha, oracle, idx)
        out[rep.label] = check_dissipation(rep, tol=tol)
    return out


# --- convergence -------------------------------------------------------------


@dataclass
class ConvergenceMetrics:
    t: np.ndarray
    consensus_error: np.ndarray
    optimality_gap: np.ndarray
    kkt: np.ndarray  # (S, 4): stationarity, primal, dual, complementarity at (mean x, rho)

    KKT_FIELDS = ("stationarity", "primal_violation", "dual_negativity", "complementarity")

    def terminal(self) -> dict[str, float]:
        out = {
            "consensus_error": float(self.consensus_error[-1]),
            "optimality_gap": float(self.optimality_gap[-1]),
        }
        out.update({f"kkt_{k}": float(v) for k, v in zip(self.KKT_FIELDS, self.kkt[-1])})
        return out


def convergence_metrics(tel: Telemetry, oracle: OracleSolution, p: ProblemInstance) -> ConvergenceMetrics:
    x = tel.x
    mean = x.mean(axis=1)
    cons = np.max(np.linalg.norm(x - mean[:, None, :], axis=2), axis=1)
    gap = np.max(np.linalg.norm(x - oracle.z_star, axis=2), axis=1)
    kkt = np.array(
        [list(kkt_residual(p, mean[k], tel.rho[k]).as_dict().values()) for k in range(tel.num_samples)]
    ).reshape(tel.num_samples, 4)
    return ConvergenceMetrics(tel.t, cons, gap, kkt)


def lyapunov_rate(tel: Telemetry, p: ProblemInstance, g: NetworkGraph, alpha: float, oracle: OracleSolution):
    """``-x^T L_P x - alpha sum_i (x_i - z*)^T (phi_i(x_i) - phi_i(z*))`` per sample.

    Nonpositive along delay-free PI runs for convex costs.
    """
    LP = laplacian(g, "P")
    Xs = np.tile(oracle.z_star, (p.n, 1))
    phis = p.grad_stack(Xs)
    out = np.empty(tel.num_samples)
    for k in range(tel.num_samples):
        xk = tel.x[k]
        out[k] = -np.einsum("ic,ij,jc->", xk, LP, xk) - alpha * np.sum((xk - Xs) * (p.grad_stack(xk) - phis))
    return out
