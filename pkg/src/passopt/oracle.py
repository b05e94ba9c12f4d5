"""Centralized reference solutions ``(z*, lambda*, xi*)``.

These are computed without the network and serve as ground truth for
the monitors and the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import psi
from .graph import NetworkGraph, laplacian
from .problem import ProblemInstance, SlaterViolated, kkt_residual


class OracleError(RuntimeError):
    pass


class NoConvergence(OracleError):
    pass


class NotInImage(OracleError):
    pass


@dataclass
class OracleSolution:
    z_star: np.ndarray
    lambda_star: np.ndarray
    xi_star: Optional[np.ndarray]  # (n, N), row i is xi_i*
    achieved_residual: float
    method: str
    info: dict = field(default_factory=dict)

    @property
    def x_star(self) -> np.ndarray:
        """``1_n ⊗ z*`` in the (n, N) layout (needs ``xi_star`` for n)."""
        n = 1 if self.xi_star is None else self.xi_star.shape[0]
        return np.tile(self.z_star, (n, 1))


def _start_point(p: ProblemInstance, z0=None) -> np.ndarray:
    if z0 is not None:
        return np.asarray(z0, dtype=float).copy()
    z = np.zeros(p.N)
    for c, val in p.params.get("init_overrides", {}).items():
        z[int(c)] = val
    return z


def _fd_jacobian(F, z: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector map."""
    cols = []
    for k in range(z.size):
        step = eps * max(1.0, abs(z[k]))
        e = np.zeros_like(z)
        e[k] = step
        cols.append((F(z + e) - F(z - e)) / (2 * step))
    return np.column_stack(cols)


def _cost(p: ProblemInstance, z) -> float:
    if not p.in_domain(z):
        return np.inf
    return p.cost(z)


def solve_unconstrained(p: ProblemInstance, z0=None, tol: float = 1e-10, max_iter: int = 500) -> OracleSolution:
    """Minimize ``sum_i f_i`` with damped Newton steps.

    Hessians come from the problem when available and from central
    differences of the gradient otherwise. If the Newton direction is not
    a descent direction the step falls back to the negative gradient.

    Raises
    ------
    NoConvergence
        when ``|sum_i phi_i(z)|`` does not drop to ``tol`` within ``max_iter``.
    """
    z = _start_point(p, z0)
    grad = p.gradient(z)
    used_fallback = False
    for it in range(max_iter):
        gn = np.linalg.norm(grad)
        if gn <= tol:
            method = "newton+gd" if used_fallback else "newton"
            return OracleSolution(z, np.zeros(0), None, float(gn), method, {"iterations": it})
        H = p.hessian(z)
        if H is None:
            H = _fd_jacobian(p.gradient, z)
            H = 0.5 * (H + H.T)
        try:
            d = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            d = -np.linalg.lstsq(H, grad, rcond=None)[0]
        if not np.all(np.isfinite(d)) or d @ grad >= 0:
            d = -grad
            used_fallback = True
        f0 = _cost(p, z)
        s = 1.0
        while s > 1e-14:
            z_new = z + s * d
            f1 = _cost(p, z_new)
            if f1 <= f0 + 1e-4 * s * (d @ grad) or (abs(f1 - f0) <= 1e-14 * max(1.0, abs(f0)) and np.isfinite(f1)):
                break
            s *= 0.5
        else:
            # line search stalled at roundoff; accept a full step only if it lowers the gradient
            z_new = z + d
            if not (np.isfinite(_cost(p, z_new)) and np.linalg.norm(p.gradient(z_new)) < gn):
                raise NoConvergence(f"line search failed at |grad|={gn:.3e}")
        z = z_new
        grad = p.gradient(z)
    raise NoConvergence(f"|grad|={np.linalg.norm(grad):.3e} after {max_iter} iterations")


def _primal_dual(p: ProblemInstance, z, lam, h: float, steps: int, target: float):
    """Centralized projected primal-dual flow (single estimate, no network)."""
    for k in range(steps):
        G = p.gradient(z) + p.jacobian(z) @ lam
        gval = p.constraints(z)
        dl = np.atleast_1d(psi(lam, gval))
        hs = h
        while not p.in_domain(z - hs * G) and hs > 1e-12:
            hs *= 0.5
        z = z - hs * G
        lam = np.maximum(lam + hs * dl, 0.0)
        if k % 200 == 0 and kkt_residual(p, z, lam).max() <= target:
            break
    return z, lam


def _active_set_polish(p: ProblemInstance, z, lam, tol: float, max_rounds: int = 20):
    m = p.m_total
    lam = lam.copy()
    for _ in range(max_rounds):
        gval = p.constraints(z)
        A = np.flatnonzero((lam > 1e-9) | (gval > -1e-7))
        nA = A.size

        def F(w):
            zz, la = w[: p.N], w[p.N :]
            full = np.zeros(m)
            full[A] = la
            return np.concatenate([p.gradient(zz) + p.jacobian(zz) @ full, p.constraints(zz)[A]])

        w = np.concatenate([z, lam[A]])
        for _ in range(50):
            Fw = F(w)
            if np.linalg.norm(Fw) <= 1e-13 * max(1.0, np.linalg.norm(w)):
                break
            Jw = _fd_jacobian(F, w)
            step = -np.linalg.lstsq(Jw, Fw, rcond=None)[0]
            s = 1.0
            while s > 1e-6 and not p.in_domain(w[: p.N] + s * step[: p.N]):
                s *= 0.5
            w = w + s * step
        z = w[: p.N]
        lam = np.zeros(m)
        lam[A] = w[p.N :]
        gval = p.constraints(z)
        drop = A[lam[A] < -tol]
        add = np.flatnonzero(gval > tol)
        if drop.size == 0 and add.size == 0:
            return z, np.maximum(lam, 0.0)
        lam[drop] = 0.0
        lam[add] = np.maximum(lam[add], 1e-6)
    return z, np.maximum(lam, 0.0)


def solve_constrained(
    p: ProblemInstance,
    z0=None,
    tol: float = 1e-8,
    h: float = 1e-3,
    max_steps: int = 200_000,
) -> OracleSolution:
    """KKT point of ``min sum f_i  s.t.  g_i(z) <= 0`` for all ``i``.

    A coarse run of the centralized primal-dual flow identifies the active
    set, then Newton's method on the active KKT equations polishes the
    point to ``tol``.
    """
    if not p.constrained:
        return solve_unconstrained(p, z0)
    sp = p.params.get("slater_point")
    if sp is not None and not np.all(p.constraints(np.asarray(sp, float)) < 0):
        raise SlaterViolated("supplied Slater point is not strictly feasible")
    z = _start_point(p, z0)
    lam = np.zeros(p.m_total)
    z, lam = _primal_dual(p, z, lam, h, max_steps, target=1e-4)
    z, lam = _active_set_polish(p, z, lam, tol)
    res = kkt_residual(p, z, lam)
    if res.max() > tol:
        raise NoConvergence(f"KKT residual {res.max():.3e} > {tol:g} ({res.as_dict()})")
    return OracleSolution(z, lam, None, res.max(), "primal-dual+active-set-newton", {"kkt": res.as_dict()})


def compute_equilibrium_xi(p: ProblemInstance, g: NetworkGraph, alpha: float, z_star, lambda_star=None,
                           tol: float = 1e-8) -> np.ndarray:
    """Minimal-norm ``xi*`` with ``L_I xi* = alpha (phi(x*) + Gamma(x*) lambda*)``.

    This is the integrator value that makes ``(1_n ⊗ z*, xi*)`` an
    equilibrium of the PI loop ``x' = -L_P x + L_I xi - alpha (phi + Gamma rho)``.

    Returned in the (n, N) layout. Any ``xi* + 1_n ⊗ w`` is also an
    equilibrium.

    Raises
    ------
    NotInImage
        if the right-hand side is not in the range of ``L_I`` (i.e.
        ``z*``/``lambda*`` is not a KKT point).
    """
    z_star = np.asarray(z_star, dtype=float)
    X = np.tile(z_star, (p.n, 1))
    lam = np.zeros(p.m_total) if lambda_star is None else np.asarray(lambda_star, float)
    F = p.grad_stack(X) + p.jac_rho_stack(X, lam)
    LI = laplacian(g, "I")
    xi = alpha * np.linalg.pinv(LI) @ F
    resid = np.linalg.norm(LI @ xi - alpha * F)
    if resid > tol * max(1.0, alpha * np.linalg.norm(F)):
        raise NotInImage(f"equilibrium residual {resid:.3e}; sum of stacked gradients {np.linalg.norm(F.sum(0)):.3e}")
    return xi


def solve(p: ProblemInstance, g: NetworkGraph, alpha: float, z0=None) -> OracleSolution:
    """Reference solution including ``xi*`` for the given network and gain."""
    sol = solve_constrained(p, z0) if p.constrained else solve_unconstrained(p, z0)
    sol.xi_star = compute_equilibrium_xi(p, g, alpha, sol.z_star, sol.lambda_star)
    return sol
