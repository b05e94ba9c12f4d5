"""Convex problem instances split across agents.

Agent ``i`` privately knows a cost ``f_i``, its gradient ``phi_i`` and an
optional vector of convex constraints ``g_i(z) <= 0`` with Jacobian
``Gamma_i`` (shape ``(N, m_i)``, columns are constraint gradients).

Instances are immutable. Besides the per-agent callables each instance
may carry vectorized evaluators over the stacked agent estimates
``X`` (shape ``(n, N)``); the simulator calls those every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np


class ProblemError(ValueError):
    pass


class NonSpdWeight(ProblemError):
    pass


class CoordinateNotCovered(ProblemError):
    pass


class SlaterViolated(ProblemError):
    pass


class EmptyHalfplaneSet(ProblemError):
    pass


class DimensionMismatch(ProblemError):
    pass


class OutOfDomain(ProblemError):
    """Raised when a cost is evaluated where it is undefined (e.g. Q not PD)."""


Vec = np.ndarray
_EMPTY = np.zeros(0)


def _no_constraints(N: int):
    def g(z):
        return _EMPTY

    def jac(z):
        return np.zeros((N, 0))

    return g, jac


@dataclass(frozen=True)
class ProblemInstance:
    n: int
    N: int
    costs: tuple[Callable[[Vec], float], ...]
    grads: tuple[Callable[[Vec], Vec], ...]
    cons: tuple[Callable[[Vec], Vec], ...]
    jacs: tuple[Callable[[Vec], np.ndarray], ...]
    m: tuple[int, ...]
    strict: tuple[frozenset[int], ...]
    name: str = "custom"
    # minimum over agents must stay >= the simulator's floor (e.g. min eig of Q)
    domain_margin: Optional[Callable[[Vec], float]] = None
    batch_domain_margin: Optional[Callable[[np.ndarray], Vec]] = None
    hessians: Optional[tuple[Callable[[Vec], np.ndarray], ...]] = None
    batch_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    batch_cons: Optional[Callable[[np.ndarray], Vec]] = None
    batch_jac_rho: Optional[Callable[[np.ndarray, Vec], np.ndarray]] = None
    params: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def m_total(self) -> int:
        return int(sum(self.m))

    @property
    def constrained(self) -> bool:
        return self.m_total > 0

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.m)]).astype(int)

    def split(self, lam: Vec) -> list[Vec]:
        off = self.offsets
        return [lam[off[i] : off[i + 1]] for i in range(self.n)]

    # stacked per-agent evaluation: row i evaluated at x_i
    def grad_stack(self, X: np.ndarray) -> np.ndarray:
        if self.batch_grad is not None:
            return self.batch_grad(X)
        return np.array([self.grads[i](X[i]) for i in range(self.n)])

    def cons_stack(self, X: np.ndarray) -> Vec:
        if not self.constrained:
            return _EMPTY
        if self.batch_cons is not None:
            return self.batch_cons(X)
        return np.concatenate([self.cons[i](X[i]) for i in range(self.n)])

    def jac_rho_stack(self, X: np.ndarray, rho: Vec) -> np.ndarray:
        """Rows ``Gamma_i(x_i) @ rho_i``."""
        if not self.constrained:
            return np.zeros_like(X)
        if self.batch_jac_rho is not None:
            return self.batch_jac_rho(X, rho)
        parts = self.split(rho)
        return np.array([self.jacs[i](X[i]) @ parts[i] for i in range(self.n)])

    # centralized evaluation at a single point z
    def cost(self, z: Vec) -> float:
        return float(sum(f(z) for f in self.costs))

    def gradient(self, z: Vec) -> Vec:
        return np.sum([phi(z) for phi in self.grads], axis=0)

    def constraints(self, z: Vec) -> Vec:
        if not self.constrained:
            return _EMPTY
        return np.concatenate([g(z) for g in self.cons])

    def jacobian(self, z: Vec) -> np.ndarray:
        if not self.constrained:
            return np.zeros((self.N, 0))
        return np.hstack([J(z) for J in self.jacs])

    def hessian(self, z: Vec) -> Optional[np.ndarray]:
        if self.hessians is None:
            return None
        return np.sum([H(z) for H in self.hessians], axis=0)

    def in_domain(self, z: Vec, floor: float = 0.0) -> bool:
        return self.domain_margin is None or self.domain_margin(z) > floor

    def margin_stack(self, X: np.ndarray) -> Optional[Vec]:
        """Per-agent domain margin, or None when the cost is defined everywhere."""
        if self.domain_margin is None:
            return None
        if self.batch_domain_margin is not None:
            return self.batch_domain_margin(X)
        return np.array([self.domain_margin(X[i]) for i in range(X.shape[0])])


def make_problem(
    N: int,
    costs: Sequence[Callable],
    grads: Sequence[Callable],
    cons: Optional[Sequence[Optional[Callable]]] = None,
    jacs: Optional[Sequence[Optional[Callable]]] = None,
    strict: Optional[Sequence[Sequence[int]]] = None,
    name: str = "custom",
    **extra,
) -> ProblemInstance:
    """Register a custom problem from per-agent callables.

    ``cons[i]``/``jacs[i]`` may be ``None`` for unconstrained agents;
    constraint counts are probed by evaluating ``cons[i]`` at the origin.
    """
    n = len(costs)
    if len(grads) != n:
        raise DimensionMismatch("need one gradient per cost")
    cons = list(cons) if cons is not None else [None] * n
    jacs = list(jacs) if jacs is not None else [None] * n
    m = []
    for i in range(n):
        if cons[i] is None:
            cons[i], jacs[i] = _no_constraints(N)
        m.append(int(np.size(cons[i](np.zeros(N)))))
    if strict is None:
        strict = [range(N)] * n
    return ProblemInstance(
        n=n,
        N=N,
        costs=tuple(costs),
        grads=tuple(grads),
        cons=tuple(cons),
        jacs=tuple(jacs),
        m=tuple(m),
        strict=tuple(frozenset(s) for s in strict),
        name=name,
        **extra,
    )


def _check_spd(W: np.ndarray, i: int) -> None:
    if not np.allclose(W, W.T, atol=1e-12):
        raise NonSpdWeight(f"weight of agent {i} is not symmetric")
    if np.linalg.eigvalsh(W).min() <= 0:
        raise NonSpdWeight(f"weight of agent {i} is not positive definite")


def _quadratic_parts(C: np.ndarray, W: np.ndarray):
    costs, grads, hess = [], [], []
    for c, Wi in zip(C, W):
        costs.append(lambda z, c=c, Wi=Wi: 0.5 * float((z - c) @ Wi @ (z - c)))
        grads.append(lambda z, c=c, Wi=Wi: Wi @ (z - c))
        hess.append(lambda z, Wi=Wi: Wi)
    return costs, grads, hess


def _as_weights(weights, n: int, N: int) -> np.ndarray:
    if weights is None:
        return np.broadcast_to(np.eye(N), (n, N, N)).copy()
    W = np.asarray(weights, dtype=float)
    if W.ndim == 1:  # scalar per agent
        W = W[:, None, None] * np.eye(N)
    if W.shape != (n, N, N):
        raise DimensionMismatch(f"weights must have shape {(n, N, N)}, got {W.shape}")
    for i in range(n):
        _check_spd(W[i], i)
    return W


def quadratic_problem(targets, weights=None) -> ProblemInstance:
    """``f_i(z) = 1/2 (z - c_i)^T W_i (z - c_i)``; unconstrained."""
    C = np.atleast_2d(np.asarray(targets, dtype=float))
    if C.ndim != 2:
        raise DimensionMismatch("targets must be an (n, N) array")
    n, N = C.shape
    W = _as_weights(weights, n, N)
    costs, grads, hess = _quadratic_parts(C, W)
    g0, j0 = _no_constraints(N)
    return ProblemInstance(
        n=n,
        N=N,
        costs=tuple(costs),
        grads=tuple(grads),
        cons=(g0,) * n,
        jacs=(j0,) * n,
        m=(0,) * n,
        strict=(frozenset(range(N)),) * n,
        name="quadratic",
        hessians=tuple(hess),
        batch_grad=lambda X: np.einsum("kij,kj->ki", W, X - C),
        params={"targets": C.tolist(), "weights": W.tolist()},
    )


def partial_quadratic_problem(coords: Sequence[int], targets: Sequence[float], N: int) -> ProblemInstance:
    """``f_i(z) = (z[l_i] - c_i)^2``: agent ``i`` only cares about coordinate ``l_i``.

    ``coords`` are 0-based; their union must cover every coordinate.
    """
    coords = [int(l) for l in coords]
    c = np.asarray(targets, dtype=float)
    n = len(coords)
    if len(c) != n:
        raise DimensionMismatch("one target per agent")
    if any(not 0 <= l < N for l in coords):
        raise DimensionMismatch(f"coordinates must lie in 0..{N - 1}")
    missing = set(range(N)) - set(coords)
    if missing:
        raise CoordinateNotCovered(f"coordinates {sorted(missing)} are owned by no agent")
    costs, grads, hess = [], [], []
    for l, ci in zip(coords, c):
        e = np.zeros(N)
        e[l] = 1.0
        costs.append(lambda z, l=l, ci=ci: float((z[l] - ci) ** 2))
        grads.append(lambda z, l=l, ci=ci, e=e: 2.0 * (z[l] - ci) * e)
        hess.append(lambda z, e=e: 2.0 * np.outer(e, e))
    idx = np.array(coords)
    rows = np.arange(n)

    def batch_grad(X):
        G = np.zeros_like(X)
        G[rows, idx] = 2.0 * (X[rows, idx] - c)
        return G

    g0, j0 = _no_constraints(N)
    return ProblemInstance(
        n=n,
        N=N,
        costs=tuple(costs),
        grads=tuple(grads),
        cons=(g0,) * n,
        jacs=(j0,) * n,
        m=(0,) * n,
        strict=tuple(frozenset([l]) for l in coords),
        name="partial_quadratic",
        hessians=tuple(hess),
        batch_grad=batch_grad,
        params={"coords": coords, "targets": c.tolist(), "N": N},
    )


def _linear_constraint_batch(A_rows: np.ndarray, b_all: np.ndarray, owner: np.ndarray, n: int):
    onehot = np.zeros((n, len(owner)))
    onehot[owner, np.arange(len(owner))] = 1.0

    def batch_cons(X):
        return np.einsum("lj,lj->l", A_rows, X[owner]) - b_all

    def batch_jac_rho(X, rho):
        return onehot @ (A_rows * rho[:, None])

    return batch_cons, batch_jac_rho


def constrained_quadratic_problem(targets, weights, A, b, slater_point) -> ProblemInstance:
    """Quadratic costs with private linear constraints ``A_i z <= b_i``.

    ``A[i]`` has shape ``(m_i, N)`` (``m_i`` may be 0). ``slater_point``
    must satisfy every constraint strictly.
    """
    base = quadratic_problem(targets, weights)
    n, N = base.n, base.N
    if len(A) != n or len(b) != n:
        raise DimensionMismatch("need one (A_i, b_i) pair per agent")
    As = [np.asarray(Ai, dtype=float).reshape(-1, N) for Ai in A]
    bs = [np.asarray(bi, dtype=float).reshape(-1) for bi in b]
    for i, (Ai, bi) in enumerate(zip(As, bs)):
        if Ai.shape[0] != bi.shape[0]:
            raise DimensionMismatch(f"agent {i}: A has {Ai.shape[0]} rows but b has {bi.shape[0]}")
    zs = np.asarray(slater_point, dtype=float)
    if zs.shape != (N,):
        raise DimensionMismatch(f"slater_point must have length {N}")
    for i, (Ai, bi) in enumerate(zip(As, bs)):
        if Ai.shape[0] and not np.all(Ai @ zs - bi < 0):
            raise SlaterViolated(f"slater point violates a constraint of agent {i}")

    cons = tuple((lambda z, Ai=Ai, bi=bi: Ai @ z - bi) for Ai, bi in zip(As, bs))
    jacs = tuple((lambda z, Ai=Ai: Ai.T.copy()) for Ai in As)
    owner = np.concatenate([[i] * Ai.shape[0] for i, Ai in enumerate(As)]).astype(int)
    batch_cons, batch_jac_rho = _linear_constraint_batch(np.vstack(As), np.concatenate(bs), owner, n)
    params = dict(base.params)
    params.update(A=[Ai.tolist() for Ai in As], b=[bi.tolist() for bi in bs], slater_point=zs.tolist())
    return ProblemInstance(
        n=n,
        N=N,
        costs=base.costs,
        grads=base.grads,
        cons=cons,
        jacs=jacs,
        m=tuple(Ai.shape[0] for Ai in As),
        strict=base.strict,
        name="constrained_quadratic",
        hessians=base.hessians,
        batch_grad=base.batch_grad,
        batch_cons=batch_cons,
        batch_jac_rho=batch_jac_rho,
        params=params,
    )


# --- 2-D ellipse localization ------------------------------------------------
# z = (q1, q2, Q11, Q12, Q22); the ellipse is {q + Q u : |u| <= 1}.

Q_REGULARIZER = 1e-5


def unpack_ellipse(z: Vec) -> tuple[Vec, np.ndarray]:
    q = np.asarray(z[:2], dtype=float)
    Q = np.array([[z[2], z[3]], [z[3], z[4]]], dtype=float)
    return q, Q


def pack_ellipse(q, Q) -> Vec:
    return np.array([q[0], q[1], Q[0][0], Q[0][1], Q[1][1]], dtype=float)


def segment_projection(q: Vec, p0: Vec, p1: Vec) -> Vec:
    d = p1 - p0
    dd = float(d @ d)
    if dd == 0.0:
        return p0.copy()
    t = min(max(float((q - p0) @ d) / dd, 0.0), 1.0)
    return p0 + t * d


def _ellipse_min_eig(z: Vec) -> float:
    return float(np.linalg.eigvalsh(unpack_ellipse(z)[1])[0])


def _ellipse_min_eig_batch(X: np.ndarray) -> Vec:
    a, b, c = X[:, 2], X[:, 3], X[:, 4]
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)


def localization2d_problem(segments, halfplanes, w: float = 1.0) -> ProblemInstance:
    """Cooperative 2-D ellipse fit.

    Observer ``i`` sees the target along segment ``segments[i] = (p0, p1)``
    and knows it lies in the intersection of its halfplanes
    ``halfplanes[i] = [(normal, offset), ...]`` (``normal @ p <= offset``).

    ``f_i = -log det Q + w * dist(q, segment_i)^2 + 1e-5 |q|^2`` and one
    constraint ``normal @ q + |Q normal| - offset <= 0`` per halfplane,
    which is the ellipse-in-halfplane condition.
    """
    n = len(segments)
    if len(halfplanes) != n:
        raise DimensionMismatch("need one halfplane set per observer")
    segs = np.asarray(segments, dtype=float).reshape(n, 2, 2)
    normals, offsets, owner = [], [], []
    for i, H in enumerate(halfplanes):
        if len(H) == 0:
            raise EmptyHalfplaneSet(f"observer {i} has no halfplanes")
        for nv, d in H:
            nv = np.asarray(nv, dtype=float)
            if np.linalg.norm(nv) == 0:
                raise ProblemError(f"observer {i} has a zero halfplane normal")
            normals.append(nv)
            offsets.append(float(d))
            owner.append(i)
    Nrm = np.array(normals)
    Off = np.array(offsets)
    owner = np.array(owner, dtype=int)
    m = tuple(int(np.sum(owner == i)) for i in range(n))
    onehot = np.zeros((n, len(owner)))
    onehot[owner, np.arange(len(owner))] = 1.0
    N = 5

    def make_cost(p0, p1):
        def f(z):
            q, Q = unpack_ellipse(z)
            det = Q[0, 0] * Q[1, 1] - Q[0, 1] ** 2
            if det <= 0 or Q[0, 0] <= 0:
                return np.inf
            r = q - segment_projection(q, p0, p1)
            return float(-np.log(det) + w * (r @ r) + Q_REGULARIZER * (q @ q))

        def phi(z):
            q, Q = unpack_ellipse(z)
            det = Q[0, 0] * Q[1, 1] - Q[0, 1] ** 2
            r = q - segment_projection(q, p0, p1)
            gq = 2.0 * w * r + 2.0 * Q_REGULARIZER * q
            gQ = np.array([-Q[1, 1], 2.0 * Q[0, 1], -Q[0, 0]]) / det
            return np.concatenate([gq, gQ])

        return f, phi

    def make_cons(rows):
        nv = Nrm[rows]
        dv = Off[rows]

        def g(z):
            q, Q = unpack_ellipse(z)
            u = nv @ Q  # Q symmetric: rows are (Q n)^T
            norms = np.linalg.norm(u, axis=1)
            if np.any(norms == 0):
                raise OutOfDomain("Q n vanished; Q must be positive definite")
            return nv @ q + norms - dv

        def jac(z):
            q, Q = unpack_ellipse(z)
            u = nv @ Q
            norms = np.linalg.norm(u, axis=1)
            if np.any(norms == 0):
                raise OutOfDomain("Q n vanished; Q must be positive definite")
            dq11 = u[:, 0] * nv[:, 0] / norms
            dq12 = (u[:, 0] * nv[:, 1] + u[:, 1] * nv[:, 0]) / norms
            dq22 = u[:, 1] * nv[:, 1] / norms
            return np.column_stack([nv, dq11, dq12, dq22]).T

        return g, jac

    costs, grads, cons, jacs = [], [], [], []
    for i in range(n):
        f, phi = make_cost(segs[i, 0], segs[i, 1])
        g, J = make_cons(np.flatnonzero(owner == i))
        costs.append(f)
        grads.append(phi)
        cons.append(g)
        jacs.append(J)

    P0 = segs[:, 0]
    D = segs[:, 1] - segs[:, 0]
    DD = np.einsum("ij,ij->i", D, D)

    def batch_grad(X):
        q = X[:, :2]
        t = np.clip(np.einsum("ij,ij->i", q - P0, D) / DD, 0.0, 1.0)
        r = q - (P0 + t[:, None] * D)
        det = X[:, 2] * X[:, 4] - X[:, 3] ** 2
        G = np.empty_like(X)
        G[:, :2] = 2.0 * w * r + 2.0 * Q_REGULARIZER * q
        G[:, 2] = -X[:, 4] / det
        G[:, 3] = 2.0 * X[:, 3] / det
        G[:, 4] = -X[:, 2] / det
        return G

    def _qn(X):
        Xo = X[owner]
        u0 = Xo[:, 2] * Nrm[:, 0] + Xo[:, 3] * Nrm[:, 1]
        u1 = Xo[:, 3] * Nrm[:, 0] + Xo[:, 4] * Nrm[:, 1]
        return Xo, u0, u1, np.sqrt(u0 * u0 + u1 * u1)

    def batch_cons(X):
        Xo, _, _, norms = _qn(X)
        return Xo[:, 0] * Nrm[:, 0] + Xo[:, 1] * Nrm[:, 1] + norms - Off

    def batch_jac_rho(X, rho):
        _, u0, u1, norms = _qn(X)
        s = rho / norms
        contrib = np.column_stack(
            [
                rho * Nrm[:, 0],
                rho * Nrm[:, 1],
                s * u0 * Nrm[:, 0],
                s * (u0 * Nrm[:, 1] + u1 * Nrm[:, 0]),
                s * u1 * Nrm[:, 1],
            ]
        )
        return onehot @ contrib

    return ProblemInstance(
        n=n,
        N=N,
        costs=tuple(costs),
        grads=tuple(grads),
        cons=tuple(cons),
        jacs=tuple(jacs),
        m=m,
        strict=(frozenset(range(N)),) * n,
        name="localization2d",
        domain_margin=_ellipse_min_eig,
        batch_domain_margin=_ellipse_min_eig_batch,
        batch_grad=batch_grad,
        batch_cons=batch_cons,
        batch_jac_rho=batch_jac_rho,
        params={
            "segments": segs.tolist(),
            "halfplanes": [[(list(map(float, nv)), float(d)) for nv, d in H] for H in halfplanes],
            "w": float(w),
            # random initial states keep Q = I so they start inside the domain
            "init_overrides": {2: 1.0, 3: 0.0, 4: 1.0},
        },
    )


def global_gradient(p: ProblemInstance, z: Vec) -> Vec:
    """``sum_i phi_i(z)``; zero exactly at unconstrained optima."""
    return p.gradient(np.asarray(z, dtype=float))


@dataclass(frozen=True)
class KktResidual:
    stationarity: float
    primal_violation: float
    dual_negativity: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_violation, self.dual_negativity, self.complementarity)

    def as_dict(self) -> dict[str, float]:
        return {
            "stationarity": self.stationarity,
            "primal_violation": self.primal_violation,
            "dual_negativity": self.dual_negativity,
            "complementarity": self.complementarity,
        }


def kkt_residual(p: ProblemInstance, z: Vec, lam: Vec) -> KktResidual:
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape[0] != p.m_total:
        raise DimensionMismatch(f"lambda has length {lam.shape[0]}, problem has {p.m_total} constraints")
    gval = p.constraints(z)
    stat = p.gradient(z) + p.jacobian(z) @ lam
    return KktResidual(
        stationarity=float(np.linalg.norm(stat)),
        primal_violation=float(np.linalg.norm(np.maximum(gval, 0.0))),
        dual_negativity=float(np.linalg.norm(np.maximum(-lam, 0.0))),
        complementarity=float(np.linalg.norm(lam * gval)),
    )
