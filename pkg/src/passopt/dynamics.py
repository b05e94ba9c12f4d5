"""Right-hand sides of the continuous-time distributed algorithms.

Stacked quantities use the ``(n, N)`` layout: row ``i`` is agent ``i``.
Left-multiplying by an ``n x n`` Laplacian is the same as applying its
Kronecker lift ``L ⊗ I_N`` to the agent-major flattened vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .graph import NetworkGraph, laplacian
from .problem import ProblemInstance

RHO_TOL = 1e-12


class NegativeMultiplier(ValueError):
    pass


class MissingNeighborSignal(KeyError):
    pass


@dataclass
class AgentState:
    x: np.ndarray
    xi: np.ndarray
    rho: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class SwarmState:
    """All agents at time ``t``; ``rho`` is the concatenation of every ``rho_i``."""

    x: np.ndarray
    xi: np.ndarray
    rho: np.ndarray
    t: float = 0.0

    def agent(self, i: int, p: ProblemInstance) -> AgentState:
        off = p.offsets
        return AgentState(self.x[i].copy(), self.xi[i].copy(), self.rho[off[i] : off[i + 1]].copy())

    @property
    def agents_count(self) -> int:
        return self.x.shape[0]

    def copy(self) -> "SwarmState":
        return SwarmState(self.x.copy(), self.xi.copy(), self.rho.copy(), self.t)


def consensus_gradient_rhs(p: ProblemInstance, g: NetworkGraph, alpha: float, x: np.ndarray) -> np.ndarray:
    """Plain consensus plus gradient descent: ``-alpha phi(x) - L_P x``.

    Its equilibria are biased away from the optimum whenever the local
    gradients disagree at ``z*``.
    """
    return -alpha * p.grad_stack(x) - laplacian(g, "P") @ x


def pi_consensus_rhs(
    p: ProblemInstance, g: NetworkGraph, alpha: float, x: np.ndarray, xi: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    LP, LI = laplacian(g, "P"), laplacian(g, "I")
    dx = -LP @ x + LI @ xi - alpha * p.grad_stack(x)
    dxi = -LI @ x
    return dx, dxi


def psi(rho, gval, tol: float = RHO_TOL):
    """Projected multiplier velocity.

    Zero where the multiplier sits on the boundary (``rho <= tol``) and the
    constraint is strictly satisfied; the constraint value otherwise.
    """
    rho = np.asarray(rho, dtype=float)
    gval = np.asarray(gval, dtype=float)
    if np.any(rho < -tol):
        raise NegativeMultiplier(f"multiplier below zero: min {rho.min():.3e}")
    out = np.where((rho <= tol) & (gval < 0.0), 0.0, gval)
    return out if out.ndim else float(out)


def constrained_rhs(
    p: ProblemInstance,
    g: NetworkGraph,
    alpha: float,
    x: np.ndarray,
    xi: np.ndarray,
    rho: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    LP, LI = laplacian(g, "P"), laplacian(g, "I")
    dx = -LP @ x + LI @ xi - alpha * (p.grad_stack(x) + p.jac_rho_stack(x, rho))
    dxi = -LI @ x
    drho = psi(rho, p.cons_stack(x)) if p.constrained else np.zeros(0)
    return dx, dxi, np.atleast_1d(drho)


def controller_output(a: float, b: float, x_i, xi_i, r_x, r_xi) -> np.ndarray:
    """``v_ij = E_ij [r^x - x_i; r^xi - xi_i]`` with ``E = [[aI, -bI], [bI, 0]]``."""
    dx = np.asarray(r_x) - np.asarray(x_i)
    dxi = np.asarray(r_xi) - np.asarray(xi_i)
    return np.concatenate([a * dx - b * dxi, b * dx])


def delayed_agent_rhs(
    p: ProblemInstance,
    g: NetworkGraph,
    alpha: float,
    i: int,
    state: AgentState,
    received: Mapping[int, tuple[np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Agent ``i``'s dynamics driven by received neighbor signals.

    ``received[j] = (r^x_ij, r^xi_ij)`` is what agent ``i`` currently
    believes about neighbor ``j``; with exact, undelayed signals this is
    row ``i`` of :func:`constrained_rhs`.
    """
    N = p.N
    v = np.zeros(2 * N)
    for j in g.neighbors(i):
        if j not in received:
            raise MissingNeighborSignal(f"agent {i} has no signal from neighbor {j}")
        rx, rxi = received[j]
        v += controller_output(g.weight(i, j, "P"), g.weight(i, j, "I"), state.x, state.xi, rx, rxi)
    grad = p.grads[i](state.x)
    if p.m[i]:
        grad = grad + p.jacs[i](state.x) @ state.rho
        drho = np.atleast_1d(psi(state.rho, p.cons[i](state.x)))
    else:
        drho = np.zeros(0)
    return v[:N] - alpha * grad, v[N:], drho
