"""Wave-variable (scattering) encoding of the controller exchange.

Each edge's two endpoints play different roles, fixed by id order. The
endpoint whose id is *higher* than its neighbor's sends
``(-v + eta r) / sqrt(2 eta)``; the lower-id endpoint sends
``(v - eta r) / sqrt(2 eta)``. Writing ``sigma = +1`` for the lower end and
``-1`` for the upper end, both cases are

    s_out = sigma (v - eta r) / sqrt(2 eta)
    s_in  = sigma (v + eta r) / sqrt(2 eta)

and the receiver recovers ``r`` from ``s_in`` and its own state using
``v = E (r - X_i)``:

    r = (I + E/eta)^{-1} (E X_i / eta + sigma sqrt(2/eta) s_in)

Each port then satisfies ``1/2 (|s_out|^2 - |s_in|^2) = -v.r``, so the
delayed channel stores energy but never creates it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ScatteringError(ValueError):
    pass


class SingularScatteringMatrix(ScatteringError):
    pass


class RoleMismatch(ScatteringError):
    pass


def controller_block(a: float, b: float) -> np.ndarray:
    """Scalar 2x2 block of ``E_ij``; the full map is ``kron(block, I_N)``."""
    return np.array([[a, -b], [b, 0.0]])


def role_sign(agent: int, neighbor: int) -> float:
    if agent == neighbor:
        raise RoleMismatch("an agent has no link to itself")
    return 1.0 if agent < neighbor else -1.0


@dataclass(frozen=True)
class ScatteringLink:
    lo: int
    hi: int
    a: float
    b: float
    eta: float = 1.0
    T_lo_hi: float = 0.0  # transport delay of waves sent lo -> hi
    T_hi_lo: float = 0.0
    N: int = 1
    block: np.ndarray = field(init=False, repr=False, compare=False)
    inv_block: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise RoleMismatch(f"link endpoints must satisfy lo < hi, got ({self.lo}, {self.hi})")
        if self.eta <= 0:
            raise ScatteringError("wave impedance eta must be positive")
        if self.T_lo_hi < 0 or self.T_hi_lo < 0:
            raise ScatteringError("delays must be nonnegative")
        B = controller_block(self.a, self.b)
        I2 = np.eye(2)
        for M in (I2 + B / self.eta, I2 - B / self.eta):
            if abs(np.linalg.det(M)) < 1e-12:
                raise SingularScatteringMatrix(f"I ± E/eta is singular for a={self.a}, b={self.b}, eta={self.eta}")
        object.__setattr__(self, "block", B)
        object.__setattr__(self, "inv_block", np.linalg.inv(I2 + B / self.eta))

    @property
    def E(self) -> np.ndarray:
        return np.kron(self.block, np.eye(self.N))

    def delay(self, sender: int, receiver: int) -> float:
        if (sender, receiver) == (self.lo, self.hi):
            return self.T_lo_hi
        if (sender, receiver) == (self.hi, self.lo):
            return self.T_hi_lo
        raise RoleMismatch(f"({sender}, {receiver}) is not an orientation of link ({self.lo}, {self.hi})")

    def other(self, agent: int) -> int:
        if agent == self.lo:
            return self.hi
        if agent == self.hi:
            return self.lo
        raise RoleMismatch(f"agent {agent} is not an endpoint of link ({self.lo}, {self.hi})")


@dataclass(frozen=True)
class WaveMessage:
    s: np.ndarray
    sender: int
    receiver: int
    send_time: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.s)):
            raise ScatteringError("wave message has non-finite entries")


def encode(link: ScatteringLink, sender: int, v, r, send_time: float = 0.0) -> WaveMessage:
    receiver = link.other(sender)
    sigma = role_sign(sender, receiver)
    s = sigma * (np.asarray(v, dtype=float) - link.eta * np.asarray(r, dtype=float)) / np.sqrt(2.0 * link.eta)
    return WaveMessage(s, sender, receiver, send_time)


def decode(link: ScatteringLink, receiver: int, s_in, x_i, xi_i) -> np.ndarray:
    """Recover ``r_ij = [r^x; r^xi]`` from an incoming wave and the local state."""
    sigma = role_sign(receiver, link.other(receiver))
    N = link.N
    X = np.concatenate([np.ravel(x_i), np.ravel(xi_i)]).reshape(2, N)
    S = np.asarray(s_in, dtype=float).reshape(2, N)
    rhs = link.block @ X / link.eta + sigma * np.sqrt(2.0 / link.eta) * S
    return (link.inv_block @ rhs).reshape(-1)


def power_balance(s_out, s_in, v, r) -> float:
    """``1/2 (|s_out|^2 - |s_in|^2) + v.r``; zero for a correctly wired port."""
    s_out, s_in = np.asarray(s_out, dtype=float), np.asarray(s_in, dtype=float)
    return float(0.5 * (s_out @ s_out - s_in @ s_in) + np.asarray(v, dtype=float) @ np.asarray(r, dtype=float))


def ebar_spectral_radius(a: float, b: float, eta: float, N: int = 1) -> float:
    """Spectral radius of ``Ebar^2``, ``Ebar = (E + eta I)^{-1} (E - eta I)``.

    Below one for all positive gains: the round-trip echo through a
    scattered link decays.
    """
    E = np.kron(controller_block(a, b), np.eye(N))
    I = np.eye(2 * N)
    Ebar = np.linalg.solve(E + eta * I, E - eta * I)
    return float(np.max(np.abs(np.linalg.eigvals(Ebar @ Ebar))))


def zero_delay_reference(x_i, xi_i, x_j, xi_j) -> np.ndarray:
    """Received signal when both transport delays vanish.

    The wave equations then close algebraically and both endpoints receive
    the midpoint of the two states, so the scattered loop equals PI
    consensus with halved edge weights.
    """
    return 0.5 * (np.concatenate([x_i, xi_i]) + np.concatenate([x_j, xi_j]))
