"""Fixed-step simulation of the networked algorithms with delayed links.

Time is discretized with explicit Euler at step ``h``. Transport delays
are rounded to whole steps, and every directed link direction owns a ring
buffer (see :class:`DelayLine`). Three channel models are supported:

``none``
    exact, instantaneous neighbor states (dense Laplacian evaluation);
``naive``
    neighbor states sent raw through the delay lines;
``scattering``
    wave variables sent through the delay lines and decoded at the
    receiver.

All per-edge work is done by the kernels in :mod:`passopt.kernels`.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np

from .dynamics import SwarmState, psi
from .graph import NetworkGraph, laplacian
from .kernels import get_backend
from .problem import ProblemInstance
from .scattering import SingularScatteringMatrix

ALGORITHMS = ("gradient-consensus", "pi-consensus", "constrained")
CHANNELS = ("none", "naive", "scattering")


class SimulationError(RuntimeError):
    pass


class NumericalBlowup(SimulationError):
    """State left the blowup threshold. ``run`` reports this through the
    ``diverged`` flag instead of raising."""


class StepRejectedPD(SimulationError):
    pass


@dataclass
class SimConfig:
    """Run parameters.

    ``delays`` maps a directed pair ``(sender, receiver)`` (0-based) to a
    transport delay in seconds; unlisted directions have zero delay.
    ``eta_per_edge`` maps ``(lo, hi)`` to a link-specific impedance.
    ``decode_sign`` exists only for negative-control experiments; any
    value other than 1 miswires the receivers.
    """

    h: float = 1e-3
    t_end: float = 50.0
    alpha: float = 2.0
    eta: float = 1.0
    algorithm: str = "pi-consensus"
    scattering_enabled: bool = False
    naive_delay_enabled: bool = False
    delays: Optional[dict] = None
    seed: int = 0
    q_mineig_floor: float = 1e-6
    record_every: int = 10
    blowup_threshold: float = 1e9
    backend: Optional[str] = None
    eta_per_edge: Optional[dict] = None
    decode_sign: float = 1.0
    max_step_halvings: int = 20

    def __post_init__(self):
        errs = []
        if not self.h > 0:
            errs.append(f"h must be > 0 (got {self.h})")
        if not self.t_end >= self.h:
            errs.append(f"t_end must be >= h (got {self.t_end})")
        if not self.alpha > 0:
            errs.append(f"alpha must be > 0 (got {self.alpha})")
        if not self.eta > 0:
            errs.append(f"eta must be > 0 (got {self.eta})")
        if self.algorithm not in ALGORITHMS:
            errs.append(f"algorithm must be one of {ALGORITHMS} (got {self.algorithm!r})")
        if self.scattering_enabled and self.naive_delay_enabled:
            errs.append("scattering_enabled and naive_delay_enabled are mutually exclusive")
        if self.record_every < 1:
            errs.append("record_every must be >= 1")
        for key, T in (self.delays or {}).items():
            if T < 0:
                errs.append(f"delay {key} is negative")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def channel(self) -> str:
        if self.scattering_enabled:
            return "scattering"
        if self.naive_delay_enabled:
            return "naive"
        return "none"

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.h))


def quantize_delay(T: float, h: float) -> int:
    return int(round(T / h))


def draw_delays(g: NetworkGraph, low: float = 0.0, high: float = 1.0, seed: int = 0) -> dict:
    """Independent U[low, high] delays for both directions of every edge."""
    if low < 0 or high < low:
        raise ValueError(f"need 0 <= low <= high, got [{low}, {high}]")
    rng = np.random.default_rng(seed)
    out = {}
    for i, j in g.edges:
        out[(i, j)] = float(rng.uniform(low, high))
        out[(j, i)] = float(rng.uniform(low, high))
    return out


class DelayLine:
    """Fixed-delay transport of samples on the step grid.

    A sample written at step ``k`` is read back at step ``k + delay_steps``.
    Reads of steps that were never written (including all pre-history)
    return zeros.
    """

    def __init__(self, delay_steps: int, shape=(2,)):
        if delay_steps < 0:
            raise ValueError("delay_steps must be >= 0")
        self.delay_steps = int(delay_steps)
        self.buf = np.zeros((self.delay_steps + 1, *np.atleast_1d(shape)))
        self.stamp = np.full(self.delay_steps + 1, -1, dtype=np.int64)
        self.cursor = 0  # next step to be written

    def write(self, k: int, s) -> None:
        slot = k % (self.delay_steps + 1)
        self.buf[slot] = s
        self.stamp[slot] = k
        self.cursor = k + 1

    def read(self, k: int) -> np.ndarray:
        src = k - self.delay_steps
        slot = src % (self.delay_steps + 1)
        if src < 0 or self.stamp[slot] != src:
            return np.zeros(self.buf.shape[1:])
        return self.buf[slot].copy()


def delay_read(line: DelayLine, t: float, h: float) -> np.ndarray:
    k = t / h
    if abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
        raise ValueError(f"t={t} is not on the step grid of h={h}")
    return line.read(int(round(k)))


def initial_state(p: ProblemInstance, seed: int = 0, xi0=None, rho0=None) -> SwarmState:
    """Random ``x_i ~ U[0, 1]^N``, ``xi = 0`` and ``rho = 0`` unless given.

    Problems may pin some coordinates through ``params["init_overrides"]``
    (the localization demo starts from ``Q = I``).
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(p.n, p.N))
    for c, val in p.params.get("init_overrides", {}).items():
        x[:, int(c)] = val
    xi = np.zeros((p.n, p.N)) if xi0 is None else np.broadcast_to(np.asarray(xi0, float), (p.n, p.N)).copy()
    rho = np.zeros(p.m_total) if rho0 is None else np.asarray(rho0, float).reshape(p.m_total).copy()
    return SwarmState(x, xi, rho, 0.0)


@dataclass
class Telemetry:
    """Sampled trajectory plus channel bookkeeping.

    Per-edge arrays index ends as 0 = lower id, 1 = higher id, and lines
    as 0 = lo->hi, 1 = hi->lo. ``acc_*`` hold running integrals
    ``sum_{j<k} h * (.)`` over the port quantities up to (excluding) the
    sample's step. ``wave_sq``/``wave_sum`` summarize the waves in flight
    on each line right after the sample's exchange.
    """

    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    rho: np.ndarray
    h: float
    channel: str
    edges: tuple
    delay_steps: np.ndarray
    eta: np.ndarray
    port_r: Optional[np.ndarray] = None
    port_v: Optional[np.ndarray] = None
    acc_vr: Optional[np.ndarray] = None
    acc_v: Optional[np.ndarray] = None
    acc_r: Optional[np.ndarray] = None
    wave_sq: Optional[np.ndarray] = None
    wave_sum: Optional[np.ndarray] = None
    final: Optional[SwarmState] = None
    diverged: bool = False
    diverged_at: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    @property
    def num_samples(self) -> int:
        return len(self.t)

    def header(self) -> list[str]:
        n, N = self.x.shape[1:]
        cols = ["t"]
        cols += [f"x{i + 1}_{c + 1}" for i in range(n) for c in range(N)]
        cols += [f"xi{i + 1}_{c + 1}" for i in range(n) for c in range(N)]
        cols += [f"rho_{l + 1}" for l in range(self.rho.shape[1])]
        return cols

    def table(self) -> np.ndarray:
        S = self.num_samples
        return np.column_stack([self.t, self.x.reshape(S, -1), self.xi.reshape(S, -1), self.rho.reshape(S, -1)])

    def to_csv(self, path, extra: Optional[Mapping[str, np.ndarray]] = None) -> None:
        """Write the state columns plus any monitor channels in ``extra``."""
        cols = self.header()
        data = [self.table()]
        for name, series in (extra or {}).items():
            cols.append(name)
            data.append(np.asarray(series, float).reshape(-1, 1))
        np.savetxt(path, np.hstack(data), delimiter=",", header=",".join(cols), comments="", fmt="%.10g")


class Engine:
    """Explicit-Euler stepper holding the full coupled state and all delay lines."""

    def __init__(self, p: ProblemInstance, g: NetworkGraph, cfg: SimConfig, init: SwarmState):
        if g.n != p.n:
            raise ValueError(f"graph has {g.n} agents, problem has {p.n}")
        x0, xi0 = np.asarray(init.x, float), np.asarray(init.xi, float)
        if x0.shape != (p.n, p.N) or xi0.shape != (p.n, p.N):
            raise ValueError(f"initial x/xi must have shape {(p.n, p.N)}")
        rho0 = np.asarray(init.rho, float).reshape(-1)
        if rho0.shape[0] != p.m_total:
            raise ValueError(f"initial rho must have length {p.m_total}")
        if np.any(rho0 < 0):
            raise ValueError("initial multipliers must be nonnegative")
        if p.constrained and cfg.algorithm != "constrained":
            raise ValueError(f"problem has constraints; algorithm {cfg.algorithm!r} ignores them")

        self.p, self.g, self.cfg = p, g, cfg
        self.kern = get_backend(cfg.backend)
        n, N, E = p.n, p.N, g.num_edges
        self.X = np.zeros((n, 2, N))
        self.X[:, 0] = x0
        self.X[:, 1] = xi0
        self.rho = rho0.copy()
        self.k = 0
        self.halvings = 0

        integral = cfg.algorithm != "gradient-consensus"
        self.lo = np.array([e[0] for e in g.edges], dtype=np.int64)
        self.hi = np.array([e[1] for e in g.edges], dtype=np.int64)
        a = np.asarray(g.a, float)
        b = np.asarray(g.b, float) if integral else np.zeros(E)
        self.blk = np.zeros((E, 2, 2))
        self.blk[:, 0, 0] = a
        self.blk[:, 0, 1] = -b
        self.blk[:, 1, 0] = b
        etas = dict(cfg.eta_per_edge or {})
        self.eta = np.array([float(etas.get(e, cfg.eta)) for e in g.edges])
        I2 = np.eye(2)
        self.minv = np.zeros((E, 2, 2))
        for e in range(E):
            M = I2 + self.blk[e] / self.eta[e]
            if abs(np.linalg.det(M)) < 1e-12:
                raise SingularScatteringMatrix(f"edge {g.edges[e]}: I + E/eta is singular")
            self.minv[e] = np.linalg.inv(M)

        delays = dict(cfg.delays or {}) if cfg.channel != "none" else {}
        T = np.array([[delays.get((i, j), 0.0), delays.get((j, i), 0.0)] for i, j in g.edges]).reshape(E, 2)
        self.d = np.rint(T / cfg.h).astype(np.int64).reshape(E, 2)
        self.delay_error = float(np.max(np.abs(self.d * cfg.h - T))) if E else 0.0
        self.d_lh = np.ascontiguousarray(self.d[:, 0])
        self.d_hl = np.ascontiguousarray(self.d[:, 1])
        sizes = (self.d + 1).reshape(-1)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.off_lh = np.ascontiguousarray(starts[0::2])
        self.off_hl = np.ascontiguousarray(starts[1::2])
        P = int(sizes.sum())
        self.pool = np.zeros((P, 2, N))
        # slot -> line index (2e for lo->hi, 2e+1 for hi->lo), for window sums
        self.slot_line = np.repeat(np.arange(2 * E), sizes)
        self.line_ind = np.zeros((2 * E, P))
        self.line_ind[self.slot_line, np.arange(P)] = 1.0

        self.C = np.zeros((n, 2, N))
        self.port_r = np.zeros((E, 2, 2, N))
        self.port_v = np.zeros((E, 2, 2, N))
        self.acc_vr = np.zeros((E, 2))
        self.acc_v = np.zeros((E, 2, 2, N))
        self.acc_r = np.zeros((E, 2, 2, N))
        if cfg.channel == "none":
            self.LP = laplacian(g, "P")
            self.LI = laplacian(g, "I") if integral else np.zeros((n, n))

    @property
    def t(self) -> float:
        return self.k * self.cfg.h

    @property
    def x(self) -> np.ndarray:
        return self.X[:, 0]

    @property
    def xi(self) -> np.ndarray:
        return self.X[:, 1]

    def exchange(self) -> None:
        """Fill ``self.C`` with every agent's summed controller output at step k."""
        ch, K = self.cfg.channel, self.kern
        if ch == "none":
            x, xi = self.X[:, 0], self.X[:, 1]
            self.C[:, 0] = -self.LP @ x + self.LI @ xi
            self.C[:, 1] = -self.LI @ x
        elif ch == "scattering":
            K.scatter_exchange(
                self.k, self.X, self.lo, self.hi, self.blk, self.minv, self.eta, self.d_lh, self.d_hl,
                self.pool, self.off_lh, self.off_hl, self.C, self.port_r, self.port_v,
                self.acc_vr, self.acc_v, self.acc_r, self.cfg.h, float(self.cfg.decode_sign),
            )
        else:
            K.naive_exchange(
                self.k, self.X, self.lo, self.hi, self.blk, self.d_lh, self.d_hl,
                self.pool, self.off_lh, self.off_hl, self.C, self.port_r, self.port_v,
                self.acc_vr, self.acc_v, self.acc_r, self.cfg.h,
            )

    def window_sums(self) -> tuple[np.ndarray, np.ndarray]:
        """Squared-norm sum and vector sum of the waves in flight per line."""
        E = self.g.num_edges
        N = self.p.N
        flat = self.pool.reshape(self.pool.shape[0], -1)
        consumed = np.empty(2 * E, dtype=np.int64)
        consumed[0::2] = self.off_lh + (self.k + 1) % (self.d_lh + 1)
        consumed[1::2] = self.off_hl + (self.k + 1) % (self.d_hl + 1)
        sq = np.einsum("pc,pc->p", flat, flat)
        wsq = self.line_ind @ sq - sq[consumed]
        wsum = self.line_ind @ flat - flat[consumed]
        return wsq.reshape(E, 2), wsum.reshape(E, 2, 2, N)

    def rhs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        p, a = self.p, self.cfg.alpha
        x = self.X[:, 0]
        G = p.grad_stack(x)
        if p.constrained:
            G = G + p.jac_rho_stack(x, self.rho)
            drho = np.atleast_1d(psi(self.rho, p.cons_stack(x)))
        else:
            drho = np.zeros(0)
        return self.C[:, 0] - a * G, self.C[:, 1], drho

    def advance(self) -> None:
        """Euler update from the current coupling; halves the step if Q would lose definiteness."""
        dx, dxi, drho = self.rhs()
        h = self.cfg.h
        for _ in range(self.cfg.max_step_halvings + 1):
            x_new = self.X[:, 0] + h * dx
            margin = self.p.margin_stack(x_new)
            if margin is None or np.all(margin >= self.cfg.q_mineig_floor):
                break
            h *= 0.5
            self.halvings += 1
        else:
            raise StepRejectedPD(
                f"t={self.t:.6g}: domain margin {np.min(margin):.3e} below floor "
                f"{self.cfg.q_mineig_floor:g} after {self.cfg.max_step_halvings} halvings"
            )
        self.X[:, 0] = x_new
        self.X[:, 1] += h * dxi
        if drho.size:
            self.rho = np.maximum(self.rho + h * drho, 0.0)
        self.k += 1

    def step(self) -> None:
        self.exchange()
        self.advance()

    def blown_up(self) -> bool:
        m = max(np.max(np.abs(self.X)), np.max(np.abs(self.rho), initial=0.0))
        return not np.isfinite(m) or m > self.cfg.blowup_threshold

    def state(self) -> SwarmState:
        return SwarmState(self.X[:, 0].copy(), self.X[:, 1].copy(), self.rho.copy(), self.t)


def run(p: ProblemInstance, g: NetworkGraph, cfg: SimConfig, init: Optional[SwarmState] = None) -> Telemetry:
    """Simulate on ``[0, t_end]`` and return sampled telemetry.

    Divergence (state norm above ``cfg.blowup_threshold`` or non-finite)
    truncates the run and sets ``diverged``; it does not raise.
    """
    if init is None:
        init = initial_state(p, cfg.seed)
    eng = Engine(p, g, cfg, init)
    ports = cfg.channel != "none"
    rec = {k: [] for k in ("t", "x", "xi", "rho", "port_r", "port_v", "acc_vr", "acc_v", "acc_r", "wsq", "wsum")}

    def record(acc):
        rec["t"].append(eng.t)
        rec["x"].append(eng.X[:, 0].copy())
        rec["xi"].append(eng.X[:, 1].copy())
        rec["rho"].append(eng.rho.copy())
        if ports:
            rec["port_r"].append(eng.port_r.copy())
            rec["port_v"].append(eng.port_v.copy())
            for name, arr in zip(("acc_vr", "acc_v", "acc_r"), acc):
                rec[name].append(arr)
            if cfg.channel == "scattering":
                wsq, wsum = eng.window_sums()
                rec["wsq"].append(wsq)
                rec["wsum"].append(wsum)

    diverged_at = None
    n_steps = cfg.n_steps
    wall = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            acc = (eng.acc_vr.copy(), eng.acc_v.copy(), eng.acc_r.copy()) if ports else None
            eng.exchange()
            done = eng.k >= n_steps
            bad = eng.blown_up()
            if bad or done or eng.k % cfg.record_every == 0:
                record(acc)
            if bad:
                diverged_at = eng.t
                break
            if done:
                break
            eng.advance()
    wall = time.perf_counter() - wall

    def stack(name, shape):
        return np.array(rec[name]) if rec[name] else np.zeros((0, *shape))

    E, N = g.num_edges, p.N
    tel = Telemetry(
        t=np.array(rec["t"]),
        x=np.array(rec["x"]),
        xi=np.array(rec["xi"]),
        rho=np.array(rec["rho"]).reshape(len(rec["t"]), p.m_total),
        h=cfg.h,
        channel=cfg.channel,
        edges=g.edges,
        delay_steps=eng.d.copy(),
        eta=eng.eta.copy(),
        final=eng.state(),
        diverged=diverged_at is not None,
        diverged_at=diverged_at,
    )
    if ports:
        tel.port_r = stack("port_r", (E, 2, 2, N))
        tel.port_v = stack("port_v", (E, 2, 2, N))
        tel.acc_vr = stack("acc_vr", (E, 2))
        tel.acc_v = stack("acc_v", (E, 2, 2, N))
        tel.acc_r = stack("acc_r", (E, 2, 2, N))
        if cfg.channel == "scattering":
            tel.wave_sq = stack("wsq", (E, 2))
            tel.wave_sum = stack("wsum", (E, 2, 2, N))
    cfg_echo = asdict(cfg)
    if cfg_echo.get("delays"):
        cfg_echo["delays"] = {f"{i + 1}->{j + 1}": T for (i, j), T in cfg_echo["delays"].items()}
    if cfg_echo.get("eta_per_edge"):
        cfg_echo["eta_per_edge"] = {f"{i + 1}-{j + 1}": v for (i, j), v in cfg_echo["eta_per_edge"].items()}
    tel.metadata = {
        "problem": p.name,
        "backend": eng.kern.__name__.rsplit(".", 1)[-1],
        "steps": int(eng.k),
        "wall_time_s": wall,
        "delay_quantization_error": eng.delay_error,
        "step_halvings": int(eng.halvings),
        "config": cfg_echo,
    }
    return tel
