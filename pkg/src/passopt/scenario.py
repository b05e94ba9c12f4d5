"""Scenario files: schema validation, normalization and object builders.

A scenario is a YAML mapping with the sections ``graph``, ``problem``,
``algorithm``, ``sim``, ``channel``, ``init``, ``criteria`` and
``output`` (all but ``problem`` optional). Agent ids are 1-based in
files and 0-based everywhere else. See ``README.md`` for the full key
list; bundled examples live in ``passopt/presets``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import graph as graphmod
from .problem import (
    constrained_quadratic_problem,
    localization2d_problem,
    partial_quadratic_problem,
    quadratic_problem,
)
from .simulator import ALGORITHMS, CHANNELS, SimConfig, draw_delays, initial_state

FAMILIES = ("quadratic", "partial_quadratic", "constrained_quadratic", "localization2d")
PRESET_ALIASES = {"fig10_quadratic": "fig10_delayfree"}

_SECTIONS = {
    "name": None,
    "description": None,
    "graph": {"preset", "n", "a", "b", "edges"},
    "problem": {
        "family", "targets", "weights", "coords", "N", "constraints", "slater_point",
        "segments", "halfplanes", "w",
    },
    "algorithm": None,
    "sim": {"h", "t_end", "alpha", "seed", "record_every", "blowup_threshold", "q_mineig_floor", "backend"},
    "channel": {"mode", "eta", "delays"},
    "init": {"x", "xi", "seed"},
    "criteria": {"optimality_gap", "kkt", "constraint", "dissipation"},
    "output": {"dir"},
}

_DEFAULTS = {
    "graph": {"preset": "ring", "a": 1.0, "b": 3.0},
    "algorithm": "pi-consensus",
    "sim": {"h": 1e-3, "t_end": 50.0, "alpha": 2.0, "seed": 0, "record_every": 10,
            "blowup_threshold": 1e9, "q_mineig_floor": 1e-6, "backend": None},
    "channel": {"mode": "none", "eta": 1.0, "delays": None},
    "init": {"x": "random", "xi": "zeros", "seed": None},
    "criteria": {"optimality_gap": 1e-3, "kkt": None, "constraint": None, "dissipation": False},
    "output": {"dir": None},
}


class SchemaError(ValueError):
    """All problems found in a scenario, reported together."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(self.errors))


@dataclass
class Scenario:
    name: str
    description: str
    graph: dict
    problem: dict
    algorithm: str
    sim: dict
    channel: dict
    init: dict
    criteria: dict
    output: dict

    def to_dict(self) -> dict:
        return copy.deepcopy(
            {
                "name": self.name,
                "description": self.description,
                "graph": self.graph,
                "problem": self.problem,
                "algorithm": self.algorithm,
                "sim": self.sim,
                "channel": self.channel,
                "init": self.init,
                "criteria": self.criteria,
                "output": self.output,
            }
        )


# --- parsing ---------------------------------------------------------------


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_positive(errs, where, v, strict=True):
    if not _num(v) or (v <= 0 if strict else v < 0):
        errs.append(f"{where} must be a {'positive' if strict else 'nonnegative'} number (got {v!r})")


def _validate_delays(errs, d):
    if d is None:
        return
    if not isinstance(d, dict) or len(d) != 1:
        errs.append("channel.delays must have exactly one of: uniform, pairs, random")
        return
    (kind, val), = d.items()
    if kind == "uniform":
        _check_positive(errs, "channel.delays.uniform", val, strict=False)
    elif kind == "pairs":
        if not isinstance(val, list) or not all(isinstance(r, list) and len(r) == 4 for r in val):
            errs.append("channel.delays.pairs must be a list of [i, j, T_ij, T_ji]")
        else:
            for r in val:
                if not (_num(r[2]) and _num(r[3]) and r[2] >= 0 and r[3] >= 0):
                    errs.append(f"channel.delays.pairs entry {r} has a negative or non-numeric delay")
    elif kind == "random":
        if not isinstance(val, dict) or not set(val) <= {"low", "high", "seed"}:
            errs.append("channel.delays.random takes keys low, high and optional seed")
        else:
            lo, hi = val.get("low", 0.0), val.get("high", 1.0)
            if not (_num(lo) and _num(hi) and 0 <= lo <= hi):
                errs.append(f"channel.delays.random needs 0 <= low <= high (got {lo}, {hi})")
    else:
        errs.append(f"channel.delays kind {kind!r} unknown; valid: uniform, pairs, random")


def _validate_problem(errs, pr):
    fam = pr.get("family")
    if fam not in FAMILIES:
        errs.append(f"problem.family {fam!r} unknown; valid: {', '.join(FAMILIES)}")
        return
    if fam in ("quadratic", "constrained_quadratic", "partial_quadratic") and "targets" not in pr:
        errs.append(f"problem.targets is required for {fam}")
    if fam == "partial_quadratic":
        for k in ("coords", "N"):
            if k not in pr:
                errs.append(f"problem.{k} is required for partial_quadratic")
    if fam == "constrained_quadratic":
        if "slater_point" not in pr:
            errs.append("problem.slater_point is required for constrained_quadratic")
        for c in pr.get("constraints") or []:
            if not isinstance(c, dict) or not set(c) <= {"agent", "A", "b"} or not {"agent", "A", "b"} <= set(c):
                errs.append(f"problem.constraints entries need keys agent, A, b (got {c!r})")
    if fam == "localization2d":
        for k in ("segments", "halfplanes"):
            if k not in pr:
                errs.append(f"problem.{k} is required for localization2d")


def validate(raw: Any) -> Scenario:
    """Normalize a parsed mapping into a :class:`Scenario` or raise :class:`SchemaError`."""
    errs: list[str] = []
    if not isinstance(raw, dict):
        raise SchemaError(["scenario must be a mapping"])
    for key in raw:
        if key not in _SECTIONS:
            errs.append(f"unknown top-level key {key!r}")
    for sec, allowed in _SECTIONS.items():
        if allowed is None or sec not in raw:
            continue
        if not isinstance(raw[sec], dict):
            errs.append(f"section {sec!r} must be a mapping")
            continue
        for key in raw[sec]:
            if key not in allowed:
                errs.append(f"unknown key {sec}.{key}")

    def section(name):
        out = dict(_DEFAULTS.get(name, {}))
        if isinstance(raw.get(name), dict):
            out.update(raw[name])
        return out

    gr, pr, sim, ch, ini, cri, out = (section(s) for s in
                                      ("graph", "problem", "sim", "channel", "init", "criteria", "output"))
    alg = raw.get("algorithm", _DEFAULTS["algorithm"])
    if alg not in ALGORITHMS:
        errs.append(f"algorithm {alg!r} unknown; valid: {', '.join(ALGORITHMS)}")

    if "problem" not in raw:
        errs.append("section 'problem' is required")
    else:
        _validate_problem(errs, pr)

    if "edges" in gr:
        if not isinstance(gr["edges"], list) or not all(isinstance(e, list) and len(e) == 4 for e in gr["edges"]):
            errs.append("graph.edges must be a list of [i, j, a, b]")
    elif gr.get("preset") not in graphmod.PRESETS:
        errs.append(f"graph.preset {gr.get('preset')!r} unknown; valid: {', '.join(graphmod.PRESETS)}")
    for k in ("a", "b"):
        _check_positive(errs, f"graph.{k}", gr.get(k))
    if "n" in gr and (not isinstance(gr["n"], int) or gr["n"] < 1):
        errs.append(f"graph.n must be a positive integer (got {gr['n']!r})")

    for k in ("h", "t_end", "alpha", "blowup_threshold", "q_mineig_floor"):
        _check_positive(errs, f"sim.{k}", sim.get(k))
    if _num(sim.get("h")) and _num(sim.get("t_end")) and sim["t_end"] < sim["h"]:
        errs.append("sim.t_end must be >= sim.h")
    if not isinstance(sim.get("record_every"), int) or sim["record_every"] < 1:
        errs.append("sim.record_every must be a positive integer")
    if not isinstance(sim.get("seed"), int) or sim["seed"] < 0:
        errs.append("sim.seed must be a nonnegative integer")
    if sim.get("backend") not in (None, "auto", "compiled", "python"):
        errs.append("sim.backend must be one of auto, compiled, python")

    if ch.get("mode") not in CHANNELS:
        errs.append(f"channel.mode {ch.get('mode')!r} unknown; valid: {', '.join(CHANNELS)}")
    _check_positive(errs, "channel.eta", ch.get("eta"))
    _validate_delays(errs, ch.get("delays"))
    if ch.get("mode") in ("naive", "scattering") and ch.get("delays") is None:
        ch["delays"] = {"uniform": 0.0}

    for k in ("optimality_gap", "kkt", "constraint"):
        if cri.get(k) is not None:
            _check_positive(errs, f"criteria.{k}", cri[k])
    if not isinstance(cri.get("dissipation"), bool):
        errs.append("criteria.dissipation must be true or false")

    if ini.get("x") != "random" and not isinstance(ini.get("x"), list):
        errs.append("init.x must be 'random' or a list of per-agent vectors")
    if ini.get("xi") != "zeros" and not isinstance(ini.get("xi"), list):
        errs.append("init.xi must be 'zeros' or a list")

    if errs:
        raise SchemaError(errs)
    s = Scenario(
        name=str(raw.get("name", "scenario")),
        description=str(raw.get("description", "")),
        graph=gr, problem=pr, algorithm=alg, sim=sim, channel=ch, init=ini, criteria=cri, output=out,
    )
    # object-level checks (graph connectivity, SPD weights, ...)
    try:
        g = build_graph(s)
        p = build_problem(s)
        if g.n != p.n:
            errs.append(f"graph has {g.n} agents but the problem defines {p.n}")
    except (ValueError, TypeError, IndexError) as exc:
        errs.append(f"{type(exc).__name__}: {exc}")
    if errs:
        raise SchemaError(errs)
    return s


def parse_scenario(path) -> Scenario:
    """Read and validate a YAML scenario file or a bundled preset name."""
    p = Path(path)
    if not p.exists():
        name = PRESET_ALIASES.get(str(path), str(path))
        if name in list_presets():
            return load_preset(name)
        raise FileNotFoundError(f"no scenario file or preset named {path!r}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise SchemaError([f"YAML syntax error: {exc}"]) from None
    return validate(raw)


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(s.to_dict(), sort_keys=False)


def list_presets() -> dict[str, str]:
    """Bundled preset names mapped to their one-line descriptions."""
    out = {}
    for f in sorted(resources.files("passopt.presets").iterdir(), key=lambda f: f.name):
        if f.name.endswith(".yaml"):
            raw = yaml.safe_load(f.read_text())
            out[f.name[:-5]] = str(raw.get("description", ""))
    return out


def load_preset(name: str) -> Scenario:
    name = PRESET_ALIASES.get(name, name)
    f = resources.files("passopt.presets") / f"{name}.yaml"
    if not f.is_file():
        raise FileNotFoundError(f"no bundled preset {name!r}; have {', '.join(list_presets())}")
    return validate(yaml.safe_load(f.read_text()))


# --- builders ----------------------------------------------------------------


def _problem_agents(pr: dict) -> Optional[int]:
    for k in ("targets", "segments"):
        if k in pr:
            return len(pr[k])
    return None


def build_graph(s: Scenario) -> graphmod.NetworkGraph:
    gr = s.graph
    if "edges" in gr:
        n = gr.get("n") or _problem_agents(s.problem)
        return graphmod.build_graph(n, [(i - 1, j - 1, a, b) for i, j, a, b in gr["edges"]])
    n = gr.get("n") or _problem_agents(s.problem)
    return graphmod.PRESETS[gr["preset"]](n, gr["a"], gr["b"])


def build_problem(s: Scenario):
    pr = s.problem
    fam = pr["family"]
    if fam == "quadratic":
        return quadratic_problem(np.asarray(pr["targets"], float), pr.get("weights"))
    if fam == "partial_quadratic":
        return partial_quadratic_problem([c - 1 for c in pr["coords"]], pr["targets"], pr["N"])
    if fam == "constrained_quadratic":
        C = np.asarray(pr["targets"], float)
        n, N = C.shape
        A = [np.zeros((0, N)) for _ in range(n)]
        b = [np.zeros(0) for _ in range(n)]
        for c in pr.get("constraints") or []:
            i = c["agent"] - 1
            A[i] = np.vstack([A[i], np.asarray(c["A"], float).reshape(-1, N)])
            b[i] = np.concatenate([b[i], np.asarray(c["b"], float).reshape(-1)])
        return constrained_quadratic_problem(C, pr.get("weights"), A, b, pr["slater_point"])
    segs = [tuple(map(tuple, sg)) for sg in pr["segments"]]
    H = [[(hp["normal"], hp["offset"]) for hp in row] for row in pr["halfplanes"]]
    return localization2d_problem(segs, H, pr.get("w", 1.0))


def build_delays(s: Scenario, g: graphmod.NetworkGraph) -> Optional[dict]:
    d = s.channel.get("delays")
    if d is None or s.channel["mode"] == "none":
        return None
    (kind, val), = d.items()
    if kind == "uniform":
        return {k: float(val) for i, j in g.edges for k in ((i, j), (j, i))}
    if kind == "pairs":
        out = {}
        for i, j, tij, tji in val:
            out[(i - 1, j - 1)] = float(tij)
            out[(j - 1, i - 1)] = float(tji)
        return out
    seed = val.get("seed", s.sim["seed"])
    return draw_delays(g, val.get("low", 0.0), val.get("high", 1.0), seed)


def build_config(s: Scenario, g: graphmod.NetworkGraph) -> SimConfig:
    sim, ch = s.sim, s.channel
    return SimConfig(
        h=float(sim["h"]),
        t_end=float(sim["t_end"]),
        alpha=float(sim["alpha"]),
        eta=float(ch["eta"]),
        algorithm=s.algorithm,
        scattering_enabled=ch["mode"] == "scattering",
        naive_delay_enabled=ch["mode"] == "naive",
        delays=build_delays(s, g),
        seed=int(sim["seed"]),
        q_mineig_floor=float(sim["q_mineig_floor"]),
        record_every=int(sim["record_every"]),
        blowup_threshold=float(sim["blowup_threshold"]),
        backend=sim.get("backend"),
    )


def build_init(s: Scenario, p):
    ini = s.init
    seed = ini["seed"] if ini.get("seed") is not None else s.sim["seed"]
    st = initial_state(p, seed, None if ini["xi"] == "zeros" else ini["xi"])
    if ini["x"] != "random":
        st.x = np.broadcast_to(np.asarray(ini["x"], float), (p.n, p.N)).copy()
    return st


def set_path(d: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted key path such as ``sim.alpha``."""
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        if cur.get(k) is None:
            cur[k] = {}
        cur = cur[k]
    cur[keys[-1]] = value
