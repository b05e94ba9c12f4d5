"""Command-line front end.

Exit codes of ``run``: 0 when the run meets the scenario's criteria,
2 when the state diverged, 1 on errors or unmet criteria.
"""

from __future__ import annotations

import argparse
import copy
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import monitors
from .oracle import solve
from .scenario import (
    SchemaError,
    Scenario,
    build_config,
    build_graph,
    build_init,
    build_problem,
    list_presets,
    parse_scenario,
    set_path,
    validate,
)
from .simulator import StepRejectedPD, run

log = logging.getLogger("passopt")

EXIT_OK, EXIT_FAIL, EXIT_DIVERGED = 0, 1, 2


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _float(v):
    v = float(v)
    return v if np.isfinite(v) else None


def run_scenario(s: Scenario, out_dir=None, quiet: bool = False) -> tuple[int, dict]:
    """Simulate one scenario, write ``telemetry.csv`` and ``summary.json``.

    Returns the exit code and the summary dictionary.
    """
    g = build_graph(s)
    p = build_problem(s)
    cfg = build_config(s, g)
    oracle = solve(p, g, cfg.alpha)
    summary: dict = {"name": s.name, "scenario": s.to_dict()}
    try:
        tel = run(p, g, cfg, build_init(s, p))
    except StepRejectedPD as exc:
        summary.update(error=str(exc), exit_code=EXIT_FAIL)
        return EXIT_FAIL, summary

    conv = monitors.convergence_metrics(tel, oracle, p)
    term = conv.terminal()
    cri = s.criteria
    checks: dict[str, bool] = {}
    if cri.get("optimality_gap") is not None:
        checks["optimality_gap"] = term["optimality_gap"] <= cri["optimality_gap"]
    if cri.get("kkt") is not None:
        checks["kkt"] = max(conv.kkt[-1]) <= cri["kkt"]
    if cri.get("constraint") is not None and p.constrained:
        checks["constraint"] = float(np.max(p.cons_stack(tel.final.x))) <= cri["constraint"]
    diss = {}
    if not tel.diverged:
        diss = monitors.run_all_checks(tel, p, g, cfg.alpha, oracle, s.algorithm)
        if cri.get("dissipation"):
            checks["dissipation"] = all(r.passed for r in diss.values())
    checks["rho_nonnegative"] = bool(np.all(tel.rho >= 0))

    if tel.diverged:
        code = EXIT_DIVERGED
    else:
        code = EXIT_OK if all(checks.values()) else EXIT_FAIL

    summary.update(
        exit_code=code,
        diverged=tel.diverged,
        diverged_at=tel.diverged_at,
        converged=code == EXIT_OK,
        checks=checks,
        terminal={k: _float(v) for k, v in term.items()},
        dissipation={
            k: {"passed": r.passed, "max_violation": _float(r.max_violation), "tol": r.tol,
                "min_storage": _float(r.min_storage)}
            for k, r in diss.items()
        },
        oracle={
            "z_star": oracle.z_star,
            "lambda_star": oracle.lambda_star,
            "xi_star": oracle.xi_star,
            "residual": oracle.achieved_residual,
            "method": oracle.method,
        },
        metadata=tel.metadata,
    )

    out = Path(out_dir or s.output.get("dir") or Path("runs") / s.name)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"consensus_error": conv.consensus_error, "optimality_gap": conv.optimality_gap}
    for j, name in enumerate(monitors.ConvergenceMetrics.KKT_FIELDS):
        extra[f"kkt_{name}"] = conv.kkt[:, j]
    tel.to_csv(out / "telemetry.csv", extra)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_jsonable))
    summary["output_dir"] = str(out)
    if not quiet:
        status = {EXIT_OK: "converged", EXIT_DIVERGED: f"diverged at t={tel.diverged_at}",
                  EXIT_FAIL: "criteria not met"}[code]
        print(f"{s.name}: {status}; gap={term['optimality_gap']:.3e} "
              f"consensus={term['consensus_error']:.3e} -> {out}")
    return code, summary


# --- sweeps ------------------------------------------------------------------


def parse_grid(spec: str | None) -> list[tuple[str, list]]:
    """``"sim.alpha=1,2;channel.eta=0.5,1"`` -> [(key, values), ...].

    An integer range ``a:b`` expands to ``a, a+1, ..., b-1``.
    """
    if not spec:
        return []
    out = []
    for part in filter(None, (s.strip() for s in spec.split(";"))):
        if "=" not in part:
            raise ValueError(f"grid entry {part!r} must look like key=v1,v2")
        key, vals = part.split("=", 1)
        vals = vals.strip()
        if ":" in vals and "," not in vals:
            a, b = (int(v) for v in vals.split(":"))
            values = list(range(a, b))
        else:
            values = [yaml.safe_load(v) for v in vals.split(",")]
        out.append((key.strip(), values))
    return out


def _run_cell(args):
    raw, out_dir = args
    try:
        code, summ = run_scenario(validate(raw), out_dir, quiet=True)
    except Exception as exc:  # one bad cell should not sink the sweep
        return {"exit_code": EXIT_FAIL, "error": f"{type(exc).__name__}: {exc}"}
    return {
        "exit_code": code,
        "diverged": summ.get("diverged"),
        "converged": summ.get("converged"),
        "optimality_gap": summ.get("terminal", {}).get("optimality_gap"),
    }


def sweep(base: Scenario, grid: list[tuple[str, list]], out_dir, jobs: int = 1) -> list[dict]:
    keys = [k for k, _ in grid]
    combos = list(itertools.product(*[v for _, v in grid])) if grid else [()]
    out_dir = Path(out_dir)
    tasks = []
    for c, vals in enumerate(combos):
        raw = copy.deepcopy(base.to_dict())
        for k, v in zip(keys, vals):
            set_path(raw, k, v)
        tasks.append((raw, str(out_dir / f"cell_{c:03d}")))
    for raw, _ in tasks:  # fail fast on schema errors before running anything
        validate(raw)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    rows = []
    for c, (vals, res) in enumerate(zip(combos, results)):
        row = {"cell": c, **dict(zip(keys, vals)), **res}
        rows.append(row)
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = list(dict.fromkeys(k for r in rows for k in r))
    with open(out_dir / "sweep.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join("" if r.get(k) is None else str(r.get(k)) for k in cols) + "\n")
    return rows


# --- entry point -------------------------------------------------------------


def _apply_overrides(s: Scenario, args) -> Scenario:
    raw = s.to_dict()
    if getattr(args, "seed", None) is not None:
        raw["sim"]["seed"] = args.seed
    if getattr(args, "h", None) is not None:
        raw["sim"]["h"] = args.h
    return validate(raw)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="passopt", description=__doc__.splitlines()[0] or None)
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("scenario", help="YAML scenario file or bundled preset name")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override sim.seed")
        sp.add_argument("--h", type=float, help="override the step size")
        sp.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="simulate one scenario"))
    sw = sub.add_parser("sweep", help="run a scenario over a parameter grid")
    common(sw)
    sw.add_argument("--grid", default="", help='e.g. "channel.eta=0.5,1,2;sim.seed=0:10"')
    sw.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    orc = sub.add_parser("oracle", help="print the centralized solution")
    orc.add_argument("scenario")
    orc.add_argument("--quiet", action="store_true")
    pr = sub.add_parser("presets", help="bundled scenarios")
    pr.add_argument("action", choices=["list"])
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd == "presets":
            for name, desc in list_presets().items():
                print(f"{name:24s} {desc}")
            return EXIT_OK
        s = parse_scenario(args.scenario)
        if args.cmd == "oracle":
            g, p = build_graph(s), build_problem(s)
            sol = solve(p, g, float(s.sim["alpha"]))
            print(json.dumps({"z_star": sol.z_star, "lambda_star": sol.lambda_star, "xi_star": sol.xi_star,
                              "residual": sol.achieved_residual, "method": sol.method},
                             indent=2, default=_jsonable))
            return EXIT_OK
        s = _apply_overrides(s, args)
        if args.cmd == "run":
            code, _ = run_scenario(s, args.out, args.quiet)
            return code
        rows = sweep(s, parse_grid(args.grid), args.out or Path("runs") / f"{s.name}_sweep", args.jobs)
        if not args.quiet:
            for r in rows:
                print(" ".join(f"{k}={v}" for k, v in r.items()))
            print(f"{sum(bool(r.get('diverged')) for r in rows)}/{len(rows)} cells diverged")
        return EXIT_FAIL if any("error" in r for r in rows) else EXIT_OK
    except (SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:  # anything unexpected still maps to exit 1
        log.exception("run failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
