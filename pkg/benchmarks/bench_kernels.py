"""Compare the compiled and numpy channel-exchange kernels.

Times the per-step edge exchange alone (the part the kernels implement)
and a full simulation, for ring networks of several sizes.

    python3 benchmarks/bench_kernels.py --agents 5 20 50 --steps 20000
"""

import argparse
import time

import numpy as np

from passopt import kernels
from passopt.graph import ring_graph
from passopt.problem import quadratic_problem
from passopt.simulator import Engine, SimConfig, draw_delays, initial_state, run


def setup(n, N, channel, backend, h=1e-3, t_end=1.0, seed=0):
    g = ring_graph(n, 1.0, 3.0)
    rng = np.random.default_rng(seed)
    p = quadratic_problem(rng.uniform(0, 5, size=(n, N)))
    cfg = SimConfig(
        h=h,
        t_end=t_end,
        delays=draw_delays(g, 0.0, 1.0, seed),
        scattering_enabled=channel == "scattering",
        naive_delay_enabled=channel == "naive",
        backend=backend,
        record_every=1000,
    )
    return p, g, cfg


def time_exchange(n, N, channel, backend, steps):
    p, g, cfg = setup(n, N, channel, backend)
    eng = Engine(p, g, cfg, initial_state(p, 0))
    t0 = time.perf_counter()
    for _ in range(steps):
        eng.exchange()
        eng.k += 1  # advance the ring-buffer clock without integrating
    return (time.perf_counter() - t0) / steps


def time_run(n, N, channel, backend, t_end):
    p, g, cfg = setup(n, N, channel, backend, t_end=t_end)
    t0 = time.perf_counter()
    run(p, g, cfg)
    return time.perf_counter() - t0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=int, nargs="+", default=[5, 20, 50])
    ap.add_argument("--dim", type=int, default=2, help="decision dimension N")
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--t-end", type=float, default=10.0, help="horizon of the full-run timing")
    ap.add_argument("--channel", choices=["scattering", "naive"], default="scattering")
    args = ap.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    if "compiled" not in backends:
        print("compiled kernel not built; timing the numpy fallback only")
    print(f"channel={args.channel} N={args.dim} exchange steps={args.steps} run horizon={args.t_end}")
    print(f"{'agents':>6} {'backend':>9} {'us/exchange':>12} {'run [s]':>9}")
    for n in args.agents:
        row = {}
        for b in backends:
            ex = time_exchange(n, args.dim, args.channel, b, args.steps)
            rt = time_run(n, args.dim, args.channel, b, args.t_end)
            row[b] = (ex, rt)
            print(f"{n:6d} {b:>9} {ex * 1e6:12.2f} {rt:9.2f}")
        if len(row) == 2:
            print(f"{'':6} {'speedup':>9} {row['python'][0] / row['compiled'][0]:11.1f}x "
                  f"{row['python'][1] / row['compiled'][1]:8.1f}x")


if __name__ == "__main__":
    main()
