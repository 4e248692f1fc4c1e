"""Compare the compiled and pure-Python integration backends.

Runs the same DOP853 integrations through both kernels, checks that they agree
bit for bit, and prints wall-clock times and the speed-up.

    python benchmarks/bench_core.py [--periods 20] [--repeat 3]
"""
from __future__ import annotations

import argparse
import math
import time

import numpy as np

from apsidal import core
from apsidal.model import PerturbationSpec, SystemSpec, build_system
from apsidal.dynamics import section_lift
from apsidal.timemaps import radial_period

CASES = (
    ("kepler", SystemSpec.kepler(1.0), None, -0.125, 1.0),
    ("levi_civita+field", SystemSpec.levi_civita(1.0, 0.1),
     PerturbationSpec.hamiltonian("-r*cos(theta)", 1e-3), -0.3, 0.6),
    ("schwarzschild+metric", SystemSpec.schwarzschild(1.0, 0.98),
     PerturbationSpec.metric(l11="0.1*cos(2*theta)", epsilon=1e-3), -0.5, 4.3),
)


def _time(fn, repeat):
    best = math.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_integrate(periods: int, repeat: int):
    rows = []
    for name, spec, pert, H, L in CASES:
        system = build_system(spec, pert)
        y0 = section_lift(spec, pert, 0.0, L, H)
        t_end = periods * radial_period(spec, H, L)
        lo, hi = spec.domain

        def run(backend):
            return lambda: backend.integrate(system.program, y0, 0.0, t_end, 1e-12, 1e-12, 0.0, lo, hi,
                                             0, False, 10_000_000)

        t_fast, out_fast = _time(run(core.compiled), repeat)
        t_slow, out_slow = _time(run(core.pure), 1)
        same = bool(np.array_equal(out_fast["y"], out_slow["y"]) and out_fast["n_steps"] == out_slow["n_steps"])
        rows.append((name, out_fast["n_steps"], t_fast, t_slow, same))
    return rows


def bench_eval(n: int, repeat: int):
    system = build_system(SystemSpec.schwarzschild(1.0, 0.98), PerturbationSpec.metric(l33="0.1*r^2*cos(theta)",
                                                                                      epsilon=1e-3))
    y = np.array([10.0, 0.3, 0.01, 4.2])

    def loop(backend):
        def f():
            for _ in range(n):
                backend.eval_program(system.program, y)
        return f

    t_fast, _ = _time(loop(core.compiled), repeat)
    t_slow, _ = _time(loop(core.pure), 1)
    return t_fast, t_slow


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--periods", type=int, default=20, help="radial periods per integration")
    ap.add_argument("--repeat", type=int, default=3, help="best-of repeats for the compiled backend")
    ap.add_argument("--evals", type=int, default=20000, help="Hamiltonian evaluations")
    args = ap.parse_args(argv)
    if core.compiled is None:
        raise SystemExit("compiled backend not built; run `pip install -e . --no-build-isolation` first")

    print(f"{'case':<24}{'steps':>8}{'compiled [s]':>14}{'python [s]':>12}{'speed-up':>10}  identical")
    for name, steps, tf, ts, same in bench_integrate(args.periods, args.repeat):
        print(f"{name:<24}{steps:>8d}{tf:>14.4f}{ts:>12.3f}{ts / tf:>10.1f}  {same}")
    tf, ts = bench_eval(args.evals, args.repeat)
    print(f"{'eval_program x' + str(args.evals):<24}{'':>8}{tf:>14.4f}{ts:>12.3f}{ts / tf:>10.1f}")


if __name__ == "__main__":
    main()
