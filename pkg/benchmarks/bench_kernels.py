"""Time the numba and numpy kernel tables on representative inputs.

Usage::

    python3 benchmarks/bench_kernels.py [--nodes 401] [--repeat 50] [--solve game_uv]

Both tables are importable regardless of ``FBSDEGAME_NUMBA``; outputs are
compared before timing so a mismatch aborts the run.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fbsdegame import _kernels


def _inputs(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    dx = 8.0 / (n - 1)
    x_min = -4.0
    dt = 0.2 * dx * dx
    drift = rng.uniform(-1, 1, n)
    vol = rng.uniform(0.1, 1.0, n)
    shifts = np.stack([np.full(n, -0.37), np.full(n, 0.81)], axis=1)
    lam = np.array([0.5, 0.5])
    y = np.sin(np.linspace(-4, 4, n)) + rng.normal(0, 0.01, n)
    st = _kernels.JIT["build_stencil"](x_min, dx, n, dt, drift, vol, shifts, lam)
    idx, w, jlo, jfrac = st[0], st[1], st[2], st[3]
    jw = lam * dt
    s = (np.linspace(-4, 4, n)[:, None] + shifts - x_min) / dx
    lo, fr, _ = _kernels.JIT["locate"](s, n)
    return {
        "locate": (s, n),
        "gather": (y, lo, fr),
        "build_stencil": (x_min, dx, n, dt, drift, vol, shifts, lam),
        "apply_stencil": (y, idx, w, jlo, jfrac, jw),
        "regression_slope": (y, x_min, dx, idx, w),
        "hjbi_operator": (y, dx, 0.5 * vol * vol, drift),
    }


def _same(a, b) -> bool:
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.array_equal(np.asarray(p), np.asarray(q)) for p, q in zip(a, b))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=401)
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--solve", metavar="CONFIG", help="also time a full lower-value solve per backend")
    args = ap.parse_args(argv)
    args_by_kernel = _inputs(args.nodes)
    print(f"{'kernel':<18}{'numba [us]':>12}{'numpy [us]':>12}{'speed-up':>10}")
    for name, a in args_by_kernel.items():
        jit, ref = _kernels.JIT[name], _kernels.NUMPY[name]
        if not _same(jit(*a), ref(*a)):
            raise SystemExit(f"{name}: numba and numpy outputs differ")
        t_jit = min(timeit.repeat(lambda: jit(*a), number=args.repeat, repeat=3)) / args.repeat * 1e6
        t_np = min(timeit.repeat(lambda: ref(*a), number=args.repeat, repeat=3)) / args.repeat * 1e6
        print(f"{name:<18}{t_jit:>12.1f}{t_np:>12.1f}{t_np / t_jit:>10.2f}")
    if args.solve:
        _solve(args.solve)
    return 0


_SOLVE = """
import time
from fbsdegame import backend, game
from fbsdegame.config import read_config
pb = game.problem_from_config(read_config({path!r}))
game.lower_value(pb)
t0 = time.perf_counter()
w = game.lower_value(pb).values
print(backend(), time.perf_counter() - t0, float(w[0].sum()))
"""


def _solve(path: str) -> None:
    if not os.path.exists(path):
        # a bare name refers to a shipped configuration
        import fbsdegame
        path = os.path.join(os.path.dirname(fbsdegame.__file__), "configs", path.removesuffix(".cfg") + ".cfg")
    # fresh interpreters, since the backend is fixed at import time
    for flag in ("1", "0"):
        env = dict(os.environ, FBSDEGAME_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", _SOLVE.format(path=path)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"solve {os.path.basename(path)} [{out[0]}]: {float(out[1]):.3f} s (checksum {out[2]})")


if __name__ == "__main__":
    raise SystemExit(main())
