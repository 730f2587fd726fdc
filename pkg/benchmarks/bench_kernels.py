"""Compare the compiled and pure-Python no-click kernels.

Run with ``python benchmarks/bench_kernels.py [--cutoff 20] [--batch 5]``.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from spdiqkd import _kernels_py

try:
    from spdiqkd import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def _inputs(batch: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    rows = np.column_stack(
        [
            rng.uniform(0, 0.47, batch),
            rng.uniform(-np.pi, np.pi, batch),
            rng.uniform(0, 0.9, batch),
            rng.uniform(-np.pi, np.pi, batch),
        ]
    )
    lam = np.full(batch, 0.05)
    return np.ascontiguousarray(rows), lam


def run(cutoff: int, batch: int, repeat: int) -> dict:
    rows, lam = _inputs(batch)
    out = {}
    backends = [("python", _kernels_py.noclick_blocks)]
    if _kernels_c is not None:
        backends.insert(0, ("cython", _kernels_c.noclick_blocks))
    ref = _kernels_py.noclick_blocks(rows, lam, cutoff)
    for name, fn in backends:
        timer = timeit.Timer(lambda: fn(rows, lam, cutoff))
        loops, _ = timer.autorange()
        best = min(timer.repeat(repeat, loops)) / loops
        err = float(np.max(np.abs(fn(rows, lam, cutoff) - ref)))
        out[name] = (best, err)
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cutoff", type=int, default=20)
    ap.add_argument("--batch", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    res = run(args.cutoff, args.batch, args.repeat)
    print(f"cutoff={args.cutoff} batch={args.batch}")
    for name, (t, err) in res.items():
        print(f"{name:>7}: {t * 1e6:10.1f} us/call   max|diff| vs python = {err:.2e}")
    if "cython" in res:
        print(f"speed-up: {res['python'][0] / res['cython'][0]:.1f}x")


if __name__ == "__main__":
    main()
