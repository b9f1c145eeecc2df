"""Time the compiled and pure-Python scoring kernels on the same inputs.

Usage: python benchmarks/bench_kernels.py [--n 600] [--repeat 200]
"""
import argparse
import timeit

import numpy as np

from bmdl import kernels
from bmdl.simulate import load_scenario, simulate_series


def max_abs_diff(a, b):
    """Largest absolute difference over the numeric outputs of two kernel calls."""
    return max(float(np.max(np.abs(np.asarray(u, dtype=float) - np.asarray(v, dtype=float))))
               for u, v in zip(a, b))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=600)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--scenario", default="scenarios/table1_k2.toml")
    args = ap.parse_args()

    sc = load_scenario(args.scenario, n=args.n)
    data = simulate_series(sc, 0)
    x1 = np.ascontiguousarray(data.values[:, 0])
    x2 = np.ascontiguousarray(data.values[:, 1])
    season = np.arange(data.n, dtype=np.int64) % data.period
    c1 = np.asarray(sc.changepoints[0], dtype=np.int64)
    c2 = np.asarray(sc.changepoints[1], dtype=np.int64)
    T, p = data.period, data.ar_order

    impls = [("python", kernels.python)]
    if kernels.compiled is not None:
        impls.append(("compiled", kernels.compiled))
    else:
        print("compiled kernels not built; timing the fallback only")

    cases = {
        "uni_terms": lambda k: k.uni_terms(x1, season, c1, T, p, 5.0),
        "bi_terms": lambda k: k.bi_terms(x1, x2, season, c1, c2, T, p, 5.0),
    }
    print(f"N={data.n} p={p} T={T}; microseconds per call (best of 3)")
    print(f"{'kernel':<12}" + "".join(f"{name:>12}" for name, _ in impls) + f"{'speedup':>10}")
    for case, fn in cases.items():
        times = []
        for _, k in impls:
            t = min(timeit.repeat(lambda: fn(k), number=args.repeat, repeat=3)) / args.repeat
            times.append(t * 1e6)
        speed = f"{times[0] / times[-1]:>9.1f}x" if len(times) > 1 else ""
        print(f"{case:<12}" + "".join(f"{t:>12.1f}" for t in times) + speed)
        if len(impls) > 1:
            diff = max_abs_diff(fn(impls[0][1]), fn(impls[1][1]))
            print(f"{'':<12}max abs diff {diff:.2e}")


if __name__ == "__main__":
    main()
