"""Numba vs numpy timings for the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 20]

The numba variants are compiled once before timing.  Set WEARCAP_NUMBA=0
to make the package itself use the numpy variants.
"""
import argparse
import json
import timeit

import numpy as np

from wearcap import kernels


def cases(rng):
    a = rng.integers(0, 30, 24)
    b = rng.integers(0, 30, 20)
    long_a = rng.integers(0, 50, 400)
    long_b = rng.integers(0, 50, 400)
    x = rng.normal(size=(64, 128))
    gamma, beta = rng.normal(size=128), rng.normal(size=128)
    dout = rng.normal(size=(64, 128))
    _, xhat, rstd = kernels.ln_forward_numpy(x, gamma, beta, kernels.LN_EPS)
    return {
        "lcs caption (24x20)": (kernels.lcs_length_numba, kernels.lcs_length_numpy, (a, b)),
        "lcs long (400x400)": (kernels.lcs_length_numba, kernels.lcs_length_numpy, (long_a, long_b)),
        "layernorm fwd (64x128)": (kernels.ln_forward_numba, kernels.ln_forward_numpy,
                                   (x, gamma, beta, kernels.LN_EPS)),
        "layernorm bwd (64x128)": (kernels.ln_backward_numba, kernels.ln_backward_numpy,
                                   (dout, xhat, rstd, gamma)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--number", type=int, default=50)
    ap.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = ap.parse_args(argv)

    rows = []
    for name, (fast, slow, call_args) in cases(np.random.default_rng(0)).items():
        fast(*call_args)  # compile
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=args.number, repeat=args.repeat)) / args.number
        t_slow = min(timeit.repeat(lambda: slow(*call_args), number=args.number, repeat=args.repeat)) / args.number
        rows.append({"kernel": name, "numba_us": t_fast * 1e6, "numpy_us": t_slow * 1e6,
                     "speedup": t_slow / t_fast})
    if args.json:
        print(json.dumps(rows, indent=1))
        return
    print(f"{'kernel':<26}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for r in rows:
        print(f"{r['kernel']:<26}{r['numba_us']:>12.2f}{r['numpy_us']:>12.2f}{r['speedup']:>9.1f}x")


if __name__ == "__main__":
    main()
