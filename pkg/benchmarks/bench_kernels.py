"""Compare the compiled and pure-Python kernels.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Times each batch kernel on bank-sized inputs and one full case-study
detection run per backend, then prints a table of median wall times.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from deception_qcd import kernels
from deception_qcd.change_stats import HypothesisBank, run_bank
from deception_qcd.harness.config import default_config
from deception_qcd.harness.experiments import child_seeds, simulate


def timeit(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def inputs(batch=200, n=3, m=2, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(batch, n, n))
    P = 0.1 * A @ np.swapaxes(A, 1, 2) + 0.01 * np.eye(n)
    means = rng.normal(size=(batch, n))
    H = np.eye(m, n)
    U = H @ P @ H.T
    return dict(means=means, P=P, H=H, U=np.ascontiguousarray(U), mu=means @ H.T,
                y=rng.normal(size=m), R=np.array([0.1, 0.06]), theta=np.full(m, 0.98))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.compiled_available():
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    x = inputs()
    sc = default_config().build()
    real = simulate(sc, child_seeds(0, 0, 1)[0], 10)
    rows = []
    for name in ("cython", "python"):
        k = kernels.get_backend(name)
        cases = {
            "cubature_points (200 chains)": lambda: k.cubature_points(x["means"], x["P"]),
            "vb_update_linear (200 chains)": lambda: k.vb_update_linear(
                x["means"], x["P"], x["H"], x["y"], x["R"], x["theta"], 0.08, 1e-6, 10),
            "predictive_loglik (200 chains)": lambda: k.predictive_loglik(
                x["mu"], x["U"], x["y"], x["R"], x["theta"], 0.08),
            "case-study run (100 steps)": lambda: run_bank(
                HypothesisBank(sc.model, sc.obs, sc.prior, sc.initial_state, sc.settings, sc.window, backend=k),
                real.observations, real.nu),
        }
        for label, fn in cases.items():
            fn()  # warm up
            rows.append((label, name, timeit(fn, args.repeat)))

    print(f"{'kernel':34s} {'cython [ms]':>12s} {'python [ms]':>12s} {'speedup':>8s}")
    labels = dict.fromkeys(r[0] for r in rows)
    for label in labels:
        c = next(t for l, b, t in rows if l == label and b == "cython")
        p = next(t for l, b, t in rows if l == label and b == "python")
        print(f"{label:34s} {1e3 * c:12.3f} {1e3 * p:12.3f} {p / c:8.1f}")


if __name__ == "__main__":
    main()
