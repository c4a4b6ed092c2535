"""Compare the compiled kernels against the pure-Python fallback.

Times each backend-dispatched routine on a fixed workload and reports the
median over ``--repeats`` runs plus the speedup.  Results are checked for
agreement before timing.

    python3 benchmarks/bench_backends.py --repeats 5 --out backends.csv
"""
import argparse
import csv
import sys
import time

import numpy as np

from rarelw import _backend
from rarelw.gp import Dataset, KernelConfig, build_posterior, init_pool_cache, recursive_append
from rarelw.systems import get_system


def _cross_cov(n_pool):
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(n_pool, 2)), rng.normal(size=(200, 2))
    k = KernelConfig("Matern", 1.0, (1.0, 1.0), 2.5)
    return lambda: k.matrix(A, B)


def _append(n_pool):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 2)) * 3
    k = KernelConfig("RBF", 1.0, (1.0, 1.0))
    state = build_posterior(Dataset(X, np.sin(X).sum(1)), k)
    base = init_pool_cache(state, rng.normal(size=(n_pool, 2)) * 3, n_max=102)
    x_new = np.array([0.123, -0.456])

    def run():
        cache = base.copy()
        recursive_append(cache, state, x_new, 0.5)
        return cache.means
    return run


def _system(name, n_inputs):
    system = get_system(name)
    X = system.distribution.sample(n_inputs, 0)
    return lambda: system(X)


def workloads(scale):
    return {
        "cross_cov": _cross_cov(20_000 * scale),
        "recursive_update": _append(50_000 * scale),
        "oscillator": _system("oscillator", 200 * scale),
        "sir": _system("sir", 200 * scale),
        "ship": _system("ship", 100 * scale),
    }


def _median_time(fn, repeats):
    fn()  # warm-up
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def run(repeats=3, scale=1, threads=1):
    if "compiled" not in _backend.available():
        raise SystemExit("compiled kernels are not built; nothing to compare")
    _backend.set_num_threads(threads)
    rows = []
    for name, fn in workloads(scale).items():
        results, times = {}, {}
        for backend in ("compiled", "python"):
            previous = _backend.use(backend)
            try:
                results[backend] = np.asarray(fn())
                times[backend] = _median_time(fn, repeats)
            finally:
                _backend.use(previous)
        ref = results["python"]
        np.testing.assert_allclose(results["compiled"], ref, rtol=1e-9,
                                   atol=1e-9 * max(1.0, float(np.abs(ref).max())))
        rows.append({"routine": name, "compiled_s": times["compiled"], "python_s": times["python"],
                     "speedup": times["python"] / times["compiled"], "threads": threads})
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--scale", type=int, default=1, help="workload multiplier")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args(argv)
    rows = run(args.repeats, args.scale, args.threads)
    print(f"{'routine':<18}{'compiled [s]':>14}{'python [s]':>14}{'speedup':>10}")
    for r in rows:
        print(f"{r['routine']:<18}{r['compiled_s']:>14.4g}{r['python_s']:>14.4g}{r['speedup']:>9.1f}x")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
