"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 3] [--experiment B]

Each kernel runs on the same inputs under both backends; the outputs are
checked for bitwise equality before timings are reported.
"""

import argparse
import time

import numpy as np

from mcensemble import _backend, harness
from mcensemble.core import PatchedModel
from mcensemble.oracle import CovarianceConstrained, LinearCapped
from mcensemble.synthlab import generate
from mcensemble.whitebox import run_whitebox


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def kernel_cases(rng, n=2000, d=4, partitions=24, cells=300):
    G = rng.normal(size=(d, d))
    cov = CovarianceConstrained(G @ G.T + 0.1 * np.eye(d))
    lp = LinearCapped(d)
    C = rng.normal(size=(n, d))
    H, Y = rng.uniform(0, 1, (n, d)), rng.uniform(0, 1, (n, d))
    cell = rng.integers(0, cells, size=(partitions, n))
    nc = np.full(partitions, cells, dtype=np.int64)
    ranks = np.arange(partitions * cells, dtype=np.int64)
    cov_args = (cov.cov, cov.risk_bound, cov.sup_size, cov.sup_idx, cov.sup_kinv, cov.sup_u, cov.sup_A)
    return {
        f"lp_solve_batch n={n}": lambda k: k.lp_solve_batch(C, lp.A, lp.b),
        f"cov_solve_batch n={n}": lambda k: k.cov_solve_batch(C, *cov_args),
        f"cell_sums n={n} P={partitions}": lambda k: k.cell_sums(H, Y, cell, nc),
        f"update_loop n={n} alpha=1e-3": lambda k: k.update_loop(H.copy(), Y, cell, nc, ranks, 1e-3, 1.0, 10 ** 6),
    }


def experiment_case(name):
    cfg = harness.ExperimentConfig(name)
    train, debias = generate(cfg.generator)
    base = harness.train_base(cfg, train)

    def run(_k):
        models = [PatchedModel(b, debias.M).bind(debias) for b in base]
        ens, info = run_whitebox(models, debias, harness.build_region(cfg, train), cfg.alpha)
        return np.stack([m.values for m in ens.models])
    return {f"white-box run, experiment {name}": run}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--experiment", choices=sorted(harness.TABLE), default=None,
                    help="also time a full white-box run of this experiment")
    args = ap.parse_args()
    if "cython" not in _backend.available():
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    cases = kernel_cases(np.random.default_rng(args.seed))
    if args.experiment:
        cases.update(experiment_case(args.experiment))
    print(f"{'case':<40}{'python':>12}{'cython':>12}{'speedup':>10}  identical")
    for label, fn in cases.items():
        row = {}
        for name in ("python", "cython"):
            with _backend.use(name):
                row[name] = best_of(lambda: fn(_backend.kernels()), args.repeat)
        (tp, op), (tc, oc) = row["python"], row["cython"]
        print(f"{label:<40}{tp:>11.4f}s{tc:>11.4f}s{tp / tc:>9.1f}x  {same(op, oc)}")


if __name__ == "__main__":
    main()
