"""Compare the numba kernels with their numpy twins.

    python3 benchmarks/bench_kernels.py [--n 100000] [--repeat 5]

Kernel timings call both twins in-process. The end-to-end timing runs
``em_generate`` in a subprocess for each setting of ``DFM_NUMBA`` so the
import-time switch is exercised as users see it.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from dfm import kernels

END_TO_END = """
import time
from dfm.drift import ExactDrift
from dfm.grid import TimeGrid
from dfm.sampler import em_generate
from dfm.scenarios import mixture_pair
c = mixture_pair()
em_generate(ExactDrift(c), c.mu, TimeGrid(2), 1000, 0)  # warm-up / compile
start = time.perf_counter()
em_generate(ExactDrift(c), c.mu, TimeGrid({steps}), {n}, 1)
print(time.perf_counter() - start)
"""


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_posterior_mean(n, k, d, repeat):
    gen = np.random.default_rng(0)
    x = gen.normal(size=(n, d))
    args = (
        gen.normal(size=k),
        gen.normal(size=(k, d)),
        np.ascontiguousarray(np.tril(gen.normal(size=(k, d, d)))),
        gen.normal(size=(k, d, d)),
        gen.normal(size=(k, d)),
    )
    kernels._mixture_posterior_mean_nb(x[:10], *args)
    return (
        _best(lambda: kernels._mixture_posterior_mean_nb(x, *args), repeat),
        _best(lambda: kernels._mixture_posterior_mean_np(x, *args), repeat),
    )


def bench_em_step(n, d, repeat):
    gen = np.random.default_rng(1)
    x = gen.normal(size=(n, d))
    drift, noise = gen.normal(size=(n, d)), gen.normal(size=(n, d))
    kernels._em_step_nb(x[:10].copy(), drift[:10], noise[:10], 0.01, 0.1)
    return (
        _best(lambda: kernels._em_step_nb(x, drift, noise, 0.01, 0.1), repeat),
        _best(lambda: kernels._em_step_np(x, drift, noise, 0.01, 0.1), repeat),
    )


def bench_end_to_end(n, steps):
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, DFM_NUMBA=flag)
        code = END_TO_END.format(n=n, steps=steps)
        proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out["numba" if flag == "1" else "numpy"] = float(proc.stdout.strip().splitlines()[-1])
    return out["numba"], out["numpy"]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=100_000)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--steps", type=int, default=100)
    parser.add_argument("--json", action="store_true", help="print results as JSON")
    args = parser.parse_args(argv)

    results = {}
    for k, d in ((2, 2), (8, 5)):
        results[f"posterior_mean K={k} d={d}"] = bench_posterior_mean(args.n, k, d, args.repeat)
    results["em_step d=2"] = bench_em_step(args.n, 2, args.repeat)
    results[f"em_generate mixture N={args.steps}"] = bench_end_to_end(args.n, args.steps)

    if args.json:
        print(json.dumps({k: {"numba": a, "numpy": b} for k, (a, b) in results.items()}, indent=2))
        return
    print(f"n = {args.n}")
    print(f"{'case':38s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}")
    for name, (nb, npy) in results.items():
        print(f"{name:38s} {nb:10.4f} {npy:10.4f} {npy / nb:8.2f}")


if __name__ == "__main__":
    main()
