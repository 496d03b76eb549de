"""Compare the compiled and pure-Python trading kernels.

    python3 benchmarks/bench_kernels.py [--buyers N] [--repeat R] [--months M]

Times the bare kernel on random markets and a short demo simulation under
each available backend, and confirms the backends agree bit for bit.
"""

import argparse
import logging
import statistics
import time
from pathlib import Path

import numpy as np

from evoecon import kernels
from evoecon.agents import PRICE_FLOOR
from evoecon.engine import SimConfig, deploy, step

DEMO = Path(__file__).resolve().parents[1] / "data" / "demo.cfg"


def random_market(n_buyers, n_firms, n_sectors, per_buyer, seed):
    rng = np.random.default_rng(seed)
    lists = [np.sort(rng.choice(n_firms, size=per_buyer, replace=False)) for _ in range(n_buyers)]
    ptr = np.concatenate([[0], np.cumsum([len(x) for x in lists])]).astype(np.int64)
    cap = n_buyers * n_sectors
    return [
        np.arange(n_buyers, dtype=np.int64),
        rng.uniform(0, 10, (n_buyers, n_sectors)),
        rng.uniform(0, 80, n_buyers),
        rng.uniform(0.9, 1.2, (n_buyers, n_sectors)),
        ptr, np.concatenate(lists).astype(np.int64),
        rng.integers(0, n_sectors, n_firms).astype(np.int64),
        rng.uniform(0.8, 1.3, n_firms),
        rng.uniform(0, 50, n_firms),
        np.zeros(n_firms), np.zeros(n_firms), np.zeros(n_firms),
        0.002, PRICE_FLOOR,
        np.zeros((n_buyers, n_sectors)), np.zeros((n_buyers, n_sectors)),
        np.zeros(cap, np.int64), np.zeros(cap, np.int64), np.zeros(cap, np.int64),
        np.zeros(cap), np.zeros(cap), np.zeros(cap),
    ]


def fresh(args):
    return [a.copy() if isinstance(a, np.ndarray) else a for a in args]


def time_kernel(name, args, repeat):
    kernels.use_backend(name)
    runs = []
    for _ in range(repeat):
        a = fresh(args)
        t0 = time.perf_counter()
        kernels.shop(*a)
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs), a


def time_simulation(name, months):
    kernels.use_backend(name)
    st = deploy(SimConfig.from_file(DEMO))
    t0 = time.perf_counter()
    for _ in range(months):
        step(st)
    return time.perf_counter() - t0, st.frames


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--buyers", type=int, default=3200)
    ap.add_argument("--firms", type=int, default=400)
    ap.add_argument("--sectors", type=int, default=64)
    ap.add_argument("--neighbours", type=int, default=40)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--months", type=int, default=120)
    opts = ap.parse_args()
    logging.getLogger("evoecon").setLevel(logging.ERROR)

    names = sorted(kernels.BACKENDS)
    default = kernels.backend()
    args = random_market(opts.buyers, opts.firms, opts.sectors, opts.neighbours, seed=0)
    print(f"kernel: {opts.buyers} buyers x {opts.sectors} sectors, {opts.neighbours} candidate firms each")
    results = {}
    for name in names:
        results[name] = time_kernel(name, args, opts.repeat)
        print(f"  {name:<9} {1000 * results[name][0]:9.2f} ms")
    print(f"simulation: demo economy, {opts.months} months")
    sims = {}
    for name in names:
        sims[name] = time_simulation(name, opts.months)
        print(f"  {name:<9} {sims[name][0]:9.2f} s  ({1000 * sims[name][0] / opts.months:.2f} ms/month)")
    kernels.use_backend(default)

    if len(names) == 2:
        a, b = (results[n][1] for n in names)
        same = all(x.tobytes() == y.tobytes() for x, y in zip(a, b) if isinstance(x, np.ndarray))
        same = same and sims[names[0]][1] == sims[names[1]][1]
        speedup = results["python"][0] / results["compiled"][0]
        print(f"compiled speed-up {speedup:.1f}x on the kernel; outputs identical: {same}")
    else:
        print("compiled extension not built; only the Python kernel was timed")


if __name__ == "__main__":
    main()
