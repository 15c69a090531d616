"""Time the compiled and numpy evaluation kernels on synthetic problems.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from choiceopt.data_io import generate_synthetic, make_problem
from choiceopt.kernels import available_backends
from choiceopt.model import Batch, ChoiceModel

CASES = [  # (J, K, N, batch size)
    (4, 12, 20000, 20000),
    (4, 12, 20000, 1000),
    (4, 100, 100000, 100000),
    (4, 100, 100000, 5000),
    (8, 40, 50000, 50000),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    header = f"{'J':>3} {'K':>4} {'N':>7} {'batch':>7} {'order':>8} " + \
        " ".join(f"{b:>10}" for b in backends) + ("    speedup" if len(backends) > 1 else "")
    print(header)
    rng = np.random.default_rng(0)
    for J, K, N, n_prime in CASES:
        spec = make_problem(J, K, N, seed=1)
        ds, theta = generate_synthetic(spec)
        batch = Batch(np.sort(rng.choice(N, n_prime, replace=False)), N)
        models = {b: ChoiceModel(spec.model, ds, backend=b) for b in backends}
        for order in ("value", "gradient", "hessian"):
            t = {b: best_of(lambda m=m: m.evaluate(theta, batch, order), args.repeat)
                 for b, m in models.items()}
            row = f"{J:>3} {K:>4} {N:>7} {n_prime:>7} {order:>8} " + \
                " ".join(f"{t[b] * 1e3:>8.2f}ms" for b in backends)
            if "compiled" in t and "python" in t:
                row += f"  {t['python'] / t['compiled']:>8.1f}x"
            print(row)


if __name__ == "__main__":
    main()
