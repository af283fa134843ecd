"""Compiled vs numpy kernels, one by one and inside a full attack.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time
from contextlib import contextmanager

import numpy as np

from perceptual_attack import kernels
from perceptual_attack.engine import AttackConfig, run_attack
from perceptual_attack.metrics import DEFAULT_SSIM
from perceptual_attack.oracle import BuiltinOracle
from perceptual_attack.toy import make_classifier, make_inputs

NAMES = ("gaussian_filter_valid", "srgb_to_lab", "ciede2000", "conv3x3_valid",
         "ssim_mean", "draw_categorical", "categorical_step")


@contextmanager
def using(module):
    saved = {n: getattr(kernels, n) for n in NAMES}
    for n in NAMES:
        setattr(kernels, n, getattr(module, n))
    try:
        yield
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


def best_of(fn, repeat, number):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        for _ in range(number):
            fn()
        times.append((time.perf_counter() - t) / number)
    return min(times)


def kernel_cases(rng):
    x, y = rng.random((32, 32, 3)), rng.random((32, 32, 3))
    k = DEFAULT_SSIM.kernel()
    lab1, lab2 = rng.random((1024, 3)) * 50, rng.random((1024, 3)) * 50
    w, b = rng.normal(size=(8, 3, 3, 3)), rng.normal(size=8)
    logits, u = rng.normal(size=(64, 3)), rng.random(64)
    theta, idx = rng.normal(size=(16, 16, 3)), rng.integers(0, 3, (16, 16))

    def cases(m):
        mu = m.gaussian_filter_valid(x, k)
        sxx = m.gaussian_filter_valid(x * x, k) - mu * mu
        return {
            "gaussian_filter_valid 32x32x3": lambda: m.gaussian_filter_valid(x, k),
            "ssim_mean 32x32x3": lambda: m.ssim_mean(x, y, mu, sxx, k, DEFAULT_SSIM.c1,
                                                     DEFAULT_SSIM.c2),
            "srgb_to_lab 1024 px": lambda: m.srgb_to_lab(x.reshape(-1, 3)),
            "ciede2000 1024 px": lambda: m.ciede2000(lab1, lab2),
            "conv3x3_valid 32x32x3->8": lambda: m.conv3x3_valid(x, w, b),
            "draw_categorical 64 cells": lambda: m.draw_categorical(logits, u),
            "categorical_step 4x4 region": lambda: m.categorical_step(
                theta, idx, 2, 6, 2, 6, 0.5, 0.01, True, None),
        }
    return cases


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--attacks", type=int, default=5, help="toy inputs in the full run")
    args = parser.parse_args()
    found = kernels.backends()
    if "cython" not in found:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    table = {name: {n: best_of(f, args.repeat, 200) for n, f in cases(mod).items()}
             for name, mod in found.items()}

    model = make_classifier(0)
    oracle = BuiltinOracle(model)
    inputs = make_inputs(model, args.attacks, seed=0)
    cfg = AttackConfig(lam=10.0, max_queries=10_000)
    for name, mod in found.items():
        with using(mod):
            t = time.perf_counter()
            queries = sum(run_attack(cfg, x, oracle).queries_used for x in inputs)
            elapsed = time.perf_counter() - t
        table[name][f"attack lambda=10, {args.attacks} inputs (per query)"] = elapsed / queries

    names = list(found)
    print(f"{'case':44s}" + "".join(f"{n:>14s}" for n in names)
          + ("   speedup" if len(names) == 2 else ""))
    for case in table[names[0]]:
        row = [table[n][case] for n in names]
        line = f"{case:44s}" + "".join(f"{v * 1e6:12.1f}us" for v in row)
        if len(names) == 2:
            line += f"   {row[0] / row[1]:6.1f}x"
        print(line)


if __name__ == "__main__":
    main()
