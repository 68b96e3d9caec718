#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs each hot kernel on training-sized tensors under both backends, checks
they agree, and prints per-call times plus one end-to-end training epoch.

Usage:
    python benchmarks/bench_kernels.py [--repeats 200]

The backend flag works the same way everywhere else:
    STYLEPROJ_BACKEND=numpy python -m styleproj.cli train ...
"""

import argparse
import os
import sys
import time

import numpy as np


def _time(fn, args, repeats):
    fn(*args)  # warm up (and JIT-compile on the numba path)
    tic = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - tic) / repeats * 1e3  # ms


def bench_kernels(repeats):
    from styleproj import kernels

    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 16, 16))
    w = rng.standard_normal((16, 16, 3, 3))
    gy = rng.standard_normal((16, 16, 16))
    img = rng.standard_normal((16, 32, 32))
    g_up = rng.standard_normal((16, 64, 64))

    cases = [
        ("conv2d forward", kernels.conv2d_fwd, kernels.conv2d_fwd_np, (x, w)),
        ("conv2d grad input", kernels.conv2d_bwd_input, kernels.conv2d_bwd_input_np, (gy, w)),
        ("conv2d grad weight", kernels.conv2d_bwd_weight, kernels.conv2d_bwd_weight_np, (gy, x)),
        ("avgpool 2x2", kernels.avgpool2_fwd, kernels.avgpool2_fwd_np, (img,)),
        ("upsample 2x", kernels.upsample2_fwd, kernels.upsample2_fwd_np, (img,)),
        ("upsample 2x grad", kernels.upsample2_bwd, kernels.upsample2_bwd_np, (g_up,)),
    ]
    print(f"active backend: {kernels.active_backend()}  (repeats={repeats})")
    print(f"{'kernel':<20} {'active (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    for name, active, fallback, args in cases:
        err = np.max(np.abs(active(*args) - fallback(*args)))
        t_active = _time(active, args, repeats)
        t_numpy = _time(fallback, args, repeats)
        print(f"{name:<20} {t_active:>12.4f} {t_numpy:>12.4f} "
              f"{t_numpy / t_active:>8.2f}x   (max |diff| {err:.1e})")


def bench_epoch():
    from styleproj.synthdata import DomainSpec, gen_domain
    from styleproj.train import TrainConfig, train
    from styleproj import kernels

    spec = DomainSpec(name="bench", gain=(1.0, 1.0, 1.0), bias=(0.0, 0.0, 0.0),
                      noise=0.05, seed=0)
    datasets = [gen_domain(spec, 24, 32)]
    cfg = TrainConfig(epochs=2, seed=0, val_images=4)
    tic = time.perf_counter()
    train(datasets, cfg, quiet=True)
    took = (time.perf_counter() - tic) / cfg.epochs
    print(f"\nend-to-end training ({kernels.active_backend()}): {took:.2f}s per epoch "
          f"(24 images, 32x32, C=16)")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    bench_kernels(args.repeats)
    bench_epoch()
    if os.environ.get("STYLEPROJ_BACKEND", "auto") != "numpy":
        print("\n(for the full numpy-only run: STYLEPROJ_BACKEND=numpy "
              f"python {' '.join(sys.argv)})")


if __name__ == "__main__":
    main()
