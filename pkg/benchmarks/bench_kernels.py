"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--epochs 3]

Reports the best-of-``repeat`` time per call for each kernel at a few shapes
and the wall time of a few desk-profile training epochs on each backend.
"""

import argparse
import time
import timeit

import numpy as np

from tamformer.data import GeneratorConfig, generate_synthetic
from tamformer.model import PROFILES
from tamformer.numerics import backend
from tamformer.training import TrainConfig, train_two_stage

# (rows, width): attention rows at desk and paper scale, layer-norm rows
SHAPES = [(48 * 12, 12), (64 * 135, 135), (64 * 45, 32), (64 * 45, 384)]


def kernel_cases(rows, width, rng):
    x = rng.standard_normal((rows, width))
    g = rng.standard_normal((rows, width))
    gain, bias = rng.standard_normal(width), rng.standard_normal(width)
    y = backend.softmax_fwd(x)
    _, xhat, rstd = backend.layer_norm_fwd(x, gain, bias, 1e-5)
    return {
        "softmax_fwd": lambda: backend.softmax_fwd(x),
        "softmax_bwd": lambda: backend.softmax_bwd(y, g),
        "layer_norm_fwd": lambda: backend.layer_norm_fwd(x, gain, bias, 1e-5),
        "layer_norm_bwd": lambda: backend.layer_norm_bwd(g, xhat, rstd, gain),
    }


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'shape':>14}" + "".join(f"{b:>12}" for b in backend.available())
          + f"{'speedup':>10}")
    for rows, width in SHAPES:
        timings = {}
        for which in backend.available():
            backend.use_backend(which)
            cases = kernel_cases(rows, width, rng)
            timings[which] = {k: best_time(fn, repeat) for k, fn in cases.items()}
        for k in timings["python"]:
            line = f"{k:<16}{f'{rows}x{width}':>14}"
            line += "".join(f"{timings[b][k] * 1e3:>10.3f}ms" for b in timings)
            if "compiled" in timings:
                line += f"{timings['python'][k] / timings['compiled'][k]:>9.2f}x"
            print(line)


def bench_training(epochs):
    cfg = PROFILES["desk"]
    gen = GeneratorConfig.for_model(cfg, fractions=(64 / 80, 0.0, 16 / 80))
    samples, manifest = generate_synthetic(80, 7, gen)
    tc = TrainConfig(epochs_stage1=epochs, epochs_stage2=epochs)
    for which in backend.available():
        backend.use_backend(which)
        t0 = time.perf_counter()
        train_two_stage(samples, manifest, cfg, tc)
        dt = time.perf_counter() - t0
        print(f"training ({2 * epochs} desk epochs, 64 samples) on {which}: {dt:.2f}s")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--epochs", type=int, default=3)
    args = p.parse_args()
    initial = backend.name
    try:
        bench_kernels(args.repeat)
        bench_training(args.epochs)
    finally:
        backend.use_backend(initial)


if __name__ == "__main__":
    main()
