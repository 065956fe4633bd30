"""Compare the numba kernels with the pure-numpy fallback.

Times each kernel on generator-sized inputs under both backends, checks
they agree, then times one small end-to-end inversion per backend in a
subprocess (the backend is fixed at import by GANVERT_BACKEND).

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ganvert.kernels import backend_module

END_TO_END = """
import time
from ganvert.generator import init_weights, GeneratorConfig
from ganvert.inversion import invert_latent, InversionConfig
from ganvert import harness, kernels
b = init_weights(GeneratorConfig(), 7)
x = harness.make_target(b, 0, "generated")
cfg = InversionConfig(restarts=8, steps_z=40)
invert_latent(x, b, cfg.replace(steps_z=2))
t = time.perf_counter()
invert_latent(x, b, cfg)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def kernel_cases(rng):
    x = rng.standard_normal((8, 32, 8, 8))
    w = rng.standard_normal((16, 32, 3, 3))
    g = rng.standard_normal((8, 16, 8, 8))
    d = rng.uniform(size=(256, 256))
    d = np.triu(d, 1) + np.triu(d, 1).T
    return {
        "conv2d 8x32x8x8 * 16x32x3x3": lambda m: m.conv2d(x, w),
        "conv2d_grad_input": lambda m: m.conv2d_grad_input(g, w),
        "conv2d_grad_weight": lambda m: m.conv2d_grad_weight(x, g, 3),
        "upgma_merges n=256": lambda m: m.upgma_merges(d.copy(), np.ones(256), np.arange(256)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    nb, npy = backend_module("numba"), backend_module("numpy")
    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  agree")
    for name, fn in cases.items():
        a, b = fn(npy), fn(nb)  # also warms up the jit
        agree = np.allclose(a, b, rtol=1e-12, atol=1e-12)
        t_np = min(timeit.repeat(lambda: fn(npy), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn(nb), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:8.2f}  {agree}")

    print("\nend to end: invert_latent, 8 restarts x 40 steps")
    for backend in ("numpy", "numba"):
        env = dict(os.environ, GANVERT_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        print(f"  {out[0]:6s} {float(out[1]):.2f} s")


if __name__ == "__main__":
    main()
