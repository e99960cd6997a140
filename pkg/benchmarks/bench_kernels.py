"""Compiled vs numpy kernels: per-kernel timings and one full TOC training run.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--epochs 10]

The training comparison runs each backend in a child process, since the
backend is fixed at import time (``TCOMM_PURE_PYTHON``).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tcomm.kernels import RELU, SOFTMAX, load_backend

TRAIN_SNIPPET = """
import time
from tcomm import kernels
from tcomm.pipelines import TrainConfig, train
from tcomm.signal import SensingConfig, make_dataset
ds = make_dataset(SensingConfig(snr_s=10, seed=1))
t = time.perf_counter()
train("toc", ds.train_x, ds.train_y, TrainConfig(epochs={epochs}, seed=1))
print(kernels.BACKEND, time.perf_counter() - t)
"""


def kernel_cases(rng):
    x = rng.standard_normal((64, 128))
    W = rng.standard_normal((128, 128)) * 0.1
    b = np.zeros(128)
    y = np.maximum(x @ W.T, 0)
    gy = rng.standard_normal((64, 128))
    Wc = rng.standard_normal((2, 128))
    p = rng.standard_normal(25_276)
    g = rng.standard_normal(p.size)

    def cases(k):
        gW, gb = np.empty_like(W), np.empty_like(b)
        m, v = np.zeros_like(p), np.zeros_like(p)
        pn_y, pn_s = k.powernorm_forward(x)
        return {
            "dense_forward relu 64x128x128": lambda: k.dense_forward(x, W, b, RELU),
            "dense_forward softmax 64x128x2": lambda: k.dense_forward(x, Wc, np.zeros(2), SOFTMAX),
            "dense_backward relu 64x128x128": lambda: k.dense_backward(x, W, y, RELU, gy, gW, gb),
            "powernorm fwd+bwd 64x128": lambda: k.powernorm_backward(pn_y, pn_s, gy),
            "adam_update 25276": lambda: k.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1),
        }

    return cases


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()

    py = load_backend("python")
    try:
        cy = load_backend("cython")
    except ImportError:
        print("compiled kernels not built; nothing to compare")
        return 1
    cases = kernel_cases(np.random.default_rng(0))
    py_cases, cy_cases = cases(py), cases(cy)
    print(f"{'kernel':34} {'numpy us':>10} {'cython us':>10} {'speedup':>8}")
    for name in py_cases:
        t_py = min(timeit.repeat(py_cases[name], number=args.repeat, repeat=3)) / args.repeat * 1e6
        t_cy = min(timeit.repeat(cy_cases[name], number=args.repeat, repeat=3)) / args.repeat * 1e6
        print(f"{name:34} {t_py:10.1f} {t_cy:10.1f} {t_py / t_cy:8.2f}")

    print(f"\nTOC training, {args.epochs} epochs, 4000 samples")
    times = {}
    for pure in ("1", "0"):
        env = {**os.environ, "TCOMM_PURE_PYTHON": pure}
        out = subprocess.run(
            [sys.executable, "-c", TRAIN_SNIPPET.format(epochs=args.epochs)], env=env, capture_output=True, text=True, check=True
        ).stdout.split()
        times[out[0]] = float(out[1])
        print(f"  {out[0]:7} {times[out[0]]:.2f} s")
    print(f"  speedup {times['python'] / times['cython']:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
