"""Timing comparison of the two kernel lanes.

``python3 -m hintloc.bench`` times the loop-shaped kernels on training-sized
inputs for every available lane, then a short coarse training run per lane.
The training runs happen in subprocesses because the lane is fixed at import
time by HINTLOC_NUMBA; numbers are best-of-N wall times after a warmup call
(which also pays numba's compile cost, so it is excluded).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from .kernels import available_backends, get_impls

TRAIN_SNIPPET = """
import time
from hintloc.data import build_dataset
from hintloc.coarse import CoarseTrainConfig, train_coarse
ds = build_dataset(0, {"extent": 60.0, "density": 8.0,
                       "train_queries": 32, "eval_queries": 8})
cfg = CoarseTrainConfig(batch_size=8, epochs=3, embed_dim=32, seed=0)
t0 = time.perf_counter()
train_coarse(ds, cfg)
print(f"{time.perf_counter() - t0:.3f}")
"""


def kernel_cases(rng) -> dict:
    """Inputs shaped like the hot calls during a real training epoch."""
    logits = rng.standard_normal((512, 256))
    values = np.ascontiguousarray(rng.standard_normal((20000, 128)))
    starts = np.arange(0, 20001, 250, dtype=np.int64)
    param = rng.standard_normal((512, 256))
    grad = rng.standard_normal((512, 256))
    m = np.zeros_like(param)
    v = np.zeros_like(param)
    centers = rng.uniform(-500.0, 500.0, size=(4096, 2))
    return {
        "softmax_rows (512x256)": ("softmax_rows", (logits,)),
        "segment_max (20000x128, 80 seg)": ("segment_max", (values, starts)),
        "adam_update (512x256)": ("adam_update",
                                  (param, grad, m, v, 10, 1e-3, 0.9, 0.999, 1e-8)),
        "pmc_mask (4096 submaps)": ("pmc_mask",
                                    (centers, centers[0], np.array([1.0, 2.0]),
                                     15.0, 12.0)),
    }


def best_time(fn, args, repeats: int) -> float:
    fn(*args)  # warmup; for numba this also pays the compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def time_training(backend: str) -> float:
    env = dict(os.environ, HINTLOC_NUMBA="1" if backend == "numba" else "0")
    out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def _row(label: str, times: dict) -> str:
    cells = [f"{label:<34}"]
    for lane in ("numpy", "numba"):
        cells.append(f"{times[lane] * 1e3:10.3f} ms" if lane in times
                     else " " * 13)
    if "numpy" in times and "numba" in times and times["numba"] > 0:
        cells.append(f"{times['numpy'] / times['numba']:8.1f}x")
    return "".join(cells)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timed repetitions per kernel (best is kept)")
    parser.add_argument("--skip-train", action="store_true",
                        help="only time the kernels, not the training runs")
    args = parser.parse_args(argv)

    lanes = available_backends()
    print(f"lanes: {', '.join(lanes)}")
    print(f"{'case':<34}{'numpy':>13}{'numba':>13}{'speedup':>9}")
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    for label, (name, call_args) in cases.items():
        times = {}
        for lane in lanes:
            impl = get_impls(lane)[name]
            times[lane] = best_time(impl, call_args, args.repeats)
        print(_row(label, times))
    if not args.skip_train:
        times = {lane: time_training(lane) for lane in lanes}
        row = {lane: t for lane, t in times.items()}
        print(_row("coarse training (3 tiny epochs)", row))
    return 0


if __name__ == "__main__":
    sys.exit(main())
