#!/usr/bin/env python3
"""Compare the numba and pure-numpy kernel backends.

Kernel timings run in-process against both implementations. ``--end-to-end``
additionally times a few MAML outer iterations in two subprocesses, one with
``GEOMAML_DISABLE_NUMBA=1``.

    python benchmarks/bench_kernels.py --json bench.json
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from geomaml import _kernels as K

WARMUP = 2
RUNS = 7

E2E_SNIPPET = """
import time
from geomaml._kernels import backend
from geomaml.data import generate_synthetic_regions
from geomaml.models import CnnConfig, build_cnn
from geomaml.training import TrainConfig, maml_train
ds = generate_synthetic_regions(num_regions=4, tiles_per_region=40, image_size=16, seed=0)
theta = build_cnn(CnnConfig(input_size=16, depth=4, width=16), seed=0)
maml_train(theta, ds, TrainConfig(iterations=1))  # compile / warm caches
t = time.perf_counter()
maml_train(theta, ds, TrainConfig(iterations={iters}))
print(backend(), (time.perf_counter() - t) / {iters})
"""


def timed(fn, *args):
    for _ in range(WARMUP):
        fn(*args)
    times = []
    for _ in range(RUNS):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return {"median": float(np.median(times)), "min": min(times)}


def kernel_cases(batch, channels, size):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, channels, size, size))
    _, arg = K.maxpool2_numpy(x)
    g = rng.normal(size=(batch, channels, size // 2, size // 2))
    return {
        "im2col3": (x,),
        "maxpool2": (x,),
        "unpool2": (g, arg),
        "gatherpool2": (x, arg),
    }


def run_kernels(batch, channels, size):
    results = {}
    for name, args in kernel_cases(batch, channels, size).items():
        ref = getattr(K, f"{name}_numpy")
        row = {"numpy": timed(ref, *args)}
        if K.HAVE_NUMBA:
            fast = getattr(K, name)
            a, b = fast(*args), ref(*args)
            for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
                if not np.array_equal(u, v):
                    raise AssertionError(f"{name}: numba and numpy results differ")
            row["numba"] = timed(fast, *args)
            row["speedup"] = row["numpy"]["median"] / row["numba"]["median"]
        results[name] = row
    return results


def run_end_to_end(iters):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, GEOMAML_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", E2E_SNIPPET.format(iters=iters)],
                             env=env, capture_output=True, text=True, check=True)
        name, seconds = res.stdout.split()
        out[name] = float(seconds)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--end-to-end", action="store_true", help="also time MAML iterations per backend")
    ap.add_argument("--iters", type=int, default=5)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)

    report = {"numba_available": K.HAVE_NUMBA,
              "shape": [args.batch, args.channels, args.size, args.size],
              "kernels": run_kernels(args.batch, args.channels, args.size)}
    for name, row in report["kernels"].items():
        line = f"{name:12s} numpy {row['numpy']['median'] * 1e3:8.3f} ms"
        if "numba" in row:
            line += f"   numba {row['numba']['median'] * 1e3:8.3f} ms   x{row['speedup']:.1f}"
        print(line)
    if args.end_to_end:
        report["maml_iteration_seconds"] = run_end_to_end(args.iters)
        for name, s in report["maml_iteration_seconds"].items():
            print(f"maml outer iteration ({name}): {s:.3f} s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
