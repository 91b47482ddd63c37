"""Time the mask kernels on both backends and the full extraction per backend.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import importlib
import os
import subprocess
import sys
import timeit

import numpy as np

from laserloc import _kernels_py
from laserloc.simulate import Scene, default_calibration, render

EXTRACT = (
    "import timeit; from laserloc import kernels; from laserloc.lle import extract_laser_line;"
    "from laserloc.simulate import Scene, default_calibration, render;"
    "img, _ = render(Scene(apple_center=(-0.047, 0.0, 1.0), noise_sigma=3.0), default_calibration(), 0.1, 1);"
    "t = min(timeit.repeat(lambda: extract_laser_line(img), number=1, repeat={r}));"
    "print(kernels.BACKEND, t)"
)


def kernel_inputs():
    img, _ = render(Scene(apple_center=(-0.047, 0.0, 1.0), noise_sigma=3.0), default_calibration(), 0.1, 1)
    red = np.ascontiguousarray(img.pixels[:, :, 0])
    mask = _kernels_py.brce(red, 4, 40)
    return red, mask


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    red, mask = kernel_inputs()
    h, w = mask.shape
    backends = {"python": _kernels_py}
    try:
        backends["cython"] = importlib.import_module("laserloc._kernels")
    except ImportError:
        print("cython extension not built; timing the python backend only")

    print(f"frame {w}x{h}, best of {args.repeat}")
    print(f"{'kernel':<14}{'backend':<9}{'ms':>9}")
    for name, mod in backends.items():
        t_b = best(lambda: mod.brce(red, 4, 40), args.repeat)
        t_n = best(lambda: mod.noise_filter(mask, w // 4, h // 2, 8, 3), args.repeat)
        print(f"{'brce':<14}{name:<9}{1e3 * t_b:>9.3f}")
        print(f"{'noise_filter':<14}{name:<9}{1e3 * t_n:>9.3f}")

    # whole extraction, backend picked at import time via the environment
    for pure in ("1", "0"):
        env = dict(os.environ, LASERLOC_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", EXTRACT.format(r=args.repeat)],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        print(f"{'extract':<14}{out[0]:<9}{1e3 * float(out[1]):>9.3f}")


if __name__ == "__main__":
    main()
