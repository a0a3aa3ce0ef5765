"""Compare the compiled depthwise kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Shapes are the ones seen in training: a 128-clip batch on the 61-frame grid,
for each depthwise layer of the two networks.
"""
import argparse
import sys
import timeit

import numpy as np

from sgvad.compute import kernels

# (label, channels, kernel, dilation)
LAYERS = [
    ("gate k13", 32, 13, 1),
    ("gate k17", 32, 17, 1),
    ("classifier k15", 64, 15, 1),
    ("epilogue k29 d2", 64, 29, 2),
]


def bench(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timing repeats, best is kept (default 5)")
    parser.add_argument("--batch", type=int, default=128, help="batch size (default 128)")
    parser.add_argument("--frames", type=int, default=61, help="frames per clip (default 61)")
    args = parser.parse_args(argv)

    if kernels.BACKEND != "cython":
        print("compiled kernels unavailable; only the numpy path can be timed", file=sys.stderr)
    print(f"{'layer':<18}{'pass':<10}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    rng = np.random.default_rng(0)
    for label, c, k, d in LAYERS:
        x = rng.standard_normal((args.batch, c, args.frames)).astype(np.float32)
        w = rng.standard_normal((c, k)).astype(np.float32)
        g = rng.standard_normal(x.shape).astype(np.float32)
        cases = {
            "forward": (lambda: kernels.depthwise_forward_numpy(x, w, d),
                        lambda: kernels._fwd_c(x, w, d)),
            "backward": (lambda: kernels.depthwise_backward_numpy(x, w, g, d),
                         lambda: kernels._bwd_c(x, w, g, d)),
        }
        for name, (slow, fast) in cases.items():
            t_np = bench(slow, args.repeat)
            if kernels._fwd_c is None:
                print(f"{label:<18}{name:<10}{t_np * 1e3:>10.2f}{'-':>11}{'-':>9}")
                continue
            t_cy = bench(fast, args.repeat)
            print(f"{label:<18}{name:<10}{t_np * 1e3:>10.2f}{t_cy * 1e3:>11.2f}{t_np / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
