"""Numba vs numpy timings for every hot kernel.

    python benchmarks/bench_kernels.py [--repeat 200]

The numpy flavour is what runs when FERLS_NUMBA=0 (or numba is missing).
"""
import argparse

from ferls._jit import USE_NUMBA
from ferls.bench import bench_kernels


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args()
    if not USE_NUMBA:
        print("note: numba disabled, the first column times the uncompiled loop code")
    print(f"{'kernel':<16}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, t_nb, t_np in bench_kernels(args.repeat):
        print(f"{name:<16}{t_nb * 1e6:12.2f}{t_np * 1e6:12.2f}{t_np / t_nb:10.1f}x")


if __name__ == "__main__":
    main()
