"""Compare the compiled Euler-Maruyama kernel against the numpy fallback.

    python benchmarks/bench_kernels.py [--traj 100000] [--steps 200] [--repeat 3]

The noise block is generated once outside the timed region, so the numbers
isolate the update loop itself.
"""
import argparse
import time

import numpy as np

from irbridge._kernels import em_affine_compiled, em_affine_python


def bench(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        x = args[0].copy()
        t0 = time.perf_counter()
        fn(x, *args[1:])
        best = min(best, time.perf_counter() - t0)
    return best, x


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--traj", type=int, default=100_000)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--repeat", type=int, default=3)
    a = p.parse_args()
    g = np.random.default_rng(0)
    n = 2 * a.traj
    args = (
        g.standard_normal(n),
        g.standard_normal(n),
        np.full(a.steps, 8.0 / a.steps),
        np.full(a.steps, np.sqrt(32.0 / a.steps)),
        g.standard_normal((a.steps, n)),
    )
    elems = n * a.steps
    t_py, x_py = bench(em_affine_python, args, a.repeat)
    print(f"numpy    {t_py * 1e3:9.2f} ms  {t_py / elems * 1e9:6.2f} ns/elem-step")
    if em_affine_compiled is None:
        print("compiled extension not built; nothing to compare")
        return
    t_c, x_c = bench(em_affine_compiled, args, a.repeat)
    print(f"compiled {t_c * 1e3:9.2f} ms  {t_c / elems * 1e9:6.2f} ns/elem-step")
    print(f"speedup  {t_py / t_c:9.2f}x   bitwise equal: {np.array_equal(x_py, x_c)}")


if __name__ == "__main__":
    main()
