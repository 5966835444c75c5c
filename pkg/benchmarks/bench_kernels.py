"""Compare the compiled and numpy element kernels.

Times the stiffness matvec and the element strain-energy kernel on a 2D and a
3D grid with each backend, and checks that both agree.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--full]

``--full`` uses the 50 x 100 x 50 grid from the timing budget; the default 3D
grid is 32 x 64 x 32.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from accesstopo import _kernels_py as numpy_backend
from accesstopo.fea import element_stiffness

try:
    from accesstopo import _kernels as cython_backend
except ImportError:  # extension not built
    cython_backend = None


def bench(shape, repeat):
    ndim = len(shape)
    ke = element_stiffness(270e3, 0.3, 1.0, ndim)
    rng = np.random.default_rng(0)
    n_nodes = int(np.prod([n + 1 for n in shape]))
    u = rng.standard_normal(n_nodes * ndim)
    scale = rng.uniform(1e-3, 1.0, int(np.prod(shape)))
    rows = []
    ref = {}
    for name, mod in (("numpy", numpy_backend), ("cython", cython_backend)):
        if mod is None:
            rows.append((name, None, None))
            continue
        y = mod.matvec(u, scale, ke, shape)
        e = mod.element_energy(u, ke, shape)
        if ref:
            err = max(np.abs(y - ref["y"]).max() / np.abs(ref["y"]).max(),
                      np.abs(e - ref["e"]).max() / np.abs(ref["e"]).max())
            assert err < 1e-12, f"backends disagree ({err:.2e})"
        else:
            ref = {"y": y, "e": e}
        t_mv = min(timeit.repeat(lambda: mod.matvec(u, scale, ke, shape), number=1, repeat=repeat))
        t_en = min(timeit.repeat(lambda: mod.element_energy(u, ke, shape), number=1, repeat=repeat))
        rows.append((name, t_mv, t_en))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--full", action="store_true", help="3D grid 50 x 100 x 50")
    args = ap.parse_args(argv)
    shapes = [(200, 100), (50, 100, 50) if args.full else (32, 64, 32)]
    print(f"{'grid':>14} {'backend':>8} {'matvec [ms]':>12} {'energy [ms]':>12}")
    for shape in shapes:
        rows = bench(shape, args.repeat)
        base = rows[0]
        for name, t_mv, t_en in rows:
            label = "x".join(map(str, shape))
            if t_mv is None:
                print(f"{label:>14} {name:>8} {'not built':>12}")
                continue
            speed = f"  ({base[1] / t_mv:.1f}x / {base[2] / t_en:.1f}x)" if name != "numpy" else ""
            print(f"{label:>14} {name:>8} {1e3 * t_mv:12.2f} {1e3 * t_en:12.2f}{speed}")


if __name__ == "__main__":
    main()
