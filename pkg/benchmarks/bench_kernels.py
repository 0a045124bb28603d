"""Time the compiled and numpy kernel backends on body-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N time per call for each backend
and the speedup. Outputs of the two backends are compared before timing.
"""

import argparse
import timeit

import numpy as np

from pofcap import kernels
from pofcap.skeleton import ModelParams, body_skeleton


def inputs(seed=0):
    skel = body_skeleton()
    rng = np.random.default_rng(seed)
    params = ModelParams(0.5 * rng.standard_normal((skel.n_joints, 3)),
                         rng.uniform(0.9, 1.1, skel.n_parts), [0, 0, 400])
    scale = np.ones(skel.n_joints)
    scale[skel.part_child] = params.phi
    fk = (skel.parents, skel.order, skel.offsets, params.theta, scale, params.t)
    pos, rot, omega = kernels.backend("python").forward_kinematics(*fk)
    n = 64
    anchor = rng.integers(0, skel.n_joints, n).astype(np.int32)
    frame = anchor.copy()
    local = rng.normal(0, 5, (n, 3))
    att = (skel.parents, skel.offsets, pos, rot, omega, anchor, frame, local)
    n_seg = 17
    starts = rng.uniform(40, 320, (n_seg, 2))
    ends = starts + rng.normal(0, 40, (n_seg, 2))
    values = rng.normal(size=(n_seg, 3))
    values /= np.linalg.norm(values, axis=1, keepdims=True)
    raster = (np.arange(n_seg, dtype=np.int32), starts, ends, values, 10.0)
    return fk, att, raster


def run_raster(k, args, size=(368, 368)):
    channels = args[0]
    sums = np.zeros((len(channels), 3) + size)
    counts = np.zeros((len(channels),) + size, dtype=np.int32)
    k.rasterize_segments(sums, counts, *args)
    return sums, counts


def calls(k, fk, att, raster):
    return {
        "forward_kinematics": lambda: k.forward_kinematics(*fk),
        "attached_jacobian": lambda: k.attached_jacobian(*att),
        "rasterize_segments": lambda: run_raster(k, raster),
    }


def check(fk, att, raster):
    py, cy = kernels.backend("python"), kernels.backend("cython")
    for name, f in calls(py, fk, att, raster).items():
        a, b = f(), calls(cy, fk, att, raster)[name]()
        for x, y in zip(a, b):
            if not np.allclose(x, y, atol=1e-9):
                raise SystemExit(f"{name}: backends disagree")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    fk, att, raster = inputs()
    try:
        kernels.backend("cython")
    except ImportError:
        raise SystemExit("compiled backend not built; run: python3 setup.py build_ext --inplace")
    check(fk, att, raster)
    print(f"{'kernel':<20} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name in ("forward_kinematics", "attached_jacobian", "rasterize_segments"):
        best = {}
        for backend in ("python", "cython"):
            f = calls(kernels.backend(backend), fk, att, raster)[name]
            number = 20 if name != "rasterize_segments" else 3
            t = min(timeit.repeat(f, number=number, repeat=args.repeat)) / number
            best[backend] = 1e3 * t
        print(f"{name:<20} {best['python']:>10.3f} {best['cython']:>10.3f} "
              f"{best['python'] / best['cython']:>7.1f}x")


if __name__ == "__main__":
    main()
