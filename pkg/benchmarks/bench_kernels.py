"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--frames 5] [--repeat 20]

Each kernel runs once untimed first so numba compilation is excluded.
Results must agree between backends; the script exits non-zero otherwise.
"""
import argparse
import sys
import time

import numpy as np

from micalib import kernels
from micalib._accel import HAS_NUMBA
from micalib.data.synthetic import DEFAULT_CAMERA, DEFAULT_GT, camera_rays, make_scene, render_sequence
from micalib.geometry import params_to_transform
from micalib.mi import MIObjectiveContext, objective


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    if not HAS_NUMBA:
        print("numba is not installed; nothing to compare")
        return 0

    frames = render_sequence("boxes", args.frames, seed=1)
    T = params_to_transform(DEFAULT_GT)
    ctxs = {b: MIObjectiveContext(frames, DEFAULT_CAMERA, use_numba=b) for b in (True, False)}
    pf = ctxs[True].prepared[0]
    cam = ctxs[True].cam_params
    counts = kernels.binned_counts(pf.points, pf.lidar_bin, pf.cam_bin, T.rotation, T.translation,
                                   cam, 64, use_numba=False)[0]
    scene = make_scene("boxes", 1)
    origin = -T.rotation.T @ T.translation
    rays = np.ascontiguousarray(camera_rays(DEFAULT_CAMERA)[0] @ T.rotation)

    cases = {
        "binned_counts (1 frame)": lambda nb: kernels.binned_counts(
            pf.points, pf.lidar_bin, pf.cam_bin, T.rotation, T.translation, cam, 64, use_numba=nb)[1],
        "match_pixels (1 frame)": lambda nb: kernels.match_pixels(
            pf.points, T.rotation, T.translation, cam, np.isfinite(pf.image), use_numba=nb)[0].size,
        "counts_mi (64x64)": lambda nb: kernels.counts_mi(counts, use_numba=nb),
        "cast_rays (camera image)": lambda nb: float(np.sum(np.isfinite(
            kernels.cast_rays(origin, rays, scene.boxes, scene.planes, 80.0, use_numba=nb)[0]))),
        f"objective ({args.frames} frames)": lambda nb: objective(DEFAULT_GT, ctxs[nb]),
    }

    ok = True
    print(f"{'kernel':28s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        t_nb = best_of(lambda: fn(True), args.repeat)
        t_np = best_of(lambda: fn(False), max(3, args.repeat // 4))
        a, b = fn(True), fn(False)
        same = np.isclose(a, b, rtol=1e-12, atol=1e-12)
        ok &= bool(same)
        print(f"{name:28s} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:7.1f}x"
              f"{'' if same else '  MISMATCH'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
