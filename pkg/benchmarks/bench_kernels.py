"""Compiled vs NumPy kernels on one synthetic stereo pair.

    python3 benchmarks/bench_kernels.py --repeats 5

Times each hot kernel and the whole depth pipeline with both backends, checks
that their outputs agree and prints a table of medians.
"""

import argparse
import time
from contextlib import contextmanager

import numpy as np

from compoundeye import kernels, stereo
from compoundeye.synthgen import SceneSpec, default_layout, render_compound_frame

KERNEL_NAMES = ("census_transform", "census_cost_volume", "sgm_aggregate", "select_left", "select_right",
                "fgs_smooth", "zero_masked_costs")


@contextmanager
def backend(mod):
    saved = {n: getattr(kernels, n) for n in KERNEL_NAMES}
    for n in KERNEL_NAMES:
        setattr(kernels, n, getattr(mod, n))
    try:
        yield
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


def median_ms(fn, repeats):
    out = fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times)), out


def kernel_cases(frame, sgbm, wls):
    pipe = stereo.StereoPipeline(frame.layout)
    prep = pipe.prepare(frame)
    left = np.ascontiguousarray(prep.left, dtype=np.float32)
    right = np.ascontiguousarray(prep.right, dtype=np.float32)
    wh, ww = sgbm.census_window
    ref = kernels.get_backend("numpy")
    cl, cr = ref.census_transform(left, wh, ww), ref.census_transform(right, wh, ww)
    cost = np.ascontiguousarray(prep.volume.cost, dtype=np.uint16)
    dirs = np.ascontiguousarray(sgbm.directions)
    agg = np.ascontiguousarray(ref.sgm_aggregate(cost, sgbm.p1, sgbm.p2, dirs), dtype=np.int32)
    wx, wy = stereo.edge_weights(prep.left, wls.sigma_color)
    disp = stereo.select_disparity(stereo.CostVolume(agg, sgbm.d_min, sgbm.d_max), sgbm, "left")
    conf = disp.valid.astype(np.float64)
    stack = np.ascontiguousarray(np.stack([conf * disp.disparity, conf]))
    lam = np.asarray(wls.schedule(), dtype=np.float64)
    lm = np.ascontiguousarray(prep.left_markers, dtype=np.uint8)
    rm = np.ascontiguousarray(prep.right_markers, dtype=np.uint8)
    return {
        "census_transform": ("census_transform", (left, wh, ww)),
        "census_cost_volume": ("census_cost_volume", (cl, cr, sgbm.d_min, sgbm.d_max, sgbm.block_radius)),
        "sgm_aggregate (8 paths)": ("sgm_aggregate", (cost, sgbm.p1, sgbm.p2, dirs)),
        "select_left": ("select_left", (agg, float(sgbm.uniqueness_ratio), sgbm.d_min)),
        "select_right": ("select_right", (agg, float(sgbm.uniqueness_ratio), sgbm.d_min)),
        "fgs_smooth": ("fgs_smooth", (stack, wx, wy, lam)),
        "zero_masked_costs": ("zero_masked_costs", (cost.copy(), lm, rm, sgbm.d_min)),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--distance", type=float, default=40.0)
    args = ap.parse_args(argv)

    try:
        fast = kernels.get_backend("cython")
    except ImportError:
        raise SystemExit("compiled kernels are not built; reinstall with Cython available")
    slow = kernels.get_backend("numpy")
    sgbm, wls = stereo.SgbmParams(), stereo.WlsParams()
    frame, _ = render_compound_frame(default_layout(), SceneSpec(target_distance_mm=args.distance))

    print(f"{'stage':<26}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}  equal")
    for label, (name, call_args) in kernel_cases(frame, sgbm, wls).items():
        t_np, out_np = median_ms(lambda: getattr(slow, name)(*call_args), args.repeats)
        t_cy, out_cy = median_ms(lambda: getattr(fast, name)(*call_args), args.repeats)
        print(f"{label:<26}{t_np:>12.2f}{t_cy:>12.2f}{t_np / t_cy:>9.1f}x  {same(out_np, out_cy)}")

    pipe = stereo.StereoPipeline(frame.layout)
    totals = {}
    for mod in (slow, fast):
        with backend(mod):
            totals[mod] = median_ms(lambda: pipe.run(frame), args.repeats)
    (t_np, d_np), (t_cy, d_cy) = totals[slow], totals[fast]
    eq = np.array_equal(d_np.flags, d_cy.flags) and np.array_equal(d_np.depth, d_cy.depth, equal_nan=True)
    print(f"{'full depth pipeline':<26}{t_np:>12.2f}{t_cy:>12.2f}{t_np / t_cy:>9.1f}x  {eq}")


if __name__ == "__main__":
    main()
