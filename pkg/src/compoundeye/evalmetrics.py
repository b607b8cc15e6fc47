"""Depth-quality metrics over a region of interest, plus sweep and report helpers."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .geometry import best_fit_plane
from .stereo import MARKER_MASKED, DepthMap


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RoiSpec:
    """Rectangle ``[x0, x1) x [y0, y1)`` minus an optional exclusion mask (marker areas)."""

    x0: int
    y0: int
    x1: int
    y1: int
    exclude: np.ndarray | None = None

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise MetricError("empty ROI rectangle")

    def mask(self, shape) -> np.ndarray:
        h, w = shape
        if self.x0 < 0 or self.y0 < 0 or self.x1 > w or self.y1 > h:
            raise MetricError(f"ROI {self.x0, self.y0, self.x1, self.y1} outside {w}x{h} image")
        m = np.zeros((h, w), dtype=bool)
        m[self.y0 : self.y1, self.x0 : self.x1] = True
        if self.exclude is not None:
            m &= ~np.asarray(self.exclude, dtype=bool)
        if not m.any():
            raise MetricError("ROI has no pixels")
        return m

    def excluding(self, mask) -> RoiSpec:
        ex = np.asarray(mask, dtype=bool)
        if self.exclude is not None:
            ex = ex | self.exclude
        return RoiSpec(self.x0, self.y0, self.x1, self.y1, ex)


def roi_for(depth: DepthMap, d_max: int, margin: int = 3) -> RoiSpec:
    """Standard ROI: drop the left disparity border, filter margins and marker areas."""
    h, w = depth.shape
    return RoiSpec(d_max + margin, margin, w - margin, h - margin, depth.flags == MARKER_MASKED)


def _depth_array(depth) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(depth, DepthMap):
        return depth.depth, depth.valid
    z = np.asarray(depth, dtype=np.float64)
    return z, np.isfinite(z) & (z > 0)


def fill_rate(depth, roi: RoiSpec) -> float:
    z, valid = _depth_array(depth)
    m = roi.mask(z.shape)
    return 100.0 * np.count_nonzero(valid & m) / np.count_nonzero(m)


def _plane_residuals(z, sel):
    plane = best_fit_plane(np.where(sel, z, np.nan), sel)
    rows, cols = np.nonzero(sel)
    return z[sel] - plane.depth_at(rows, cols)


def z_accuracy(depth, gt_distance: float, rig, roi: RoiSpec, plane_correction: bool = True) -> float:
    """Median absolute error against ``flange + gt_distance``.

    With plane correction the fitted plane replaces the map's own offset and tilt,
    so the error is measured about the true depth after removing pose errors.
    """
    z, valid = _depth_array(depth)
    sel = valid & roi.mask(z.shape)
    if not sel.any():
        raise MetricError("no valid depth in ROI")
    flange = rig.flange_focal_mm if rig is not None else 0.0
    gt = flange + float(gt_distance)
    if plane_correction:
        corrected = _plane_residuals(z, sel) + gt
    else:
        corrected = z[sel]
    return float(np.median(np.abs(corrected - gt)))


def spatial_rmse(depth, roi: RoiSpec, reference_mm: float | None = None) -> float:
    """RMS deviation from the best-fit plane, in percent of ``reference_mm``.

    The reference defaults to the median valid depth in the ROI.
    """
    z, valid = _depth_array(depth)
    sel = valid & roi.mask(z.shape)
    if np.count_nonzero(sel) < 3:
        raise MetricError("too few valid pixels for a plane fit")
    res = _plane_residuals(z, sel)
    ref = float(np.median(z[sel])) if reference_mm is None else float(reference_mm)
    if ref <= 0:
        raise MetricError("reference distance must be positive")
    return float(100.0 * np.sqrt(np.mean(res * res)) / ref)


def temporal_noise(frames, roi: RoiSpec) -> float:
    """Median over ROI pixels (valid in every frame) of the per-pixel sample std."""
    frames = list(frames)
    if len(frames) < 2:
        raise MetricError("temporal noise needs at least two frames")
    arrays = [_depth_array(f) for f in frames]
    shape = arrays[0][0].shape
    m = roi.mask(shape)
    for z, valid in arrays:
        if z.shape != shape:
            raise MetricError("frames differ in shape")
        m &= valid
    if not m.any():
        raise MetricError("no pixel valid in all frames")
    stack = np.stack([z[m] for z, _ in arrays])
    return float(np.median(np.std(stack, axis=0, ddof=1)))


@dataclass
class MetricReport:
    distance_mm: float
    pair: str
    fill_rate: float
    z_accuracy_mm: float
    rmse_percent: float
    temporal_noise_mm: float

    def __post_init__(self):
        if not 0.0 <= self.fill_rate <= 100.0:
            raise MetricError("fill rate outside [0, 100]")


CSV_FIELDS = [f.name for f in fields(MetricReport)]


def evaluate_captures(depths, gt_distance: float, rig, d_max: int, pair: str = "left") -> MetricReport:
    """Metrics for repeated captures of one static plane; per-frame values summarised by median."""
    depths = list(depths)
    rois = [roi_for(d, d_max) for d in depths]
    fills = [fill_rate(d, r) for d, r in zip(depths, rois)]
    acc, rmse = [], []
    for d, r in zip(depths, rois):
        try:
            acc.append(z_accuracy(d, gt_distance, rig, r))
            rmse.append(spatial_rmse(d, r, gt_distance if gt_distance > 0 else None))
        except (MetricError, ValueError):
            acc.append(np.inf)
            rmse.append(np.inf)
    if len(depths) >= 2:
        union = rois[0]
        for d in depths[1:]:
            union = union.excluding(d.flags == MARKER_MASKED)
        try:
            tn = temporal_noise(depths, union)
        except MetricError:
            tn = float("nan")
    else:
        tn = float("nan")
    return MetricReport(float(gt_distance), pair, float(np.median(fills)), float(np.median(acc)),
                        float(np.median(rmse)), tn)


def write_csv(reports, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_FIELDS)
        for r in reports:
            wr.writerow([_fmt(getattr(r, k)) for k in CSV_FIELDS])


def read_csv(path) -> list[MetricReport]:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append(MetricReport(float(row["distance_mm"]), row["pair"], float(row["fill_rate"]),
                                float(row["z_accuracy_mm"]), float(row["rmse_percent"]),
                                float(row["temporal_noise_mm"])))
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 6))
    return v


def summarize(reports) -> dict:
    """Per-distance medians (one entry per pair and distance) plus sweep-wide medians."""
    reports = list(reports)
    by = {}
    for r in reports:
        by.setdefault((r.pair, r.distance_mm), []).append(r)
    rows = []
    for (pair, dist), rs in sorted(by.items()):
        rows.append({
            "pair": pair,
            "distance_mm": dist,
            "fill_rate": float(np.median([r.fill_rate for r in rs])),
            "z_accuracy_mm": float(np.median([r.z_accuracy_mm for r in rs])),
            "rmse_percent": float(np.median([r.rmse_percent for r in rs])),
            "temporal_noise_mm": float(np.nanmedian([r.temporal_noise_mm for r in rs]))
            if any(np.isfinite(r.temporal_noise_mm) for r in rs) else None,
        })
    overall = {}
    if reports:
        overall = {
            "fill_rate": float(np.median([r.fill_rate for r in reports])),
            "rmse_percent": float(np.median([r.rmse_percent for r in reports])),
            "z_accuracy_mm": float(np.median([r.z_accuracy_mm for r in reports])),
        }
    return {"per_distance": rows, "overall": overall}


def write_summary(reports, path) -> None:
    data = summarize(reports)
    Path(path).write_text(json.dumps(_rounded(data), indent=2, sort_keys=True) + "\n")


def _rounded(obj):
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v) for v in obj]
    return obj


def report_dict(r: MetricReport) -> dict:
    return _rounded(asdict(r))


def depth_sweep(layout=None, distances=range(10, 75, 5), frames: int = 5, pairs=("left",), sgbm=None, wls=None,
                seed: int = 0):
    """Render static planes at each distance and score the depth pipeline on them."""
    from .stereo import SgbmParams, StereoPipeline, WlsParams
    from .synthgen import SceneSpec, default_layout, render_sequence

    layout = layout or default_layout()
    sgbm = sgbm or SgbmParams()
    wls = wls or WlsParams()
    pipes = {p: StereoPipeline(layout, p, sgbm, wls) for p in pairs}
    reports = []
    for i, dist in enumerate(distances):
        scene = SceneSpec(target_distance_mm=float(dist), texture_seed=seed * 1000 + i, rng_seed=seed * 1000 + 100 * i)
        captures, _ = render_sequence(layout, scene, frames)
        for p in pairs:
            depths = [pipes[p].run(f) for f in captures]
            reports.append(evaluate_captures(depths, float(dist), pipes[p].rig, sgbm.d_max, p))
    return reports
