"""Marker-based tactile pipeline: stitching, blob detection, matching, grid interpolation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .synthgen import CompoundFrame, SensorLayout

GRID_SHAPE = (6, 6)
_EIGHT = np.ones((3, 3), dtype=bool)


class RoiDerivationError(ValueError):
    pass


class InterpolationError(ValueError):
    pass


@dataclass(frozen=True)
class RoiEntry:
    unit_index: int
    crop: tuple[int, int, int, int]  # x, y, w, h in the raw frame
    place: tuple[int, int, int, int]  # x, y, w, h on the stitched canvas


@dataclass(frozen=True)
class RoiSet:
    entries: tuple[RoiEntry, ...]
    canvas_shape: tuple[int, int]
    overlaps_x: tuple[int, ...] = ()
    overlaps_y: tuple[int, ...] = ()


@dataclass(frozen=True)
class HsvBounds:
    h: tuple[float, float] = (0.0, 360.0)
    s: tuple[float, float] = (0.0, 1.0)
    v: tuple[float, float] = (0.0, 0.35)

    def __post_init__(self):
        for lo, hi in (self.h, self.s, self.v):
            if not lo < hi:
                raise ValueError("HSV bounds need min < max per channel")


@dataclass
class MarkerSet:
    centroids: np.ndarray  # (N, 2) x, y
    areas: np.ndarray

    def __len__(self):
        return len(self.centroids)


@dataclass
class DisplacementField:
    initial: np.ndarray  # (M, 2)
    current: np.ndarray  # (M, 2)
    initial_index: np.ndarray
    current_index: np.ndarray
    unmatched_initial: int = 0
    unmatched_current: int = 0

    @property
    def displacement(self) -> np.ndarray:
        return self.current - self.initial

    def __len__(self):
        return len(self.initial)


# --- stitching -------------------------------------------------------------------

def _tile_view(frame: np.ndarray, rect) -> np.ndarray:
    x0, y0, w, h = rect
    # undo the lens inversion
    return frame[y0 : y0 + h, x0 : x0 + w][::-1, ::-1]


def _pair_offsets(a: MarkerSet, b: MarkerSet, nominal, tol):
    """Median offset a - b over marker pairs consistent with the nominal shift."""
    if len(a) == 0 or len(b) == 0:
        return None
    diff = a.centroids[:, None, :] - b.centroids[None, :, :]
    ok = np.all(np.abs(diff - np.asarray(nominal)) <= tol, axis=-1)
    if not ok.any():
        return None
    return diff[ok]


def compute_rois(initial_frame: CompoundFrame, layout: SensorLayout | None = None, hsv=None,
                 area_bounds=(10, 600), search_tol: float = 10.0) -> RoiSet:
    """Derive crop rectangles for the tactile tiles from markers they have in common.

    Adjacent tiles are registered by markers seen in both; each shared edge is cut
    midway through the measured overlap so every marker lands on the canvas once.
    """
    layout = layout or initial_frame.layout
    units = layout.tactile_units()
    rows = sorted({u.row for u in units})
    cols = sorted({u.col for u in units})
    grid = {(rows.index(u.row), cols.index(u.col)): u for u in units}
    th, tw = layout.tile_shape
    nominal = layout.optics.tactile_overlap_px

    if nominal > 0:
        found = {}
        for key, u in grid.items():
            found[key] = detect_markers(_tile_view(initial_frame.image, u.rect), hsv, area_bounds)
        ox, oy = [], []
        for b in range(len(cols) - 1):
            pool = []
            for r in range(len(rows)):
                d = _pair_offsets(found[(r, b)], found[(r, b + 1)], (tw - nominal, 0.0), search_tol)
                if d is None:
                    raise RoiDerivationError(f"no common markers between tactile tiles ({r},{b}) and ({r},{b + 1})")
                pool.append(d[:, 0])
            ox.append(tw - int(round(float(np.median(np.concatenate(pool))))))
        for b in range(len(rows) - 1):
            pool = []
            for c in range(len(cols)):
                d = _pair_offsets(found[(b, c)], found[(b + 1, c)], (0.0, th - nominal), search_tol)
                if d is None:
                    raise RoiDerivationError(f"no common markers between tactile tiles ({b},{c}) and ({b + 1},{c})")
                pool.append(d[:, 1])
            oy.append(th - int(round(float(np.median(np.concatenate(pool))))))
    else:
        ox = [0] * (len(cols) - 1)
        oy = [0] * (len(rows) - 1)

    def cuts(overlaps, i, n):
        lo = overlaps[i - 1] - overlaps[i - 1] // 2 if i > 0 else 0
        hi = overlaps[i] // 2 if i < n - 1 else 0
        return lo, hi

    widths = []
    for c in range(len(cols)):
        lo, hi = cuts(ox, c, len(cols))
        widths.append((lo, tw - lo - hi))
    heights = []
    for r in range(len(rows)):
        lo, hi = cuts(oy, r, len(rows))
        heights.append((lo, th - lo - hi))
    if any(w <= 0 for _, w in widths) or any(h <= 0 for _, h in heights):
        raise RoiDerivationError("measured overlap exceeds the tile size")

    entries = []
    py = 0
    for r in range(len(rows)):
        ty, hh = heights[r]
        px = 0
        for c in range(len(cols)):
            tx, ww = widths[c]
            u = grid[(r, c)]
            x0, y0, _, _ = u.rect
            # flipped-view columns [tx, tx + ww) are raw columns [tw - tx - ww, tw - tx)
            crop = (x0 + tw - tx - ww, y0 + th - ty - hh, ww, hh)
            entries.append(RoiEntry(u.index, crop, (px, py, ww, hh)))
            px += ww
        py += hh
    canvas = (sum(h for _, h in heights), sum(w for _, w in widths))
    return RoiSet(tuple(entries), canvas, tuple(ox), tuple(oy))


def stitch(frame, rois: RoiSet) -> np.ndarray:
    """Assemble the tactile canvas; each crop is flipped in both axes before placement."""
    image = frame.image if isinstance(frame, CompoundFrame) else frame
    h, w = rois.canvas_shape
    out = np.zeros((h, w) + image.shape[2:], dtype=image.dtype)
    for e in rois.entries:
        x, y, cw, ch = e.crop
        px, py, pw, ph = e.place
        out[py : py + ph, px : px + pw] = image[y : y + ch, x : x + cw][::-1, ::-1]
    return out


# --- detection -------------------------------------------------------------------

def rgb_to_hsv(rgb: np.ndarray):
    """Hexcone HSV; H in degrees [0, 360), S and V in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    v = mx
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    h = np.zeros_like(mx)
    rmax = (delta > 0) & (mx == r)
    gmax = (delta > 0) & (mx == g) & ~rmax
    bmax = (delta > 0) & ~rmax & ~gmax
    h[rmax] = ((g - b)[rmax] / safe[rmax]) % 6.0
    h[gmax] = (b - r)[gmax] / safe[gmax] + 2.0
    h[bmax] = (r - g)[bmax] / safe[bmax] + 4.0
    return (h * 60.0) % 360.0, s, v


def hsv_mask(rgb: np.ndarray, bounds: HsvBounds) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive HSV threshold; returns (mask, V channel as uint8 max over RGB)."""
    rgb = np.asarray(rgb)
    mx = np.maximum(np.maximum(rgb[..., 0], rgb[..., 1]), rgb[..., 2])
    if rgb.dtype == np.uint8:
        # V = mx / 255, compared in integer steps
        m = (mx >= np.ceil(bounds.v[0] * 255.0 - 1e-9)) & (mx <= np.floor(bounds.v[1] * 255.0 + 1e-9))
    else:
        v = mx / 255.0
        m = (v >= bounds.v[0]) & (v <= bounds.v[1])
    full_h = bounds.h[0] <= 0.0 and bounds.h[1] >= 360.0
    full_s = bounds.s[0] <= 0.0 and bounds.s[1] >= 1.0
    if not (full_h and full_s):
        h, s, _ = rgb_to_hsv(rgb)
        m &= (s >= bounds.s[0]) & (s <= bounds.s[1])
        m &= (h >= bounds.h[0]) & (h <= bounds.h[1])
    return m, mx


def _median_u8(a: np.ndarray) -> float:
    """np.median of a uint8 array via its histogram."""
    cum = np.cumsum(np.bincount(a.ravel(), minlength=256))
    n = int(cum[-1])
    lo = int(np.searchsorted(cum, (n - 1) // 2 + 1))
    hi = int(np.searchsorted(cum, n // 2 + 1))
    return 0.5 * (lo + hi)


def _crack_lengths(labels: np.ndarray, n: int) -> np.ndarray:
    """Count of pixel edges separating each label from anything else."""
    pad = np.pad(labels, 1)
    counts = np.zeros(n + 1, dtype=np.int64)
    for a, b in ((pad[1:, :], pad[:-1, :]), (pad[:, 1:], pad[:, :-1])):
        diff = a != b
        counts += np.bincount(a[diff], minlength=n + 1)
        counts += np.bincount(b[diff], minlength=n + 1)
    return counts


def detect_markers(image: np.ndarray, hsv: HsvBounds | None = None, area_bounds=(10, 600),
                   min_circularity: float = 0.6) -> MarkerSet:
    """Threshold in HSV, label 8-connected blobs, filter by area and circularity.

    Centroids are weighted by darkness relative to the background over the blob
    grown by one pixel, so anti-aliased rims contribute their sub-pixel signal.
    """
    hsv = hsv or HsvBounds()
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=-1)
    mask, mx = hsv_mask(image, hsv)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return MarkerSet(np.zeros((0, 2)), np.zeros(0))
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    perim = (np.pi / 4.0) * _crack_lengths(labels, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        circ = np.where(perim > 0, 4.0 * np.pi * areas / (perim * perim), 0.0)
    bg = _median_u8(mx) if mx.dtype == np.uint8 else float(np.median(mx))
    keep = (areas >= area_bounds[0]) & (areas <= area_bounds[1]) & (circ >= min_circularity)
    keep[0] = False
    if not keep.any():
        return MarkerSet(np.zeros((0, 2)), np.zeros(0))
    # each kept blob grown by one pixel into unlabelled background
    h, w = labels.shape
    ys, xs = np.nonzero(keep[labels])
    own = labels[ys, xs]
    oy = np.repeat(np.arange(-1, 2), 3)
    ox = np.tile(np.arange(-1, 2), 3)
    gy = (ys[:, None] + oy[None, :]).ravel()
    gx = (xs[:, None] + ox[None, :]).ravel()
    gid = np.repeat(own, 9)
    inside = (gy >= 0) & (gy < h) & (gx >= 0) & (gx < w)
    gy, gx, gid = gy[inside], gx[inside], gid[inside]
    there = labels[gy, gx]
    ok = (there == 0) | (there == gid)
    key = np.unique((gy[ok].astype(np.int64) * w + gx[ok]) * (n + 1) + gid[ok])
    ids = key % (n + 1)
    pix = key // (n + 1)
    ys = pix // w
    xs = pix % w
    wts = np.clip(bg - mx[ys, xs].astype(np.float64), 0.0, None)
    tot = np.bincount(ids, wts, minlength=n + 1)
    sx = np.bincount(ids, wts * xs, minlength=n + 1)
    sy = np.bincount(ids, wts * ys, minlength=n + 1)
    good = keep & (tot > 0)
    cents = np.stack([sx[good] / tot[good], sy[good] / tot[good]], axis=1)
    return MarkerSet(cents, areas[good].astype(np.float64))


# --- matching and interpolation ----------------------------------------------------

def match_markers(initial: MarkerSet, current: MarkerSet, max_radius: float) -> DisplacementField:
    """Mutual nearest-neighbour correspondence within ``max_radius`` px."""
    a = initial.centroids
    b = current.centroids
    if len(a) == 0 or len(b) == 0:
        empty = np.zeros((0, 2))
        idx = np.zeros(0, dtype=np.intp)
        return DisplacementField(empty, empty.copy(), idx, idx.copy(), len(a), len(b))
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    nn_a = np.argmin(d2, axis=1)
    nn_b = np.argmin(d2, axis=0)
    ia = np.arange(len(a))
    ok = (nn_b[nn_a] == ia) & (d2[ia, nn_a] <= max_radius * max_radius)
    ia = ia[ok]
    ib = nn_a[ok]
    return DisplacementField(a[ia].copy(), b[ib].copy(), ia, ib, len(a) - len(ia), len(b) - len(ib))


def grid_nodes(canvas_shape, grid_shape=GRID_SHAPE) -> np.ndarray:
    """Node (x, y) positions at cell centres of a uniform grid over the canvas; (gh, gw, 2)."""
    h, w = canvas_shape
    gh, gw = grid_shape
    xs = (np.arange(gw) + 0.5) * w / gw - 0.5
    ys = (np.arange(gh) + 0.5) * h / gh - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def idw(points: np.ndarray, values: np.ndarray, queries: np.ndarray, k: int = 4, power: float = 2.0,
        snap: float = 1e-9) -> np.ndarray:
    """Inverse-distance weighting over the ``k`` nearest points."""
    points = np.asarray(points, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    d = np.sqrt(((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1))
    k = min(k, len(points))
    near = np.argsort(d, axis=1, kind="stable")[:, :k]
    dn = np.take_along_axis(d, near, axis=1)
    vals = values[near]  # (Q, k, C)
    out = np.empty((len(q), values.shape[1]))
    hit = dn[:, 0] < snap
    out[hit] = vals[hit, 0]
    miss = ~hit
    wts = 1.0 / dn[miss] ** power
    out[miss] = (wts[..., None] * vals[miss]).sum(axis=1) / wts.sum(axis=1)[:, None]
    return out


def interpolate_marker_grid(positions, displacements, canvas_shape, grid_shape=GRID_SHAPE, k=4, power=2.0):
    positions = np.asarray(positions, dtype=np.float64)
    if len(positions) == 0:
        raise InterpolationError("no matched markers to interpolate")
    nodes = grid_nodes(canvas_shape, grid_shape)
    out = idw(positions, displacements, nodes.reshape(-1, 2), k, power)
    return out.reshape(grid_shape + (2,))


def interpolate_grid(field: DisplacementField, canvas_shape, grid_shape=GRID_SHAPE) -> np.ndarray:
    """6 x 6 x 2 displacement grid sampled at the reference marker positions."""
    return interpolate_marker_grid(field.initial, field.displacement, canvas_shape, grid_shape)


@dataclass
class TactileTracker:
    """Reference state from a pre-contact frame, reused for every later frame."""

    rois: RoiSet
    reference: MarkerSet
    max_radius: float
    hsv: HsvBounds = field(default_factory=HsvBounds)
    area_bounds: tuple[int, int] = (10, 600)

    @classmethod
    def from_initial(cls, frame: CompoundFrame, max_radius: float | None = None, **kw):
        rois = compute_rois(frame, **kw)
        hsv = kw.get("hsv") or HsvBounds()
        area = kw.get("area_bounds", (10, 600))
        ref = detect_markers(stitch(frame, rois), hsv, area)
        if max_radius is None:
            max_radius = 0.5 * min_spacing(ref.centroids)
        return cls(rois, ref, max_radius, hsv, area)

    def process(self, frame) -> tuple[np.ndarray, DisplacementField, MarkerSet]:
        canvas = stitch(frame, self.rois)
        cur = detect_markers(canvas, self.hsv, self.area_bounds)
        fld = match_markers(self.reference, cur, self.max_radius)
        grid = interpolate_grid(fld, self.rois.canvas_shape)
        return grid, fld, cur


def min_spacing(points: np.ndarray) -> float:
    if len(points) < 2:
        return np.inf
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min()))
