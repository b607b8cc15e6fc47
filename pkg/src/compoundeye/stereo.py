"""Stereo depth path: tiles, rectification, census/SGM matching, WLS refinement, depth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .geometry import StereoRig, triangulate_depth
from .synthgen import STEREO_ROLES, CompoundFrame, LayoutError, SensorLayout, rig_for_pair

VALID = 0
BELOW_MIN = 1
LR_FAIL = 2
UNIQUENESS_FAIL = 3
MARKER_MASKED = 4
FLAG_NAMES = {BELOW_MIN: "below_min", LR_FAIL: "lr_fail", UNIQUENESS_FAIL: "uniqueness_fail",
              MARKER_MASKED: "marker_masked"}

PATHS_8 = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))


class StereoParamError(ValueError):
    pass


@dataclass(frozen=True)
class SgbmParams:
    census_window: tuple[int, int] = (5, 5)
    block_radius: int = 1
    p1: int = 10
    p2: int = 120
    uniqueness_ratio: float = 0.05
    lr_threshold: float = 1.0
    d_min: int = 6
    d_max: int = 52
    paths: int = 8

    def __post_init__(self):
        wh, ww = self.census_window
        if wh % 2 == 0 or ww % 2 == 0 or wh < 1 or ww < 1 or wh * ww - 1 > 64:
            raise StereoParamError("census window must be odd and fit 64 bits")
        if self.block_radius < 0:
            raise StereoParamError("block radius must be >= 0")
        if not 0 < self.p1 < self.p2:
            raise StereoParamError("need 0 < P1 < P2")
        if not 0.0 <= self.uniqueness_ratio < 1.0:
            raise StereoParamError("uniqueness_ratio must lie in [0, 1)")
        if self.lr_threshold < 0:
            raise StereoParamError("lr_threshold must be >= 0")
        if not 0 <= self.d_min < self.d_max:
            raise StereoParamError("need 0 <= d_min < d_max")
        if self.paths not in (4, 8):
            raise StereoParamError("paths must be 4 or 8")

    @property
    def directions(self) -> np.ndarray:
        return np.asarray(PATHS_8[: self.paths], dtype=np.int32)


@dataclass(frozen=True)
class WlsParams:
    lam: float = 8.0
    sigma_color: float = 8.0
    iterations: int = 3
    min_support: float = 0.05

    def __post_init__(self):
        if self.lam < 0:
            raise StereoParamError("lambda must be >= 0")
        if self.sigma_color <= 0:
            raise StereoParamError("sigma_color must be > 0")
        if self.iterations < 1:
            raise StereoParamError("iterations must be >= 1")

    def schedule(self) -> list[float]:
        """Per-sweep lambdas, shrinking by 4x each sweep."""
        t = self.iterations
        return [self.lam * 1.5 * 4.0 ** (t - i) / (4.0**t - 1.0) for i in range(1, t + 1)]


@dataclass
class CostVolume:
    cost: np.ndarray  # (H, W, D) non-negative integers
    d_min: int
    d_max: int

    def __post_init__(self):
        if self.cost.shape[2] != self.d_max - self.d_min + 1:
            raise StereoParamError("cost volume depth does not match disparity range")

    @property
    def height(self) -> int:
        return self.cost.shape[0]

    @property
    def width(self) -> int:
        return self.cost.shape[1]


@dataclass
class DisparityMap:
    disparity: np.ndarray  # float64; 0 where invalid
    flags: np.ndarray  # uint8, VALID or one provenance code
    d_min: int
    d_max: int

    @property
    def valid(self) -> np.ndarray:
        return self.flags == VALID

    def as_nan(self) -> np.ndarray:
        return np.where(self.valid, self.disparity, np.nan)


@dataclass
class DepthMap:
    depth: np.ndarray  # mm, NaN where invalid
    flags: np.ndarray
    disparity: DisparityMap | None = None

    @property
    def valid(self) -> np.ndarray:
        return self.flags == VALID

    @property
    def shape(self):
        return self.depth.shape


@dataclass
class Tile:
    unit_index: int
    role: str
    image: np.ndarray


# --- tiles and rectification ------------------------------------------------------

def extract_tiles(frame, layout: SensorLayout, roles=None) -> list[Tile]:
    image = frame.image if isinstance(frame, CompoundFrame) else np.asarray(frame)
    if tuple(image.shape[:2]) != tuple(layout.frame_shape):
        raise LayoutError(f"frame {image.shape[:2]} does not match layout {layout.frame_shape}")
    if isinstance(roles, str):
        roles = (roles,)
    out = []
    for u in layout.units:
        if roles is not None and u.role not in roles:
            continue
        x0, y0, w, h = u.rect
        if x0 < 0 or y0 < 0 or x0 + w > image.shape[1] or y0 + h > image.shape[0]:
            raise LayoutError(f"unit {u.index} rectangle outside frame")
        out.append(Tile(u.index, u.role, image[y0 : y0 + h, x0 : x0 + w].copy()))
    return out


def grayscale(rgb: np.ndarray) -> np.ndarray:
    """Integer luma (77 R + 150 G + 29 B) >> 8."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return rgb.astype(np.uint8, copy=False)
    c = rgb.astype(np.uint16)
    return ((77 * c[..., 0] + 150 * c[..., 1] + 29 * c[..., 2]) >> 8).astype(np.uint8)


class RectifyMap:
    """Precomputed bilinear taps for one camera; output is transposed like ``rectify_tile``."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, src_shape):
        h, w = src_shape
        self.rows, self.cols = rows, cols
        self.valid = (rows >= 0) & (rows <= h - 1) & (cols >= 0) & (cols <= w - 1)
        r = np.clip(rows, 0, h - 1)
        c = np.clip(cols, 0, w - 1)
        r0 = np.minimum(np.floor(r).astype(np.intp), max(h - 2, 0))
        c0 = np.minimum(np.floor(c).astype(np.intp), max(w - 2, 0))
        self.fr = r - r0
        self.fc = c - c0
        r1 = np.minimum(r0 + 1, h - 1)
        c1 = np.minimum(c0 + 1, w - 1)
        self.taps = [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1]
        self.src_shape = (h, w)

    @classmethod
    def build(cls, camera, rig: StereoRig | None, tile_shape):
        h, w = tile_shape
        homography = np.eye(3) if rig is None else rig.homography_for(camera)
        uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64), indexing="ij")
        px, py = camera.principal_point
        xr = (uu - px) / camera.focal_px
        yr = (vv - py) / camera.focal_px
        if not np.allclose(homography, np.eye(3)):
            hinv = np.linalg.inv(homography)
            den = hinv[2, 0] * xr + hinv[2, 1] * yr + hinv[2, 2]
            xr, yr = (
                (hinv[0, 0] * xr + hinv[0, 1] * yr + hinv[0, 2]) / den,
                (hinv[1, 0] * xr + hinv[1, 1] * yr + hinv[1, 2]) / den,
            )
        us, vs = camera.normalized_to_pixel(xr, yr)
        return cls(vs, us, (h, w))

    def apply(self, tile: np.ndarray):
        """Same arithmetic as ``geometry.bilinear_sample`` for a 2D tile."""
        if tile.shape[:2] != self.src_shape or tile.ndim != 2:
            raise StereoParamError("rectify map expects a grayscale tile of the calibrated size")
        f = tile.ravel().astype(np.float64)
        a, b, c, d = (f[t] for t in self.taps)
        top = a * (1 - self.fc) + b * self.fc
        bot = c * (1 - self.fc) + d * self.fc
        vals = top * (1 - self.fr) + bot * self.fr
        if np.issubdtype(tile.dtype, np.integer):
            info = np.iinfo(tile.dtype)
            vals = np.clip(np.rint(vals), info.min, info.max).astype(tile.dtype)
        return vals, self.valid


# --- matching --------------------------------------------------------------------

def census_cost_volume(rect_left, rect_right, params: SgbmParams) -> CostVolume:
    left = np.asarray(rect_left, dtype=np.float32)
    right = np.asarray(rect_right, dtype=np.float32)
    if left.shape != right.shape or left.ndim != 2:
        raise StereoParamError("rectified images must be equal-sized grayscale")
    if params.d_max >= left.shape[1]:
        raise StereoParamError("d_max must be smaller than the image width")
    wh, ww = params.census_window
    cl = kernels.census_transform(np.ascontiguousarray(left), wh, ww)
    cr = kernels.census_transform(np.ascontiguousarray(right), wh, ww)
    cost = kernels.census_cost_volume(cl, cr, params.d_min, params.d_max, params.block_radius)
    return CostVolume(np.asarray(cost), params.d_min, params.d_max)


def sgm_aggregate(volume: CostVolume, params: SgbmParams, directions=None) -> CostVolume:
    """Sum of 1D path costs; ``directions`` overrides the params' path set with (dx, dy) rows."""
    dirs = params.directions if directions is None else np.asarray(directions, dtype=np.int32).reshape(-1, 2)
    cost = np.ascontiguousarray(volume.cost, dtype=np.uint16)
    agg = kernels.sgm_aggregate(cost, int(params.p1), int(params.p2), np.ascontiguousarray(dirs))
    return CostVolume(np.asarray(agg), volume.d_min, volume.d_max)


def subpixel_offset(c_minus, c0, c_plus):
    """Vertex of the parabola through three costs, relative to the middle one."""
    den = float(c_minus) - 2.0 * float(c0) + float(c_plus)
    if den <= 0:
        return 0.0
    return (float(c_minus) - float(c_plus)) / (2.0 * den)


def select_disparity(aggregated: CostVolume, params: SgbmParams, side: str = "left") -> DisparityMap:
    agg = np.ascontiguousarray(aggregated.cost, dtype=np.int32)
    if side == "left":
        disp, ok = kernels.select_left(agg, float(params.uniqueness_ratio), int(aggregated.d_min))
    elif side == "right":
        disp, ok = kernels.select_right(agg, float(params.uniqueness_ratio), int(aggregated.d_min))
    else:
        raise ValueError("side must be 'left' or 'right'")
    disp = np.asarray(disp)
    flags = np.where(np.asarray(ok) != 0, VALID, UNIQUENESS_FAIL).astype(np.uint8)
    return _enforce_range(DisparityMap(disp, flags, aggregated.d_min, aggregated.d_max))


def _enforce_range(dm: DisparityMap) -> DisparityMap:
    d = dm.disparity
    below = dm.valid & (d < dm.d_min)
    dm.flags[below] = BELOW_MIN
    # the parabola vertex can poke past the last bin by < 0.5 px
    dm.disparity = np.where(dm.valid, np.minimum(d, dm.d_max), 0.0)
    return dm


def lr_check(left: DisparityMap, right: DisparityMap, threshold: float) -> DisparityMap:
    """Flag left pixels whose match in the right map disagrees by more than ``threshold``."""
    h, w = left.disparity.shape
    xs = np.arange(w)[None, :]
    xr = np.rint(xs - left.disparity).astype(np.intp)
    inside = (xr >= 0) & (xr < w)
    xr = np.clip(xr, 0, w - 1)
    rows = np.arange(h)[:, None]
    dr = right.disparity[rows, xr]
    rv = right.valid[rows, xr]
    ok = inside & rv & (np.abs(left.disparity - dr) <= threshold)
    flags = left.flags.copy()
    flags[left.valid & ~ok] = LR_FAIL
    return DisparityMap(np.where(flags == VALID, left.disparity, 0.0), flags, left.d_min, left.d_max)


def edge_weights(guide: np.ndarray, sigma_color: float):
    g = np.asarray(guide, dtype=np.float64)
    wx = np.exp(-np.abs(np.diff(g, axis=1)) / sigma_color)
    wy = np.exp(-np.abs(np.diff(g, axis=0)) / sigma_color)
    return np.ascontiguousarray(wx), np.ascontiguousarray(wy)


def wls_refine(disparity: DisparityMap, guide: np.ndarray, params: WlsParams,
               confidence: np.ndarray | None = None) -> DisparityMap:
    """Edge-aware smoothing; invalid pixels have no data term and are filled from neighbours.

    Values and confidence are smoothed with the same operator and divided, so the
    result is a guide-weighted average of trusted disparities.  A filled pixel
    becomes valid when its smoothed support reaches ``min_support``.
    """
    if guide.shape != disparity.disparity.shape:
        raise StereoParamError("guide and disparity shapes differ")
    conf = disparity.valid.astype(np.float64) if confidence is None else np.asarray(confidence, dtype=np.float64)
    if params.lam == 0:
        return DisparityMap(disparity.disparity.copy(), disparity.flags.copy(), disparity.d_min, disparity.d_max)
    wx, wy = edge_weights(guide, params.sigma_color)
    stack = np.ascontiguousarray(np.stack([conf * disparity.disparity, conf]))
    out = np.asarray(kernels.fgs_smooth(stack, wx, wy, np.asarray(params.schedule(), dtype=np.float64)))
    num, den = out[0], out[1]
    support = den > params.min_support
    refined = np.where(support, num / np.where(support, den, 1.0), 0.0)
    flags = disparity.flags.copy()
    trusted = conf > 0
    flags[support & ~trusted] = VALID
    # pixels without surviving support cannot be refined; they keep value and flag
    refined = np.where(~support, disparity.disparity, refined)
    res = DisparityMap(np.where(flags == VALID, refined, 0.0), flags, disparity.d_min, disparity.d_max)
    return _enforce_range(res)


def disparity_to_depth(disparity: DisparityMap, rig: StereoRig, marker_mask: np.ndarray | None = None) -> DepthMap:
    flags = disparity.flags.copy()
    if marker_mask is not None:
        marker_mask = np.asarray(marker_mask, dtype=bool)
        if marker_mask.shape != flags.shape:
            raise StereoParamError("marker mask shape differs from disparity map")
        flags[marker_mask] = MARKER_MASKED
    ok = (flags == VALID) & (disparity.disparity > 0)
    flags[(flags == VALID) & ~ok] = BELOW_MIN
    depth = np.full(flags.shape, np.nan)
    depth[ok] = triangulate_depth(rig.focal_px, rig.baseline_mm, disparity.disparity[ok])
    dm = DisparityMap(np.where(ok, disparity.disparity, 0.0), flags, disparity.d_min, disparity.d_max)
    return DepthMap(depth, flags, dm)


# --- markers seen by the stereo units ----------------------------------------------

def marker_mask(gray: np.ndarray, threshold: int = 50, dilate: int = 4) -> np.ndarray:
    """Dark elastomer dots: pixels at or below ``threshold`` grown by ``dilate`` px."""
    m = np.asarray(gray) <= threshold
    if dilate > 0 and m.any():
        m = ndimage.binary_dilation(m, structure=np.ones((3, 3), dtype=bool), iterations=dilate)
    return m


def suppress_marker_costs(volume: CostVolume, left_mask: np.ndarray, right_mask: np.ndarray) -> CostVolume:
    """Zero the cost of candidates that involve a marker pixel in either view.

    Markers lie far outside the search range, so any match on them is spurious;
    a zero cost leaves the choice to the smoothness terms of the aggregation.
    """
    if not (left_mask.any() or right_mask.any()):
        return volume
    cost = np.array(volume.cost, dtype=np.uint16, order="C")
    lm = np.ascontiguousarray(left_mask, dtype=np.uint8)
    rm = np.ascontiguousarray(right_mask, dtype=np.uint8)
    return CostVolume(np.asarray(kernels.zero_masked_costs(cost, lm, rm, int(volume.d_min))), volume.d_min, volume.d_max)


def warp_right_mask(right_mask: np.ndarray, disparity: DisparityMap) -> np.ndarray:
    """Left pixels whose correspondence lands on a right-view marker."""
    h, w = right_mask.shape
    xr = np.clip(np.rint(np.arange(w)[None, :] - disparity.disparity), 0, w - 1).astype(np.intp)
    hit = right_mask[np.arange(h)[:, None], xr]
    return hit & disparity.valid


# --- pipeline ---------------------------------------------------------------------

@dataclass
class PreparedPair:
    """Everything upstream of aggregation; reusable across SGM/WLS parameter sets."""

    left: np.ndarray  # rectified grayscale
    right: np.ndarray
    volume: CostVolume
    left_markers: np.ndarray
    right_markers: np.ndarray
    valid_left: np.ndarray
    rig: StereoRig


@dataclass
class StereoPipeline:
    layout: SensorLayout
    pair: str = "left"
    sgbm: SgbmParams = field(default_factory=SgbmParams)
    wls: WlsParams = field(default_factory=WlsParams)
    marker_threshold: int = 50
    marker_dilate: int = 4

    def __post_init__(self):
        if self.pair not in STEREO_ROLES:
            raise LayoutError(f"unknown stereo pair {self.pair!r}")
        self.rig = rig_for_pair(self.layout, self.pair)
        top, bottom = (self.layout.unit(r) for r in STEREO_ROLES[self.pair])
        self.units = (top, bottom)
        self.maps = tuple(RectifyMap.build(u.camera, self.rig, (u.rect[3], u.rect[2])) for u in self.units)

    def rectified(self, frame):
        image = frame.image if isinstance(frame, CompoundFrame) else np.asarray(frame)
        out = []
        for u, m in zip(self.units, self.maps):
            x0, y0, w, h = u.rect
            gray = grayscale(image[y0 : y0 + h, x0 : x0 + w])
            out.append(m.apply(gray))
        return out

    def prepare(self, frame, sgbm: SgbmParams | None = None) -> PreparedPair:
        sgbm = sgbm or self.sgbm
        (left, vl), (right, _) = self.rectified(frame)
        vol = census_cost_volume(left, right, sgbm)
        lm = marker_mask(left, self.marker_threshold, self.marker_dilate)
        rm = marker_mask(right, self.marker_threshold, self.marker_dilate)
        return PreparedPair(left, right, vol, lm, rm, vl, self.rig)

    def run(self, frame, sgbm: SgbmParams | None = None, wls: WlsParams | None = None) -> DepthMap:
        return depth_from_prepared(self.prepare(frame, sgbm), sgbm or self.sgbm, wls or self.wls)

    def roi_rect(self, margin: int = 3):
        h, w = self.units[0].rect[3], self.units[0].rect[2]
        return default_roi_rect((w, h), self.sgbm.d_max, margin)


def default_roi_rect(shape_wh, d_max: int, margin: int = 3):
    """(x0, y0, x1, y1) excluding the disparity border and the filter margins."""
    w, h = shape_wh
    return (d_max + margin, margin, w - margin, h - margin)


def depth_from_prepared(prep: PreparedPair, sgbm: SgbmParams, wls: WlsParams) -> DepthMap:
    if (prep.volume.d_min, prep.volume.d_max) != (sgbm.d_min, sgbm.d_max):
        raise StereoParamError("prepared cost volume was built for another disparity range")
    agg = sgm_aggregate(suppress_marker_costs(prep.volume, prep.left_markers, prep.right_markers), sgbm)
    left = select_disparity(agg, sgbm, "left")
    right = select_disparity(agg, sgbm, "right")
    checked = lr_check(left, right, sgbm.lr_threshold)
    masked = prep.left_markers | warp_right_mask(prep.right_markers, checked)
    conf = (checked.valid & ~masked).astype(np.float64)
    # left of d_max the search range is truncated, so matches there are not trusted as seeds
    conf[:, : min(sgbm.d_max, conf.shape[1])] = 0.0
    refined = wls_refine(checked, prep.left, wls, confidence=conf)
    masked = prep.left_markers | warp_right_mask(prep.right_markers, refined)
    return disparity_to_depth(refined, prep.rig, masked)


def estimate_depth(frame, layout: SensorLayout | None = None, pair: str = "left",
                   sgbm: SgbmParams | None = None, wls: WlsParams | None = None) -> DepthMap:
    layout = layout or frame.layout
    pipe = StereoPipeline(layout, pair, sgbm or SgbmParams(), wls or WlsParams())
    return pipe.run(frame)
