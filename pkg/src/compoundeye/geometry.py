"""Camera models, triangulation, rectification and plane fitting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    pass


class BehindCameraError(GeometryError):
    pass


class InvalidDisparityError(GeometryError):
    pass


class PlaneFitError(GeometryError):
    pass


@dataclass(frozen=True)
class PinholeCamera:
    focal_px: float
    principal_point: tuple[float, float]
    k1: float = 0.0
    k2: float = 0.0
    # camera-to-world rotation and camera centre in world coordinates (mm)
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.focal_px > 0:
            raise GeometryError(f"focal_px must be positive, got {self.focal_px}")
        if not (np.isfinite(self.k1) and np.isfinite(self.k2)):
            raise GeometryError("distortion coefficients must be finite")
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) to the camera frame."""
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def distort(self, xn: np.ndarray, yn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r2 = xn * xn + yn * yn
        scale = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
        return xn * scale, yn * scale

    def undistort(self, xd, yd, max_iter: int = 20, tol_px: float = 1e-8):
        """Invert the radial model by fixed-point iteration on normalized coordinates."""
        xd = np.asarray(xd, dtype=np.float64)
        yd = np.asarray(yd, dtype=np.float64)
        if self.k1 == 0.0 and self.k2 == 0.0:
            return xd.copy(), yd.copy()
        xu, yu = xd.copy(), yd.copy()
        tol = tol_px / self.focal_px
        for _ in range(max_iter):
            r2 = xu * xu + yu * yu
            scale = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
            xn, yn = xd / scale, yd / scale
            step = max(np.max(np.abs(xn - xu), initial=0.0), np.max(np.abs(yn - yu), initial=0.0))
            xu, yu = xn, yn
            if step < tol:
                break
        return xu, yu

    def pixel_to_normalized(self, u, v):
        px, py = self.principal_point
        xd = (np.asarray(u, dtype=np.float64) - px) / self.focal_px
        yd = (np.asarray(v, dtype=np.float64) - py) / self.focal_px
        return self.undistort(xd, yd)

    def normalized_to_pixel(self, xn, yn):
        xd, yd = self.distort(np.asarray(xn, dtype=np.float64), np.asarray(yn, dtype=np.float64))
        px, py = self.principal_point
        return px + self.focal_px * xd, py + self.focal_px * yd


def project(camera: PinholeCamera, point) -> np.ndarray:
    """Project world point(s) (..., 3) in mm to pixel coordinates (..., 2) as (u, v)."""
    pc = camera.to_camera(point)
    z = pc[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point is not in front of the camera")
    u, v = camera.normalized_to_pixel(pc[..., 0] / z, pc[..., 1] / z)
    return np.stack([u, v], axis=-1)


def triangulate_depth(focal_px: float, baseline: float, disparity_px):
    """Depth from disparity, ``f * B / d``; the result carries the baseline's units."""
    d = np.asarray(disparity_px, dtype=np.float64)
    if np.any(~(d > 0)):
        raise InvalidDisparityError("disparity must be positive")
    out = focal_px * baseline / d
    return float(out) if out.ndim == 0 else out


def disparity_for_depth(focal_px: float, baseline: float, depth):
    z = np.asarray(depth, dtype=np.float64)
    if np.any(~(z > 0)):
        raise GeometryError("depth must be positive")
    out = focal_px * baseline / z
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StereoRig:
    """A vertically separated unit pair; ``left`` is the top unit after transposition."""

    left: PinholeCamera
    right: PinholeCamera
    baseline: float
    baseline_units: str = "mm"
    flange_focal_mm: float = 0.0
    # homographies on normalized undistorted coordinates, original (untransposed) orientation
    rect_left: np.ndarray = field(default_factory=lambda: np.eye(3))
    rect_right: np.ndarray = field(default_factory=lambda: np.eye(3))
    pixel_pitch_mm: float | None = None
    reprojection_error_px: float | None = None

    def __post_init__(self):
        if not self.baseline > 0:
            raise GeometryError("baseline must be positive")
        if self.baseline_units not in ("mm", "px"):
            raise GeometryError(f"unknown baseline units {self.baseline_units!r}")
        for name in ("rect_left", "rect_right"):
            h = np.asarray(getattr(self, name), dtype=np.float64)
            if h.shape != (3, 3) or abs(np.linalg.det(h)) < 1e-12:
                raise GeometryError(f"{name} must be an invertible 3x3 homography")
            object.__setattr__(self, name, h)

    @property
    def focal_px(self) -> float:
        return self.left.focal_px

    @property
    def baseline_mm(self) -> float:
        if self.baseline_units == "mm":
            return self.baseline
        if self.pixel_pitch_mm is None:
            raise GeometryError("pixel-unit baseline needs pixel_pitch_mm for metric depth")
        return self.baseline * self.pixel_pitch_mm

    def depth_from_disparity(self, disparity_px):
        """Depth in mm (or in baseline units when no pixel pitch is known)."""
        if self.baseline_units == "px" and self.pixel_pitch_mm is None:
            return triangulate_depth(self.focal_px, self.baseline, disparity_px)
        return triangulate_depth(self.focal_px, self.baseline_mm, disparity_px)

    def homography_for(self, camera: PinholeCamera) -> np.ndarray:
        return self.rect_left if camera is self.left else self.rect_right


def load_rig_json(path: str | Path, pair: str | None = None) -> StereoRig:
    """Read a calibration file.

    Accepts a single rig object or ``{"pairs": {"left": {...}, "right": {...}}}``.
    """
    with open(path) as fh:
        data = json.load(fh)
    if "pairs" in data:
        if pair is None:
            raise GeometryError("calibration holds several pairs; name one")
        data = data["pairs"][pair]
    return rig_from_dict(data)


def rig_from_dict(data: dict) -> StereoRig:
    pp = tuple(float(v) for v in data.get("principal_point", (0.0, 0.0)))
    f = float(data["focal_px"])
    k1 = float(data.get("k1", 0.0))
    k2 = float(data.get("k2", 0.0))
    left = PinholeCamera(f, pp, k1, k2)
    right = PinholeCamera(f, pp, k1, k2)
    kw = {}
    for key in ("rect_left", "rect_right"):
        if key in data:
            kw[key] = np.asarray(data[key], dtype=np.float64)
    return StereoRig(
        left=left,
        right=right,
        baseline=float(data["baseline"]),
        baseline_units=data.get("baseline_units", "mm"),
        flange_focal_mm=float(data.get("flange_focal_mm", 0.0)),
        pixel_pitch_mm=data.get("pixel_pitch_mm"),
        reprojection_error_px=data.get("reprojection_error_px"),
        **kw,
    )


def rig_to_dict(rig: StereoRig) -> dict:
    out = {
        "focal_px": rig.focal_px,
        "baseline": rig.baseline,
        "baseline_units": rig.baseline_units,
        "principal_point": list(rig.left.principal_point),
        "k1": rig.left.k1,
        "k2": rig.left.k2,
        "flange_focal_mm": rig.flange_focal_mm,
    }
    if not np.allclose(rig.rect_left, np.eye(3)) or not np.allclose(rig.rect_right, np.eye(3)):
        out["rect_left"] = rig.rect_left.tolist()
        out["rect_right"] = rig.rect_right.tolist()
    if rig.pixel_pitch_mm is not None:
        out["pixel_pitch_mm"] = rig.pixel_pitch_mm
    if rig.reprojection_error_px is not None:
        out["reprojection_error_px"] = rig.reprojection_error_px
    return out


def bilinear_sample(image: np.ndarray, rows: np.ndarray, cols: np.ndarray):
    """Sample ``image`` at float positions; returns (values, in-bounds mask)."""
    h, w = image.shape[:2]
    valid = (rows >= 0) & (rows <= h - 1) & (cols >= 0) & (cols <= w - 1)
    r = np.clip(rows, 0, h - 1)
    c = np.clip(cols, 0, w - 1)
    r0 = np.minimum(np.floor(r).astype(np.intp), h - 2) if h > 1 else np.zeros_like(r, dtype=np.intp)
    c0 = np.minimum(np.floor(c).astype(np.intp), w - 2) if w > 1 else np.zeros_like(c, dtype=np.intp)
    fr = r - r0
    fc = c - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    img = image.astype(np.float64, copy=False)
    if img.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    top = img[r0, c0] * (1 - fc) + img[r0, c1] * fc
    bot = img[r1, c0] * (1 - fc) + img[r1, c1] * fc
    vals = top * (1 - fr) + bot * fr
    return vals, valid


def rectify_tile(tile: np.ndarray, camera: PinholeCamera, rig: StereoRig | None = None):
    """Transpose, undistort and rectify one stereo tile.

    Output pixel (r, c) holds the undistorted, rectified view at original column r
    and row c, so a vertical pair comes out horizontally aligned.  Integer input is
    rounded back to its dtype.  Returns ``(image, valid)`` where ``valid`` marks
    samples that fell inside the source tile.
    """
    h, w = tile.shape[:2]
    homography = np.eye(3) if rig is None else rig.homography_for(camera)
    # output grid: rows index original columns (u), columns index original rows (v)
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
    vals, valid = bilinear_sample(tile, vs, us)
    if np.issubdtype(tile.dtype, np.integer):
        info = np.iinfo(tile.dtype)
        vals = np.clip(np.rint(vals), info.min, info.max).astype(tile.dtype)
    else:
        vals = vals.astype(tile.dtype, copy=False)
    return vals, valid


@dataclass(frozen=True)
class Plane:
    """Depth plane ``z = a*x + b*y + c`` in pixel/ mm coordinates, with unit normal."""

    normal: np.ndarray
    offset_mm: float
    coeffs: tuple[float, float, float]
    centroid: tuple[float, float, float]

    def depth_at(self, rows, cols):
        a, b, c = self.coeffs
        return a * np.asarray(cols, dtype=np.float64) + b * np.asarray(rows, dtype=np.float64) + c


def best_fit_plane(depth: np.ndarray, roi: np.ndarray | None = None) -> Plane:
    """Least-squares plane through valid (finite) depth pixels inside ``roi``."""
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.isfinite(depth)
    if roi is not None:
        mask &= np.asarray(roi, dtype=bool)
    rows, cols = np.nonzero(mask)
    if rows.size < 3:
        raise PlaneFitError("fewer than 3 valid pixels")
    z = depth[rows, cols]
    x = cols.astype(np.float64)
    y = rows.astype(np.float64)
    xm, ym, zm = x.mean(), y.mean(), z.mean()
    xc, yc, zc = x - xm, y - ym, z - zm
    a11 = xc @ xc
    a12 = xc @ yc
    a22 = yc @ yc
    det = a11 * a22 - a12 * a12
    if det <= 1e-9 * max(a11 * a22, 1.0):
        raise PlaneFitError("pixels are collinear")
    bx = xc @ zc
    by = yc @ zc
    a = (a22 * bx - a12 * by) / det
    b = (a11 * by - a12 * bx) / det
    c = zm - a * xm - b * ym
    n = np.array([-a, -b, 1.0])
    n /= np.linalg.norm(n)
    return Plane(normal=n, offset_mm=float(c * n[2]), coeffs=(float(a), float(b), float(c)), centroid=(xm, ym, zm))


def plane_residuals(depth: np.ndarray, plane: Plane, mask: np.ndarray) -> np.ndarray:
    rows, cols = np.nonzero(mask)
    return depth[rows, cols] - plane.depth_at(rows, cols)


def with_distortion(camera: PinholeCamera, k1: float, k2: float = 0.0) -> PinholeCamera:
    return replace(camera, k1=k1, k2=k2)
