"""Deterministic synthetic compound-eye sensor.

The simulated sensor has a 3 x 5 grid of vision units on one CMOS frame.  The
four corner units form two vertical stereo pairs that look through a clear
elastomer at a textured plane; the nine central units image the marker layer of
the elastomer at close range.  Every quantity the processing pipelines
estimate (plane depth, marker positions and displacements, contact force) is
known exactly here.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .geometry import PinholeCamera, StereoRig
from .texture import ValueNoiseTexture


class LayoutError(ValueError):
    pass


class RenderError(ValueError):
    pass


MAX_DISTANCE_MM = 70.0

STEREO_ROLES = {
    "left": ("stereo_left_top", "stereo_left_bottom"),
    "right": ("stereo_right_top", "stereo_right_bottom"),
}
TACTILE = "tactile"
UNUSED = "unused"

# photometry (gray levels)
BACKGROUND_RGB = (236.0, 232.0, 224.0)
MARKER_RGB = (30.0, 30.0, 34.0)

# force model: tangential N per mm of shear, normal N per mm of indentation
TANGENTIAL_GAIN = 4.0
NORMAL_GAIN = 2.4
# radial marker spread, px per mm of indentation at the contact centre
RADIAL_GAIN_PX = 10.0

FX_RANGE = (-1.16, 1.27)
FZ_RANGE = (0.0, 1.92)


@dataclass(frozen=True)
class VisionUnit:
    index: int
    row: int
    col: int
    role: str
    rect: tuple[int, int, int, int]  # x0, y0, width, height on the frame
    camera: PinholeCamera | None = None


@dataclass(frozen=True)
class SensorOptics:
    focal_px: float = 200.0
    k1: float = -0.03
    k2: float = 0.0
    baseline_mm: float = 3.5
    flange_focal_mm: float = 5.0
    stereo_x_mm: float = 7.0
    tactile_overlap_px: int = 20
    px_per_mm: float = 40.0


@dataclass(frozen=True)
class SensorLayout:
    frame_shape: tuple[int, int]  # (height, width)
    units: tuple[VisionUnit, ...]
    optics: SensorOptics = field(default_factory=SensorOptics)
    tile_shape: tuple[int, int] = (200, 200)

    def __post_init__(self):
        h, w = self.frame_shape
        rects = []
        for u in self.units:
            x0, y0, tw, th = u.rect
            if x0 < 0 or y0 < 0 or x0 + tw > w or y0 + th > h or tw <= 0 or th <= 0:
                raise LayoutError(f"unit {u.index} rectangle {u.rect} outside {w}x{h} frame")
            rects.append(u.rect)
        for i, a in enumerate(rects):
            for b in rects[i + 1 :]:
                if a[0] < b[0] + b[2] and b[0] < a[0] + a[2] and a[1] < b[1] + b[3] and b[1] < a[1] + a[3]:
                    raise LayoutError(f"unit rectangles {a} and {b} overlap")

    def by_role(self, role: str) -> list[VisionUnit]:
        return [u for u in self.units if u.role == role]

    def unit(self, role: str) -> VisionUnit:
        found = self.by_role(role)
        if len(found) != 1:
            raise LayoutError(f"expected one unit with role {role!r}, found {len(found)}")
        return found[0]

    def tactile_units(self) -> list[VisionUnit]:
        return sorted(self.by_role(TACTILE), key=lambda u: (u.row, u.col))

    @property
    def tactile_grid(self) -> tuple[int, int]:
        t = self.tactile_units()
        rows = sorted({u.row for u in t})
        cols = sorted({u.col for u in t})
        return len(rows), len(cols)

    @property
    def canvas_shape(self) -> tuple[int, int]:
        """Shape of the elastomer view covered by the tactile units."""
        th, tw = self.tile_shape
        gr, gc = self.tactile_grid
        ov = self.optics.tactile_overlap_px
        return gr * th - (gr - 1) * ov, gc * tw - (gc - 1) * ov

    def tactile_footprint(self, unit: VisionUnit) -> tuple[int, int]:
        """Canvas (x0, y0) of the region a tactile unit images."""
        t = self.tactile_units()
        rows = sorted({u.row for u in t})
        cols = sorted({u.col for u in t})
        th, tw = self.tile_shape
        ov = self.optics.tactile_overlap_px
        return cols.index(unit.col) * (tw - ov), rows.index(unit.row) * (th - ov)

    def canvas_to_mm(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        h, w = self.canvas_shape
        c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        return (xy - c) / self.optics.px_per_mm

    def mm_to_canvas(self, xy_mm):
        xy_mm = np.asarray(xy_mm, dtype=np.float64)
        h, w = self.canvas_shape
        c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        return xy_mm * self.optics.px_per_mm + c


def _role_for(row: int, col: int, rows: int, cols: int) -> str:
    if col in (0, cols - 1):
        side = "left" if col == 0 else "right"
        if row == 0:
            return STEREO_ROLES[side][0]
        if row == rows - 1:
            return STEREO_ROLES[side][1]
        return UNUSED
    return TACTILE


def default_layout(tile: int = 200, gap: int = 8, optics: SensorOptics | None = None) -> SensorLayout:
    """The 3 x 5 unit grid: stereo pairs on the outer columns, 9 tactile units inside."""
    optics = optics or SensorOptics()
    rows, cols = 3, 5
    pp = ((tile - 1) / 2.0, (tile - 1) / 2.0)
    units = []
    for r in range(rows):
        for c in range(cols):
            role = _role_for(r, c, rows, cols)
            rect = (gap + c * (tile + gap), gap + r * (tile + gap), tile, tile)
            cam = None
            if role.startswith("stereo"):
                sx = -optics.stereo_x_mm if "left" in role else optics.stereo_x_mm
                sy = -optics.baseline_mm / 2 if role.endswith("top") else optics.baseline_mm / 2
                cam = PinholeCamera(optics.focal_px, pp, optics.k1, optics.k2,
                                    translation=np.array([sx, sy, 0.0]))
            units.append(VisionUnit(r * cols + c, r, c, role, rect, cam))
    shape = (gap + rows * (tile + gap), gap + cols * (tile + gap))
    layout = SensorLayout(shape, tuple(units), optics, (tile, tile))
    # tactile units image the elastomer from one flange distance; focal sets the scale
    tact = []
    for u in layout.units:
        if u.role == TACTILE:
            x0, y0 = layout.tactile_footprint(u)
            centre = layout.canvas_to_mm([x0 + (tile - 1) / 2.0, y0 + (tile - 1) / 2.0])
            f = optics.px_per_mm * optics.flange_focal_mm
            u = replace(u, camera=PinholeCamera(f, pp, translation=np.array([centre[0], centre[1], 0.0])))
        tact.append(u)
    return replace(layout, units=tuple(tact))


def rig_for_pair(layout: SensorLayout, pair: str) -> StereoRig:
    top, bottom = (layout.unit(r) for r in STEREO_ROLES[pair])
    return StereoRig(
        left=top.camera,
        right=bottom.camera,
        baseline=float(np.linalg.norm(top.camera.translation - bottom.camera.translation)),
        baseline_units="mm",
        flange_focal_mm=layout.optics.flange_focal_mm,
    )


@dataclass(frozen=True)
class MarkerLayout:
    rows: int = 6
    cols: int = 8
    pitch_px: float = 60.0
    radius_px: float = 4.0
    centre: tuple[float, float] | None = None  # canvas (x, y); None = canvas centre

    def centers(self, canvas_shape) -> np.ndarray:
        h, w = canvas_shape
        cx, cy = self.centre if self.centre is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
        xs = cx + (np.arange(self.cols) - (self.cols - 1) / 2.0) * self.pitch_px
        ys = cy + (np.arange(self.rows) - (self.rows - 1) / 2.0) * self.pitch_px
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass(frozen=True)
class ContactSpec:
    center: tuple[float, float]  # canvas px
    normal_depth: float = 0.0  # mm
    tangential_shift: tuple[float, float] = (0.0, 0.0)  # mm
    radius_mm: float = 2.0

    def __post_init__(self):
        if self.normal_depth < 0:
            raise ValueError("normal_depth must be non-negative")
        if not self.radius_mm > 0:
            raise ValueError("radius_mm must be positive")


@dataclass(frozen=True)
class SceneSpec:
    target_distance_mm: float = 35.0
    texture_seed: int = 0
    markers: MarkerLayout = field(default_factory=MarkerLayout)
    contact: ContactSpec | None = None
    noise_sigma: float = 2.0
    rng_seed: int = 0
    marker_shift_px: tuple[float, float] = (0.0, 0.0)
    supersample: int = 3


@dataclass
class GroundTruth:
    depth_mm: float  # optical-axis depth of the target plane, all stereo units
    depth_shape: tuple[int, int]
    marker_centers_initial: np.ndarray
    marker_centers_deformed: np.ndarray
    force: np.ndarray

    @property
    def displacement(self) -> np.ndarray:
        return self.marker_centers_deformed - self.marker_centers_initial

    def depth_map(self) -> np.ndarray:
        return np.full(self.depth_shape, self.depth_mm, dtype=np.float64)


@dataclass
class CompoundFrame:
    image: np.ndarray  # (H, W, 3) uint8
    layout: SensorLayout


def gaussian_footprint(r2, sigma_px):
    return np.exp(-r2 / (2.0 * sigma_px * sigma_px))


def deform_markers(markers, contact: ContactSpec | None, px_per_mm: float = SensorOptics.px_per_mm,
                   radial_gain_px: float = RADIAL_GAIN_PX) -> np.ndarray:
    """Displace canvas marker centres by a Gaussian-footprint shear plus radial spread."""
    markers = np.asarray(markers, dtype=np.float64)
    if contact is None:
        return markers.copy()
    sigma = contact.radius_mm * px_per_mm
    rel = markers - np.asarray(contact.center, dtype=np.float64)
    r = np.hypot(rel[:, 0], rel[:, 1])
    g = gaussian_footprint(r * r, sigma)
    shear = np.asarray(contact.tangential_shift, dtype=np.float64) * px_per_mm
    unit = np.zeros_like(rel)
    nz = r > 0
    unit[nz] = rel[nz] / r[nz, None]
    disp = g[:, None] * shear[None, :] + (g * radial_gain_px * contact.normal_depth)[:, None] * unit
    return markers + disp


def contact_force(contact: ContactSpec | None) -> np.ndarray:
    if contact is None:
        return np.zeros(3)
    tx, ty = contact.tangential_shift
    return np.array([TANGENTIAL_GAIN * tx, TANGENTIAL_GAIN * ty, NORMAL_GAIN * contact.normal_depth])


def _disk_coverage(shape, centers, radius, out=None):
    """Anti-aliased union coverage of filled disks on a pixel grid (pixel centres integer)."""
    h, w = shape
    cov = np.zeros(shape) if out is None else out
    pad = radius + 1.5
    for cx, cy in centers:
        x0 = max(int(np.floor(cx - pad)), 0)
        x1 = min(int(np.ceil(cx + pad)) + 1, w)
        y0 = max(int(np.floor(cy - pad)), 0)
        y1 = min(int(np.ceil(cy + pad)) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d = np.hypot(xx - cx, yy - cy)
        c = np.clip(radius + 0.5 - d, 0.0, 1.0)
        np.maximum(cov[y0:y1, x0:x1], c, out=cov[y0:y1, x0:x1])
    return cov


def render_canvas(canvas_shape, centers, radius_px) -> np.ndarray:
    """Noise-free RGB float image of the marker layer."""
    cov = _disk_coverage(canvas_shape, centers, radius_px)
    bg = np.asarray(BACKGROUND_RGB)
    mk = np.asarray(MARKER_RGB)
    return bg[None, None, :] * (1.0 - cov[..., None]) + mk[None, None, :] * cov[..., None]


def _quantize(img, rng, sigma):
    if sigma > 0:
        img = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _unit_rng(seed: int, unit_index: int):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(unit_index), 0xC0DE]))


def _subpixel_grid(tile_shape, s):
    th, tw = tile_shape
    offs = (np.arange(s) + 0.5) / s - 0.5
    v = (np.arange(th)[:, None] + offs[None, :]).ravel()
    u = (np.arange(tw)[:, None] + offs[None, :]).ravel()
    uu, vv = np.meshgrid(u, v)
    return uu, vv


@lru_cache(maxsize=16)
def _unit_rays(focal_px, principal_point, k1, k2, tile_shape, s):
    """Undistorted normalized rays through each sub-pixel sample (read-only, cached)."""
    cam = PinholeCamera(focal_px, principal_point, k1, k2)
    uu, vv = _subpixel_grid(tile_shape, s)
    xn, yn = cam.pixel_to_normalized(uu, vv)
    xn.flags.writeable = False
    yn.flags.writeable = False
    return xn, yn


def render_stereo_tile(layout: SensorLayout, unit: VisionUnit, scene: SceneSpec, texture, markers_px):
    """Float RGB view of the target plane plus the elastomer markers for one stereo unit."""
    cam = unit.camera
    th, tw = layout.tile_shape
    s = max(int(scene.supersample), 1)
    xn, yn = _unit_rays(cam.focal_px, tuple(cam.principal_point), cam.k1, cam.k2, (th, tw), s)
    opt = layout.optics
    z_plane = opt.flange_focal_mm + scene.target_distance_mm
    cx, cy = cam.translation[0], cam.translation[1]
    gray = texture(cx + xn * z_plane, cy + yn * z_plane)
    # elastomer layer sits at the sensor surface
    z_el = opt.flange_focal_mm
    ex, ey = cx + xn * z_el, cy + yn * z_el
    canvas_xy = layout.mm_to_canvas(np.stack([ex, ey], axis=-1))
    # only markers whose disks can reach this view
    lo = canvas_xy.reshape(-1, 2).min(axis=0) - 2 * scene.markers.radius_px
    hi = canvas_xy.reshape(-1, 2).max(axis=0) + 2 * scene.markers.radius_px
    near = markers_px[np.all((markers_px >= lo) & (markers_px <= hi), axis=1)]
    rgb = np.repeat(gray[..., None], 3, axis=-1)
    if len(near):
        d2 = np.full(gray.shape, np.inf)
        for mx, my in near:
            np.minimum(d2, (canvas_xy[..., 0] - mx) ** 2 + (canvas_xy[..., 1] - my) ** 2, out=d2)
        inside = d2 <= scene.markers.radius_px ** 2
        rgb[inside] = np.asarray(MARKER_RGB)
    return rgb.reshape(th, s, tw, s, 3).mean(axis=(1, 3))


def validate_scene(layout: SensorLayout, scene: SceneSpec):
    if not (0.0 <= scene.target_distance_mm <= MAX_DISTANCE_MM):
        raise RenderError(f"target distance {scene.target_distance_mm} mm outside [0, {MAX_DISTANCE_MM}]")
    h, w = layout.canvas_shape
    c = scene.markers.centers((h, w))
    r = scene.markers.radius_px
    if np.any(c[:, 0] - r < 0) or np.any(c[:, 0] + r > w - 1) or np.any(c[:, 1] - r < 0) or np.any(c[:, 1] + r > h - 1):
        raise RenderError("marker grid extends past the tactile field of view")


def _render_clean(layout: SensorLayout, scene: SceneSpec):
    """Noise-free float image per unit index, plus ground truth."""
    validate_scene(layout, scene)
    opt = layout.optics
    canvas_shape = layout.canvas_shape
    initial = scene.markers.centers(canvas_shape)
    shifted = initial + np.asarray(scene.marker_shift_px, dtype=np.float64)
    deformed = deform_markers(shifted, scene.contact, opt.px_per_mm)
    texture = ValueNoiseTexture(scene.texture_seed)

    canvas = render_canvas(canvas_shape, deformed, scene.markers.radius_px)
    th, tw = layout.tile_shape
    clean = {}
    for unit in layout.units:
        _, _, w, h = unit.rect
        if unit.role.startswith("stereo"):
            img = render_stereo_tile(layout, unit, scene, texture, deformed)
        elif unit.role == TACTILE:
            fx, fy = layout.tactile_footprint(unit)
            # lens inversion: each unit sees its footprint rotated by 180 degrees
            img = canvas[fy : fy + th, fx : fx + tw][::-1, ::-1]
        else:
            img = np.zeros((h, w, 3))
        clean[unit.index] = img

    gt = GroundTruth(
        depth_mm=opt.flange_focal_mm + scene.target_distance_mm,
        depth_shape=(th, tw),
        marker_centers_initial=initial,
        marker_centers_deformed=deformed,
        force=contact_force(scene.contact),
    )
    return clean, gt


def _compose(layout: SensorLayout, clean, rng_seed: int, noise_sigma: float) -> CompoundFrame:
    frame = np.zeros(layout.frame_shape + (3,), dtype=np.uint8)
    for unit in layout.units:
        x0, y0, w, h = unit.rect
        frame[y0 : y0 + h, x0 : x0 + w] = _quantize(clean[unit.index], _unit_rng(rng_seed, unit.index), noise_sigma)
    return CompoundFrame(frame, layout)


def render_compound_frame(layout: SensorLayout, scene: SceneSpec) -> tuple[CompoundFrame, GroundTruth]:
    clean, gt = _render_clean(layout, scene)
    return _compose(layout, clean, scene.rng_seed, scene.noise_sigma), gt


def render_sequence(layout: SensorLayout, scene: SceneSpec, n_frames: int) -> tuple[list[CompoundFrame], GroundTruth]:
    """Static-scene captures; frame k equals the single render with ``rng_seed + k``."""
    clean, gt = _render_clean(layout, scene)
    frames = [_compose(layout, clean, scene.rng_seed + k, scene.noise_sigma) for k in range(n_frames)]
    return frames, gt


# --- force data -----------------------------------------------------------------

CONTACT_SITES_MM = ((0.0, 0.0), (-3.0, 0.0), (3.0, 0.0), (0.0, -3.0), (0.0, 3.0))


def synth_force_sample(contact: ContactSpec, layout: SensorLayout | None = None, markers: MarkerLayout | None = None,
                       grid_noise: float = 0.0, rng=None):
    """Displacement grid (6, 6, 2) and force [Fx, Fy, Fz] for one contact."""
    from .tactile import interpolate_marker_grid

    layout = layout or default_layout()
    markers = markers or MarkerLayout()
    initial = markers.centers(layout.canvas_shape)
    moved = deform_markers(initial, contact, layout.optics.px_per_mm)
    grid = interpolate_marker_grid(initial, moved - initial, layout.canvas_shape)
    if grid_noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        grid = grid + rng.normal(0.0, grid_noise, size=grid.shape)
    return grid, contact_force(contact)


def random_contact(rng, layout: SensorLayout, jitter_mm: float = 0.75, radius_mm: float = 2.0) -> ContactSpec:
    """One press at a protocol site with forces drawn uniformly from the valid ranges."""
    site = np.asarray(CONTACT_SITES_MM[rng.integers(len(CONTACT_SITES_MM))])
    centre_mm = site + rng.uniform(-jitter_mm, jitter_mm, size=2)
    fx, fy = rng.uniform(*FX_RANGE, size=2)
    fz = rng.uniform(*FZ_RANGE)
    return ContactSpec(
        center=tuple(layout.mm_to_canvas(centre_mm)),
        normal_depth=fz / NORMAL_GAIN,
        tangential_shift=(fx / TANGENTIAL_GAIN, fy / TANGENTIAL_GAIN),
        radius_mm=radius_mm,
    )


def force_dataset(n: int = 3500, seed: int = 0, grid_noise: float = 0.1, layout: SensorLayout | None = None,
                  markers: MarkerLayout | None = None, jitter_mm: float = 0.75, no_contact: float = 0.05):
    """Synthetic indentation dataset; returns grids (n, 6, 6, 2) and forces (n, 3).

    A ``no_contact`` share of samples are unloaded frames (noise-only grid, zero
    force), as recorded before each press.
    """
    if not 0.0 <= no_contact < 1.0:
        raise ValueError("no_contact must lie in [0, 1)")
    layout = layout or default_layout()
    markers = markers or MarkerLayout()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF0CE]))
    grids = np.empty((n, 6, 6, 2))
    forces = np.empty((n, 3))
    for i in range(n):
        contact = random_contact(rng, layout, jitter_mm)
        if rng.random() < no_contact:
            contact = None
        grids[i], forces[i] = synth_force_sample(contact, layout, markers, grid_noise, rng)
    return grids, forces
