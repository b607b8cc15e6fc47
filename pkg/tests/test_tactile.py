import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compoundeye.synthgen import (
    ContactSpec,
    MarkerLayout,
    SceneSpec,
    SensorOptics,
    default_layout,
    deform_markers,
    render_canvas,
    render_compound_frame,
)
from compoundeye.tactile import (
    HsvBounds,
    InterpolationError,
    MarkerSet,
    RoiDerivationError,
    RoiEntry,
    RoiSet,
    TactileTracker,
    compute_rois,
    detect_markers,
    grid_nodes,
    idw,
    interpolate_grid,
    interpolate_marker_grid,
    match_markers,
    rgb_to_hsv,
    stitch,
)

from oracles import optimal_assignment


def _u8(img):
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@pytest.fixture(scope="module")
def reference(layout):
    frame, gt = render_compound_frame(layout, SceneSpec(target_distance_mm=40.0, rng_seed=7))
    return frame, gt


# --- ROIs and stitching -----------------------------------------------------------------------

def test_rois_shrink_by_half_overlap():
    # markers at canvas 195 and 385 sit inside the two 10 px shared strips
    lay = default_layout(optics=SensorOptics(tactile_overlap_px=10))
    frame, _ = render_compound_frame(lay, SceneSpec(markers=MarkerLayout(rows=5, cols=5, pitch_px=95.0, centre=(290.0, 290.0))))
    rois = compute_rois(frame)
    assert rois.overlaps_x == (10, 10) and rois.overlaps_y == (10, 10)
    th, tw = lay.tile_shape
    widths = sorted({e.place[2] for e in rois.entries})
    heights = sorted({e.place[3] for e in rois.entries})
    # outer tiles lose 5 px on their one shared edge, the middle tile 5 px on both
    assert widths == [tw - 10, tw - 5] and heights == [th - 10, th - 5]
    assert rois.canvas_shape == lay.canvas_shape


def test_zero_overlap_crops_are_full_tiles():
    lay = default_layout(optics=SensorOptics(tactile_overlap_px=0))
    frame, _ = render_compound_frame(lay, SceneSpec())
    rois = compute_rois(frame)
    for e in rois.entries:
        unit = lay.units[e.unit_index]
        assert e.crop == unit.rect


def test_missing_common_markers_raises(layout):
    frame, _ = render_compound_frame(layout, SceneSpec(markers=MarkerLayout(rows=1, cols=1)))
    with pytest.raises(RoiDerivationError):
        compute_rois(frame)


def test_single_tile_stitch_is_double_flip(rng):
    img = rng.integers(0, 256, size=(30, 40, 3), dtype=np.uint8)
    rois = RoiSet((RoiEntry(0, (5, 3, 20, 10), (0, 0, 20, 10)),), (10, 20))
    assert np.array_equal(stitch(img, rois), img[3:13, 5:25][::-1, ::-1])


def test_stitch_deterministic_and_count_preserved(layout, reference):
    frame, gt = reference
    rois = compute_rois(frame)
    a, b = stitch(frame, rois), stitch(frame, rois)
    assert np.array_equal(a, b)
    assert len(detect_markers(a)) == len(gt.marker_centers_initial) == 48


def test_stitched_canvas_matches_render(layout, reference):
    """The stitched canvas reproduces the rendered marker layer (up to sensor noise)."""
    frame, gt = reference
    rois = compute_rois(frame)
    canvas = stitch(frame, rois).astype(np.float64)
    clean = render_canvas(layout.canvas_shape, gt.marker_centers_initial, 4.0)
    assert canvas.shape == clean.shape
    assert np.abs(canvas - clean).mean() < 3.0


# --- detection -----------------------------------------------------------------------------------

def test_single_dot_centroid():
    img = _u8(render_canvas((100, 100), [(50.0, 50.0)], 4.0))
    m = detect_markers(img)
    assert len(m) == 1
    assert np.hypot(*(m.centroids[0] - (50.0, 50.0))) <= 0.2


@pytest.mark.parametrize("centre", [(30.3, 41.7), (55.5, 20.25), (70.9, 70.1)])
def test_subpixel_dot_centroid(centre):
    img = _u8(render_canvas((100, 100), [centre], 4.0))
    m = detect_markers(img)
    assert np.hypot(*(m.centroids[0] - centre)) <= 0.2


def test_white_image_is_empty():
    assert len(detect_markers(np.full((50, 60, 3), 255, np.uint8))) == 0


def test_area_and_circularity_filters():
    img = np.full((80, 80, 3), 230, np.uint8)
    img[10:12, 10:60] = 30  # thin bar: large enough but not round
    img[40, 40] = 30  # single pixel: too small
    assert len(detect_markers(img)) == 0


def test_hsv_conversion_standard_values():
    rgb = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255], [128, 128, 128]]], dtype=np.uint8)
    h, s, v = rgb_to_hsv(rgb)
    assert np.allclose(h[0], [0, 120, 240, 0])
    assert np.allclose(s[0], [1, 1, 1, 0])
    assert np.allclose(v[0], [1, 1, 1, 128 / 255])


def test_hsv_bounds_validated():
    with pytest.raises(ValueError):
        HsvBounds(v=(0.5, 0.2))


@settings(max_examples=10, deadline=None)
@given(st.integers(-15, 15), st.integers(-15, 15))
def test_centroids_translation_equivariant(tx, ty):
    centres = [(40.3, 38.2), (80.7, 60.1), (55.0, 90.4)]
    base = _u8(render_canvas((140, 140), centres, 4.0))
    moved = _u8(render_canvas((140, 140), [(x + tx, y + ty) for x, y in centres], 4.0))
    a = detect_markers(base).centroids
    b = detect_markers(moved).centroids
    order_a = np.lexsort(a.T)
    order_b = np.lexsort(b.T)
    assert np.allclose(b[order_b] - a[order_a], [tx, ty], atol=1e-9)


# --- matching -----------------------------------------------------------------------------------

def _grid_points(rng, n=20, spacing=15.0):
    pts = []
    while len(pts) < n:
        p = rng.uniform(0, 200, size=2)
        if all(np.hypot(*(p - q)) > spacing for q in pts):
            pts.append(p)
    return np.array(pts)


def test_identity_matching():
    pts = np.array([[1.0, 2.0], [10.0, 5.0], [30.0, 30.0]])
    f = match_markers(MarkerSet(pts, np.ones(3)), MarkerSet(pts.copy(), np.ones(3)), 5.0)
    assert len(f) == 3 and np.array_equal(f.displacement, np.zeros((3, 2)))


def test_uniform_translation_matching():
    pts = _grid_points(np.random.default_rng(0))
    f = match_markers(MarkerSet(pts, np.ones(20)), MarkerSet(pts + (3.0, -2.0), np.ones(20)), 10.0)
    assert len(f) == 20
    assert np.allclose(f.displacement, (3.0, -2.0), atol=1e-12)


def test_matching_equals_optimal_assignment_small():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = _grid_points(rng)
        b = (a + rng.uniform(-5, 5, size=a.shape))[rng.permutation(20)]
        f = match_markers(MarkerSet(a, np.ones(20)), MarkerSet(b, np.ones(20)), 8.0)
        assert dict(zip(f.initial_index.tolist(), f.current_index.tolist())) == optimal_assignment(a, b)


def test_matching_is_injective_and_counts_unmatched():
    a = np.array([[0.0, 0.0], [100.0, 0.0]])
    b = np.array([[1.0, 0.0], [2.0, 0.0], [300.0, 0.0]])
    f = match_markers(MarkerSet(a, np.ones(2)), MarkerSet(b, np.ones(3)), 10.0)
    assert f.current_index.tolist() == [0]
    assert f.unmatched_initial == 1 and f.unmatched_current == 2


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_matching_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 100, size=(15, 2))
    b = a + rng.normal(0, 3, size=a.shape)
    f = match_markers(MarkerSet(a, np.ones(15)), MarkerSet(b, np.ones(15)), 8.0)
    g = match_markers(MarkerSet(b, np.ones(15)), MarkerSet(a, np.ones(15)), 8.0)
    assert set(zip(f.initial_index, f.current_index)) == set(zip(g.current_index, g.initial_index))
    order = np.argsort(g.current_index)
    assert np.allclose(f.displacement, -g.displacement[order])


# --- interpolation --------------------------------------------------------------------------------

def test_single_marker_fills_grid():
    grid = interpolate_marker_grid([[10.0, 20.0]], [[1.0, 0.0]], (100, 100))
    assert grid.shape == (6, 6, 2)
    assert np.array_equal(grid, np.broadcast_to([1.0, 0.0], (6, 6, 2)))


def test_uniform_translation_grid(rng):
    pts = rng.uniform(0, 300, size=(30, 2))
    grid = interpolate_marker_grid(pts, np.tile([2.5, -1.25], (30, 1)), (300, 300))
    assert np.allclose(grid, [2.5, -1.25], atol=1e-12)


def test_node_on_marker_takes_its_value():
    nodes = grid_nodes((120, 120)).reshape(-1, 2)
    vals = np.arange(72, dtype=np.float64).reshape(36, 2)
    out = idw(nodes, vals, nodes)
    assert np.array_equal(out, vals)


def test_interpolation_errors_without_markers():
    with pytest.raises(InterpolationError):
        interpolate_marker_grid(np.zeros((0, 2)), np.zeros((0, 2)), (10, 10))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_interpolation_linear_in_values(seed, a, b):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 200, size=(12, 2))
    f1 = rng.normal(size=(12, 2))
    f2 = rng.normal(size=(12, 2))
    lhs = interpolate_marker_grid(pts, a * f1 + b * f2, (200, 200))
    rhs = a * interpolate_marker_grid(pts, f1, (200, 200)) + b * interpolate_marker_grid(pts, f2, (200, 200))
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_gaussian_deformation_grid_vs_analytic(layout):
    markers = MarkerLayout(rows=12, cols=12, pitch_px=45.0).centers(layout.canvas_shape)
    c = ContactSpec(center=tuple(layout.mm_to_canvas([0.0, 0.0])), tangential_shift=(0.2, 0.1), radius_mm=2.0)
    moved = deform_markers(markers, c, layout.optics.px_per_mm)
    grid = interpolate_marker_grid(markers, moved - markers, layout.canvas_shape)
    nodes = grid_nodes(layout.canvas_shape).reshape(-1, 2)
    truth = (deform_markers(nodes, c, layout.optics.px_per_mm) - nodes).reshape(6, 6, 2)
    peak = np.hypot(*np.asarray(c.tangential_shift)) * layout.optics.px_per_mm
    assert np.max(np.hypot(*(grid - truth).transpose(2, 0, 1))) <= 0.15 * peak


# --- tracker ---------------------------------------------------------------------------------

def test_tracker_no_contact_zero_grid(layout, reference):
    frame, _ = reference
    tracker = TactileTracker.from_initial(frame)
    grid, fld, cur = tracker.process(frame)
    assert len(fld) == 48 and np.array_equal(grid, np.zeros((6, 6, 2)))
    assert tracker.max_radius == pytest.approx(0.5 * 60.0, abs=0.5)


def test_tracker_centroids_match_ground_truth(layout, reference):
    frame, gt = reference
    tracker = TactileTracker.from_initial(frame)
    found = tracker.reference.centroids
    truth = gt.marker_centers_initial
    d = np.sqrt(((found[:, None] - truth[None]) ** 2).sum(-1)).min(axis=1)
    assert d.max() < 0.2


def test_tracker_grid_follows_contact(layout, reference):
    frame, _ = reference
    tracker = TactileTracker.from_initial(frame)
    c = ContactSpec(center=tuple(layout.mm_to_canvas([0.0, 0.0])), tangential_shift=(0.2, 0.0), radius_mm=2.0)
    pressed, gt = render_compound_frame(layout, SceneSpec(target_distance_mm=40.0, rng_seed=8, contact=c))
    grid, fld, _ = tracker.process(pressed)
    assert len(fld) == 48
    # displacements at matched markers equal the ground truth
    truth = gt.marker_centers_deformed[fld.initial_index] - gt.marker_centers_initial[fld.initial_index]
    assert np.abs(fld.displacement - truth).max() < 0.3
    assert grid[..., 0].max() > 3.0 and abs(grid[..., 1]).max() < 1.0
    assert interpolate_grid(fld, tracker.rois.canvas_shape).shape == (6, 6, 2)
