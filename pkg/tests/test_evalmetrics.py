import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from compoundeye.evalmetrics import (
    MetricError,
    MetricReport,
    RoiSpec,
    depth_sweep,
    evaluate_captures,
    fill_rate,
    read_csv,
    roi_for,
    spatial_rmse,
    summarize,
    temporal_noise,
    write_csv,
    write_summary,
    z_accuracy,
)
from compoundeye.geometry import PlaneFitError
from compoundeye.synthgen import rig_for_pair
from compoundeye.stereo import LR_FAIL, MARKER_MASKED, VALID, DepthMap

ROI = RoiSpec(0, 0, 40, 30)


class _Rig:
    flange_focal_mm = 5.0


def _plane(h=30, w=40, a=0.01, b=-0.02, c=50.0):
    yy, xx = np.mgrid[0:h, 0:w]
    return c + a * xx + b * yy


def _dmap(z, flags=None):
    z = np.asarray(z, dtype=np.float64)
    flags = np.zeros(z.shape, np.uint8) if flags is None else flags
    return DepthMap(np.where(flags == VALID, z, np.nan), flags)


# --- roi -------------------------------------------------------------------------------------

def test_roi_validation():
    with pytest.raises(MetricError):
        RoiSpec(5, 0, 5, 10)
    with pytest.raises(MetricError):
        RoiSpec(0, 0, 50, 10).mask((10, 40))
    with pytest.raises(MetricError):
        RoiSpec(0, 0, 2, 2, exclude=np.ones((4, 4), bool)).mask((4, 4))


def test_roi_for_excludes_border_and_markers():
    flags = np.zeros((30, 40), np.uint8)
    flags[10, 20] = MARKER_MASKED
    roi = roi_for(_dmap(np.ones((30, 40)), flags), d_max=8)
    m = roi.mask((30, 40))
    assert not m[:, :11].any() and not m[10, 20]
    assert m[15, 15]


# --- fill rate -------------------------------------------------------------------------------

def test_fill_rate_all_and_half():
    z = np.full((30, 40), 40.0)
    assert fill_rate(_dmap(z), ROI) == 100.0
    flags = np.zeros((30, 40), np.uint8)
    flags[:, :20] = LR_FAIL
    assert fill_rate(_dmap(z, flags), ROI) == 50.0


def test_fill_rate_plain_array_uses_finite_positive():
    z = np.full((30, 40), 40.0)
    z[:15] = np.nan
    assert fill_rate(z, ROI) == 50.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_fill_rate_invariant_to_value_relabel(seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(10, 80, size=(30, 40))
    flags = (rng.random((30, 40)) < 0.3).astype(np.uint8)
    perm = rng.permutation(z.ravel()).reshape(z.shape)
    assert fill_rate(_dmap(z, flags), ROI) == fill_rate(_dmap(perm, flags), ROI)


# --- z accuracy ------------------------------------------------------------------------------

def test_z_accuracy_zero_when_exact():
    z = np.full((30, 40), 45.0)
    assert z_accuracy(_dmap(z), 40.0, _Rig(), ROI) == 0.0


def test_z_accuracy_constant_offset_without_plane():
    z = np.full((30, 40), 45.3)
    assert z_accuracy(_dmap(z), 40.0, _Rig(), ROI, plane_correction=False) == pytest.approx(0.3, abs=1e-12)
    # with plane correction the offset is absorbed
    assert z_accuracy(_dmap(z), 40.0, _Rig(), ROI) == pytest.approx(0.0, abs=1e-9)


def test_z_accuracy_and_rmse_offset_invariant(rng):
    z = _plane() + rng.normal(0, 0.3, size=(30, 40))
    a = z_accuracy(_dmap(z), 45.0, _Rig(), ROI)
    b = z_accuracy(_dmap(z + 2.5), 45.0, _Rig(), ROI)
    assert a == pytest.approx(b, abs=1e-9)
    assert spatial_rmse(_dmap(z), ROI, 50.0) == pytest.approx(spatial_rmse(_dmap(z + 2.5), ROI, 50.0), abs=1e-9)


def test_z_accuracy_no_valid_pixels():
    flags = np.full((30, 40), LR_FAIL, np.uint8)
    with pytest.raises(MetricError):
        z_accuracy(_dmap(np.ones((30, 40)), flags), 10.0, _Rig(), ROI)


def test_z_accuracy_uses_rig_flange(layout):
    rig = rig_for_pair(layout, "left")
    z = np.full((30, 40), 7.0 + layout.optics.flange_focal_mm)
    assert z_accuracy(_dmap(z), 7.0, rig, ROI, plane_correction=False) == 0.0


# --- spatial rmse ----------------------------------------------------------------------------

def test_spatial_rmse_exact_plane_zero():
    assert spatial_rmse(_dmap(_plane()), ROI) == pytest.approx(0.0, abs=1e-10)


def test_spatial_rmse_noise_percent(rng):
    """Residual sd about a fitted plane is sigma * sqrt((n - 3) / n); 0.5 mm at 50 mm is ~1%."""
    vals = []
    for _ in range(20):
        z = _plane(c=50.0) + rng.normal(0, 0.5, size=(30, 40))
        vals.append(spatial_rmse(_dmap(z), ROI, 50.0))
    n = 30 * 40
    expect = 100.0 * 0.5 * np.sqrt((n - 3) / n) / 50.0
    assert np.median(vals) == pytest.approx(expect, abs=0.1)
    assert abs(np.median(vals) - 1.0) <= 0.1


def test_spatial_rmse_fit_failure():
    flags = np.full((30, 40), LR_FAIL, np.uint8)
    flags[0, :2] = VALID
    with pytest.raises((MetricError, PlaneFitError)):
        spatial_rmse(_dmap(_plane(), flags), ROI)


# --- temporal noise --------------------------------------------------------------------------

def test_temporal_noise_identical_frames_zero():
    z = _plane()
    assert temporal_noise([_dmap(z)] * 5, ROI) == 0.0


def test_temporal_noise_single_frame_error():
    with pytest.raises(MetricError):
        temporal_noise([_dmap(_plane())], ROI)


def test_temporal_noise_matches_chi_median(rng):
    """Median of per-pixel sample sd over n=20 draws equals sigma * sqrt(chi2_19 median / 19)."""
    mu = _plane()
    frames = [_dmap(mu + rng.normal(0, 0.2, size=mu.shape)) for _ in range(20)]
    expect = 0.2 * np.sqrt(chi2.ppf(0.5, 19) / 19)
    got = temporal_noise(frames, ROI)
    assert got == pytest.approx(expect, rel=0.03)
    assert abs(got - 0.2) <= 0.15 * 0.2


def test_temporal_noise_permutation_invariant(rng):
    mu = _plane()
    frames = [_dmap(mu + rng.normal(0, 0.2, size=mu.shape)) for _ in range(6)]
    perm = [frames[i] for i in rng.permutation(6)]
    assert temporal_noise(frames, ROI) == pytest.approx(temporal_noise(perm, ROI), rel=1e-12)


def test_temporal_noise_only_pixels_valid_everywhere():
    z = _plane()
    f2 = np.zeros(z.shape, np.uint8)
    f2[:, :20] = LR_FAIL
    noisy = z.copy()
    noisy[:, :20] += 5.0  # ignored: invalid in the second frame
    assert temporal_noise([_dmap(noisy), _dmap(z, f2)], ROI) == 0.0


# --- reports ---------------------------------------------------------------------------------

def test_report_validation():
    with pytest.raises(MetricError):
        MetricReport(10.0, "left", 101.0, 0.1, 0.1, 0.1)


def test_csv_round_trip(tmp_path):
    reps = [MetricReport(10.0, "left", 99.5, 0.12, 0.8, 0.05), MetricReport(15.0, "right", 100.0, 0.2, 0.9, 0.07)]
    write_csv(reps, tmp_path / "m.csv")
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header == "distance_mm,pair,fill_rate,z_accuracy_mm,rmse_percent,temporal_noise_mm"
    assert read_csv(tmp_path / "m.csv") == reps


def test_summary_medians(tmp_path):
    reps = [MetricReport(10.0, "left", f, 0.1 * f, 1.0, 0.01) for f in (90.0, 95.0, 99.0)]
    s = summarize(reps)
    assert s["overall"]["fill_rate"] == 95.0
    assert s["per_distance"][0]["z_accuracy_mm"] == pytest.approx(9.5)
    write_summary(reps, tmp_path / "s.json")
    assert (tmp_path / "s.json").read_text().endswith("\n")


def test_evaluate_captures_perfect_depth():
    z = np.full((30, 40), 45.0)
    rep = evaluate_captures([_dmap(z), _dmap(z)], 40.0, _Rig(), d_max=5)
    assert rep.fill_rate == 100.0 and rep.z_accuracy_mm == 0.0
    assert rep.rmse_percent == pytest.approx(0.0, abs=1e-10) and rep.temporal_noise_mm == 0.0


def test_sweep_plane_at_40mm_fill_rate(layout):
    (rep,) = depth_sweep(layout, distances=[40], frames=2)
    assert rep.fill_rate >= 90.0
    assert rep.rmse_percent <= 1.2
