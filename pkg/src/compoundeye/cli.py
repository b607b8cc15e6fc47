"""Command-line front end: synthesis, depth, tactile tracking, tuning, force training, evaluation, grasp demo."""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .force import DEFAULT_HYPER
from .geometry import rig_to_dict
from .stereo import SgbmParams, StereoParamError, WlsParams


class CliError(Exception):
    pass


# --- configuration ------------------------------------------------------------------

def _read_json(path, what: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} file not found: {p}")
    try:
        return io.read_json(p)
    except ValueError as exc:
        raise CliError(f"{what} file {p} is not valid JSON: {exc}") from exc


def _out_dir(path) -> Path:
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {d}: {exc.strerror}") from exc
    probe = d / ".write-test"
    try:
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {d} is not writable: {exc.strerror}") from exc
    return d


def layout_to_dict(tile: int = 200, gap: int = 8, optics=None) -> dict:
    from .synthgen import SensorOptics

    return {"tile": tile, "gap": gap, "optics": asdict(optics or SensorOptics())}


def layout_from_dict(data: dict):
    from .synthgen import SensorOptics, default_layout

    return default_layout(int(data.get("tile", 200)), int(data.get("gap", 8)), SensorOptics(**data.get("optics", {})))


def calib_dict(layout_cfg: dict) -> dict:
    from .synthgen import STEREO_ROLES, rig_for_pair

    layout = layout_from_dict(layout_cfg)
    return {"layout": layout_cfg, "pairs": {p: rig_to_dict(rig_for_pair(layout, p)) for p in sorted(STEREO_ROLES)}}


def load_calib(path):
    data = _read_json(path, "calibration")
    if "layout" not in data:
        raise CliError(f"calibration file {path} has no 'layout' section")
    return layout_from_dict(data["layout"])


_SGBM_FLAGS = ("p1", "p2", "uniqueness_ratio", "lr_threshold", "d_min", "d_max", "paths", "block_radius")
_WLS_FLAGS = ("lam", "sigma_color", "iterations", "min_support")


def _add_param_flags(p: argparse.ArgumentParser):
    p.add_argument("--params", help="stereo parameter JSON (as written by 'tune')")
    g = p.add_argument_group("stereo overrides")
    for name in _SGBM_FLAGS + _WLS_FLAGS:
        kind = float if name in ("uniqueness_ratio", "lr_threshold", "lam", "sigma_color", "min_support") else int
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=kind)


def _stereo_params(args) -> tuple[SgbmParams, WlsParams]:
    from .tuner import read_params_json

    if args.params:
        if not Path(args.params).is_file():
            raise CliError(f"parameter file not found: {args.params}")
        sgbm, wls = read_params_json(args.params)
    else:
        sgbm, wls = SgbmParams(), WlsParams()
    s = {k: getattr(args, k) for k in _SGBM_FLAGS if getattr(args, k, None) is not None}
    w = {k: getattr(args, k) for k in _WLS_FLAGS if getattr(args, k, None) is not None}
    return replace(sgbm, **s), replace(wls, **w)


def _pairs(arg: str) -> tuple[str, ...]:
    return ("left", "right") if arg == "both" else (arg,)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else repr(round(float(v), 6))
    return str(v)


def _write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])


# --- scene configuration --------------------------------------------------------------

def scene_from_dict(data: dict, layout=None):
    """SceneSpec from JSON; contact centres may be given in canvas px or in mm."""
    from .synthgen import ContactSpec, MarkerLayout, SceneSpec

    known = {f.name for f in fields(SceneSpec)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise CliError(f"unknown scene field(s): {', '.join(unknown)}")
    d = dict(data)
    if "markers" in d:
        m = dict(d["markers"])
        if m.get("centre") is not None:
            m["centre"] = tuple(m["centre"])
        d["markers"] = MarkerLayout(**m)
    if d.get("contact") is not None:
        c = dict(d["contact"])
        if "center_mm" in c:
            if layout is None:
                raise CliError("contact given in mm needs a layout")
            c["center"] = tuple(layout.mm_to_canvas(c.pop("center_mm")))
        c["center"] = tuple(c["center"])
        if "tangential_shift" in c:
            c["tangential_shift"] = tuple(c["tangential_shift"])
        d["contact"] = ContactSpec(**c)
    if "marker_shift_px" in d:
        d["marker_shift_px"] = tuple(d["marker_shift_px"])
    return SceneSpec(**d)


def scene_to_dict(scene) -> dict:
    out = asdict(scene)
    return _jsonable(out)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_capture(out: Path, stem: str, frame, gt, scene) -> None:
    io.write_ppm(out / f"{stem}.ppm", frame.image)
    io.write_json(out / f"{stem}_gt.json", {
        "depth_mm": gt.depth_mm,
        "target_distance_mm": scene.target_distance_mm,
        "force_n": gt.force.tolist(),
        "marker_centers_initial": gt.marker_centers_initial.tolist(),
        "marker_centers_deformed": gt.marker_centers_deformed.tolist(),
    })
    io.write_f32(out / f"{stem}_gt_depth.f32", gt.depth_map(), units="mm")


# --- commands --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synthgen import render_sequence

    cfg = _read_json(args.config, "scene config") if args.config else {}
    unknown = sorted(set(cfg) - {"layout", "scene"})
    if unknown:
        raise CliError(f"unknown config section(s) {', '.join(unknown)}; expected 'layout' and/or 'scene'")
    layout_cfg = cfg.get("layout", layout_to_dict())
    layout = layout_from_dict(layout_cfg)
    out = _out_dir(args.out)
    scene_cfg = dict(cfg.get("scene", {}))
    scene_cfg.setdefault("rng_seed", args.seed)
    scene_cfg.setdefault("texture_seed", args.seed)
    io.write_json(out / "calib.json", calib_dict(layout_cfg))
    if args.sweep:
        distances = np.arange(0.0, 70.0 + 1e-9, args.step)
        scenes = []
        for i, dist in enumerate(distances):
            sc = dict(scene_cfg, target_distance_mm=float(dist), rng_seed=int(scene_cfg["rng_seed"]) * 1000 + i)
            scenes.append((f"scene_{i:03d}_{dist:05.1f}mm", scene_from_dict(sc, layout)))
    else:
        scenes = [("scene", scene_from_dict(scene_cfg, layout))]
    index = []
    for name, scene in scenes:
        frames, gt = render_sequence(layout, scene, args.frames)
        for k, frame in enumerate(frames):
            stem = name if args.frames == 1 else f"{name}_f{k:02d}"
            _write_capture(out, stem, frame, gt, replace(scene, rng_seed=scene.rng_seed + k))
        io.write_json(out / f"{name}.json", scene_to_dict(scene))
        index.append({"name": name, "target_distance_mm": scene.target_distance_mm, "frames": args.frames})
    io.write_json(out / "index.json", {"scenes": index})
    print(f"wrote {len(scenes)} scene(s) to {out}")
    return 0


def _load_frame(path, layout):
    from .synthgen import CompoundFrame

    if not Path(path).is_file():
        raise CliError(f"frame file not found: {path}")
    img = io.read_netpbm(path)
    if img.ndim != 3:
        raise CliError(f"{path}: expected a colour (P6) frame")
    if tuple(img.shape[:2]) != tuple(layout.frame_shape):
        raise CliError(f"{path}: frame is {img.shape[1]}x{img.shape[0]}, calibration expects "
                       f"{layout.frame_shape[1]}x{layout.frame_shape[0]}")
    return CompoundFrame(img, layout)


def _gt_distance(args):
    if args.distance is not None:
        return float(args.distance)
    if args.gt:
        return float(_read_json(args.gt, "ground truth")["target_distance_mm"])
    return None


def cmd_depth(args) -> int:
    from .evalmetrics import CSV_FIELDS, evaluate_captures, write_csv
    from .stereo import StereoPipeline

    layout = load_calib(args.calib)
    sgbm, wls = _stereo_params(args)
    frame = _load_frame(args.frame, layout)
    dist = _gt_distance(args)
    out = _out_dir(args.out)
    reports = []
    for pair in _pairs(args.pair):
        pipe = StereoPipeline(layout, pair, sgbm, wls)
        depth = pipe.run(frame)
        io.write_f32(out / f"depth_{pair}.f32", depth.depth, units="mm")
        disp = np.where(depth.valid, depth.disparity.disparity, np.nan)
        io.write_f32(out / f"disparity_{pair}.f32", disp, units="px")
        io.write_pgm(out / f"valid_{pair}.pgm", depth.valid)
        io.write_pgm(out / f"flags_{pair}.pgm", depth.flags.astype(np.uint8))
        if dist is not None:
            reports.append(evaluate_captures([depth], dist, pipe.rig, sgbm.d_max, pair))
    if reports:
        write_csv(reports, out / "report.csv")
        for r in reports:
            print(",".join(_fmt(getattr(r, k)) for k in CSV_FIELDS))
    return 0


def _write_markers(path, markers) -> None:
    _write_rows(path, ["x", "y", "area"], [(x, y, int(a)) for (x, y), a in zip(markers.centroids, markers.areas)])


def cmd_tactile(args) -> int:
    from .tactile import TactileTracker, stitch

    layout = load_calib(args.calib)
    ref = _load_frame(args.reference, layout)
    cur = _load_frame(args.frame, layout) if args.frame else ref
    out = _out_dir(args.out)
    tracker = TactileTracker.from_initial(ref)
    grid, fld, markers = tracker.process(cur)
    io.write_ppm(out / "stitched.ppm", stitch(cur, tracker.rois))
    _write_markers(out / "markers.csv", markers)
    _write_markers(out / "reference_markers.csv", tracker.reference)
    _write_rows(out / "displacement.csv", ["x", "y", "dx", "dy"],
                [(x, y, dx, dy) for (x, y), (dx, dy) in zip(fld.initial, fld.displacement)])
    io.write_f32(out / "grid.f32", grid, units="px", extra={"layout": "rows, cols, (dx, dy)"})
    print(f"{len(tracker.reference)} reference markers, {len(markers)} current, {len(fld)} matched")
    return 0


def cmd_tune(args) -> int:
    from .tuner import DEFAULT_BOUNDS, DepthObjective, ParamVector, synthetic_training_set, tune, write_params_json, \
        write_trace_csv

    layout = load_calib(args.calib)
    cfg = _read_json(args.config, "tuning config") if args.config else {}
    seed = int(cfg.get("seed", args.seed))
    budget = int(args.budget if args.budget is not None else cfg.get("budget", 300))
    samples = int(cfg.get("samples", 6))
    bounds = [tuple(b) for b in cfg.get("bounds", DEFAULT_BOUNDS)]
    sgbm, wls = _stereo_params(args)
    out = _out_dir(args.out)
    data = synthetic_training_set(layout, samples, seed)
    obj = DepthObjective(data, layout, args.pair, sgbm, wls, bounds)
    t0 = time.perf_counter()
    default_cost = obj(ParamVector.encode(sgbm, wls, bounds).array())
    res, best_sgbm, best_wls = tune(obj, seed=seed, budget=budget)
    elapsed = time.perf_counter() - t0
    write_trace_csv(res.trace, out / "trace.csv")
    write_params_json(best_sgbm, best_wls, out / "params.json")
    summary = {"budget": budget, "seed": seed, "samples": samples, "default_cost": _num(default_cost),
               "best_cost": _num(res.cost), "feasible": res.feasible, "evaluations": res.nfev}
    if not args.no_timing:
        summary["elapsed_s"] = round(elapsed, 3)
    io.write_json(out / "summary.json", summary)
    print(f"default cost {default_cost:.4f} -> best {res.cost:.4f} after {res.nfev} evaluations")
    return 0


def _num(v):
    v = float(v)
    return round(v, 9) if np.isfinite(v) else None


def cmd_train_force(args) -> int:
    from .force import ForceDataset, ForceNet, LinearOracle, eval_rmse, load_dataset, save_dataset, save_weights, \
        train, write_loss_csv
    from .synthgen import force_dataset

    out = _out_dir(args.out)
    if args.dataset:
        if not (Path(args.dataset) / "labels.csv").is_file():
            raise CliError(f"dataset directory {args.dataset} has no labels.csv")
        grids, forces = load_dataset(args.dataset)
    else:
        grids, forces = force_dataset(args.samples, seed=args.seed, grid_noise=args.grid_noise)
        if args.save_dataset:
            save_dataset(out / "dataset", grids, forces)
    ds = ForceDataset.split(grids, forces, args.train_fraction, seed=args.seed)
    t0 = time.perf_counter()
    res = train(ForceNet.init(args.seed, args.input_scale), ds, lr=args.lr, batch=args.batch, epochs=args.epochs,
                seed=args.seed, lr_decay=args.lr_decay, weight_decay=args.weight_decay)
    elapsed = time.perf_counter() - t0
    save_weights(res.net, out / "weights.bin")
    write_loss_csv(res, out / "loss.csv")
    rmse = eval_rmse(res.net.predict, *ds.test())
    oracle = eval_rmse(LinearOracle.fit(*ds.train()).predict, *ds.test())
    report = {"samples": len(grids), "train": len(ds.train_idx), "test": len(ds.test_idx),
              "rmse_n": [round(float(v), 9) for v in rmse], "linear_oracle_rmse_n": [round(float(v), 9) for v in oracle],
              "epochs": args.epochs, "lr": args.lr, "lr_decay": args.lr_decay, "weight_decay": args.weight_decay,
              "batch": args.batch, "input_scale": args.input_scale, "seed": args.seed}
    if not args.no_timing:
        report["elapsed_s"] = round(elapsed, 3)
    io.write_json(out / "report.json", report)
    print("test RMSE (N): " + " ".join(f"{v:.4f}" for v in rmse) + "   linear oracle: "
          + " ".join(f"{v:.4f}" for v in oracle))
    return 0


def cmd_eval(args) -> int:
    from .evalmetrics import depth_sweep, write_csv, write_summary

    layout = load_calib(args.calib)
    sgbm, wls = _stereo_params(args)
    out = _out_dir(args.out)
    lo, hi, step = args.distances
    distances = [float(d) for d in np.arange(lo, hi + 1e-9, step)]
    reports = depth_sweep(layout, distances, args.frames, _pairs(args.pair), sgbm, wls, seed=args.seed)
    write_csv(reports, out / "metrics.csv")
    write_summary(reports, out / "summary.json")
    for r in reports:
        print(f"{r.pair:5s} {r.distance_mm:5.1f} mm  fill {r.fill_rate:6.2f}%  rmse {r.rmse_percent:.3f}%  "
              f"zacc {r.z_accuracy_mm:.4f} mm  noise {r.temporal_noise_mm:.4f} mm")
    return 0


# --- grasp timeline ------------------------------------------------------------------------

@dataclass(frozen=True)
class ContactPath:
    center_mm: tuple[float, float] = (0.0, 0.0)
    normal_depth: tuple[float, float] = (0.0, 0.0)  # mm at phase start, end
    shift_start: tuple[float, float] = (0.0, 0.0)  # mm
    shift_end: tuple[float, float] = (0.0, 0.0)
    radius_mm: float = 2.0


@dataclass(frozen=True)
class Phase:
    name: str
    frames: int
    distance_mm: tuple[float, float]  # start, end
    contact: ContactPath | None = None


@dataclass
class GraspScript:
    phases: list[Phase] = field(default_factory=list)

    def __post_init__(self):
        from .synthgen import MAX_DISTANCE_MM

        if not self.phases:
            raise CliError("grasp script has no phases")
        for ph in self.phases:
            if ph.frames < 1:
                raise CliError(f"phase {ph.name!r} has no frames")
            if not all(0.0 <= d <= MAX_DISTANCE_MM for d in ph.distance_mm):
                raise CliError(f"phase {ph.name!r} distance outside [0, {MAX_DISTANCE_MM:g}] mm")

    @classmethod
    def from_dict(cls, data: dict) -> GraspScript:
        phases = []
        for p in data["phases"]:
            c = p.get("contact")
            contact = None
            if c is not None:
                contact = ContactPath(tuple(c.get("center_mm", (0.0, 0.0))), tuple(c.get("normal_depth", (0.0, 0.0))),
                                      tuple(c.get("shift_start", (0.0, 0.0))), tuple(c.get("shift_end", (0.0, 0.0))),
                                      float(c.get("radius_mm", 2.0)))
            phases.append(Phase(p["name"], int(p["frames"]), tuple(p["distance_mm"]), contact))
        return cls(phases)

    def to_dict(self) -> dict:
        return _jsonable({"phases": [asdict(p) for p in self.phases]})

    def frames(self):
        """(phase name, distance mm, ContactSpec or None) per frame; values ramp linearly within a phase."""
        from .synthgen import ContactSpec

        for ph in self.phases:
            for i in range(ph.frames):
                t = i / (ph.frames - 1) if ph.frames > 1 else 1.0
                dist = ph.distance_mm[0] + t * (ph.distance_mm[1] - ph.distance_mm[0])
                contact = None
                c = ph.contact
                if c is not None:
                    depth = c.normal_depth[0] + t * (c.normal_depth[1] - c.normal_depth[0])
                    shift = tuple(a + t * (b - a) for a, b in zip(c.shift_start, c.shift_end))
                    contact = (c.center_mm, ContactSpec((0.0, 0.0), max(depth, 0.0), shift, c.radius_mm))
                yield ph.name, float(dist), contact


def default_grasp_script() -> GraspScript:
    """Approach, press, shear, release, retreat."""
    c = (0.0, 0.0)
    return GraspScript([
        Phase("approach", 10, (60.0, 12.0)),
        Phase("press", 6, (10.0, 10.0), ContactPath(c, (0.0, 0.6))),
        Phase("shear", 6, (10.0, 10.0), ContactPath(c, (0.6, 0.6), (0.0, 0.0), (0.15, -0.1))),
        Phase("release", 6, (10.0, 10.0), ContactPath(c, (0.6, 0.0), (0.15, -0.1), (0.0, 0.0))),
        Phase("retreat", 6, (12.0, 50.0)),
    ])


@dataclass
class TimelineRow:
    frame: int
    phase: str
    depth_median_mm: float  # NaN when no stereo pixel is valid
    fx: float
    fy: float
    fz: float
    wall_ms: float

    def __post_init__(self):
        if not self.wall_ms > 0:
            raise ValueError("wall time must be positive")


def run_grasp(script: GraspScript, layout, net, sgbm=None, wls=None, seed: int = 0, pair: str = "left",
              texture_seed: int = 0) -> list[TimelineRow]:
    """Render each scripted frame, then time depth + tactile tracking + force inference on it."""
    from .stereo import StereoPipeline
    from .synthgen import SceneSpec, render_compound_frame
    from .tactile import TactileTracker

    pipe = StereoPipeline(layout, pair, sgbm or SgbmParams(), wls or WlsParams())
    tracker = None
    rows = []
    for k, (phase, dist, contact) in enumerate(script.frames()):
        if contact is not None:
            centre_mm, cspec = contact
            contact = replace(cspec, center=tuple(float(v) for v in layout.mm_to_canvas(centre_mm)))
        scene = SceneSpec(target_distance_mm=dist, texture_seed=texture_seed, contact=contact, rng_seed=seed * 10007 + k)
        frame, _ = render_compound_frame(layout, scene)
        if tracker is None:
            # the first frame is the pre-contact reference
            tracker = TactileTracker.from_initial(frame)
        t0 = time.perf_counter()
        depth = pipe.run(frame)
        grid, _, _ = tracker.process(frame)
        force = net.predict(grid[None])[0]
        wall = (time.perf_counter() - t0) * 1e3
        valid = depth.depth[depth.valid]
        med = float(np.median(valid)) if valid.size else float("nan")
        rows.append(TimelineRow(k, phase, med, *(float(v) for v in force), wall))
    return rows


def cmd_grasp(args) -> int:
    from .force import WeightFileError, load_weights

    if not Path(args.weights).is_file():
        raise CliError(f"force weights not found: {args.weights} (train them with 'train-force')")
    try:
        net = load_weights(args.weights)
    except WeightFileError as exc:
        raise CliError(str(exc)) from exc
    layout = load_calib(args.calib)
    script = GraspScript.from_dict(_read_json(args.script, "grasp script")) if args.script else default_grasp_script()
    sgbm, wls = _stereo_params(args)
    out = _out_dir(args.out)
    rows = run_grasp(script, layout, net, sgbm, wls, seed=args.seed, pair=args.pair)
    header = ["frame", "phase", "depth_median_mm", "fx", "fy", "fz"] + ([] if args.no_timing else ["wall_ms"])
    _write_rows(out / "timeline.csv", header,
                [[getattr(r, h) for h in header] for r in rows])
    io.write_json(out / "script.json", script.to_dict())
    summary = {"frames": len(rows), "pair": args.pair}
    if not args.no_timing:
        walls = [r.wall_ms for r in rows]
        summary["median_wall_ms"] = round(float(np.median(walls)), 3)
        summary["max_wall_ms"] = round(float(np.max(walls)), 3)
        print(f"{len(rows)} frames, median {summary['median_wall_ms']:.1f} ms per frame")
    io.write_json(out / "summary.json", summary)
    return 0


# --- parser ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="compoundeye", description=__doc__)
    ap.add_argument("--seed", type=int, default=0, help="single source of randomness (default 0)")
    ap.add_argument("--no-timing", action="store_true", help="omit wall-clock fields from outputs")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render synthetic compound-eye frames with ground truth")
    p.add_argument("--config", help="JSON with optional 'layout' and 'scene' sections")
    p.add_argument("--out", required=True)
    p.add_argument("--sweep", action="store_true", help="render planes from 0 to 70 mm")
    p.add_argument("--step", type=float, default=5.0, help="sweep step in mm")
    p.add_argument("--frames", type=int, default=1, help="repeated captures per scene")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("depth", help="depth map from one frame")
    p.add_argument("--frame", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pair", choices=("left", "right", "both"), default="left")
    p.add_argument("--distance", type=float, help="stage distance (mm) for the metric report")
    p.add_argument("--gt", help="ground-truth JSON written by 'synth'")
    _add_param_flags(p)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("tactile", help="marker tracking and 6x6 displacement grid")
    p.add_argument("--reference", required=True, help="pre-contact frame")
    p.add_argument("--frame", help="current frame (defaults to the reference)")
    p.add_argument("--calib", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tactile)

    p = sub.add_parser("tune", help="anneal stereo parameters on synthetic planes")
    p.add_argument("--calib", required=True)
    p.add_argument("--config", help="JSON with bounds, budget, seed, samples")
    p.add_argument("--budget", type=int)
    p.add_argument("--pair", choices=("left", "right"), default="left")
    p.add_argument("--out", required=True)
    _add_param_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train-force", help="train the displacement-to-force network")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", help="directory of .f32 grids and labels.csv (default: synthesise)")
    p.add_argument("--save-dataset", action="store_true")
    p.add_argument("--samples", type=int, default=3500)
    p.add_argument("--grid-noise", type=float, default=0.1)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--lr", type=float, default=DEFAULT_HYPER["lr"])
    p.add_argument("--lr-decay", type=float, default=DEFAULT_HYPER["lr_decay"])
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--batch", type=int, default=DEFAULT_HYPER["batch"])
    p.add_argument("--epochs", type=int, default=DEFAULT_HYPER["epochs"])
    p.add_argument("--input-scale", type=float, default=DEFAULT_HYPER["input_scale"])
    p.set_defaults(func=cmd_train_force)

    p = sub.add_parser("eval", help="depth metrics over a synthetic distance sweep")
    p.add_argument("--calib", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pair", choices=("left", "right", "both"), default="left")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--distances", type=float, nargs=3, default=(10.0, 70.0, 5.0), metavar=("LO", "HI", "STEP"))
    _add_param_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grasp", help="scripted grasp timeline with depth and force")
    p.add_argument("--script", help="grasp script JSON (default: built-in approach/press/shear/release)")
    p.add_argument("--calib", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pair", choices=("left", "right"), default="left")
    _add_param_flags(p)
    p.set_defaults(func=cmd_grasp)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, StereoParamError, io.FormatError) as exc:
        print(f"compoundeye {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"compoundeye {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
