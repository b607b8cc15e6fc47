"""Global tuning of the matcher and filter parameters with dual annealing."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .evalmetrics import MetricError, fill_rate, roi_for, spatial_rmse
from .stereo import SgbmParams, StereoPipeline, WlsParams, depth_from_prepared

QV = 2.62
QA = -5.0
T0 = 5230.0
RESTART_RATIO = 2e-5
POLISH_STEPS = 10
FILL_MIN = 90.0
INFEASIBLE = math.inf

FIELDS = ("p1", "log_p2_gap", "uniqueness_ratio", "lr_threshold", "log10_lambda", "sigma_color")
DEFAULT_BOUNDS = (
    (2.0, 40.0),
    (0.0, math.log(1000.0)),
    (0.0, 0.5),
    (0.0, 4.0),
    (-1.0, 2.0),
    (1.0, 40.0),
)


@dataclass(frozen=True)
class ParamVector:
    """Continuous encoding; P2 = P1 + exp(theta) keeps the penalty order by construction."""

    values: tuple[float, ...]
    bounds: tuple[tuple[float, float], ...] = DEFAULT_BOUNDS

    def __post_init__(self):
        if len(self.values) != len(FIELDS) or len(self.bounds) != len(FIELDS):
            raise ValueError(f"expected {len(FIELDS)} values and bounds")

    @classmethod
    def encode(cls, sgbm: SgbmParams, wls: WlsParams, bounds=DEFAULT_BOUNDS) -> ParamVector:
        vals = (
            float(sgbm.p1),
            math.log(sgbm.p2 - sgbm.p1),
            float(sgbm.uniqueness_ratio),
            float(sgbm.lr_threshold),
            math.log10(wls.lam) if wls.lam > 0 else bounds[4][0],
            float(wls.sigma_color),
        )
        return cls(tuple(min(max(v, lo), hi) for v, (lo, hi) in zip(vals, bounds)), tuple(bounds))

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def decode(self, sgbm: SgbmParams | None = None, wls: WlsParams | None = None):
        sgbm = sgbm or SgbmParams()
        wls = wls or WlsParams()
        v = [min(max(x, lo), hi) for x, (lo, hi) in zip(self.values, self.bounds)]
        p1 = max(int(round(v[0])), 1)
        p2 = p1 + max(int(round(math.exp(v[1]))), 1)
        s = replace(sgbm, p1=p1, p2=p2, uniqueness_ratio=min(max(v[2], 0.0), 0.5),
                    lr_threshold=float(int(round(v[3]))))
        w = replace(wls, lam=10.0 ** v[4], sigma_color=v[5])
        return s, w


def eq_cost(fill_rates, rmse_percents, fill_min: float = FILL_MIN) -> float:
    """Sum of RMSE if every sample clears the fill-rate bar, else infeasible."""
    fill_rates = list(fill_rates)
    if not fill_rates or any(not f > fill_min for f in fill_rates):
        return INFEASIBLE
    return float(sum(rmse_percents))


@dataclass
class TrainingSample:
    frame: object
    distance_mm: float


class DepthObjective:
    """Cost of a parameter vector on a fixed training set; upstream stages are cached."""

    def __init__(self, samples, layout=None, pair: str = "left", sgbm: SgbmParams | None = None,
                 wls: WlsParams | None = None, bounds=DEFAULT_BOUNDS):
        samples = list(samples)
        if not samples:
            raise ValueError("training set is empty")
        self.samples = samples
        self.base_sgbm = sgbm or SgbmParams()
        self.base_wls = wls or WlsParams()
        self.bounds = tuple(bounds)
        layout = layout or samples[0].frame.layout
        self.pipe = StereoPipeline(layout, pair, self.base_sgbm, self.base_wls)
        self.prepared = [self.pipe.prepare(s.frame) for s in samples]

    def decode(self, x):
        return ParamVector(tuple(float(v) for v in x), self.bounds).decode(self.base_sgbm, self.base_wls)

    def details(self, x):
        """(fill rates, rmse percents) per sample, or None when a stage fails."""
        try:
            sgbm, wls = self.decode(x)
        except ValueError:
            return None
        fills, rmses = [], []
        for s, prep in zip(self.samples, self.prepared):
            try:
                depth = depth_from_prepared(prep, sgbm, wls)
                roi = roi_for(depth, sgbm.d_max)
                fills.append(fill_rate(depth, roi))
                rmses.append(spatial_rmse(depth, roi, s.distance_mm))
            except (MetricError, ValueError, np.linalg.LinAlgError):
                return None
        return fills, rmses

    def __call__(self, x) -> float:
        d = self.details(x)
        if d is None:
            return INFEASIBLE
        return eq_cost(*d)


@dataclass
class TraceRow:
    eval_idx: int
    x: tuple[float, ...]
    cost: float
    best_cost: float

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.cost)


@dataclass
class AnnealResult:
    x: np.ndarray
    cost: float
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.cost)

    @property
    def nfev(self) -> int:
        return len(self.trace)


@dataclass
class AnnealState:
    temperature: float
    qv: float = QV
    qa: float = QA
    best_x: np.ndarray | None = None
    best_cost: float = INFEASIBLE
    budget: int = 1
    rng_seed: int = 0


class _BudgetSpent(Exception):
    pass


class _Evaluator:
    def __init__(self, func, budget):
        self.func = func
        self.budget = int(budget)
        self.trace: list[TraceRow] = []
        self.best_x = None
        self.best = INFEASIBLE

    def __call__(self, x) -> float:
        if len(self.trace) >= self.budget:
            raise _BudgetSpent
        c = float(self.func(np.array(x, dtype=np.float64)))
        if math.isnan(c):
            c = INFEASIBLE
        if self.best_x is None or c < self.best:
            self.best = c
            self.best_x = np.array(x, dtype=np.float64)
        self.trace.append(TraceRow(len(self.trace), tuple(float(v) for v in x), c, self.best))
        return c


def visiting_step(rng, dim: int, temperature: float, qv: float = QV) -> np.ndarray:
    """Heavy-tailed Tsallis visiting draw scaled by temperature."""
    f1 = math.exp(math.log(temperature) / (qv - 1.0))
    f2 = math.exp((4.0 - qv) * math.log(qv - 1.0))
    f3 = math.exp((2.0 - qv) * math.log(2.0) / (qv - 1.0))
    f4 = math.sqrt(math.pi) * f1 * f2 / (f3 * (3.0 - qv))
    f5 = 1.0 / (qv - 1.0) - 0.5
    d1 = 2.0 - f5
    f6 = math.pi * (1.0 - f5) / math.sin(math.pi * (1.0 - f5)) / math.exp(math.lgamma(d1))
    sigma = math.exp(-(qv - 1.0) * math.log(f6 / f4) / (3.0 - qv))
    x = sigma * rng.standard_normal(dim)
    y = rng.standard_normal(dim)
    den = np.exp((qv - 1.0) * np.log(np.abs(y) + 1e-300) / (3.0 - qv))
    return np.clip(x / den, -1e8, 1e8)


def fold_into(x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Wrap coordinates periodically into [lower, upper)."""
    span = upper - lower
    return lower + np.mod(x - lower, span)


def temperature_at(t: int, t0: float = T0, qv: float = QV) -> float:
    return t0 * (2.0 ** (qv - 1.0) - 1.0) / ((1.0 + t) ** (qv - 1.0) - 1.0)


def _accept(rng, e_new: float, e_cur: float, t_acc: float, qa: float) -> bool:
    if e_new < e_cur or not math.isfinite(e_cur):
        return True
    if not math.isfinite(e_new):
        return False
    r = rng.random()
    p = 1.0 - (1.0 - qa) * (e_new - e_cur) / t_acc
    if p <= 0.0:
        return False
    return r <= math.exp(math.log(p) / (1.0 - qa))


def _polish(ev: _Evaluator, x: np.ndarray, e: float, lower, upper, steps: int = POLISH_STEPS):
    """Greedy coordinate descent: each step probes one coordinate both ways."""
    x = x.copy()
    h = 0.1 * (upper - lower)
    dim = len(x)
    for s in range(steps):
        i = s % dim
        improved = False
        for sign in (1.0, -1.0):
            cand = x.copy()
            cand[i] = min(max(cand[i] + sign * h[i], lower[i]), upper[i])
            if cand[i] == x[i]:
                continue
            c = ev(cand)
            if c < e:
                x, e = cand, c
                improved = True
                break
        if not improved:
            h[i] *= 0.5
    return x, e


def dual_anneal(func, bounds, seed: int = 0, budget: int = 1000, x0=None, maxiter: int | None = None,
                polish_steps: int = POLISH_STEPS) -> AnnealResult:
    """Generalized simulated annealing with periodic coordinate-descent polish.

    ``budget`` caps cost evaluations; ``x0`` (if given) is evaluated first so the
    result is never worse than the starting point.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    b = np.asarray(bounds, dtype=np.float64)
    if b.ndim != 2 or b.shape[1] != 2 or not np.all(np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
        raise ValueError("bounds must be finite (lower, upper) pairs with lower < upper")
    lower, upper = b[:, 0], b[:, 1]
    dim = len(lower)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA11]))
    ev = _Evaluator(func, budget)
    state = AnnealState(T0, budget=budget, rng_seed=seed)
    try:
        x = np.clip(np.asarray(x0, dtype=np.float64), lower, upper) if x0 is not None else lower + rng.random(dim) * (upper - lower)
        e = ev(x)
        it = 0
        while maxiter is None or it < maxiter:
            temp = temperature_at(it + 1)
            if temp < T0 * RESTART_RATIO:
                it = 0
                x = lower + rng.random(dim) * (upper - lower)
                e = ev(x)
                continue
            state.temperature = temp
            t_acc = temp / float(it + 1)
            improved = False
            for j in range(2 * dim):
                if j < dim:
                    cand = fold_into(x + visiting_step(rng, dim, temp), lower, upper)
                else:
                    cand = x.copy()
                    k = j - dim
                    cand[k] = fold_into(x[k:k + 1] + visiting_step(rng, 1, temp), lower[k:k + 1], upper[k:k + 1])[0]
                before = ev.best
                c = ev(cand)
                if _accept(rng, c, e, t_acc, QA):
                    x, e = cand, c
                if ev.best < before:
                    improved = True
            if improved and polish_steps > 0 and math.isfinite(ev.best):
                px, pe = _polish(ev, ev.best_x, ev.best, lower, upper, polish_steps)
                if pe < e:
                    x, e = px, pe
            it += 1
    except _BudgetSpent:
        pass
    state.best_x, state.best_cost = ev.best_x, ev.best
    return AnnealResult(ev.best_x, ev.best, ev.trace)


def tune(objective: DepthObjective, seed: int = 0, budget: int = 300) -> tuple[AnnealResult, SgbmParams, WlsParams]:
    """Anneal from the default parameters; returns the result and the decoded best params."""
    x0 = ParamVector.encode(objective.base_sgbm, objective.base_wls, objective.bounds).array()
    res = dual_anneal(objective, objective.bounds, seed=seed, budget=budget, x0=x0)
    sgbm, wls = objective.decode(res.x)
    return res, sgbm, wls


def synthetic_training_set(layout=None, n: int = 6, seed: int = 0, lo: float = 10.0, hi: float = 70.0):
    from .synthgen import SceneSpec, default_layout, render_compound_frame

    layout = layout or default_layout()
    out = []
    for i, d in enumerate(np.linspace(lo, hi, n)):
        scene = SceneSpec(target_distance_mm=float(d), texture_seed=seed * 100 + 50 + i, rng_seed=seed * 100 + i)
        frame, _ = render_compound_frame(layout, scene)
        out.append(TrainingSample(frame, float(d)))
    return out


def write_trace_csv(trace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["eval_idx", *FIELDS, "cost", "feasible"])
        for row in trace:
            cost = repr(row.cost) if row.feasible else "inf"
            wr.writerow([row.eval_idx, *(repr(v) for v in row.x), cost, int(row.feasible)])


def params_to_dict(sgbm: SgbmParams, wls: WlsParams) -> dict:
    return {
        "sgbm": {
            "census_window": list(sgbm.census_window),
            "block_radius": sgbm.block_radius,
            "p1": sgbm.p1,
            "p2": sgbm.p2,
            "uniqueness_ratio": sgbm.uniqueness_ratio,
            "lr_threshold": sgbm.lr_threshold,
            "d_min": sgbm.d_min,
            "d_max": sgbm.d_max,
            "paths": sgbm.paths,
        },
        "wls": {"lam": wls.lam, "sigma_color": wls.sigma_color, "iterations": wls.iterations,
                "min_support": wls.min_support},
    }


def params_from_dict(data: dict) -> tuple[SgbmParams, WlsParams]:
    s = dict(data.get("sgbm", {}))
    if "census_window" in s:
        s["census_window"] = tuple(s["census_window"])
    return SgbmParams(**s), WlsParams(**data.get("wls", {}))


def write_params_json(sgbm: SgbmParams, wls: WlsParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(sgbm, wls), indent=2, sort_keys=True) + "\n")


def read_params_json(path) -> tuple[SgbmParams, WlsParams]:
    return params_from_dict(json.loads(Path(path).read_text()))
