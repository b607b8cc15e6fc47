"""Force regression from the 6 x 6 marker displacement grid with a small numpy CNN."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRID = 6
CONV = ((2, 16), (16, 32))
FC = (32 * GRID * GRID, 64, 32, 16, 3)
PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4", "w5", "b5", "w6", "b6")
MAGIC = b"CEFN"
# training schedule that reaches the linear oracle on the synthetic set in ~200 epochs
DEFAULT_HYPER = {"lr": 0.05, "batch": 32, "epochs": 200, "lr_decay": 0.985, "input_scale": 0.1}


class TrainingError(RuntimeError):
    pass


class WeightFileError(ValueError):
    pass


def param_shapes() -> dict[str, tuple[int, ...]]:
    shapes = {}
    for i, (cin, cout) in enumerate(CONV, start=1):
        shapes[f"w{i}"] = (cout, cin, 3, 3)
        shapes[f"b{i}"] = (cout,)
    for j, (nin, nout) in enumerate(zip(FC[:-1], FC[1:]), start=len(CONV) + 1):
        shapes[f"w{j}"] = (nin, nout)
        shapes[f"b{j}"] = (nout,)
    return shapes


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, H*W, C*9) patches of a 3 x 3 'same' convolution."""
    n, c, h, w = x.shape
    p = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, h, w), dtype=x.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        cols[:, :, k] = p[:, :, dy : dy + h, dx : dx + w]
    return cols.reshape(n, c * 9, h * w).transpose(0, 2, 1)


def _col2im(cols: np.ndarray, shape) -> np.ndarray:
    n, c, h, w = shape
    cols = cols.transpose(0, 2, 1).reshape(n, c, 9, h, w)
    p = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        p[:, :, dy : dy + h, dx : dx + w] += cols[:, :, k]
    return p[:, :, 1:-1, 1:-1]


@dataclass
class ForceNet:
    params: dict[str, np.ndarray]
    input_scale: float = 0.1
    seed: int | None = None

    @classmethod
    def init(cls, seed: int = 0, input_scale: float = 0.1) -> ForceNet:
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xCE11]))
        params = {}
        for name, shape in param_shapes().items():
            if name.startswith("b"):
                params[name] = np.zeros(shape)
                continue
            if len(shape) == 4:
                fan_in = shape[1] * 9
                fan_out = shape[0] * 9
            else:
                fan_in, fan_out = shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-lim, lim, size=shape)
        return cls(params, input_scale, seed)

    @classmethod
    def zeros(cls, input_scale: float = 0.1) -> ForceNet:
        return cls({k: np.zeros(s) for k, s in param_shapes().items()}, input_scale)

    def copy(self) -> ForceNet:
        return ForceNet({k: v.copy() for k, v in self.params.items()}, self.input_scale, self.seed)

    # -- passes -------------------------------------------------------------------

    @staticmethod
    def as_input(grids) -> np.ndarray:
        """(N, 6, 6, 2) or (6, 6, 2) grids to (N, 2, 6, 6)."""
        g = np.asarray(grids, dtype=np.float64)
        if g.ndim == 3:
            g = g[None]
        if g.shape[1:] != (GRID, GRID, 2):
            raise ValueError(f"expected grids of shape (N, {GRID}, {GRID}, 2), got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("displacement grid contains non-finite values")
        return np.ascontiguousarray(g.transpose(0, 3, 1, 2))

    def forward(self, x: np.ndarray, keep: bool = False):
        """x: (N, 2, 6, 6). Returns outputs (N, 3) and, with ``keep``, the cache for backward."""
        p = self.params
        cache = []
        a = x * self.input_scale
        for i in (1, 2):
            w, b = p[f"w{i}"], p[f"b{i}"]
            cols = _im2col(a)
            z = cols @ w.reshape(w.shape[0], -1).T + b  # (N, 36, Cout)
            h = np.maximum(z, 0.0)
            cache.append((cols, a.shape, z))
            a = h.transpose(0, 2, 1).reshape(a.shape[0], w.shape[0], GRID, GRID)
        a = a.reshape(a.shape[0], -1)
        for j in (3, 4, 5, 6):
            z = a @ p[f"w{j}"] + p[f"b{j}"]
            cache.append((a, z))
            a = np.maximum(z, 0.0) if j < 6 else z
        return (a, cache) if keep else a

    def backward(self, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        grads = {}
        g = dout
        for j in (6, 5, 4, 3):
            a, z = cache[j - 1]
            if j < 6:
                g = g * (z > 0)
            grads[f"w{j}"] = a.T @ g
            grads[f"b{j}"] = g.sum(axis=0)
            g = g @ p[f"w{j}"].T
        n = g.shape[0]
        g = g.reshape(n, CONV[1][1], GRID * GRID).transpose(0, 2, 1)  # (N, 36, C)
        for i in (2, 1):
            cols, in_shape, z = cache[i - 1]
            w = p[f"w{i}"]
            g = g * (z > 0)
            grads[f"w{i}"] = (g.reshape(-1, g.shape[2]).T @ cols.reshape(-1, cols.shape[2])).reshape(w.shape)
            grads[f"b{i}"] = g.sum(axis=(0, 1))
            if i > 1:
                dcols = g @ w.reshape(w.shape[0], -1)
                dx = _col2im(dcols, in_shape)
                g = dx.reshape(n, in_shape[1], GRID * GRID).transpose(0, 2, 1)
        return grads

    def predict(self, grids) -> np.ndarray:
        return self.forward(self.as_input(grids))

    def relu_masks(self, x):
        _, cache = self.forward(x, keep=True)
        zs = [c[2] for c in cache[:2]] + [c[1] for c in cache[2:5]]
        return [z > 0 for z in zs]


def mse_loss(net: ForceNet, x: np.ndarray, y: np.ndarray, with_grads: bool = True):
    """Mean over samples and outputs of the squared error."""
    out, cache = net.forward(x, keep=True)
    diff = out - y
    loss = float(np.mean(diff * diff))
    if not with_grads:
        return loss, None
    dout = 2.0 * diff / diff.size
    return loss, net.backward(cache, dout)


# --- training ---------------------------------------------------------------------

@dataclass
class ForceDataset:
    grids: np.ndarray  # (N, 6, 6, 2)
    forces: np.ndarray  # (N, 3)
    train_idx: np.ndarray
    test_idx: np.ndarray

    @classmethod
    def split(cls, grids, forces, train_fraction: float = 0.7, seed: int = 0) -> ForceDataset:
        n = len(grids)
        if n != len(forces):
            raise ValueError("grids and forces differ in length")
        perm = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B1])).permutation(n)
        k = int(round(train_fraction * n))
        return cls(np.asarray(grids, dtype=np.float64), np.asarray(forces, dtype=np.float64),
                   np.sort(perm[:k]), np.sort(perm[k:]))

    def train(self):
        return self.grids[self.train_idx], self.forces[self.train_idx]

    def test(self):
        return self.grids[self.test_idx], self.forces[self.test_idx]


@dataclass
class TrainResult:
    net: ForceNet
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def train(net: ForceNet, dataset: ForceDataset, lr: float = 1e-3, batch: int = 32, epochs: int = 10, seed: int = 0,
          momentum: float = 0.9, lr_decay: float = 1.0, weight_decay: float = 0.0) -> TrainResult:
    """Mini-batch SGD with momentum on the MSE; deterministic for a given seed.

    ``lr_decay`` multiplies the learning rate after every epoch; ``weight_decay`` adds
    an L2 pull on the weight matrices (biases are left free).
    """
    xg, yt = dataset.train()
    if len(xg) == 0:
        raise TrainingError("empty training split")
    x = ForceNet.as_input(xg)
    xv_g, yv = dataset.test()
    xv = ForceNet.as_input(xv_g) if len(xv_g) else None
    net = net.copy()
    vel = {k: np.zeros_like(v) for k, v in net.params.items()}
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A1]))
    res = TrainResult(net)
    res.train_loss.append(mse_loss(net, x, yt, with_grads=False)[0])
    if xv is not None:
        res.val_loss.append(mse_loss(net, xv, yv, with_grads=False)[0])
    rate = lr
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        for s in range(0, len(order), batch):
            idx = order[s : s + batch]
            loss, grads = mse_loss(net, x[idx], yt[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss became non-finite in epoch {epoch + 1}")
            for k in PARAM_ORDER:
                g = grads[k]
                if weight_decay and k.startswith("w"):
                    g = g + weight_decay * net.params[k]
                vel[k] = momentum * vel[k] - rate * g
                net.params[k] += vel[k]
        tl = mse_loss(net, x, yt, with_grads=False)[0]
        if not np.isfinite(tl):
            raise TrainingError(f"training loss non-finite after epoch {epoch + 1}")
        res.train_loss.append(tl)
        if xv is not None:
            res.val_loss.append(mse_loss(net, xv, yv, with_grads=False)[0])
        rate *= lr_decay
    return res


def eval_rmse(predict, grids, forces) -> np.ndarray:
    """Per-axis RMSE; ``predict`` is a ForceNet or any callable on grids."""
    fn = predict.predict if isinstance(predict, ForceNet) else predict
    pred = np.asarray(fn(grids))
    return np.sqrt(np.mean((pred - np.asarray(forces)) ** 2, axis=0))


@dataclass
class LinearOracle:
    """Closed-form least squares on flattened grids with an intercept."""

    coef: np.ndarray  # (73, 3)

    @classmethod
    def fit(cls, grids, forces) -> LinearOracle:
        a = _design(grids)
        coef, *_ = np.linalg.lstsq(a, np.asarray(forces, dtype=np.float64), rcond=None)
        return cls(coef)

    def predict(self, grids) -> np.ndarray:
        return _design(grids) @ self.coef


def _design(grids) -> np.ndarray:
    g = np.asarray(grids, dtype=np.float64).reshape(len(grids), -1)
    return np.hstack([g, np.ones((len(g), 1))])


# --- gradient check ----------------------------------------------------------------

def _loss_exact(net: ForceNet, x, y):
    """MSE without the float conversion, so extended precision survives."""
    d = net.forward(x) - y
    return np.mean(d * d)


def grad_check(net: ForceNet, grid, target, epsilon: float = 1e-5, n_params: int = 200, seed: int = 0,
               max_tries: int = 20000, precision: str = "extended") -> float:
    """Max relative error between analytic and central-difference gradients.

    Analytic gradients come from the float64 network. With ``precision="extended"``
    the finite differences are evaluated in long double, which lowers their
    cancellation floor (~1e-16 * loss / epsilon in float64) below the size of the
    smallest gradients. Parameters whose perturbation flips any ReLU are re-drawn,
    since the loss is not differentiable across the kink.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    if precision not in ("double", "extended"):
        raise ValueError("precision must be 'double' or 'extended'")
    x = ForceNet.as_input(grid)
    y = np.asarray(target, dtype=np.float64).reshape(len(x), 3)
    _, grads = mse_loss(net, x, y)
    dt = np.longdouble if precision == "extended" else np.float64
    probe = ForceNet({k: v.astype(dt) for k, v in net.params.items()}, net.input_scale, net.seed)
    xp, yp = x.astype(dt), y.astype(dt)
    eps = dt(epsilon)
    base = probe.relu_masks(xp)
    names = list(PARAM_ORDER)
    sizes = np.array([net.params[k].size for k in names])
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6C]))
    worst = 0.0
    checked = 0
    tries = 0
    while checked < n_params:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not find enough parameters away from ReLU kinks")
        which = rng.choice(len(names), p=sizes / sizes.sum())
        name = names[which]
        flat = probe.params[name].reshape(-1)
        i = int(rng.integers(flat.size))
        old = flat[i]
        flat[i] = old + eps
        up = _loss_exact(probe, xp, yp)
        m_up = probe.relu_masks(xp)
        flat[i] = old - eps
        dn = _loss_exact(probe, xp, yp)
        m_dn = probe.relu_masks(xp)
        flat[i] = old
        if any(not (np.array_equal(a, b) and np.array_equal(a, c)) for a, b, c in zip(base, m_up, m_dn)):
            continue
        num = float((up - dn) / (2 * eps))
        ana = float(grads[name].reshape(-1)[i])
        err = abs(ana - num) / max(abs(ana), abs(num), 1e-12)
        worst = max(worst, err)
        checked += 1
    return worst


# --- weights and dataset files ----------------------------------------------------

def save_weights(net: ForceNet, path) -> None:
    """JSON header then little-endian float64 arrays in header order."""
    shapes = param_shapes()
    header = {
        "architecture": {"conv": [list(c) for c in CONV], "fc": list(FC), "kernel": 3, "activation": "relu"},
        "input_scale": net.input_scale,
        "order": list(PARAM_ORDER),
        "seed": net.seed,
        "shapes": {k: list(shapes[k]) for k in PARAM_ORDER},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        for k in PARAM_ORDER:
            fh.write(np.ascontiguousarray(net.params[k], dtype="<f8").tobytes())


def load_weights(path) -> ForceNet:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise WeightFileError(f"{path}: not a force-net weight file")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + n])
    shapes = param_shapes()
    pos = 8 + n
    params = {}
    for k in header["order"]:
        shape = tuple(header["shapes"][k])
        if shapes.get(k) != shape:
            raise WeightFileError(f"{path}: unexpected shape {shape} for {k}")
        cnt = int(np.prod(shape))
        if pos + 8 * cnt > len(data):
            raise WeightFileError(f"{path}: truncated weight blob")
        arr = np.frombuffer(data, dtype="<f8", count=cnt, offset=pos)
        params[k] = arr.astype(np.float64).reshape(shape)
        pos += 8 * cnt
    if pos != len(data) or set(params) != set(PARAM_ORDER):
        raise WeightFileError(f"{path}: truncated or malformed weight blob")
    return ForceNet(params, float(header["input_scale"]), header.get("seed"))


def save_dataset(directory, grids, forces) -> None:
    from .io import write_f32

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with (d / "labels.csv").open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["index", "fx", "fy", "fz"])
        for i, (g, f) in enumerate(zip(grids, forces)):
            name = f"grid_{i:05d}.f32"
            write_f32(d / name, np.asarray(g, dtype=np.float32), units="px", extra={"layout": "rows, cols, (dx, dy)"})
            wr.writerow([i, *(repr(float(v)) for v in f)])


def load_dataset(directory):
    from .io import read_f32

    d = Path(directory)
    with (d / "labels.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    grids = np.stack([read_f32(d / f"grid_{int(r['index']):05d}.f32").astype(np.float64) for r in rows])
    forces = np.array([[float(r["fx"]), float(r["fy"]), float(r["fz"])] for r in rows])
    return grids, forces


def write_loss_csv(result: TrainResult, path) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "train_loss", "val_loss"])
        for e, tl in enumerate(result.train_loss):
            vl = result.val_loss[e] if e < len(result.val_loss) else ""
            wr.writerow([e, repr(tl), repr(vl) if vl != "" else ""])
