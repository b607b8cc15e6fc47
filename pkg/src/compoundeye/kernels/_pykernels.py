"""Pure NumPy versions of the compiled kernels (same signatures, same results)."""

import numpy as np

BIG = 1 << 28

if hasattr(np, "bitwise_count"):
    _popcount = np.bitwise_count
else:  # numpy < 2.0
    _BYTE_POP = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)

    def _popcount(a):
        b = a.view(np.uint8).reshape(a.shape + (8,))
        return _BYTE_POP[b].sum(axis=-1, dtype=np.uint16)


def census_transform(img, win_h, win_w):
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape
    ry, rx = win_h // 2, win_w // 2
    pad = np.pad(img, ((ry, ry), (rx, rx)), mode="edge")
    out = np.zeros((h, w), dtype=np.uint64)
    one = np.uint64(1)
    for dy in range(-ry, ry + 1):
        for dx in range(-rx, rx + 1):
            if dy == 0 and dx == 0:
                continue
            nb = pad[ry + dy : ry + dy + h, rx + dx : rx + dx + w]
            out = (out << one) | (nb < img).astype(np.uint64)
    return out


def _box_sum_edge(vol, r):
    """Sum over a (2r+1)^2 window per disparity plane, edge-replicated."""
    if r == 0:
        return vol
    pad = np.pad(vol.astype(np.int32), ((r, r), (r, r), (0, 0)), mode="edge")
    h, w = vol.shape[:2]
    tmp = np.zeros((h + 2 * r, w, vol.shape[2]), dtype=np.int32)
    for t in range(2 * r + 1):
        tmp += pad[:, t : t + w]
    out = np.zeros(vol.shape, dtype=np.int32)
    for t in range(2 * r + 1):
        out += tmp[t : t + h]
    return out.astype(np.uint16)


def census_cost_volume(left, right, d_min, d_max, block_radius):
    h, w = left.shape
    nd = d_max - d_min + 1
    raw = np.empty((h, w, nd), dtype=np.uint16)
    cols = np.arange(w)
    for k in range(nd):
        xr = np.maximum(cols - (d_min + k), 0)
        raw[:, :, k] = _popcount(left ^ right[:, xr])
    return _box_sum_edge(raw, block_radius)


def _step(c, lp, mp, p1, p2):
    # c, lp: (N, D) ; mp: (N,)
    n, nd = lp.shape
    big = np.full((n, 1), BIG, dtype=np.int64)
    lo = np.concatenate([big, lp[:, :-1]], axis=1)
    hi = np.concatenate([lp[:, 1:], big], axis=1)
    v = np.minimum(lp, np.minimum(lo, hi) + p1)
    v = np.minimum(v, (mp + p2)[:, None])
    return c + v - mp[:, None]


def sgm_aggregate(cost, p1, p2, dirs):
    cost = np.asarray(cost)
    h, w, nd = cost.shape
    c64 = cost.astype(np.int64)
    out = np.zeros((h, w, nd), dtype=np.int64)
    for dx, dy in np.asarray(dirs):
        dx, dy = int(dx), int(dy)
        if dy == 0:
            xs = range(w) if dx > 0 else range(w - 1, -1, -1)
            lp = None
            for x in xs:
                if lp is None:
                    cur = c64[:, x, :]
                else:
                    cur = _step(c64[:, x, :], lp, lp.min(axis=1), p1, p2)
                out[:, x, :] += cur
                lp = cur
        else:
            ys = range(h) if dy > 0 else range(h - 1, -1, -1)
            lp = None
            cols = np.arange(w)
            src = cols - dx
            inside = (src >= 0) & (src < w)
            for y in ys:
                if lp is None:
                    cur = c64[y].copy()
                else:
                    cur = c64[y].copy()
                    prev = lp[src[inside]]
                    cur[inside] = _step(c64[y][inside], prev, prev.min(axis=1), p1, p2)
                out[y] += cur
                lp = cur
    return out.astype(np.int32)


def _parabola(cm, c0, cp):
    cm = cm.astype(np.float64)
    cp = cp.astype(np.float64)
    den = cm - 2.0 * c0 + cp
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, (cm - cp) / (2.0 * safe), 0.0)


def _select(vol, avail, uniqueness, d_min):
    """WTA over volume ``vol`` (H, W, D) where ``avail`` marks usable entries."""
    h, w, nd = vol.shape
    v = np.where(avail, vol.astype(np.int64), BIG)
    best_k = np.argmin(v, axis=2)
    best = np.take_along_axis(v, best_k[..., None], axis=2)[..., 0]
    ks = np.arange(nd)
    far = np.abs(ks[None, None, :] - best_k[..., None]) > 1
    second = np.where(far, v, BIG).min(axis=2)
    off = np.zeros((h, w))
    kmax = avail.sum(axis=2) - 1
    inner = (best_k > 0) & (best_k < kmax)
    km = np.clip(best_k - 1, 0, nd - 1)
    kp = np.clip(best_k + 1, 0, nd - 1)
    cm = np.take_along_axis(v, km[..., None], axis=2)[..., 0]
    cp = np.take_along_axis(v, kp[..., None], axis=2)[..., 0]
    off[inner] = _parabola(cm[inner], best[inner], cp[inner])
    disp = d_min + best_k + off
    ok = (second == BIG) | (second * (1.0 - uniqueness) > best)
    ok &= kmax >= 0
    disp = np.where(kmax >= 0, disp, 0.0)
    return disp, ok.astype(np.uint8)


def select_left(agg, uniqueness, d_min):
    avail = np.ones(agg.shape, dtype=bool)
    return _select(agg, avail, uniqueness, d_min)


def select_right(agg, uniqueness, d_min):
    h, w, nd = agg.shape
    x = np.arange(w)[:, None]
    k = np.arange(nd)[None, :]
    xl = x + d_min + k
    avail2 = xl < w
    xl = np.minimum(xl, w - 1)
    mirrored = agg[:, xl, k[0][None, :].repeat(w, axis=0)]
    avail = np.broadcast_to(avail2, (h, w, nd))
    return _select(mirrored, avail, uniqueness, d_min)


def _tridiag_rows(f, wts, lam):
    """Solve (I + lam * L_w) u = f along the last axis for every leading index."""
    n = f.shape[-1]
    if n == 1:
        return f
    a = np.zeros(f.shape)
    c = np.zeros(f.shape)
    a[..., 1:] = -lam * wts
    c[..., :-1] = -lam * wts
    b = 1.0 - a - c
    cb = np.empty(f.shape)
    u = np.empty(f.shape)
    cb[..., 0] = c[..., 0] / b[..., 0]
    u[..., 0] = f[..., 0] / b[..., 0]
    for i in range(1, n):
        m = b[..., i] - a[..., i] * cb[..., i - 1]
        cb[..., i] = c[..., i] / m
        u[..., i] = (f[..., i] - a[..., i] * u[..., i - 1]) / m
    for i in range(n - 2, -1, -1):
        u[..., i] -= cb[..., i] * u[..., i + 1]
    return u


def fgs_smooth(stack, wx, wy, lambdas):
    stack = np.asarray(stack, dtype=np.float64)
    for lam in lambdas:
        stack = _tridiag_rows(stack, wx[None], lam)
        stack = np.swapaxes(_tridiag_rows(np.swapaxes(stack, 1, 2), wy.T[None], lam), 1, 2)
    return np.ascontiguousarray(stack)


def zero_masked_costs(cost, left_mask, right_mask, d_min):
    h, w, nd = cost.shape
    src = np.arange(w)[:, None] - (d_min + np.arange(nd))[None, :]
    hit = right_mask[:, np.maximum(src, 0)].astype(bool) & (src >= 0)[None]
    hit |= left_mask.astype(bool)[:, :, None]
    cost[hit] = 0
    return cost
