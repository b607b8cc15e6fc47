# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stereo kernels: census, cost volume, SGM aggregation, WTA selection, FGS passes."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint16_t, int32_t, uint64_t
from libc.string cimport memset

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    /* one SGM recurrence step over all disparities; lp is padded with sentinels */
    static inline int32_t ce_path_step(const uint16_t *restrict c, const int32_t *restrict lp, int32_t mp,
                                       int32_t *restrict lc, int32_t *restrict acc, Py_ssize_t nd,
                                       int32_t p1, int32_t p2) {
        int32_t jump = mp + p2, m = 1 << 28;
        for (Py_ssize_t d = 0; d < nd; d++) {
            int32_t v = lp[d + 1];
            int32_t t = (lp[d] < lp[d + 2] ? lp[d] : lp[d + 2]) + p1;
            v = t < v ? t : v;
            v = jump < v ? jump : v;
            int32_t l = (int32_t)c[d] + v - mp;
            lc[d + 1] = l;
            acc[d] += l;
            m = l < m ? l : m;
        }
        return m;
    }
    static inline int32_t ce_path_start(const uint16_t *restrict c, int32_t *restrict lc,
                                        int32_t *restrict acc, Py_ssize_t nd) {
        int32_t m = 1 << 28;
        for (Py_ssize_t d = 0; d < nd; d++) {
            int32_t l = (int32_t)c[d];
            lc[d + 1] = l;
            acc[d] += l;
            m = l < m ? l : m;
        }
        return m;
    }
    /* winner-take-all over n strided costs: returns best index, fills best/second/neighbours */
    static inline Py_ssize_t ce_wta(const int32_t *restrict v, Py_ssize_t stride, Py_ssize_t n,
                                    int32_t *best_out, int32_t *second_out) {
        int32_t best = 1 << 28, second = 1 << 28;
        Py_ssize_t k, bk = 0;
        for (k = 0; k < n; k++) { int32_t x = v[k * stride]; best = x < best ? x : best; }
        for (k = 0; k < n; k++) if (v[k * stride] == best) { bk = k; break; }
        for (k = 0; k + 1 < bk; k++) { int32_t x = v[k * stride]; second = x < second ? x : second; }
        for (k = bk + 2; k < n; k++) { int32_t x = v[k * stride]; second = x < second ? x : second; }
        *best_out = best;
        *second_out = second;
        return bk;
    }
    /* out[k] = sum of rows src[j][k] for the 2r+1 clamped neighbours */
    static inline void ce_add_rows(uint16_t *restrict out, const uint16_t *restrict src, Py_ssize_t n) {
        for (Py_ssize_t k = 0; k < n; k++) out[k] += src[k];
    }
    """
    int __builtin_popcountll(unsigned long long) nogil
    int32_t ce_path_step(const uint16_t* c, const int32_t* lp, int32_t mp, int32_t* lc, int32_t* acc,
                         Py_ssize_t nd, int32_t p1, int32_t p2) nogil
    int32_t ce_path_start(const uint16_t* c, int32_t* lc, int32_t* acc, Py_ssize_t nd) nogil
    Py_ssize_t ce_wta(const int32_t* v, Py_ssize_t stride, Py_ssize_t n, int32_t* best_out,
                      int32_t* second_out) nogil
    void ce_add_rows(uint16_t* out, const uint16_t* src, Py_ssize_t n) nogil

cdef enum:
    BIG = 1 << 28


cdef inline Py_ssize_t _clamp(Py_ssize_t v, Py_ssize_t lo, Py_ssize_t hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def census_transform(const float[:, ::1] img, int win_h, int win_w):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef int ry = win_h // 2, rx = win_w // 2
    pad_arr = np.pad(np.asarray(img), ((ry, ry), (rx, rx)), mode="edge")
    cdef const float[:, ::1] pad = pad_arr
    out_arr = np.zeros((h, w), dtype=np.uint64)
    cdef uint64_t[:, ::1] out = out_arr
    cdef Py_ssize_t y, x
    cdef int dy, dx
    cdef float c
    cdef uint64_t bits
    with nogil:
        for y in range(h):
            for x in range(w):
                c = pad[y + ry, x + rx]
                bits = 0
                for dy in range(win_h):
                    for dx in range(win_w):
                        if dy == ry and dx == rx:
                            continue
                        bits = (bits << 1) | (pad[y + dy, x + dx] < c)
                out[y, x] = bits
    return out_arr


def census_cost_volume(const uint64_t[:, ::1] left, const uint64_t[:, ::1] right,
                       int d_min, int d_max, int block_radius):
    cdef Py_ssize_t h = left.shape[0], w = left.shape[1]
    cdef Py_ssize_t nd = d_max - d_min + 1
    raw_arr = np.empty((h, w, nd), dtype=np.uint16)
    tmp_arr = np.empty((h, w, nd), dtype=np.uint16)
    cdef uint16_t[:, :, ::1] raw = raw_arr
    cdef uint16_t[:, :, ::1] tmp = tmp_arr
    cdef Py_ssize_t y, x, k, xr, t, src
    cdef int r = block_radius
    cdef uint64_t lv
    with nogil:
        for y in range(h):
            for x in range(w):
                lv = left[y, x]
                for k in range(nd):
                    xr = x - (d_min + k)
                    if xr < 0:
                        xr = 0
                    raw[y, x, k] = <uint16_t>__builtin_popcountll(lv ^ right[y, xr])
        if r > 0:
            # separable box sum with edge replication
            for y in range(h):
                for x in range(w):
                    memset(&tmp[y, x, 0], 0, nd * sizeof(uint16_t))
                    for t in range(-r, r + 1):
                        src = _clamp(x + t, 0, w - 1)
                        ce_add_rows(&tmp[y, x, 0], &raw[y, src, 0], nd)
            for y in range(h):
                memset(&raw[y, 0, 0], 0, w * nd * sizeof(uint16_t))
                for t in range(-r, r + 1):
                    src = _clamp(y + t, 0, h - 1)
                    ce_add_rows(&raw[y, 0, 0], &tmp[src, 0, 0], w * nd)
    return raw_arr


def sgm_aggregate(const uint16_t[:, :, ::1] cost, int p1, int p2, const int32_t[:, ::1] dirs):
    cdef Py_ssize_t h = cost.shape[0], w = cost.shape[1], nd = cost.shape[2]
    out_arr = np.zeros((h, w, nd), dtype=np.int32)
    cdef int32_t[:, :, ::1] out = out_arr
    buf_arr = np.full((2, w, nd + 2), BIG, dtype=np.int32)
    mins_arr = np.zeros((2, w), dtype=np.int32)
    cdef int32_t[:, :, ::1] buf = buf_arr
    cdef int32_t[:, ::1] mins = mins_arr
    cdef int32_t* prev
    cdef int32_t* cur
    cdef int32_t* pmin
    cdef int32_t* cmin
    cdef int32_t* tmp
    cdef Py_ssize_t i, y, x, xp, y0, y1, ystep, x0, x1, xstep, stride = nd + 2
    cdef int dx, dy
    cdef int32_t m
    for i in range(dirs.shape[0]):
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        prev = &buf[0, 0, 0]
        cur = &buf[1, 0, 0]
        pmin = &mins[0, 0]
        cmin = &mins[1, 0]
        if dy == 0:
            if dx > 0:
                x0, x1, xstep = 0, w, 1
            else:
                x0, x1, xstep = w - 1, -1, -1
            with nogil:
                for y in range(h):
                    x = x0
                    m = ce_path_start(&cost[y, x, 0], prev, &out[y, x, 0], nd)
                    x += xstep
                    while x != x1:
                        m = ce_path_step(&cost[y, x, 0], prev, m, cur, &out[y, x, 0], nd, p1, p2)
                        tmp = prev
                        prev = cur
                        cur = tmp
                        x += xstep
        else:
            if dy > 0:
                y0, y1, ystep = 0, h, 1
            else:
                y0, y1, ystep = h - 1, -1, -1
            with nogil:
                y = y0
                for x in range(w):
                    pmin[x] = ce_path_start(&cost[y, x, 0], prev + x * stride, &out[y, x, 0], nd)
                y += ystep
                while y != y1:
                    for x in range(w):
                        xp = x - dx
                        if xp < 0 or xp >= w:
                            cmin[x] = ce_path_start(&cost[y, x, 0], cur + x * stride, &out[y, x, 0], nd)
                        else:
                            cmin[x] = ce_path_step(&cost[y, x, 0], prev + xp * stride, pmin[xp], cur + x * stride,
                                                   &out[y, x, 0], nd, p1, p2)
                    tmp = prev
                    prev = cur
                    cur = tmp
                    tmp = pmin
                    pmin = cmin
                    cmin = tmp
                    y += ystep
    return out_arr


cdef inline double _parabola(double cm, double c0, double cp) nogil:
    cdef double den = cm - 2.0 * c0 + cp
    if den <= 0.0:
        return 0.0
    return (cm - cp) / (2.0 * den)


def select_left(const int32_t[:, :, ::1] agg, double uniqueness, int d_min):
    """Winner-take-all with parabola refinement; returns (disparity, unique_ok)."""
    cdef Py_ssize_t h = agg.shape[0], w = agg.shape[1], nd = agg.shape[2]
    disp_arr = np.zeros((h, w), dtype=np.float64)
    ok_arr = np.zeros((h, w), dtype=np.uint8)
    cdef double[:, ::1] disp = disp_arr
    cdef uint8_t[:, ::1] ok = ok_arr
    cdef Py_ssize_t y, x, k, best_k
    cdef int32_t best, second, v
    cdef double off
    with nogil:
        for y in range(h):
            for x in range(w):
                best_k = ce_wta(&agg[y, x, 0], 1, nd, &best, &second)
                off = 0.0
                if best_k > 0 and best_k < nd - 1:
                    off = _parabola(agg[y, x, best_k - 1], best, agg[y, x, best_k + 1])
                disp[y, x] = d_min + best_k + off
                if second == BIG or second * (1.0 - uniqueness) > best:
                    ok[y, x] = 1
    return disp_arr, ok_arr


def select_right(const int32_t[:, :, ::1] agg, double uniqueness, int d_min):
    """Selection on the mirrored volume: right pixel x at disparity d reads left x + d."""
    cdef Py_ssize_t h = agg.shape[0], w = agg.shape[1], nd = agg.shape[2]
    disp_arr = np.zeros((h, w), dtype=np.float64)
    ok_arr = np.zeros((h, w), dtype=np.uint8)
    cdef double[:, ::1] disp = disp_arr
    cdef uint8_t[:, ::1] ok = ok_arr
    cdef Py_ssize_t y, x, k, best_k, kmax, xl
    cdef int32_t best, second, v
    cdef double off
    with nogil:
        for y in range(h):
            for x in range(w):
                kmax = w - 1 - x - d_min
                if kmax < 0:
                    continue
                if kmax > nd - 1:
                    kmax = nd - 1
                best_k = ce_wta(&agg[y, x + d_min, 0], nd + 1, kmax + 1, &best, &second)
                off = 0.0
                if best_k > 0 and best_k < kmax:
                    off = _parabola(agg[y, x + d_min + best_k - 1, best_k - 1], best,
                                    agg[y, x + d_min + best_k + 1, best_k + 1])
                disp[y, x] = d_min + best_k + off
                if second == BIG or second * (1.0 - uniqueness) > best:
                    ok[y, x] = 1
    return disp_arr, ok_arr


def fgs_smooth(const double[:, :, ::1] src, const double[:, ::1] wx, const double[:, ::1] wy,
               const double[::1] lambdas):
    """Separable weighted smoothing of every channel of ``src`` (K, H, W); returns a copy.

    Each lambda triggers one horizontal then one vertical tridiagonal solve of
    (I + lam * L_w) u = f, where L_w is the weighted 1D Laplacian.
    """
    out_arr = np.array(src, dtype=np.float64, order="C")
    cdef double[:, :, ::1] stack = out_arr
    cdef Py_ssize_t nk = stack.shape[0], h = stack.shape[1], w = stack.shape[2]
    cdef Py_ssize_t it, ch, y, x
    cdef double lam, a, b, c, m
    cb_arr = np.empty(max(h, w), dtype=np.float64)
    cbv_arr = np.empty((h, w), dtype=np.float64)
    cdef double[::1] cb = cb_arr
    cdef double[:, ::1] cbv = cbv_arr
    for it in range(lambdas.shape[0]):
        lam = lambdas[it]
        with nogil:
            # horizontal: each row independently
            for ch in range(nk):
                for y in range(h):
                    # forward elimination
                    c = -lam * wx[y, 0] if w > 1 else 0.0
                    b = 1.0 - c
                    cb[0] = c / b
                    stack[ch, y, 0] = stack[ch, y, 0] / b
                    for x in range(1, w):
                        a = -lam * wx[y, x - 1]
                        c = -lam * wx[y, x] if x < w - 1 else 0.0
                        b = 1.0 - a - c
                        m = b - a * cb[x - 1]
                        cb[x] = c / m
                        stack[ch, y, x] = (stack[ch, y, x] - a * stack[ch, y, x - 1]) / m
                    for x in range(w - 2, -1, -1):
                        stack[ch, y, x] -= cb[x] * stack[ch, y, x + 1]
            # vertical: sweep rows, all columns at once for locality
            for ch in range(nk):
                for x in range(w):
                    c = -lam * wy[0, x] if h > 1 else 0.0
                    b = 1.0 - c
                    cbv[0, x] = c / b
                    stack[ch, 0, x] = stack[ch, 0, x] / b
                for y in range(1, h):
                    for x in range(w):
                        a = -lam * wy[y - 1, x]
                        c = -lam * wy[y, x] if y < h - 1 else 0.0
                        b = 1.0 - a - c
                        m = b - a * cbv[y - 1, x]
                        cbv[y, x] = c / m
                        stack[ch, y, x] = (stack[ch, y, x] - a * stack[ch, y - 1, x]) / m
                for y in range(h - 2, -1, -1):
                    for x in range(w):
                        stack[ch, y, x] -= cbv[y, x] * stack[ch, y + 1, x]
    return out_arr


def zero_masked_costs(uint16_t[:, :, ::1] cost, const uint8_t[:, ::1] left_mask,
                      const uint8_t[:, ::1] right_mask, int d_min):
    """In place: cost(y, x, k) = 0 where the left pixel or its right candidate is masked."""
    cdef Py_ssize_t h = cost.shape[0], w = cost.shape[1], nd = cost.shape[2]
    cdef Py_ssize_t y, x, k, xr
    with nogil:
        for y in range(h):
            for x in range(w):
                if left_mask[y, x]:
                    memset(&cost[y, x, 0], 0, nd * sizeof(uint16_t))
                    continue
                for k in range(nd):
                    xr = x - d_min - k
                    if xr < 0:
                        break
                    if right_mask[y, xr]:
                        cost[y, x, k] = 0
    return np.asarray(cost)
