"""Procedural value-noise texture for the synthetic target plane."""

import numpy as np

DEFAULT_SPACINGS_MM = (0.5, 1.0, 2.0, 4.0)
DEFAULT_AMPLITUDES = (34.0, 30.0, 22.0, 14.0)


class ValueNoiseTexture:
    """Sum of bilinearly interpolated random lattices, defined in plane millimetres.

    Gray level is ``base + sum_k a_k * (2 * lattice_k - 1)`` clipped to ``[lo, hi]``.
    """

    def __init__(self, seed=0, spacings_mm=DEFAULT_SPACINGS_MM, amplitudes=DEFAULT_AMPLITUDES,
                 base=150.0, lo=60.0, hi=240.0, lattice_size=512):
        if len(spacings_mm) != len(amplitudes):
            raise ValueError("one amplitude per octave")
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7E57]))
        self.spacings = tuple(float(s) for s in spacings_mm)
        self.amplitudes = tuple(float(a) for a in amplitudes)
        self.base, self.lo, self.hi = float(base), float(lo), float(hi)
        self.n = int(lattice_size)
        self.lattices = [rng.random((self.n, self.n)) for _ in self.spacings]
        self.offsets = [rng.random(2) * self.n for _ in self.spacings]

    def __call__(self, x_mm, y_mm):
        x_mm = np.asarray(x_mm, dtype=np.float64)
        y_mm = np.asarray(y_mm, dtype=np.float64)
        out = np.full(x_mm.shape, self.base)
        n = self.n
        for lat, (ox, oy), s, a in zip(self.lattices, self.offsets, self.spacings, self.amplitudes):
            px = x_mm / s + ox
            py = y_mm / s + oy
            ix = np.floor(px)
            iy = np.floor(py)
            fx = px - ix
            fy = py - iy
            # smoothstep keeps the field C1 across lattice cells
            fx = fx * fx * (3.0 - 2.0 * fx)
            fy = fy * fy * (3.0 - 2.0 * fy)
            ix = ix.astype(np.int64) % n
            iy = iy.astype(np.int64) % n
            row0 = iy * n
            row1 = ((iy + 1) % n) * n
            ix1 = (ix + 1) % n
            flat = lat.ravel()
            top = flat[row0 + ix]
            top += (flat[row0 + ix1] - top) * fx
            bot = flat[row1 + ix]
            bot += (flat[row1 + ix1] - bot) * fx
            top += (bot - top) * fy
            out += a * (2.0 * top - 1.0)
        return np.clip(out, self.lo, self.hi)
