"""File formats: binary PPM/PGM images and ``.f32`` rasters with a JSON sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    pass


def _write_netpbm(path, magic: bytes, img: np.ndarray) -> None:
    h, w = img.shape[:2]
    header = magic + b"\n%d %d\n255\n" % (w, h)
    Path(path).write_bytes(header + np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def write_ppm(path, image) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise FormatError("PPM needs an (H, W, 3) uint8 image")
    _write_netpbm(path, b"P6", img)


def write_pgm(path, image) -> None:
    img = np.asarray(image)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.ndim != 2 or img.dtype != np.uint8:
        raise FormatError("PGM needs an (H, W) uint8 or bool image")
    _write_netpbm(path, b"P5", img)


def _tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens (comments skipped) and the data offset."""
    out, i, n = [], 0, len(data)
    while len(out) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated header")
        out.append(data[i:j])
        i = j
    return out, i + 1  # exactly one whitespace byte precedes the raster


def read_netpbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), off = _tokens(data, 4)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError("only 8-bit images are supported")
    ch = 3 if magic == b"P6" else 1
    if len(data) - off < w * h * ch:
        raise FormatError(f"{path}: raster shorter than {w}x{h}x{ch}")
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * ch, offset=off)
    return raw.reshape((h, w, 3) if ch == 3 else (h, w)).copy()


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_f32(path, array, units: str = "", extra: dict | None = None) -> None:
    """Little-endian float32, row-major; invalid samples should already be NaN."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    Path(path).write_bytes(arr.tobytes())
    meta = {"shape": list(arr.shape), "order": "row-major", "dtype": "float32-le", "units": units,
            "invalid": "NaN"}
    if arr.ndim >= 2:
        meta["height"], meta["width"] = int(arr.shape[0]), int(arr.shape[1])
    meta.update(extra or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_f32(path) -> np.ndarray:
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        raise FormatError(f"missing sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    shape = tuple(int(s) for s in meta["shape"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise FormatError(f"{path}: {raw.size} samples, header says {shape}")
    return raw.reshape(shape)


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
