"""Discretized feature fields and the rotation action on them.

Pixel convention: arrays are indexed ``[row, col]``; the geometric frame has
``x = col - origin_col`` and ``y = origin_row - row`` so a positive angle is a
counter-clockwise rotation of the displayed image (``np.rot90`` for pi/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .group import FieldType, GroupElement, cos_sin, regular, so2, trivial
from . import tensorio

INTERPOLATIONS = ("nearest", "bilinear")


@dataclass(frozen=True)
class FeatureField:
    data: np.ndarray
    fiber: FieldType = None
    pixel_pitch: float = 1.0
    origin: tuple[float, float] | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise ValueError(f"field data must be [C, H, W], got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("field data contains non-finite values")
        object.__setattr__(self, "data", data)
        fiber = self.fiber if self.fiber is not None else FieldType.of(trivial(), data.shape[0])
        if fiber.dim != data.shape[0]:
            raise ValueError(f"fiber {fiber} has dim {fiber.dim} but data has {data.shape[0]} channels")
        object.__setattr__(self, "fiber", fiber)
        if self.origin is None:
            object.__setattr__(self, "origin", ((data.shape[1] - 1) / 2, (data.shape[2] - 1) / 2))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray, fiber: FieldType | None = None) -> "FeatureField":
        return FeatureField(data, fiber or self.fiber, self.pixel_pitch, self.origin)


@dataclass(frozen=True)
class CropSpec:
    center: tuple[float, float]
    size: tuple[int, int]
    pad_value: float = 0.0

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ValueError("crop size must be positive")


# ---------------------------------------------------------------------------
# resampling


def _angle_key(g) -> tuple:
    if isinstance(g, GroupElement):
        t = g.turns
        return ("t", t.numerator, t.denominator) if t is not None else ("r", g.radians)
    return ("r", float(g) % (2 * math.pi))


def _as_element(g) -> GroupElement:
    return g if isinstance(g, GroupElement) else so2(float(g))


@lru_cache(maxsize=512)
def _plan(shape: tuple[int, int], key: tuple, origin: tuple[float, float],
          interp: str, inverse: bool) -> sp.csr_matrix:
    H, W = shape
    g = so2(key[1]) if key[0] == "r" else GroupElement(key[2], key[1])
    c, s = cos_sin(g)
    if inverse:
        s = -s
    r0, c0 = origin
    rr, cc = np.meshgrid(np.arange(H, dtype=float), np.arange(W, dtype=float), indexing="ij")
    x = cc - c0
    y = r0 - rr
    # source of output pixel x is rho_1(g)^-1 x
    xs = c * x + s * y
    ys = -s * x + c * y
    src_r = (r0 - ys).ravel()
    src_c = (c0 + xs).ravel()
    rows = np.arange(H * W)
    near_r = np.round(src_r)
    near_c = np.round(src_c)
    exact = (np.abs(src_r - near_r) < 1e-9) & (np.abs(src_c - near_c) < 1e-9)
    if interp == "nearest" or exact.all():
        ir = np.floor(src_r + 0.5).astype(int)
        ic = np.floor(src_c + 0.5).astype(int)
        ir = np.where(exact, near_r.astype(int), ir)
        ic = np.where(exact, near_c.astype(int), ic)
        ok = (ir >= 0) & (ir < H) & (ic >= 0) & (ic < W)
        return sp.csr_matrix((np.ones(ok.sum()), (rows[ok], (ir * W + ic)[ok])), shape=(H * W, H * W))
    if interp != "bilinear":
        raise ValueError(f"unknown interpolation {interp!r}")
    src_r = np.where(exact, near_r, src_r)
    src_c = np.where(exact, near_c, src_c)
    fr0 = np.floor(src_r)
    fc0 = np.floor(src_c)
    ar = src_r - fr0
    ac = src_c - fc0
    R, C, V = [], [], []
    for dr, wr in ((0, 1 - ar), (1, ar)):
        for dc, wc in ((0, 1 - ac), (1, ac)):
            ir = fr0.astype(int) + dr
            ic = fc0.astype(int) + dc
            w = wr * wc
            ok = (ir >= 0) & (ir < H) & (ic >= 0) & (ic < W) & (w > 0)
            R.append(rows[ok])
            C.append((ir * W + ic)[ok])
            V.append(w[ok])
    return sp.csr_matrix((np.concatenate(V), (np.concatenate(R), np.concatenate(C))),
                         shape=(H * W, H * W))


def resample_matrix(shape: tuple[int, int], g, origin=None, interp: str = "bilinear",
                    inverse: bool = False) -> sp.csr_matrix:
    """Sparse map taking a flattened image to its rotation by ``g`` about ``origin``."""
    if interp not in INTERPOLATIONS:
        raise ValueError(f"unknown interpolation {interp!r}")
    H, W = shape
    if origin is None:
        origin = ((H - 1) / 2, (W - 1) / 2)
    return _plan((int(H), int(W)), _angle_key(_as_element(g)),
                 (float(origin[0]), float(origin[1])), interp, inverse)


def rotate_array(a: np.ndarray, g, origin=None, interp: str = "bilinear") -> np.ndarray:
    """Rotate the last two axes of ``a`` (base-space action only)."""
    g = _as_element(g)
    H, W = a.shape[-2:]
    q = g.quarter_turns()
    if q is not None and H == W and (origin is None or tuple(origin) == ((H - 1) / 2, (W - 1) / 2)):
        return np.rot90(a, q, axes=(-2, -1)).copy()
    M = resample_matrix((H, W), g, origin, interp)
    flat = a.reshape(-1, H * W)
    out = (M @ flat.T).T
    return np.asarray(out, dtype=a.dtype).reshape(a.shape)


def transform(f: FeatureField, g: GroupElement, interp: str = "bilinear") -> FeatureField:
    """T_g^rho: rotate the base space about the origin and act on the fiber."""
    data = rotate_array(f.data, g, f.origin, interp)
    if not f.fiber.is_trivial:
        M = f.fiber.matrix(g).astype(data.dtype)
        data = np.einsum("ab,bhw->ahw", M, data)
    return f.with_data(data)


def lift(c: FeatureField, n: int, interp: str = "bilinear") -> FeatureField:
    """Stack of n rotated copies; one regular C_n field per input channel."""
    if n <= 0:
        raise ValueError("lifting needs n >= 1")
    if not c.fiber.is_trivial:
        raise ValueError("lift expects a trivial fiber")
    copies = [rotate_array(c.data, GroupElement(n, i), c.origin, interp) for i in range(n)]
    data = np.stack(copies, axis=1).reshape(c.channels * n, *c.data.shape[1:])
    return FeatureField(data, FieldType.of(regular(n), c.channels), c.pixel_pitch, c.origin)


def crop(f: FeatureField, spec: CropSpec) -> FeatureField:
    h, w = spec.size
    u, v = spec.center
    r0 = int(math.floor(u - (h - 1) / 2 + 0.5))
    c0 = int(math.floor(v - (w - 1) / 2 + 0.5))
    C, H, W = f.data.shape
    out = np.full((C, h, w), spec.pad_value, dtype=f.data.dtype)
    rs, re = max(r0, 0), min(r0 + h, H)
    cs, ce = max(c0, 0), min(c0 + w, W)
    if rs < re and cs < ce:
        out[:, rs - r0:re - r0, cs - c0:ce - c0] = f.data[:, rs:re, cs:ce]
    return FeatureField(out, f.fiber, f.pixel_pitch)


def pad(f: FeatureField, d: int, value: float = 0.0) -> FeatureField:
    """Symmetric border of ``d`` pixels on every side."""
    if d < 0:
        raise ValueError("padding must be >= 0")
    if d == 0:
        return f
    data = np.pad(f.data, ((0, 0), (d, d), (d, d)), constant_values=value)
    return FeatureField(data, f.fiber, f.pixel_pitch, (f.origin[0] + d, f.origin[1] + d))


def gaussian_smooth(a: np.ndarray, sigma: float) -> np.ndarray:
    from scipy.ndimage import gaussian_filter

    axes = (a.ndim - 2, a.ndim - 1)
    return gaussian_filter(a, sigma, axes=axes, mode="constant")


# ---------------------------------------------------------------------------
# image files


def save_png(path: str | Path, image: np.ndarray, bits: int = 8) -> None:
    from PIL import Image

    a = np.asarray(image, dtype=float)
    if a.ndim == 3:
        if a.shape[0] != 1:
            raise ValueError("PNG export needs a single-channel image")
        a = a[0]
    a = np.clip(a, 0.0, 1.0)
    if bits == 8:
        Image.fromarray(np.round(a * 255).astype(np.uint8), mode="L").save(path)
    elif bits == 16:
        Image.fromarray(np.round(a * 65535).astype(np.uint16)).save(path)
    else:
        raise ValueError("PNG depth must be 8 or 16 bits")


def load_png(path: str | Path) -> np.ndarray:
    from PIL import Image

    img = Image.open(path)
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError(f"{path}: expected a grayscale PNG")
    scale = 65535.0 if a.dtype == np.uint16 or img.mode.startswith("I") else 255.0
    return a.astype(np.float64) / scale


def save_field(path: str | Path, f: FeatureField) -> None:
    tensorio.save_tensor(path, f.data)


def load_field(path: str | Path, pixel_pitch: float = 1.0) -> FeatureField:
    return FeatureField(tensorio.load_tensor(path), pixel_pitch=pixel_pitch)
