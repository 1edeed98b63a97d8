"""G-steerable convolution kernels and the cross-correlation primitive.

Two constructions are available:

* :func:`project_kernel` averages free weights over the group. Quarter-turn
  groups (n | 4) rotate kernels by exact pixel permutation; every other C_n
  uses a band-limited ring-harmonic resampling that is an exact group action
  on its (slightly smaller) kernel space, so the projector stays idempotent.
* :func:`kernel_basis` builds a continuous ring-harmonic basis that can be
  evaluated at arbitrary points, so ``K(g.x)`` is computed without any
  interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensorio
from .field import FeatureField, rotate_array
from .group import (FieldType, GroupElement, Representation, elements, inverse, so2)

RING_WIDTH = 0.6


class KernelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ring-harmonic dictionary


def grid_points(k: int) -> np.ndarray:
    """(k*k, 2) array of (x, y) offsets of a k x k grid, row-major."""
    c = (k - 1) / 2
    rr, cc = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    return np.stack([(cc - c).ravel(), (c - rr).ravel()], axis=1).astype(float)


@dataclass(frozen=True)
class RingDictionary:
    """Gaussian rings times angular harmonics: R_r(|x|) cos(f phi), R_r(|x|) sin(f phi)."""

    atoms: tuple[tuple[float, int, int], ...]  # (radius, frequency, 0=cos / 1=sin)
    width: float = RING_WIDTH

    def __len__(self):
        return len(self.atoms)

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        rho = np.hypot(pts[:, 0], pts[:, 1])
        phi = np.arctan2(pts[:, 1], pts[:, 0])
        centre = rho < 1e-9
        out = np.empty((len(pts), len(self.atoms)))
        for j, (r, f, s) in enumerate(self.atoms):
            radial = np.exp(-((rho - r) ** 2) / (2 * self.width ** 2))
            if f == 0:
                ang = np.ones_like(phi)
            else:
                ang = np.cos(f * phi) if s == 0 else np.sin(f * phi)
                ang = np.where(centre, 0.0, ang)
            out[:, j] = radial * ang
        return out

    def rotation(self, g: GroupElement) -> np.ndarray:
        """Coefficient-space matrix of f -> f(g^-1 x)."""
        D = len(self.atoms)
        R = np.eye(D)
        index = {a: j for j, a in enumerate(self.atoms)}
        theta = g.angle
        for j, (r, f, s) in enumerate(self.atoms):
            if f == 0 or s == 1:
                continue
            js = index[(r, f, 1)]
            c, sn = math.cos(f * theta), math.sin(f * theta)
            R[j, j], R[j, js] = c, -sn
            R[js, j], R[js, js] = sn, c
        return R


@lru_cache(maxsize=64)
def ring_dictionary(k: int, max_freq: int | None = None) -> RingDictionary:
    """Band-limited dictionary whose samples on the k x k grid are independent."""
    pts = grid_points(k)
    radii = np.round(np.hypot(pts[:, 0], pts[:, 1]), 9)
    atoms: list[tuple[float, int, int]] = []
    for r in np.unique(radii):
        p = int((radii == r).sum())
        fmax = (p - 1) // 2
        if max_freq is not None:
            fmax = min(fmax, max_freq)
        for f in range(fmax + 1):
            atoms.append((float(r), f, 0))
            if f > 0:
                atoms.append((float(r), f, 1))
    d = RingDictionary(tuple(atoms))
    S = d.evaluate(pts)
    if np.linalg.matrix_rank(S, tol=1e-10) != len(atoms):
        raise KernelError(f"ring dictionary for k={k} is not independent on the grid")
    return d


class KernelRotation:
    """Base-space rotations of k x k kernels forming an exact action of C_n."""

    def __init__(self, k: int, n: int):
        if k % 2 == 0:
            raise KernelError("kernel size must be odd")
        self.k, self.n = k, n
        self.exact = n > 0 and 4 % n == 0
        if not self.exact:
            self.dictionary = ring_dictionary(k)
            self._S = self.dictionary.evaluate(grid_points(k))
            self._S_pinv = np.linalg.pinv(self._S)

    def matrix(self, g: GroupElement) -> np.ndarray:
        """(k*k, k*k) matrix acting on row-major flattened kernels: K -> T_g K."""
        if self.exact:
            q = g.quarter_turns()
            if q is None:
                raise KernelError(f"{g!r} is not a quarter turn")
            eye = np.eye(self.k * self.k).reshape(-1, self.k, self.k)
            return np.rot90(eye, q, axes=(1, 2)).reshape(self.k * self.k, -1).T.copy()
        return self._S @ self.dictionary.rotation(g) @ self._S_pinv

    def apply(self, K: np.ndarray, g: GroupElement) -> np.ndarray:
        if self.exact:
            return np.rot90(K, g.quarter_turns(), axes=(-2, -1)).copy()
        A = self.matrix(g)
        flat = K.reshape(*K.shape[:-2], -1)
        return (flat @ A.T).reshape(K.shape)


@lru_cache(maxsize=64)
def kernel_rotation(k: int, n: int) -> KernelRotation:
    return KernelRotation(k, n)


# ---------------------------------------------------------------------------
# projection


class KernelProjector:
    """Linear idempotent map onto kernels satisfying the steerability constraint.

    ``P(K) = 1/n sum_g rho_out(g) T_g(K) rho_in(g)^-1``
    """

    def __init__(self, rep_in: FieldType, rep_out: FieldType, n: int, k: int):
        if n <= 0:
            raise KernelError("projection needs a finite group C_n")
        self.rep_in, self.rep_out, self.n, self.k = rep_in, rep_out, n, k
        self.rotation = kernel_rotation(k, n)
        gs = elements(n)
        self.rho_out = np.stack([rep_out.matrix(g) for g in gs])
        self.rho_in_inv = np.stack([rep_in.matrix(inverse(g)) for g in gs])
        self.A = np.stack([self.rotation.matrix(g) for g in gs])
        self._cache: dict = {}

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.rep_out.dim, self.rep_in.dim, self.k, self.k)

    def _ops(self, dtype):
        if dtype not in self._cache:
            self._cache[dtype] = (self.rho_out.astype(dtype), self.A.astype(dtype),
                                  self.rho_in_inv.astype(dtype))
        return self._cache[dtype]

    def __call__(self, raw: np.ndarray) -> np.ndarray:
        if raw.shape != self.shape:
            raise KernelError(f"raw weights {raw.shape} do not match {self.shape} "
                              f"for {self.rep_in} -> {self.rep_out}")
        return self._apply(raw, transpose=False)

    def adjoint(self, grad: np.ndarray) -> np.ndarray:
        return self._apply(grad, transpose=True)

    def _apply(self, K: np.ndarray, transpose: bool) -> np.ndarray:
        # sum_g rho_out(g) [K A_g^T] rho_in(g)^-1, or the transposed map
        Ro, A, Ri = self._ops(K.dtype)
        if transpose:
            Ro, A, Ri = np.swapaxes(Ro, 1, 2), np.swapaxes(A, 1, 2), np.swapaxes(Ri, 1, 2)
        n = self.n
        do, di = K.shape[:2]
        s = K.shape[2] * K.shape[3]
        x = np.matmul(K.reshape(1, do * di, s), np.swapaxes(A, 1, 2))        # (n, do*di, s)
        x = np.matmul(Ro, x.reshape(n, do, di * s))                           # (n, do, di*s)
        x = np.matmul(np.swapaxes(x.reshape(n, do, di, s), 2, 3), Ri[:, None])  # (n, do, s, di)
        out = x.sum(axis=0) / n
        return np.ascontiguousarray(np.swapaxes(out, 1, 2)).reshape(K.shape)

    def project_bias(self, b: np.ndarray) -> np.ndarray:
        Ro = self._ops(b.dtype)[0]
        return np.einsum("gab,b->a", Ro, b) / self.n

    def adjoint_bias(self, grad: np.ndarray) -> np.ndarray:
        Ro = self._ops(grad.dtype)[0]
        return np.einsum("gab,a->b", Ro, grad) / self.n


@lru_cache(maxsize=256)
def projector(rep_in: FieldType, rep_out: FieldType, n: int, k: int) -> KernelProjector:
    return KernelProjector(rep_in, rep_out, n, k)


@dataclass(frozen=True)
class SteerableKernel:
    weights: np.ndarray
    rep_in: FieldType
    rep_out: FieldType
    group_order: int
    method: str = "projected"
    analytic: "AnalyticKernel | None" = dc_field(default=None, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise KernelError(f"kernel weights must be [d_out, d_in, k, k] with odd k, got {w.shape}")
        if w.shape[:2] != (self.rep_out.dim, self.rep_in.dim):
            raise KernelError(f"weights {w.shape[:2]} do not match reps "
                              f"({self.rep_out.dim}, {self.rep_in.dim})")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[-1]


def _as_fieldtype(r) -> FieldType:
    return r if isinstance(r, FieldType) else FieldType.of(r)


def project_kernel(raw: np.ndarray, rep_in, rep_out, n: int) -> SteerableKernel:
    rep_in, rep_out = _as_fieldtype(rep_in), _as_fieldtype(rep_out)
    raw = np.asarray(raw)
    if raw.ndim != 4 or raw.shape[-1] % 2 == 0:
        raise KernelError("kernel size must be odd")
    P = projector(rep_in, rep_out, n, raw.shape[-1])
    return SteerableKernel(P(raw), rep_in, rep_out, n)


def rotated_kernel(K: SteerableKernel, g: GroupElement) -> np.ndarray:
    """Samples of x -> K(g^-1 x) on the kernel grid (T_g^0 applied to K)."""
    if K.analytic is not None:
        pts = grid_points(K.size)
        ginv = inverse(g)
        c, s = math.cos(ginv.angle), math.sin(ginv.angle)
        rot = pts @ np.array([[c, s], [-s, c]])
        vals = K.analytic.evaluate(rot)
        return vals.transpose(1, 2, 0).reshape(K.weights.shape)
    n = K.group_order if K.group_order > 0 else 0
    if n > 0 and g.lies_in(n):
        return kernel_rotation(K.size, n).apply(K.weights, g)
    return rotate_array(K.weights, g, interp="bilinear")


def check_steerability(K: SteerableKernel, g: GroupElement) -> float:
    """max |K(g.x) - rho_out(g) K(x) rho_in(g)^-1| over the kernel grid."""
    lhs = rotated_kernel(K, inverse(g))
    rhs = np.einsum("ab,bcij,cd->adij", K.rep_out.matrix(g), K.weights,
                    K.rep_in.matrix(inverse(g)))
    return float(np.max(np.abs(lhs - rhs)))


def lemma4_check(K: SteerableKernel, g: GroupElement) -> float:
    """max |T_g K(x) - rho_out(g^-1) K(x)| for a kernel with trivial input type."""
    if not K.rep_in.is_trivial:
        raise KernelError("Lemma 4 applies to kernels with a trivial input type")
    lhs = rotated_kernel(K, g)
    rhs = np.einsum("ab,bcij->acij", K.rep_out.matrix(inverse(g)), K.weights)
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------------------
# analytic basis


@dataclass(frozen=True)
class AnalyticKernel:
    """Group-averaged ring-harmonic kernel, evaluable anywhere in the plane."""

    dictionary: RingDictionary
    coeffs: np.ndarray          # (atoms, d_out, d_in)
    rep_in: FieldType
    rep_out: FieldType
    n: int                      # 0 for SO(2)

    def _averaging_group(self) -> list[GroupElement]:
        if self.n > 0:
            return elements(self.n)
        fmax = max(f for _, f, _ in self.dictionary.atoms)
        rmax = max([r.frequency for r in self.rep_in.reps + self.rep_out.reps
                    if r.kind == "irrep"] + [1 if any(r.kind == "standard" for r in
                                                     self.rep_in.reps + self.rep_out.reps) else 0])
        N = fmax + 2 * rmax + 2
        return [so2(2 * math.pi * i / N) for i in range(N)]

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        """(P, d_out, d_in) values at points given as (x, y)."""
        pts = np.asarray(pts, dtype=float)
        gs = self._averaging_group()
        out = np.zeros((len(pts), self.rep_out.dim, self.rep_in.dim))
        for g in gs:
            ginv = inverse(g)
            c, s = math.cos(ginv.angle), math.sin(ginv.angle)
            src = pts @ np.array([[c, s], [-s, c]])   # g^-1 x
            F = np.einsum("pj,jab->pab", self.dictionary.evaluate(src), self.coeffs)
            out += np.einsum("ab,pbc,cd->pad", self.rep_out.matrix(g), F, self.rep_in.matrix(ginv))
        return out / len(gs)

    def sample(self, k: int) -> np.ndarray:
        vals = self.evaluate(grid_points(k))
        return vals.transpose(1, 2, 0).reshape(self.rep_out.dim, self.rep_in.dim, k, k)


@dataclass
class KernelBasis:
    elements: list[SteerableKernel]

    def __len__(self):
        return len(self.elements)

    def gram(self) -> np.ndarray:
        V = np.stack([e.weights.ravel() for e in self.elements])
        return V @ V.T

    def combine(self, coeffs: np.ndarray) -> SteerableKernel:
        e0 = self.elements[0]
        w = np.tensordot(np.asarray(coeffs, dtype=float), np.stack([e.weights for e in self.elements]), 1)
        an = None
        if e0.analytic is not None:
            c = np.tensordot(np.asarray(coeffs, dtype=float),
                             np.stack([e.analytic.coeffs for e in self.elements]), 1)
            an = AnalyticKernel(e0.analytic.dictionary, c, e0.rep_in, e0.rep_out, e0.analytic.n)
        return SteerableKernel(w, e0.rep_in, e0.rep_out, e0.group_order, "analytic", an)


def kernel_basis(rep_in, rep_out, n: int, k: int, max_freq: int | None = None) -> KernelBasis:
    """Independent analytic steerable kernels for ``rep_in -> rep_out`` over C_n (n=0: SO(2))."""
    rep_in, rep_out = _as_fieldtype(rep_in), _as_fieldtype(rep_out)
    dictionary = ring_dictionary(k, max_freq)
    D, do, di = len(dictionary), rep_out.dim, rep_in.dim
    pts = grid_points(k)
    cands, samples = [], []
    for j in range(D):
        for a in range(do):
            for b in range(di):
                C = np.zeros((D, do, di))
                C[j, a, b] = 1.0
                ak = AnalyticKernel(dictionary, C, rep_in, rep_out, n)
                cands.append(C)
                samples.append(ak.evaluate(pts).ravel())
    M = np.stack(samples)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > 1e-8 * max(s.max(), 1e-300)
    basis = []
    cands = np.stack(cands)
    for i in np.flatnonzero(keep):
        coeff = np.tensordot(U[:, i] / s[i], cands, 1)
        ak = AnalyticKernel(dictionary, coeff, rep_in, rep_out, n)
        basis.append(SteerableKernel(ak.sample(k), rep_in, rep_out, n, "analytic", ak))
    return KernelBasis(basis)


# ---------------------------------------------------------------------------
# crop -> steerable kernel generator (continuous rotations)


class HarmonicKernelGenerator:
    """Maps a trivial-type crop to a steerable kernel with irrep output types.

    Ring-wise Fourier coefficients of the crop at frequency m,
    ``z_r = sum_y c(y) S_r(|y|) exp(-i m phi_y)``, become the kernel
    ``K_m(x) = sum_r R_r(|x|) exp(i m phi_x) z_r`` (real and imaginary part as
    the two channels). Rotating the crop by g multiplies z_r by exp(-i m g),
    so the generator commutes with rotations and its output is steerable.
    """

    def __init__(self, frequencies=(0, 1, 2, 3, 4), kernel_size: int = 15,
                 crop_radii=(2.0, 4.0, 6.0), kernel_radii=(2.0, 4.0, 6.0), width: float = 1.2):
        self.frequencies = tuple(frequencies)
        self.k = kernel_size
        self.crop_radii = tuple(crop_radii)
        self.kernel_radii = tuple(kernel_radii)
        self.width = width
        from .group import irrep
        self.rep_out = FieldType(tuple(irrep(0, m) for m in self.frequencies))
        self.rep_in = FieldType.of(irrep(0, 0))

    def _radial(self, rho, radii):
        return np.stack([np.exp(-((rho - r) ** 2) / (2 * self.width ** 2)) for r in radii])

    def coefficients(self, crop: np.ndarray) -> np.ndarray:
        crop = np.asarray(crop, dtype=float)
        if crop.ndim == 3:
            crop = crop[0]
        pts = grid_points(crop.shape[0]) if crop.shape[0] == crop.shape[1] else None
        if pts is None:
            raise KernelError("crop must be square")
        rho = np.hypot(pts[:, 0], pts[:, 1])
        phi = np.arctan2(pts[:, 1], pts[:, 0])
        S = self._radial(rho, self.crop_radii)            # (R, P)
        v = crop.ravel()
        # the centre has no angle, so it only feeds the m = 0 coefficient
        centre = rho < 1e-9
        z = np.array([[np.sum(np.where(centre & (m != 0), 0.0, v * S[r] * np.exp(-1j * m * phi)))
                       for r in range(len(self.crop_radii))] for m in self.frequencies])
        return z                                          # (M, R)

    def evaluate(self, crop: np.ndarray, pts: np.ndarray) -> np.ndarray:
        z = self.coefficients(crop)
        rho = np.hypot(pts[:, 0], pts[:, 1])
        phi = np.arctan2(pts[:, 1], pts[:, 0])
        R = self._radial(rho, self.kernel_radii)          # (R, P)
        chans = []
        for mi, m in enumerate(self.frequencies):
            val = np.einsum("rp,r->p", R, z[mi]) * np.exp(1j * m * phi)
            if m == 0:
                chans.append(val.real)
            else:
                val = np.where(rho < 1e-9, 0.0, val)
                chans.extend([val.real, val.imag])
        return np.stack(chans, axis=1)                    # (P, d_out)

    def __call__(self, crop: np.ndarray) -> SteerableKernel:
        pts = grid_points(self.k)
        w = self.evaluate(crop, pts).T.reshape(self.rep_out.dim, 1, self.k, self.k)
        return SteerableKernel(w, self.rep_in, self.rep_out, 0, "generated")


# ---------------------------------------------------------------------------
# cross-correlation


def im2col(x: np.ndarray, k: int, pad: int, stride: int = 1) -> np.ndarray:
    """(B, C, H, W) -> (B, C*k*k, H'*W') patch matrix, rows ordered (c, dy, dx)."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))          # (B, C, H', W', k, k)
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    B, C, Ho, Wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, C * k * k, Ho * Wo), (Ho, Wo)


def _padding(padding, k: int) -> int:
    if padding == "same":
        return k // 2
    if padding == "valid":
        return 0
    return int(padding)


def correlate_arrays(x: np.ndarray, w: np.ndarray, padding="same", stride: int = 1) -> np.ndarray:
    """(K * f)(v) = sum_w f(v + w) K(w) for batched inputs.

    x: (B, C, H, W); w: (O, C, k, k) -> (B, O, H', W'). Zero padding. Each
    output pixel is one fixed-order dot product, independent of threading.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise KernelError(f"correlate expects 4-D input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise KernelError(f"channel mismatch: input {x.shape}, kernel {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise KernelError(f"kernel must be square, got {w.shape}")
    k = w.shape[-1]
    cols, (Ho, Wo) = im2col(x, k, _padding(padding, k), stride)
    out = np.matmul(w.reshape(w.shape[0], -1), cols)
    return out.reshape(x.shape[0], w.shape[0], Ho, Wo)


def cross_correlate(K, f: FeatureField, stride: int = 1, padding="same") -> FeatureField:
    if isinstance(K, SteerableKernel):
        w, fiber = K.weights, K.rep_out
    else:
        w = np.asarray(K)
        if w.ndim == 2:
            w = w[None, None]
        fiber = None
    if w.shape[1] != f.channels:
        raise KernelError(f"kernel expects {w.shape[1]} input channels, field has {f.channels}")
    dtype = np.result_type(w.dtype, f.data.dtype)
    out = correlate_arrays(f.data[None].astype(dtype), w.astype(dtype), padding, stride)[0]
    if fiber is None:
        fiber = FieldType.of(f.fiber.reps[0], out.shape[0]) if (
            f.fiber.is_trivial) else FieldType.of(Representation("trivial", 0), out.shape[0])
    origin = None
    if stride == 1 and padding == "same":
        origin = f.origin
    return FeatureField(out, fiber, f.pixel_pitch * stride, origin)


# ---------------------------------------------------------------------------
# serialization


def _rep_token(r: Representation) -> str:
    if r.kind == "quotient":
        return f"quotient:{r.group_order}:{r.k}"
    if r.kind == "irrep":
        return f"irrep:{r.group_order}:{r.frequency}"
    return f"{r.kind}:{r.group_order}"


def fieldtype_to_str(ft: FieldType) -> str:
    parts: list[list] = []
    for r in ft.reps:
        t = _rep_token(r)
        if parts and parts[-1][0] == t:
            parts[-1][1] += 1
        else:
            parts.append([t, 1])
    return ",".join(t if c == 1 else f"{t}*{c}" for t, c in parts)


def fieldtype_from_str(s: str) -> FieldType:
    reps = []
    for part in s.split(","):
        tok, _, count = part.partition("*")
        fields = tok.split(":")
        kind, n = fields[0], int(fields[1])
        if kind == "quotient":
            rep = Representation(kind, n, k=int(fields[2]))
        elif kind == "irrep":
            rep = Representation(kind, n, frequency=int(fields[2]))
        else:
            rep = Representation(kind, n)
        reps.extend([rep] * (int(count) if count else 1))
    return FieldType(tuple(reps))


def save_kernel(path: str | Path, K: SteerableKernel) -> None:
    path = Path(path)
    tensorio.save_tensor(path, K.weights)
    tensorio.write_keyvalue(path.with_name(path.name + ".meta"), {
        "rep_in": fieldtype_to_str(K.rep_in),
        "rep_out": fieldtype_to_str(K.rep_out),
        "group_order": K.group_order,
        "k": K.size,
        "method": K.method,
    })


def load_kernel(path: str | Path) -> SteerableKernel:
    path = Path(path)
    meta = tensorio.read_keyvalue(path.with_name(path.name + ".meta"))
    w = tensorio.load_tensor(path)
    if int(meta["k"]) != w.shape[-1]:
        raise KernelError(f"{path}: metadata k={meta['k']} but tensor has size {w.shape[-1]}")
    return SteerableKernel(w, fieldtype_from_str(meta["rep_in"]), fieldtype_from_str(meta["rep_out"]),
                           int(meta["group_order"]), meta.get("method", "projected"))
