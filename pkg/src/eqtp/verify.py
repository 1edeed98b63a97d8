"""Numerical property battery.

Every invariant of the package becomes one table row: an id, the group it was
checked on, the measured residual, the tolerance and pass/fail. Rotations that
are multiples of pi/2 are exact pixel permutations, so those rows use absolute
machine-precision tolerances. Other rotations go through bilinear resampling
and are checked on smoothed, disk-windowed inputs with relative tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .field import FeatureField, gaussian_smooth, lift, rotate_array, transform
from .group import (FieldType, GroupElement, OrientationDistribution, compose, elements, inverse,
                    irrep, quotient, regular, rep_matrix, shift_orientation, so2, standard, trivial)
from .kernels import (HarmonicKernelGenerator, check_steerability, correlate_arrays, cross_correlate,
                      kernel_basis, lemma4_check, project_kernel)
from .nets import ModelConfig, TransporterModel, decode_action, lift_tensor

EXPECTED_IDS = (
    "G1", "G2", "G3", "G4",                 # group-core
    "F1", "F2", "F3", "F4",                 # feature fields
    "L1", "L2", "L3", "L4a", "L4b",         # lemmas
    "K1", "K2", "K3", "K4", "K5",           # steerable kernels
    "AD1", "AD2",                           # autodiff
    "P1", "P1i", "P2", "P2n", "P3",         # propositions
    "C1", "C2", "C3",                       # equivariance, invariance, relativity corollaries
    "N1", "N2", "N3", "N4", "N5", "N6",     # pick/place model properties
    "B1", "B2",                             # benchmark
)

SABOTAGE_MODES = ("baseline-prop2",)

DEFAULT_TOL = 0.05        # relative tolerance for interpolated (non quarter-turn) rows
DEFAULT_SIGMA = 6.0       # smoothing of random inputs on interpolated rows


class VerifyError(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    id: str
    name: str
    group: str
    residual: float
    tol: float
    passed: bool
    kind: str = "max"     # max: residual <= tol; min: residual >= tol
    note: str = ""


def _row(id, name, group, residual, tol, kind="max", note="") -> Row:
    residual = float(residual)
    ok = residual <= tol if kind == "max" else residual >= tol
    return Row(id, name, group, residual, tol, bool(ok and math.isfinite(residual)), kind, note)


# ---------------------------------------------------------------------------
# helpers


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _maxabs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def disk_window(size: int, radius: float, soft: float = 3.0) -> np.ndarray:
    """Soft-edged disk so that rotated content stays inside the square grid."""
    c = (size - 1) / 2
    yy, xx = np.mgrid[:size, :size]
    return np.clip((radius - np.hypot(yy - c, xx - c)) / soft, 0.0, 1.0)


def smooth_field(rng: np.random.Generator, shape, sigma: float, window: bool = True) -> np.ndarray:
    """Unit-variance Gaussian-smoothed noise, optionally windowed by a disk."""
    a = gaussian_smooth(rng.normal(size=shape), sigma)
    a = a / max(a.std(), 1e-300)
    if window:
        a = a * disk_window(shape[-1], 0.375 * shape[-1], 0.05 * shape[-1])
    return a


def exact_group(n: int) -> bool:
    return 4 % n == 0


def model_config_for(n: int, **kw) -> ModelConfig:
    """Smallest sensible model whose hidden group and place bins contain C_n."""
    if exact_group(n) or 12 % n == 0:
        return ModelConfig(**kw)
    step = math.lcm(n, 2)
    n_place = step * max(1, 36 // step)
    return ModelConfig(hidden_order=n, n_place=n_place, n_pick=n_place // 2, **kw)


class _Models:
    """Random-weight models cached per (config, seed)."""

    def __init__(self):
        self.cache = {}

    def get(self, cfg: ModelConfig, seed: int) -> TransporterModel:
        key = (cfg, seed)
        if key not in self.cache:
            self.cache[key] = TransporterModel(cfg, seed)
        return self.cache[key]


def _place(model, o, c) -> np.ndarray:
    return model.place_logits(o, c).data[0]


def _shift_bins(model: TransporterModel, k: int, n: int) -> int:
    """Place-channel shift produced by a rotation of k steps of C_n."""
    s = k * model.config.n_place / n
    if abs(s - round(s)) > 1e-9:
        raise VerifyError(f"C_{n} is not a subgroup of the {model.config.n_place} place bins")
    return int(round(s))


@dataclass
class Context:
    group: int = 4
    tol: float = DEFAULT_TOL
    sigma: float = DEFAULT_SIGMA
    seeds: int = 20
    sabotage: str | None = None
    models: _Models = None

    def __post_init__(self):
        if self.group < 2:
            raise VerifyError("group order must be at least 2")
        if self.sabotage is not None and self.sabotage not in SABOTAGE_MODES:
            raise VerifyError(f"unknown sabotage mode {self.sabotage!r}; choose from {', '.join(SABOTAGE_MODES)}")
        if self.models is None:
            self.models = _Models()

    @property
    def exact(self) -> bool:
        return exact_group(self.group)

    @property
    def label(self) -> str:
        return f"C{self.group}"

    def rot(self, a: np.ndarray, k: int) -> np.ndarray:
        return rotate_array(a, GroupElement(self.group, k % self.group))

    def inputs(self, rng, shape) -> np.ndarray:
        """Raw noise for exact rows, smoothed windowed noise otherwise."""
        if self.exact:
            return rng.uniform(0, 1, size=shape)
        return smooth_field(rng, shape, self.sigma)

    def compare(self, a, b, mask=None) -> float:
        if self.exact:
            return _maxabs(a, b)
        if mask is not None:
            a, b = a * mask, b * mask
        return _rel(a, b)

    @property
    def model_tol(self) -> float:
        return 1e-4 if self.exact else self.tol

    def mask(self, size: int) -> np.ndarray | None:
        return None if self.exact else disk_window(size, 0.3125 * size, 0.05 * size)


# ---------------------------------------------------------------------------
# group-core


def check_group_core(ctx: Context) -> list[Row]:
    rng = np.random.default_rng(1)
    worst = 0.0
    orders = (2, 4, 6, 8, 12, 36)
    for _ in range(1000):
        n = int(rng.choice(orders))
        divisors = [d for d in (1, 2, 3, 4, 6) if n % d == 0]
        reps = [trivial(n), standard(n), regular(n), quotient(n, int(rng.choice(divisors))),
                irrep(n, int(rng.integers(0, 5)))]
        rep = reps[int(rng.integers(len(reps)))]
        g, h = GroupElement(n, int(rng.integers(n))), GroupElement(n, int(rng.integers(n)))
        worst = max(worst, _maxabs(rep_matrix(rep, compose(g, h)), rep_matrix(rep, g) @ rep_matrix(rep, h)))
    rows = [_row("G1", "representation homomorphism (1000 triples)", "C2..C36", worst, 1e-12)]

    bad = 0
    for n in orders:
        for rep in [regular(n)] + [quotient(n, d) for d in (1, 2, 3, 4, 6) if n % d == 0]:
            for g in elements(n):
                M = rep_matrix(rep, g)
                if not (set(np.unique(M)) <= {0.0, 1.0} and np.all(M.sum(0) == 1) and np.all(M.sum(1) == 1)):
                    bad += 1
    rows.append(_row("G2", "regular/quotient matrices are permutations", "C2..C36", bad, 0))

    worst = 0.0
    for _ in range(200):
        m, a = int(rng.integers(0, 6)), float(rng.uniform(-10, 10))
        c, s = math.cos(m * a), math.sin(m * a)
        ref = np.array([[1.0]]) if m == 0 else np.array([[c, -s], [s, c]])
        worst = max(worst, _maxabs(rep_matrix(irrep(0, m), so2(a)), ref))
    rows.append(_row("G3", "irrep(m) at theta equals rotation by m*theta", "SO2", worst, 1e-12))

    bad = 0
    for bins, period in ((18, math.pi), (36, 2 * math.pi), (12, 2 * math.pi)):
        d = OrientationDistribution(rng.normal(size=bins), period)
        for g in elements(4):
            if shift_orientation(shift_orientation(d, g), inverse(g)) != d:
                bad += 1
    rows.append(_row("G4", "shift_orientation round trip is exact", "C4", bad, 0))
    return rows


# ---------------------------------------------------------------------------
# feature fields


def check_fields(ctx: Context) -> list[Row]:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        f = FeatureField(rng.normal(size=(6, 9, 9)), FieldType.of(regular(4)) + FieldType.of(trivial(4), 2))
        for g in elements(4):
            for interp in ("nearest", "bilinear"):
                back = transform(transform(f, g, interp), inverse(g), interp)
                worst = max(worst, _maxabs(back.data, f.data))
    rows = [_row("F1", "transform then inverse is identity", "C4", worst, 1e-12)]

    n = ctx.group
    res = []
    for seed in range(10):
        r = np.random.default_rng(seed)
        f = FeatureField(ctx.inputs(r, (1, 48, 48)))
        g, h = GroupElement(n, int(r.integers(n))), GroupElement(n, int(r.integers(n)))
        a = transform(f, compose(g, h)).data
        b = transform(transform(f, h), g).data
        res.append(ctx.compare(b, a, ctx.mask(48)))
    rows.append(_row("F2", "transform(g.h) equals transform(g) after transform(h)", ctx.label, max(res),
                     1e-12 if ctx.exact else 0.02, note="" if ctx.exact else f"smoothed sigma={ctx.sigma}"))

    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    out = transform(FeatureField(np.array([[a, b], [c, d]])), GroupElement(4, 1)).data[0]
    rows.append(_row("F3", "2x2 image under a quarter turn", "C4", _maxabs(out, [[b, d], [a, c]]), 0))

    worst = 0.0
    for _ in range(10):
        data = rng.normal(size=(4, 8, 8))
        f = FeatureField(data, FieldType.of(regular(4)))
        for k in range(4):
            out = transform(f, GroupElement(4, k)).data
            ref = np.roll(np.rot90(data, k, axes=(1, 2)), k, axis=0)
            worst = max(worst, _maxabs(out, ref))
    rows.append(_row("F4", "regular field: pixel rotation plus channel shift", "C4", worst, 1e-12))
    return rows


# ---------------------------------------------------------------------------
# lemmas


def lemma1_residual(pairs: int = 50, seed: int = 3) -> float:
    """Permuting a kernel stack permutes the correlation outputs identically."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        n, D = 4, int(rng.integers(1, 4))
        feats = rng.normal(size=(1, D, 16, 16))
        K = rng.normal(size=(n, D, 5, 5))
        out = correlate_arrays(feats, K)[0]
        for g in elements(n):
            P = rep_matrix(regular(n), g)
            lhs = correlate_arrays(feats, np.einsum("ij,jdab->idab", P, K))[0]
            worst = max(worst, _maxabs(lhs, np.einsum("ij,jhw->ihw", P, out)))
    return worst


def lemma2_residual(crops: int = 50, seed: int = 4) -> float:
    """lift(T_g c) equals rho_reg(-g) applied to lift(c)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(crops):
        s = int(rng.choice([9, 11, 17]))
        c = FeatureField(rng.normal(size=(int(rng.integers(1, 3)), s, s)))
        for n, interp in ((4, "nearest"), (36, "bilinear"), (12, "bilinear")):
            base = lift(c, n, interp)
            for g in elements(4):
                lhs = lift(transform(c, g, interp), n, interp).data
                M = base.fiber.matrix(inverse(g))
                rhs = np.einsum("ab,bhw->ahw", M, base.data)
                worst = max(worst, _maxabs(lhs, rhs))
    return worst


def lemma3_residual(pairs: int = 50, seed: int = 5) -> float:
    """T_g(K * f) equals T_g(K) * T_g(f) for trivial fibers."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        k = int(rng.choice([1, 3, 5]))
        C, O = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        K = rng.normal(size=(O, C, k, k))
        f = FeatureField(rng.normal(size=(C, 15, 15)))
        out = cross_correlate(K, f)
        for g in elements(4):
            lhs = transform(out, g).data
            rhs = cross_correlate(rotate_array(K, g), transform(f, g)).data
            worst = max(worst, _maxabs(lhs, rhs))
    return worst


def lemma4_residuals(seed: int = 6) -> tuple[float, float]:
    """(exact projected path at C4, analytic basis for C4/C6/C8)."""
    rng = np.random.default_rng(seed)
    exact = 0.0
    for rep_out in (regular(4), quotient(4, 2), irrep(4, 1), standard(4), trivial(4)):
        for k in (3, 5):
            K = project_kernel(rng.normal(size=(rep_out.dim, 1, k, k)), trivial(4), rep_out, 4)
            for g in elements(4):
                exact = max(exact, lemma4_check(K, g))
    analytic = 0.0
    for n in (4, 6, 8):
        for rep_out in (regular(n), irrep(n, 1), irrep(n, 2), trivial(n)):
            basis = kernel_basis(trivial(n), rep_out, n, 5)
            for K in basis.elements:
                for g in elements(n):
                    analytic = max(analytic, lemma4_check(K, g))
    return exact, analytic


def check_lemmas(ctx: Context) -> list[Row]:
    ex, an = lemma4_residuals()
    return [
        _row("L1", "kernel-slot permutation permutes outputs (50 pairs)", "C4", lemma1_residual(), 1e-10),
        _row("L2", "lifting commutes with rotation (50 crops)", "C4", lemma2_residual(), 1e-12),
        _row("L3", "rotation distributes over cross-correlation (50 pairs)", "C4", lemma3_residual(), 1e-10),
        _row("L4a", "rotated trivial-input kernel equals inverse fiber action (projected)", "C4", ex, 1e-10),
        _row("L4b", "rotated trivial-input kernel equals inverse fiber action (analytic basis)",
             "C4,C6,C8", an, 1e-6),
    ]


# ---------------------------------------------------------------------------
# steerable kernels


def check_kernels(ctx: Context) -> list[Row]:
    rng = np.random.default_rng(7)
    worst = 0.0
    for n in (4, 6, 8, 12):
        for rin, rout in ((trivial(n), regular(n)), (regular(n), regular(n)), (trivial(n), irrep(n, 1))):
            raw = rng.normal(size=(rout.dim, rin.dim, 3, 3))
            P = project_kernel(raw, rin, rout, n).weights
            worst = max(worst, _maxabs(project_kernel(P, rin, rout, n).weights, P))
    rows = [_row("K1", "projection is idempotent", "C4..C12", worst, 1e-12)]

    n = ctx.group
    res = []
    for seed in range(5):
        r = np.random.default_rng(seed)
        fin, fout = FieldType.of(regular(n)), FieldType.of(regular(n))
        K = project_kernel(r.normal(size=(n, n, 3, 3)), fin, fout, n)
        f = FeatureField(np.stack([ctx.inputs(r, (32, 32)) for _ in range(n)]), fin)
        out = cross_correlate(K, f)
        for g in elements(n)[1:]:
            lhs = cross_correlate(K, transform(f, g)).data
            rhs = transform(out, g).data
            res.append(ctx.compare(lhs, rhs, ctx.mask(32)))
    rows.append(_row("K2", "correlation with a projected kernel is equivariant", ctx.label, max(res),
                     1e-10 if ctx.exact else 0.02, note="" if ctx.exact else f"smoothed sigma={ctx.sigma}"))

    worst = 0.0
    for _ in range(20):
        K1, K2 = rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2, 2, 3, 3))
        f1, f2 = rng.normal(size=(2, 12, 12)), rng.normal(size=(2, 12, 12))
        a, b = rng.normal(size=2)
        F1, F2 = FeatureField(f1), FeatureField(f2)
        lin_k = cross_correlate(a * K1 + b * K2, F1).data - a * cross_correlate(K1, F1).data - b * cross_correlate(K2, F1).data
        lin_f = cross_correlate(K1, FeatureField(a * f1 + b * f2)).data - a * cross_correlate(K1, F1).data \
            - b * cross_correlate(K1, F2).data
        worst = max(worst, float(np.abs(lin_k).max()), float(np.abs(lin_f).max()))
    rows.append(_row("K3", "cross_correlate is bilinear", "-", worst, 1e-12))

    worst = 0.0
    for m in (4, 6, 8, 12):
        for rin, rout in ((trivial(m), regular(m)), (regular(m), regular(m)), (regular(m), trivial(m))):
            K = project_kernel(rng.normal(size=(rout.dim, rin.dim, 5, 5)), rin, rout, m)
            for g in elements(m):
                worst = max(worst, check_steerability(K, g))
    rows.append(_row("K4", "projected kernels satisfy the steerability constraint", "C4..C12", worst, 1e-10))

    from .kernels import SteerableKernel
    vals = []
    for _ in range(100):
        K = SteerableKernel(rng.normal(size=(4, 1, 3, 3)), FieldType.of(trivial(4)), FieldType.of(regular(4)), 4)
        vals.append(max(check_steerability(K, g) for g in elements(4)[1:]))
    rows.append(_row("K5", "unprojected kernels violate the constraint (median residual)", "C4",
                     float(np.median(vals)), 0.1, "min"))
    return rows


# ---------------------------------------------------------------------------
# autodiff


def op_gradient_errors(seed: int = 8) -> dict[str, float]:
    """Relative finite-difference error for every differentiable op."""
    rng = np.random.default_rng(seed)

    def away(a):   # keep ReLU inputs away from the kink
        return np.sign(a) * (np.abs(a) + 0.05)

    def spaced(shape):   # distinct values so max-pool never sits on a tie
        v = rng.permutation(np.prod(shape)).astype(float) * 0.01
        return v.reshape(shape)

    x = rng.normal(size=(2, 3, 6, 6))
    y = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    from .group import FieldType as FT
    from .kernels import projector
    P = projector(FT.of(trivial(4)), FT.of(regular(4)), 4, 3)
    M = rng.normal(size=(6, 6))
    out = {
        "add": ad.gradcheck(ad.add, [x, y]),
        "mul": ad.gradcheck(ad.mul, [x, y]),
        "scale": ad.gradcheck(lambda a: ad.scale(a, 0.7), [x]),
        "relu": ad.gradcheck(ad.relu, [away(x)]),
        "add_bias": ad.gradcheck(ad.add_bias, [x, rng.normal(size=3)]),
        "sum": ad.gradcheck(ad.total, [x]),
        "spatial_mean": ad.gradcheck(ad.spatial_mean, [x]),
        "reshape": ad.gradcheck(lambda a: ad.reshape(a, (2, -1)), [x]),
        "concat": ad.gradcheck(lambda a, b: ad.concat([a, b], 1), [x, y]),
        "linear_map": ad.gradcheck(lambda a: ad.linear_map(a, lambda v: v @ M, lambda g: g @ M.T), [x]),
        "conv2d_same": ad.gradcheck(lambda a, b: ad.conv2d(a, b), [x, w]),
        "conv2d_valid": ad.gradcheck(lambda a, b: ad.conv2d(a, b, "valid"), [x, w]),
        "conv2d_1x1": ad.gradcheck(lambda a, b: ad.conv2d(a, b), [x, rng.normal(size=(2, 3, 1, 1))]),
        "maxpool2": ad.gradcheck(ad.maxpool2, [spaced((2, 3, 6, 6))]),
        "upsample2": ad.gradcheck(ad.upsample2, [x]),
        "fft_correlate": ad.gradcheck(ad.fft_correlate, [rng.normal(size=(2, 3, 3, 4, 4)), x]),
        "softmax_ce_index": ad.gradcheck(lambda z: ad.softmax_ce(z, [1, 4]), [rng.normal(size=(2, 7))]),
        "softmax_ce_dense": ad.gradcheck(lambda z: ad.softmax_ce(z, np.eye(7)[[3, 0]] * 0.5 + 0.5 / 7),
                                         [rng.normal(size=(2, 7))]),
        "project": ad.gradcheck(lambda a: ad.linear_map(a, P, P.adjoint), [rng.normal(size=P.shape)]),
        "lift": ad.gradcheck(lambda a: lift_tensor(a, 6), [rng.normal(size=(1, 2, 7, 7))]),
    }
    return out


def pipeline_gradient_error(model: TransporterModel, demo_obs: np.ndarray, action, head: str,
                            samples: int = 20, eps: float = 1e-5, seed: int = 0) -> float:
    """Finite differences on ``samples`` random parameter entries of one pipeline.

    ``head`` is "pick" (pick map plus pick angle) or "place".
    """
    from .nets import action_targets
    m = model.astype(np.float64)
    x = m._input(demo_obs)
    tg = action_targets(action, x.shape[2:], m.config)
    px = [tuple(int(round(p)) for p in action.pick)]

    def loss():
        if head == "pick":
            a = ad.softmax_ce(m.pick_logits(x), [tg[0]])
            b = ad.softmax_ce(m.angle_logits(m.crops(x, px, m.config.pick_crop)), [tg[1]])
            return ad.add(a, b)
        q = m.place_logits(x, m.crops(x, px, m.config.place_crop))
        return ad.softmax_ce(ad.reshape(q, (1, -1)), [tg[2]])

    prefixes = ("pick.", "angle.") if head == "pick" else ("psi.", "phi.")
    names = [k for k in sorted(m.params) if k.startswith(prefixes)]
    for p in m.params.values():
        p.grad = None
    ad.backward(loss())
    rng = np.random.default_rng(seed)
    sizes = np.array([m.params[k].data.size for k in names], dtype=float)
    picks = rng.choice(len(names), samples, p=sizes / sizes.sum())
    bp, fd = [], []
    for i in picks:
        t = m.params[names[i]]
        j = int(rng.integers(t.data.size))
        g = 0.0 if t.grad is None else float(t.grad.ravel()[j])
        flat = t.data.reshape(-1)
        old = flat[j]
        flat[j] = old + eps
        hi = float(loss().data)
        flat[j] = old - eps
        lo = float(loss().data)
        flat[j] = old
        bp.append(g)
        fd.append((hi - lo) / (2 * eps))
    return _rel(bp, fd)


def check_autodiff(ctx: Context) -> list[Row]:
    errs = op_gradient_errors()
    worst = max(errs, key=errs.get)
    from .bench import tasks as T
    spec = T.task("block-insertion")
    scene = T.reset(spec, 0)
    obs, _ = T.observe(scene, spec)
    action = T.oracle(scene, spec)
    # flat rendered backgrounds put ReLUs and max-pools exactly on their kinks, where
    # one-sided and central differences disagree; a faint texture moves them off
    obs = obs + 0.01 * np.random.default_rng(11).normal(size=obs.shape)
    model = ctx.models.get(ModelConfig(), 0)
    e2e = max(pipeline_gradient_error(model, obs, action, "pick"),
              pipeline_gradient_error(model, obs, action, "place"))
    return [
        _row("AD1", f"per-op finite differences ({len(errs)} ops, worst {worst})", "-", errs[worst], 1e-4),
        _row("AD2", "end-to-end pick and place pipelines (20 parameters each)", "-", e2e, 1e-3),
    ]


# ---------------------------------------------------------------------------
# propositions and corollaries


def prop1_residual(ctx: Context, baseline: bool = True, seeds: int | None = None) -> float:
    """Rotating the crop by g shifts the place channels by -g (o fixed)."""
    n = ctx.group
    cfg = model_config_for(n, baseline=baseline)
    worst = 0.0
    A, B = [], []
    for seed in range(seeds or ctx.seeds):
        m = ctx.models.get(cfg, seed)
        r = np.random.default_rng(100 + seed)
        o = ctx.inputs(r, (1, 1, 64, 64))
        c = ctx.inputs(r, (1, 1, cfg.place_crop, cfg.place_crop))
        P = _place(m, o, c)
        for k in range(1, n):
            lhs = _place(m, o, ctx.rot(c, k))
            rhs = np.roll(P, -_shift_bins(m, k, n), axis=0)
            if ctx.exact:
                worst = max(worst, _maxabs(lhs, rhs))
            else:
                A.append(lhs)
                B.append(rhs)
    return worst if ctx.exact else _rel(A, B)


def prop1_scene_residual(n: int = 8, sigma: float = 1.5, seeds: int = 20, models: _Models | None = None,
                         task: str = "block-insertion") -> tuple[float, float, float]:
    """Prop 1 at a non-quarter-turn group on smoothed rendered scenes.

    Crops are taken at the oracle pick of each scene. Returns the relative L2
    deviation pooled over all seeds and rotations, the worst single seed, and
    the pooled value on smoothed white noise for comparison.
    """
    from .bench import tasks as T
    models = models or _Models()
    cfg = model_config_for(n, baseline=True)
    spec = T.task(task)
    A, B, per = [], [], []
    An, Bn = [], []
    for seed in range(seeds):
        m = models.get(cfg, seed)
        scene = T.reset(spec, seed)
        obs, _ = T.observe(scene, spec)
        a = T.oracle(scene, spec)
        o = gaussian_smooth(obs[None].astype(np.float64), sigma)
        c = m.crops(o, [tuple(int(round(p)) for p in a.pick)], cfg.place_crop)
        r = np.random.default_rng(200 + seed)
        on = smooth_field(r, (1, 1, 64, 64), sigma, window=False)
        cn = smooth_field(r, (1, 1, cfg.place_crop, cfg.place_crop), sigma)
        P, Pn = _place(m, o, c), _place(m, on, cn)
        sa, sb = [], []
        for k in range(1, n, 2):     # even steps are exact quarter turns when 4 | n
            g = GroupElement(n, k)
            s = _shift_bins(m, k, n)
            sa.append(_place(m, o, rotate_array(c, g)))
            sb.append(np.roll(P, -s, axis=0))
            An.append(_place(m, on, rotate_array(cn, g)))
            Bn.append(np.roll(Pn, -s, axis=0))
        per.append(_rel(sa, sb))
        A += sa
        B += sb
    return _rel(A, B), max(per), _rel(An, Bn)


def prop2_residual(ctx: Context, baseline: bool, seeds: int | None = None, goal: bool = False,
                   group: int | None = None) -> tuple[float, float]:
    """Deviation of place(T_g2 o, T_g1 c) from rho(g2 - g1) T_g2 place(o, c).

    Exact groups return the max absolute deviation over all pairs. Interpolated
    groups pool the relative L2 deviation over seeds (per-seed values swing with
    the output norm) and also report the worst single seed.
    """
    n = group or ctx.group
    exact = exact_group(n)
    cfg = model_config_for(n, baseline=baseline, goal=goal)
    C = cfg.channels
    if seeds is None:
        seeds = 2 if exact else max(2, ctx.seeds // 2)
    pairs = [(a, b) for a in range(n) for b in range(n)] if n <= 4 else \
        [(a, b) for a in (0, 1, n // 2 + 1) for b in (0, 1, n // 2 + 1)]
    sub = ctx if n == ctx.group else Context(n, ctx.tol, ctx.sigma, ctx.seeds, None, ctx.models)
    worst, A, B = 0.0, [], []
    mask = sub.mask(64)
    for seed in range(seeds):
        m = ctx.models.get(cfg, seed)
        r = np.random.default_rng(300 + seed)
        o = sub.inputs(r, (1, C, 64, 64))
        c = sub.inputs(r, (1, C, cfg.place_crop, cfg.place_crop))
        P = _place(m, o, c)
        a, b = [], []
        for g1, g2 in pairs:
            lhs = _place(m, sub.rot(o, g2), sub.rot(c, g1))
            rhs = np.roll(sub.rot(P, g2), _shift_bins(m, g2 - g1, n), axis=0)
            if exact:
                worst = max(worst, _maxabs(lhs, rhs))
            else:
                a.append(lhs * mask)
                b.append(rhs * mask)
        if not exact:
            worst = max(worst, _rel(a, b))
            A += a
            B += b
    return (worst, worst) if exact else (_rel(A, B), worst)


def prop3_residual(angles: int = 8, sigma: float = 2.0, seed: int = 9) -> float:
    """Harmonic generator: psi(T_g1 c) * phi(T_g2 o) = rho(g2 - g1) T_g2 (psi(c) * phi(o))
    for g1, g2 drawn from SO(2); phi is an isotropic Gaussian blur."""
    rng = np.random.default_rng(seed)
    gen = HarmonicKernelGenerator()
    A, B = [], []
    for _ in range(angles):
        c = smooth_field(rng, (1, 21, 21), sigma)
        o = smooth_field(rng, (1, 56, 56), sigma)
        a1, a2 = rng.uniform(0, 2 * math.pi, size=2)
        g1, g2 = so2(float(a1)), so2(float(a2))

        def phi(x):
            return gaussian_smooth(x, 1.0)

        base = cross_correlate(gen(c).weights, FeatureField(phi(o)))
        lhs = cross_correlate(gen(rotate_array(c, g1)).weights, FeatureField(phi(rotate_array(o, g2)))).data
        rho = gen.rep_out.matrix(so2(float(a2 - a1)))
        rhs = np.einsum("ab,bhw->ahw", rho, rotate_array(base.data, g2))
        mask = disk_window(56, 16, 3)
        A.append(lhs * mask)
        B.append(rhs * mask)
    return _rel(A, B)


def corollary_residuals(ctx: Context, seeds: int | None = None) -> dict[str, float]:
    """Equivariance (object and placement), invariance and relativity at random g."""
    n = ctx.group
    cfg = model_config_for(n)
    out = {"equivariance": [], "invariance": [], "relativity": []}
    acc = {k: ([], []) for k in out}
    for seed in range(seeds or ctx.seeds):
        m = ctx.models.get(cfg, seed)
        r = np.random.default_rng(400 + seed)
        o = ctx.inputs(r, (1, 1, 64, 64))
        c = ctx.inputs(r, (1, 1, cfg.place_crop, cfg.place_crop))
        k = int(r.integers(1, n))
        s = _shift_bins(m, k, n)
        P = _place(m, o, c)
        mask = ctx.mask(64)
        # object rotation shifts the channels by -g; placement rotation acts by T^reg_g
        e1 = (_place(m, o, ctx.rot(c, k)), np.roll(P, -s, axis=0))
        e2 = (_place(m, ctx.rot(o, k), c), np.roll(ctx.rot(P, k), s, axis=0))
        inv = (_place(m, ctx.rot(o, k), ctx.rot(c, k)), ctx.rot(P, k))
        # relativity: rho_reg(-g) T^reg_g place(T_-g o, c) with T^reg_g = rho_reg(g) T^0_g,
        # so the two channel shifts cancel
        Q = _place(m, ctx.rot(o, -k), c)
        rel = (e1[0], np.roll(np.roll(ctx.rot(Q, k), s, axis=0), -s, axis=0))
        for key, pairs in (("equivariance", (e1, e2)), ("invariance", (inv,)), ("relativity", (rel,))):
            for lhs, rhs in pairs:
                if ctx.exact:
                    out[key].append(_maxabs(lhs, rhs))
                else:
                    acc[key][0].append(lhs * mask)
                    acc[key][1].append(rhs * mask)
    if ctx.exact:
        return {k: max(v) for k, v in out.items()}
    return {k: _rel(*acc[k]) for k in acc}


def check_propositions(ctx: Context) -> list[Row]:
    note = "" if ctx.exact else f"smoothed sigma={ctx.sigma}, relative L2"
    tol = ctx.model_tol
    rows = [_row("P1", f"baseline place: crop rotation shifts channels ({ctx.seeds} seeds)", ctx.label,
                 prop1_residual(ctx), tol, note=note)]
    pooled, worst, noise = prop1_scene_residual(models=ctx.models, seeds=ctx.seeds)
    rows.append(_row("P1i", "baseline place at C8, bilinear, sigma=1.5 smoothed scenes (pooled)", "C8", pooled, 0.05,
                     note=f"worst seed {worst:.3f}; smoothed white noise {noise:.3f}"))
    eq, eq_worst = prop2_residual(ctx, baseline=False)
    base, _ = prop2_residual(ctx, baseline=True)
    p2note = note if ctx.exact else f"{note}; pooled over seeds, worst seed {eq_worst:.3f}"
    if ctx.sabotage == "baseline-prop2":
        rows.append(_row("P2", "place model is C_n x C_n equivariant [sabotaged: baseline]", ctx.label, base, tol,
                         note=note))
    else:
        rows.append(_row("P2", "equivariant place model is C_n x C_n equivariant", ctx.label, eq, tol, note=p2note))
    # the discriminating gap is defined on the exact quarter-turn group
    eq4, base4 = eq, base
    if ctx.group != 4:
        eq4, _ = prop2_residual(ctx, baseline=False, group=4)
        base4, _ = prop2_residual(ctx, baseline=True, group=4)
    rows.append(_row("P2n", "baseline Prop-2 residual / equivariant residual", "C4",
                     base4 / max(eq4, 1e-300), 10.0, "min", note=f"baseline {base4:.3g}, equivariant {eq4:.3g}"))
    rows.append(_row("P3", "harmonic generator, 8 SO(2) angle pairs, band-limited inputs", "SO2",
                     prop3_residual(), 0.05))
    cor = corollary_residuals(ctx)
    rows += [
        _row("C1", "equivariance corollaries (object / placement rotation)", ctx.label, cor["equivariance"], tol,
             note=note),
        _row("C2", "invariance corollary (g1 = g2)", ctx.label, cor["invariance"], tol, note=note),
        _row("C3", "relativity corollary", ctx.label, cor["relativity"], tol, note=note),
    ]
    return rows


# ---------------------------------------------------------------------------
# model-level properties


def pick_residual(ctx: Context, seeds: int | None = None, goal: bool = False) -> float:
    n = ctx.group
    cfg = model_config_for(n, goal=goal)
    worst, A, B = 0.0, [], []
    mask = ctx.mask(64)
    for seed in range(seeds or ctx.seeds):
        m = ctx.models.get(cfg, seed)
        r = np.random.default_rng(500 + seed)
        o = ctx.inputs(r, (1, cfg.channels, 64, 64))
        base = m.pick_logits(o).data.reshape(64, 64)
        for k in ([1, 2, 3] if n == 4 else [int(r.integers(1, n))]):
            lhs = m.pick_logits(ctx.rot(o, k)).data.reshape(64, 64)
            rhs = ctx.rot(base, k)
            if ctx.exact:
                worst = max(worst, _maxabs(lhs, rhs))
            else:
                A.append(lhs * mask)
                B.append(rhs * mask)
    return worst if ctx.exact else _rel(A, B)


def angle_residuals(ctx: Context, seeds: int | None = None) -> tuple[float, float]:
    """(quotient equivariance of the pick-angle logits, half-turn invariance)."""
    n = ctx.group
    cfg = model_config_for(n)
    worst, half, A, B = 0.0, 0.0, [], []
    for seed in range(seeds or ctx.seeds):
        m = ctx.models.get(cfg, seed)
        r = np.random.default_rng(600 + seed)
        c = ctx.inputs(r, (1, 1, cfg.pick_crop, cfg.pick_crop))
        base = OrientationDistribution(m.angle_logits(c).data[0], math.pi)
        for k in range(1, n):
            lhs = m.angle_logits(ctx.rot(c, k)).data[0]
            rhs = shift_orientation(base, GroupElement(n, k)).values
            if ctx.exact:
                worst = max(worst, _maxabs(lhs, rhs))
            else:
                A.append(lhs)
                B.append(rhs)
        if n % 2 == 0:
            half = max(half, _maxabs(m.angle_logits(ctx.rot(c, n // 2)).data[0], base.values)
                       if ctx.exact else _rel(m.angle_logits(ctx.rot(c, n // 2)).data[0], base.values))
    return (worst if ctx.exact else _rel(A, B)), half


def uniform_angle_spread(seeds: int = 5) -> float:
    """max - min of the pick-angle distribution on a constant crop."""
    spread = 0.0
    for seed in range(seeds):
        for baseline in (False, True):
            m = TransporterModel(ModelConfig(baseline=baseline), seed)
            c = np.full((1, 1, 17, 17), 0.37, dtype=np.float32)
            p = np.exp(ad.log_softmax(m.angle_logits(c).data[0].astype(np.float64)))
            spread = max(spread, float(p.max() - p.min()))
    return spread


def decode_scale_violations(trials: int = 50, seed: int = 10) -> int:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        pick, angle, place = rng.normal(size=(16, 16)), rng.normal(size=18), rng.normal(size=(36, 16, 16))
        s = float(rng.uniform(0.01, 100))
        if decode_action(pick, angle, place) != decode_action(pick * s, angle * s, place * s):
            bad += 1
    return bad


def check_models(ctx: Context) -> list[Row]:
    note = "" if ctx.exact else f"smoothed sigma={ctx.sigma}, relative L2"
    tol = ctx.model_tol
    q, half = angle_residuals(ctx)
    goal_pick = pick_residual(ctx, seeds=max(2, ctx.seeds // 4), goal=True)
    goal_place, _ = prop2_residual(ctx, baseline=False, seeds=1 if ctx.exact else None, goal=True)
    rows = [
        _row("N1", "pick map rotates with the observation", ctx.label, pick_residual(ctx), tol, note=note),
        _row("N2", "pick-angle bins shift with crop rotation (quotient)", ctx.label, q, tol, note=note),
        _row("N3", "goal-stacked pick and place equivariance", ctx.label, max(goal_pick, goal_place), tol, note=note),
        _row("N4", "half-turn of the crop leaves pick-angle logits unchanged", ctx.label, half, tol, note=note),
        _row("N5", "constant crop gives a uniform pick-angle distribution (max-min)", "-", uniform_angle_spread(), 1e-3),
        _row("N6", "decoded action invariant to positive rescaling (violations)", "-", decode_scale_violations(), 0),
    ]
    return rows


# ---------------------------------------------------------------------------
# benchmark


def oracle_rotation_violations(seeds: int = 10) -> int:
    from .bench import tasks as T
    from .bench.scene import rotate_scene
    bad = 0
    for name in T.TASKS:
        spec = T.task(name)
        for s in range(seeds):
            scene = T.reset(spec, s)
            obs, _ = T.observe(scene, spec)
            a = T.oracle(scene, spec)
            for q in (1, 2, 3):
                rs = rotate_scene(scene, q)
                robs, _ = T.observe(rs, spec)
                ra = T.oracle(rs, spec)
                pu, pv = a.pick
                qu, qv = a.place
                N = spec.workspace.size
                for _ in range(q):
                    pu, pv = N - 1 - pv, pu
                    qu, qv = N - 1 - qv, qu
                ok = (np.array_equal(robs, np.rot90(obs, q, axes=(1, 2)))
                      and ra.pick == (pu, pv) and ra.place == (qu, qv)
                      and abs(ra.theta_place - a.theta_place) < 1e-9
                      and abs(((ra.theta_pick - a.theta_pick - q * math.pi / 2) + math.pi / 2) % math.pi
                              - math.pi / 2) < 1e-9)
                bad += 0 if ok else 1
    return bad


def oracle_worst_score(seeds: int = 100) -> float:
    """Lowest per-task mean oracle score over ``seeds`` seeds."""
    from .bench import tasks as T
    from .evaluate import eval_seeds, evaluate, oracle_policy
    worst = 1.0
    for name in T.TASKS:
        spec = T.task(name)
        scores = evaluate(spec, eval_seeds(0, seeds), lambda s: oracle_policy(spec, s))
        worst = min(worst, float(np.mean(scores)))
    return worst


def check_bench(ctx: Context) -> list[Row]:
    return [
        _row("B1", "oracle action rotates with the scene (violations)", "C4", oracle_rotation_violations(), 0),
        _row("B2", "oracle mean score per task, 100 unseen seeds (worst task)", "-", oracle_worst_score(), 0.99,
             "min"),
    ]


# ---------------------------------------------------------------------------
# driver


SECTIONS: tuple[Callable[[Context], list[Row]], ...] = (
    check_group_core, check_fields, check_lemmas, check_kernels, check_autodiff,
    check_propositions, check_models, check_bench,
)


def run(group: int = 4, tolerance: float = DEFAULT_TOL, sabotage: str | None = None, seeds: int = 20,
        sigma: float = DEFAULT_SIGMA, progress: Callable[[Row], None] | None = None) -> list[Row]:
    ctx = Context(group, tolerance, sigma, seeds, sabotage)
    rows: list[Row] = []
    with threadpool_limits(1):
        for section in SECTIONS:
            for row in section(ctx):
                rows.append(row)
                if progress is not None:
                    progress(row)
    missing = [i for i in EXPECTED_IDS if i not in {r.id for r in rows}]
    rows.append(_row("COV", "every expected property id was exercised (missing count)", "-", len(missing), 0,
                     note=" ".join(missing)))
    return rows


def format_row(r: Row) -> str:
    op = "<=" if r.kind == "max" else ">="
    status = "PASS" if r.passed else "FAIL"
    text = f"{r.id:<4} {r.group:<9} {r.residual:>11.3e} {op} {r.tol:<9.3g} {status}  {r.name}"
    return text + (f"  [{r.note}]" if r.note else "")


def format_table(rows: list[Row]) -> str:
    head = f"{'id':<4} {'group':<9} {'residual':>11}    {'tol':<9} {'':4}  property"
    return "\n".join([head] + [format_row(r) for r in rows])
