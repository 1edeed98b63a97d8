"""Pick and place networks: equivariant and unconstrained variants.

Layout conventions used by every model here:

* pick logits ``(B, H*W)`` over the observation pixels,
* pick-angle logits ``(B, n_pick)``, bin ``j`` meaning angle ``j*pi/n_pick``,
* place logits ``(B, n_place, H, W)``, channel ``i`` meaning a counter-clockwise
  delta rotation of ``2*pi*i/n_place``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import tensorio
from .field import CropSpec, FeatureField, crop, resample_matrix
from .group import FieldType, GroupElement, elements, quotient, regular, trivial
from .kernels import projector


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_place: int = 36
    n_pick: int = 18
    hidden_order: int = 12
    pick_crop: int = 17
    place_crop: int = 33
    pad: int = 32              # total added size; split evenly between both sides
    width: int = 2             # regular-field copies per hidden layer
    place_dim: int = 4         # trivial channels produced by psi and phi
    in_channels: int = 1
    kernel: int = 3
    angle_blocks: int = 3      # residual blocks in the pick-angle net; sets its receptive field
    baseline: bool = False
    baseline_width: int = 0    # 0: choose to match the equivariant parameter count
    goal: bool = False
    init_scale: float = 0.1    # shrinks the output layers so initial maps are near uniform

    def __post_init__(self):
        if self.n_place <= 0 or self.n_place % 2:
            raise ModelError("n_place must be even and positive")
        if self.hidden_order < 2:
            raise ModelError("hidden group order must be >= 2")
        if self.angle_blocks < 0:
            raise ModelError("angle_blocks must be non-negative")
        if self.n_pick <= 0:
            raise ModelError("n_pick must be positive")
        if self.pick_crop % 2 == 0 or self.place_crop % 2 == 0 or self.kernel % 2 == 0:
            raise ModelError("crop and kernel sizes must be odd")
        if self.pad % 2:
            raise ModelError("pad (total added size) must be even")
        if self.pad != self.place_crop - 1:
            raise ModelError("pad must equal place_crop - 1 so the place map covers the observation")
        if not self.baseline and (2 * self.n_pick) % self.hidden_order:
            raise ModelError(f"hidden group C_{self.hidden_order} must be a subgroup of "
                             f"C_{2 * self.n_pick} for the quotient pick-angle output")

    @property
    def channels(self) -> int:
        return self.in_channels * (2 if self.goal else 1)

    def to_dict(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "ModelConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in d.items():
            if k not in types:
                raise ModelError(f"unknown model config key {k!r}")
            if types[k] in ("bool", bool):
                if v not in ("True", "False", "true", "false", "1", "0"):
                    raise ModelError(f"{k}: expected a boolean, got {v!r}")
                kw[k] = v in ("True", "true", "1")
            elif types[k] in ("float", float):
                kw[k] = float(v)
            else:
                kw[k] = int(v)
        return cls(**kw)


# ---------------------------------------------------------------------------
# layers


class ParamStore:
    def __init__(self, seed: int, dtype=np.float32):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, ad.Tensor] = {}
        self.dtype = dtype
        self.free = 0            # number of free parameters (dimension of the constrained space)

    def add(self, name: str, value: np.ndarray) -> ad.Tensor:
        if name in self.params:
            raise ModelError(f"duplicate parameter {name}")
        t = ad.Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t


def _he_rescale(w: np.ndarray, fan_in: int, gain: float) -> np.ndarray:
    rms = float(np.sqrt(np.mean(w ** 2)))
    if rms == 0:
        return w
    return w * (gain * math.sqrt(2.0 / fan_in) / rms)


def projector_rank(P) -> int:
    """Dimension of the steerable kernel space (trace of the idempotent projector)."""
    tr = 0.0
    for gi, g in enumerate(elements(P.n)):
        tr += np.trace(P.rho_out[gi]) * np.trace(P.A[gi]) * np.trace(P.rho_in_inv[gi])
    return int(round(tr / P.n))


class EqConv:
    def __init__(self, store: ParamStore, name: str, fin: FieldType, fout: FieldType, n: int, k: int,
                 gain: float = 1.0):
        self.P = projector(fin, fout, n, k)
        self.fin, self.fout = fin, fout
        raw = self.P(store.rng.normal(size=self.P.shape))
        self.w = store.add(name + ".w", _he_rescale(raw, fin.dim * k * k, gain))
        self.b = store.add(name + ".b", np.zeros(fout.dim))
        store.free += projector_rank(self.P) + int(round(np.trace(np.mean(self.P.rho_out, axis=0))))

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        P = self.P
        w = ad.linear_map(self.w, P, P.adjoint, "project")
        b = ad.linear_map(self.b, P.project_bias, P.adjoint_bias, "project_bias")
        return ad.add_bias(ad.conv2d(x, w), b)


class PlainConv:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int, k: int, gain: float = 1.0):
        self.w = store.add(name + ".w", _he_rescale(store.rng.normal(size=(cout, cin, k, k)), cin * k * k, gain))
        self.b = store.add(name + ".b", np.zeros(cout))
        store.free += cout * cin * k * k + cout

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.add_bias(ad.conv2d(x, self.w), self.b)


class ConvFactory:
    """Builds either steerable or plain convolutions from abstract field specs."""

    def __init__(self, store: ParamStore, equivariant: bool, n: int):
        self.store, self.equivariant, self.n = store, equivariant, n

    def trivial(self, c: int):
        return FieldType.of(trivial(self.n), c) if self.equivariant else c

    def hidden(self, copies: int):
        return FieldType.of(regular(self.n), copies) if self.equivariant else copies

    def conv(self, name, fin, fout, k, gain=1.0):
        if self.equivariant:
            return EqConv(self.store, name, fin, fout, self.n, k, gain)
        return PlainConv(self.store, name, fin, fout, k, gain)


class ResBlock:
    def __init__(self, f: ConvFactory, name: str, fin, fout, k: int):
        self.c1 = f.conv(name + ".c1", fin, fout, k)
        self.c2 = f.conv(name + ".c2", fout, fout, k)
        self.skip = f.conv(name + ".skip", fin, fout, 1) if fin != fout else None

    def __call__(self, x):
        h = self.c2(ad.relu(self.c1(x)))
        s = self.skip(x) if self.skip is not None else x
        return ad.relu(ad.add(h, s))


class UNet:
    """Stem, two residual blocks going down (2x2 max pool), two coming back up."""

    def __init__(self, f: ConvFactory, name: str, fin, hidden, fout, k: int, out_gain: float):
        self.stem = f.conv(name + ".stem", fin, hidden, k)
        self.d1 = ResBlock(f, name + ".d1", hidden, hidden, k)
        self.d2 = ResBlock(f, name + ".d2", hidden, hidden, k)
        self.u1 = ResBlock(f, name + ".u1", hidden + hidden, hidden, k)
        self.u2 = ResBlock(f, name + ".u2", hidden + hidden, hidden, k)
        self.head = f.conv(name + ".head", hidden, fout, 1, out_gain)

    def __call__(self, x):
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ModelError(f"U-Net input must have sides divisible by 4, got {x.shape[2:]}")
        s0 = ad.relu(self.stem(x))
        s1 = self.d1(ad.maxpool2(s0))
        s2 = self.d2(ad.maxpool2(s1))
        u1 = self.u1(ad.concat([ad.upsample2(s2), s1]))
        u2 = self.u2(ad.concat([ad.upsample2(u1), s0]))
        return self.head(u2)


class FlatNet:
    """Stem plus residual blocks at a single resolution (odd-sized crops)."""

    def __init__(self, f: ConvFactory, name: str, fin, hidden, fout, k: int, blocks: int, out_gain: float):
        self.stem = f.conv(name + ".stem", fin, hidden, k)
        self.blocks = [ResBlock(f, f"{name}.b{i}", hidden, hidden, k) for i in range(blocks)]
        self.head = f.conv(name + ".head", hidden, fout, 1, out_gain)

    def __call__(self, x):
        h = ad.relu(self.stem(x))
        for b in self.blocks:
            h = b(h)
        return self.head(h)


# ---------------------------------------------------------------------------
# rotation stacks


@lru_cache(maxsize=32)
def rotation_stack(size: int, angles: tuple, interp: str = "bilinear") -> sp.csr_matrix:
    """Sparse (len(angles)*size^2, size^2) map producing rotated copies about the centre."""
    mats = []
    for a in angles:
        if isinstance(a, tuple):
            g = GroupElement(a[0], a[1])
        else:
            g = a
        mats.append(resample_matrix((size, size), g, None, interp))
    return sp.vstack(mats).tocsr()


def lift_tensor(x: ad.Tensor, n: int, period_turns: int = 1) -> ad.Tensor:
    """(B, D, h, w) -> (B, n, D, h, w) with copy i rotated by 2*pi*i/(n*period_turns)."""
    B, D, h, w = x.shape
    if h != w:
        raise ModelError("lifting needs square inputs")
    M = rotation_stack(h, tuple((n * period_turns, i) for i in range(n)))
    Mt = M.T.tocsr()

    def fwd(a):
        flat = a.reshape(B * D, h * w).T                      # (hw, BD)
        out = np.asarray(M @ flat, dtype=a.dtype)             # (n*hw, BD)
        return out.reshape(n, h, w, B, D).transpose(3, 0, 4, 1, 2).copy()

    def adj(g):
        flat = g.transpose(1, 3, 4, 0, 2).reshape(n * h * w, B * D)
        out = np.asarray(Mt @ flat, dtype=g.dtype)
        return out.T.reshape(B, D, h, w)

    return ad.linear_map(x, fwd, adj, "lift")


# ---------------------------------------------------------------------------
# models


def _center_crops(obs: np.ndarray, centers, size: int) -> np.ndarray:
    out = []
    for b, (u, v) in enumerate(centers):
        out.append(crop(FeatureField(obs[b]), CropSpec((u, v), (size, size))).data)
    return np.stack(out)


class TransporterModel:
    """Pick network, pick-angle network and pick-conditioned place network."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.store = ParamStore(seed, dtype)
        self._build()

    # -- construction -------------------------------------------------------

    def _build(self):
        cfg = self.config
        eq = not cfg.baseline
        n = cfg.hidden_order
        f = ConvFactory(self.store, eq, n)
        C = cfg.channels
        k = cfg.kernel
        g = cfg.init_scale
        if eq:
            hid = f.hidden(cfg.width)
            angle_out = FieldType.of(quotient(2 * cfg.n_pick, 2))
            angle_in = f.trivial(C)
        else:
            width = cfg.baseline_width or self._matched_width()
            object.__setattr__(self, "baseline_width", width)
            hid = width
            angle_out = 1
            angle_in = C
        self.pick = UNet(f, "pick", f.trivial(C), hid, f.trivial(1), k, g)
        self.angle = FlatNet(f, "angle", angle_in, hid, angle_out, k, cfg.angle_blocks, g)
        self.psi = FlatNet(f, "psi", f.trivial(C), hid, f.trivial(cfg.place_dim), k, 2, g)
        self.phi = UNet(f, "phi", f.trivial(C), hid, f.trivial(cfg.place_dim), k, 1.0)

    def _matched_width(self) -> int:
        target = TransporterModel(replace(self.config, baseline=False, baseline_width=0), 0).free_parameters
        best, best_err = 1, None
        for w in range(1, 64):
            cnt = TransporterModel(replace(self.config, baseline_width=w), 0).free_parameters
            err = abs(cnt - target)
            if best_err is None or err < best_err:
                best, best_err = w, err
            if cnt > target:
                break
        return best

    @property
    def params(self) -> dict[str, ad.Tensor]:
        return self.store.params

    @property
    def free_parameters(self) -> int:
        return self.store.free

    @property
    def dtype(self):
        return self.store.dtype

    def astype(self, dtype) -> "TransporterModel":
        m = TransporterModel(self.config, self.seed, dtype)
        for k, t in self.params.items():
            m.params[k].data = t.data.astype(dtype)
        return m

    # -- forward ------------------------------------------------------------

    def _input(self, obs) -> np.ndarray:
        a = np.asarray(obs, dtype=self.dtype)
        if a.ndim == 3:
            a = a[None]
        if a.ndim != 4 or a.shape[1] != self.config.channels:
            raise ModelError(f"observation must be (B, {self.config.channels}, H, W), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ModelError("observation contains non-finite values")
        return a

    def pick_logits(self, obs) -> ad.Tensor:
        x = self._input(obs)
        y = self.pick(ad.Tensor(x))
        return ad.reshape(y, (x.shape[0], -1))

    def angle_logits(self, crops) -> ad.Tensor:
        cfg = self.config
        c = self._input(crops)
        if c.shape[2:] != (cfg.pick_crop, cfg.pick_crop):
            raise ModelError(f"pick-angle crop must be {cfg.pick_crop}x{cfg.pick_crop}, got {c.shape[2:]}")
        c = c - c.mean(axis=(1, 2, 3), keepdims=True)
        if not cfg.baseline:
            return ad.spatial_mean(self.angle(ad.Tensor(c)))
        B = c.shape[0]
        lifted = lift_tensor(ad.Tensor(c), cfg.n_pick, 2)           # (B, n_pick, C, h, w)
        flat = ad.reshape(lifted, (B * cfg.n_pick, cfg.channels, cfg.pick_crop, cfg.pick_crop))
        s = ad.spatial_mean(self.angle(flat))
        return ad.reshape(s, (B, cfg.n_pick))

    def place_logits(self, obs, crops) -> ad.Tensor:
        cfg = self.config
        x = self._input(obs)
        c = self._input(crops)
        if c.shape[2:] != (cfg.place_crop, cfg.place_crop):
            raise ModelError(f"place crop must be {cfg.place_crop}x{cfg.place_crop}, got {c.shape[2:]}")
        d = cfg.pad // 2
        xp = np.pad(x, ((0, 0), (0, 0), (d, d), (d, d)))
        feats = self.phi(ad.Tensor(xp))
        B = x.shape[0]
        if not cfg.baseline:
            kern = lift_tensor(self.psi(ad.Tensor(c)), cfg.n_place)   # (B, N, D, s, s)
        else:
            lifted = lift_tensor(ad.Tensor(c), cfg.n_place)          # (B, N, C, s, s)
            flat = ad.reshape(lifted, (B * cfg.n_place, cfg.channels, cfg.place_crop, cfg.place_crop))
            kern = ad.reshape(self.psi(flat), (B, cfg.n_place, cfg.place_dim, cfg.place_crop, cfg.place_crop))
        out = ad.fft_correlate(kern, feats)
        return ad.scale(out, 1.0 / cfg.place_crop ** 2)

    # -- convenience --------------------------------------------------------

    def crops(self, obs, pixels, size) -> np.ndarray:
        return _center_crops(self._input(obs), pixels, size)

    def forward(self, obs, pick_pixels):
        """All three heads for a batch, crops taken at ``pick_pixels``."""
        x = self._input(obs)
        pick = self.pick_logits(x)
        angle = self.angle_logits(self.crops(x, pick_pixels, self.config.pick_crop))
        place = self.place_logits(x, self.crops(x, pick_pixels, self.config.place_crop))
        return pick, angle, place


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class PickPlaceAction:
    pick: tuple[float, float]
    theta_pick: float
    place: tuple[float, float]
    theta_place: float

    def as_array(self) -> np.ndarray:
        return np.array([*self.pick, self.theta_pick, *self.place, self.theta_place], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "PickPlaceAction":
        a = [float(x) for x in a]
        return cls((a[0], a[1]), a[2], (a[3], a[4]), a[5])


def snap_angle(theta: float, bins: int, period: float) -> int:
    """Nearest bin index; exact half-way cases go to the lower index."""
    x = (theta % period) / (period / bins)
    lo = math.floor(x)
    frac = x - lo
    i = lo + 1 if frac > 0.5 + 1e-9 else lo
    return i % bins


def _first_argmax(a: np.ndarray) -> int:
    return int(np.argmax(a.ravel()))


def decode_action(pick_map: np.ndarray, angle_dist: np.ndarray, place_map: np.ndarray,
                  n_pick: int | None = None) -> PickPlaceAction:
    """Sequential argmax; ties resolve to the lowest flat index."""
    pick_map = np.asarray(pick_map)
    place_map = np.asarray(place_map)
    angle_dist = np.asarray(angle_dist).ravel()
    for name, a in (("pick", pick_map), ("angle", angle_dist), ("place", place_map)):
        if not np.all(np.isfinite(a)):
            raise ModelError(f"{name} map contains non-finite values")
    pm = pick_map.reshape(pick_map.shape[-2:])
    pi = _first_argmax(pm)
    u, v = divmod(pi, pm.shape[1])
    n_pick = n_pick or len(angle_dist)
    j = _first_argmax(angle_dist)
    n_place = place_map.shape[-3]
    qi = _first_argmax(place_map.reshape(n_place, *place_map.shape[-2:]))
    ch, rest = divmod(qi, place_map.shape[-2] * place_map.shape[-1])
    pu, pv = divmod(rest, place_map.shape[-1])
    return PickPlaceAction((float(u), float(v)), j * math.pi / n_pick, (float(pu), float(pv)),
                           ch * 2 * math.pi / n_place)


def action_targets(action: PickPlaceAction, shape: tuple[int, int], cfg: ModelConfig) -> tuple[int, int, int]:
    """Class indices for the three cross-entropy heads."""
    H, W = shape
    u, v = (int(round(x)) for x in action.pick)
    pu, pv = (int(round(x)) for x in action.place)
    for name, (a, b) in (("pick", (u, v)), ("place", (pu, pv))):
        if not (0 <= a < H and 0 <= b < W):
            raise ModelError(f"expert {name} pixel {(a, b)} outside the {H}x{W} workspace")
    j = snap_angle(action.theta_pick, cfg.n_pick, math.pi)
    i = snap_angle(action.theta_place, cfg.n_place, 2 * math.pi)
    return u * W + v, j, i * H * W + pu * W + pv


def bc_loss(model: TransporterModel, obs, actions: list[PickPlaceAction]) -> ad.Tensor:
    """Sum of pick, pick-angle and place cross-entropies (batch mean)."""
    x = model._input(obs)
    H, W = x.shape[2:]
    tg = np.array([action_targets(a, (H, W), model.config) for a in actions])
    pixels = [tuple(int(round(p)) for p in a.pick) for a in actions]
    pick, angle, place = model.forward(x, pixels)
    B = x.shape[0]
    l1 = ad.softmax_ce(pick, tg[:, 0])
    l2 = ad.softmax_ce(angle, tg[:, 1])
    l3 = ad.softmax_ce(ad.reshape(place, (B, -1)), tg[:, 2])
    return ad.add(ad.add(l1, l2), l3)


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(ad.log_softmax(np.asarray(z, dtype=np.float64)))


def act(model: TransporterModel, obs) -> PickPlaceAction:
    """Greedy action for a single observation (C, H, W)."""
    x = model._input(obs)
    H, W = x.shape[2:]
    pick = model.pick_logits(x).data.reshape(H, W)
    u, v = divmod(_first_argmax(pick), W)
    cfg = model.config
    angle = model.angle_logits(model.crops(x, [(u, v)], cfg.pick_crop)).data[0]
    place = model.place_logits(x, model.crops(x, [(u, v)], cfg.place_crop)).data[0]
    return decode_action(pick, angle, place, cfg.n_pick)


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"EQCK"


def save_checkpoint(path: str | Path, model: TransporterModel, extra: dict | None = None) -> None:
    blobs, lines, offset = [], [], 0
    for k, v in model.config.to_dict().items():
        lines.append(f"config {k}={v}")
    lines.append(f"config seed={model.seed}")
    for k, v in (extra or {}).items():
        lines.append(f"meta {k}={v}")
    for name in sorted(model.params):
        blob = tensorio.encode_tensor(model.params[name].data)
        shape = "x".join(str(s) for s in model.params[name].shape) or "scalar"
        lines.append(f"tensor {name} {offset} {shape}")
        blobs.append(blob)
        offset += len(blob)
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fp:
        fp.write(CKPT_MAGIC + struct.pack("<Q", len(manifest)) + manifest)
        for b in blobs:
            fp.write(b)


def load_checkpoint(path: str | Path) -> tuple[TransporterModel, dict[str, str]]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise tensorio.FormatError(f"{path}: not a checkpoint (bad magic)", 0)
    if len(raw) < 12:
        raise tensorio.FormatError(f"{path}: truncated header", 4)
    (mlen,) = struct.unpack("<Q", raw[4:12])
    base = 12 + mlen
    if base > len(raw):
        raise tensorio.FormatError(f"{path}: truncated manifest", 12)
    cfg, meta, tensors = {}, {}, []
    for ln, line in enumerate(raw[12:base].decode("utf-8").splitlines(), 1):
        kind, _, rest = line.partition(" ")
        if kind == "config":
            k, _, v = rest.partition("=")
            cfg[k] = v
        elif kind == "meta":
            k, _, v = rest.partition("=")
            meta[k] = v
        elif kind == "tensor":
            name, off, shape = rest.split(" ")
            tensors.append((name, int(off), shape))
        else:
            raise tensorio.FormatError(f"{path}: manifest line {ln} unreadable: {line!r}")
    seed = int(cfg.pop("seed", 0))
    model = TransporterModel(ModelConfig.from_dict(cfg), seed)
    names = set()
    for name, off, shape in tensors:
        if name not in model.params:
            raise tensorio.FormatError(f"{path}: unknown parameter {name}")
        a = tensorio.read_tensor(io.BytesIO(raw[base + off:]))
        if a.shape != model.params[name].shape:
            raise tensorio.FormatError(f"{path}: parameter {name} has shape {a.shape}, "
                                       f"model expects {model.params[name].shape}", base + off)
        model.params[name].data = a.astype(model.dtype)
        names.add(name)
    missing = set(model.params) - names
    if missing:
        raise tensorio.FormatError(f"{path}: missing parameters {sorted(missing)}")
    return model, meta
