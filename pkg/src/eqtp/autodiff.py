"""Small reverse-mode autodiff over dense numpy arrays.

Only what the pick/place networks need. Every op keeps the dtype of its
inputs so the same graph can be evaluated in float64 for gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernels import _padding, correlate_arrays, im2col


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Callable | None = None, op: str = "leaf", name: str = ""):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor({self.op}, shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def zero_grad(self):
        self.grad = None


def tensor(data, requires_grad: bool = False, dtype=None, name: str = "") -> Tensor:
    a = np.array(data, dtype=dtype if dtype is not None else None)
    if dtype is None and not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float32)
    return Tensor(a, requires_grad=requires_grad, name=name)


def _node(data, parents, backward_fn, op) -> Tensor:
    return Tensor(data, parents=tuple(parents), backward_fn=backward_fn, op=op)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.data.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match {t.op} output {t.data.shape}")
    t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that requires it."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.parents:
            if id(p) not in seen:
                stack.append((p, False))
    for t in order:
        if t.parents:
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for t in reversed(order):
        if t.backward_fn is not None and t.grad is not None:
            t.backward_fn(t.grad)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)
    return _node(a.data + b.data, (a, b), bw, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")

    def bw(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)
    return _node(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    return _node(a.data * a.data.dtype.type(s), (a,), lambda g: _accumulate(a, g * s), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                 lambda g: _accumulate(x, g * mask), "relu")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x: (B, C, H, W) or (B, C); b: (C,)."""
    if x.shape[1] != b.shape[0] or b.data.ndim != 1:
        raise ShapeError(f"add_bias: input {x.shape} vs bias {b.shape}")
    view = (1, -1) + (1,) * (x.data.ndim - 2)
    axes = tuple(i for i in range(x.data.ndim) if i != 1)

    def bw(g):
        _accumulate(x, g)
        _accumulate(b, g.sum(axis=axes))
    return _node(x.data + b.data.reshape(view), (x, b), bw, "add_bias")


def total(x: Tensor) -> Tensor:
    return _node(x.data.sum(keepdims=False).reshape(()), (x,),
                 lambda g: _accumulate(x, np.broadcast_to(g, x.shape)), "sum")


def spatial_mean(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    if x.data.ndim != 4:
        raise ShapeError(f"spatial_mean expects 4-D input, got {x.shape}")
    H, W = x.shape[2:]

    def bw(g):
        _accumulate(x, np.broadcast_to(g[:, :, None, None] / (H * W), x.shape))
    return _node(x.data.mean(axis=(2, 3)), (x,), bw, "spatial_mean")


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: _accumulate(x, g.reshape(x.shape)), "reshape")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    ref = xs[0].shape
    for t in xs:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}")
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def bw(g):
        for t, part in zip(xs, np.split(g, sizes, axis=axis)):
            _accumulate(t, part)
    return _node(np.concatenate([t.data for t in xs], axis=axis), xs, bw, "concat")


def linear_map(x: Tensor, fwd: Callable, adj: Callable, op: str = "linear") -> Tensor:
    """y = fwd(x) for a fixed linear map with adjoint ``adj``."""
    return _node(fwd(x.data), (x,), lambda g: _accumulate(x, adj(g)), op)


# ---------------------------------------------------------------------------
# convolution / pooling / resampling


def conv2d(x: Tensor, w: Tensor, padding="same") -> Tensor:
    """Batched cross-correlation. x: (B, C, H, W), w: (O, C, k, k)."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    k = w.shape[-1]
    p = _padding(padding, k)
    cols, (Ho, Wo) = im2col(x.data, k, p)
    O = w.shape[0]
    y = np.matmul(w.data.reshape(O, -1), cols).reshape(x.shape[0], O, Ho, Wo)

    def bw(g):
        if w.requires_grad:
            gm = g.reshape(g.shape[0], O, -1)
            _accumulate(w, np.matmul(gm, np.swapaxes(cols, 1, 2)).sum(axis=0).reshape(w.shape))
        if x.requires_grad:
            wt = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            _accumulate(x, correlate_arrays(g, wt, k - 1 - p))
    return _node(y, (x, w), bw, "conv2d")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2; ties go to the lowest flat index in the window."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2 needs even spatial size, got {x.shape}")
    blocks = x.data.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    idx = np.argmax(blocks, axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], -1)[..., 0]

    def bw(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], -1)
        _accumulate(x, gb.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W))
    return _node(y, (x,), bw, "maxpool2")


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    U = np.zeros((2 * n, n), dtype=dtype)
    for i in range(n):
        U[2 * i, i] += 0.75
        U[2 * i, max(i - 1, 0)] += 0.25
        U[2 * i + 1, i] += 0.75
        U[2 * i + 1, min(i + 1, n - 1)] += 0.25
    return U


def upsample2(x: Tensor) -> Tensor:
    """Bilinear x2 upsampling with half-pixel centres and edge clamping."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2 expects 4-D input, got {x.shape}")
    Uh = _upsample_matrix(x.shape[2], x.dtype)
    Uw = _upsample_matrix(x.shape[3], x.dtype)
    y = np.einsum("ih,bchw,jw->bcij", Uh, x.data, Uw, optimize=True)
    return _node(y, (x,), lambda g: _accumulate(x, np.einsum("ih,bcij,jw->bchw", Uh, g, Uw, optimize=True)),
                 "upsample2")


def fft_correlate(K: Tensor, x: Tensor) -> Tensor:
    """Valid cross-correlation of per-sample kernel stacks with feature maps.

    K: (B, N, D, kh, kw), x: (B, D, H, W) -> (B, N, H-kh+1, W-kw+1).
    Evaluated with real FFTs in float64 (no wrap-around: the transform size
    equals the input size, which covers every valid offset).
    """
    if K.data.ndim != 5 or x.data.ndim != 4 or K.shape[0] != x.shape[0] or K.shape[2] != x.shape[1]:
        raise ShapeError(f"fft_correlate: kernels {K.shape} incompatible with input {x.shape}")
    B, N, D, kh, kw = K.shape
    H, W = x.shape[2:]
    if kh > H or kw > W:
        raise ShapeError(f"fft_correlate: kernel {kh}x{kw} larger than input {H}x{W}")
    Ho, Wo = H - kh + 1, W - kw + 1
    s = (H, W)
    X = np.fft.rfft2(x.data.astype(np.float64), s)                    # (B, D, H, W')
    Kf = np.fft.rfft2(K.data.astype(np.float64), s)                   # (B, N, D, H, W')
    Y = np.einsum("bdhw,bndhw->bnhw", X, np.conj(Kf))
    y = np.fft.irfft2(Y, s)[:, :, :Ho, :Wo].astype(x.dtype)

    def bw(g):
        G = np.fft.rfft2(g.astype(np.float64), s)                      # (B, N, H, W')
        if K.requires_grad:
            dK = np.fft.irfft2(np.einsum("bdhw,bnhw->bndhw", X, np.conj(G)), s)[..., :kh, :kw]
            _accumulate(K, dK)
        if x.requires_grad:
            dx = np.fft.irfft2(np.einsum("bnhw,bndhw->bdhw", G, Kf), s)
            _accumulate(x, dx)
    return _node(y, (K, x), bw, "fft_correlate")


# ---------------------------------------------------------------------------
# loss


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax_ce(logits: Tensor, target) -> Tensor:
    """Mean cross-entropy of (B, M) logits against integer class targets
    or (B, M) one-hot / probability targets."""
    z = logits.data
    if z.ndim != 2:
        raise ShapeError(f"softmax_ce expects (batch, classes) logits, got {z.shape}")
    B, M = z.shape
    t = np.asarray(target)
    if t.ndim == 1:
        if t.shape[0] != B or t.min() < 0 or t.max() >= M:
            raise ShapeError(f"softmax_ce: targets {t} out of range for {z.shape}")
        onehot = np.zeros_like(z)
        onehot[np.arange(B), t.astype(int)] = 1
    else:
        if t.shape != z.shape:
            raise ShapeError(f"softmax_ce: target shape {t.shape} vs logits {z.shape}")
        onehot = t.astype(z.dtype)
    ls = log_softmax(z.astype(np.float64))
    loss = -(onehot * ls).sum() / B

    def bw(g):
        p = np.exp(ls)
        _accumulate(logits, (g * (p * onehot.sum(-1, keepdims=True) - onehot) / B))
    return _node(np.asarray(loss, dtype=z.dtype), (logits,), bw, "softmax_ce")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """In-place Adam update with bias correction; parameters without a grad are skipped."""
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for name in sorted(params):
        p = params[name]
        if p.grad is None:
            continue
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.data.shape:
            raise ShapeError(f"adam: moment shape {m.shape} does not match parameter {name} {p.data.shape}")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# gradient checking


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-3,
              samples: int | None = None, seed: int = 0) -> float:
    """Relative error between backprop and central differences.

    ``fn`` maps Tensors to a Tensor; a non-scalar output is reduced with a fixed
    random probe. Inputs are promoted to float64. With ``samples`` only that many
    randomly chosen entries per input are differenced. Returns
    ``max_i |g_bp - g_fd|_2 / max(|g_fd|_2, tiny)`` over the inputs.
    """
    rng = np.random.default_rng(seed)
    xs = [np.array(a, dtype=np.float64) for a in inputs]
    probe = None

    def scalar(arrs, track: bool):
        nonlocal probe
        ts = [Tensor(a, requires_grad=track) for a in arrs]
        out = fn(*ts)
        if probe is None:
            probe = rng.normal(size=out.shape) if out.data.size > 1 else np.ones(out.shape)
        return total(mul(out, Tensor(probe))), ts

    loss, ts = scalar(xs, True)
    backward(loss)
    worst = 0.0
    for k, (x, t) in enumerate(zip(xs, ts)):
        flat = x.ravel()
        idx = np.arange(flat.size) if samples is None or samples >= flat.size else \
            rng.choice(flat.size, samples, replace=False)
        g_bp = np.zeros(flat.size) if t.grad is None else t.grad.ravel()
        g_fd = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            hi = float(scalar(xs, False)[0].data)
            flat[i] = old - eps
            lo = float(scalar(xs, False)[0].data)
            flat[i] = old
            g_fd[j] = (hi - lo) / (2 * eps)
        err = np.linalg.norm(g_bp[idx] - g_fd) / max(np.linalg.norm(g_fd), 1e-300)
        worst = max(worst, float(err))
    return worst
