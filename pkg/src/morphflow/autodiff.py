"""Minimal reverse-mode automatic differentiation over dense NumPy arrays.

A Tape records operations in creation order (parents always precede
children); backward is a single reversed sweep. Ops only record while a
tape is active, so inference runs tape-free with no memory growth.
Training tensors are float32 by convention; the engine itself is dtype
agnostic, which lets the gradient tests run in float64 against central
finite differences.

Windowed min/max route cotangents to the recorded arg positions (first
scan-order index on ties); the bilinear shift distributes to its four
corner weights and to the shift itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

_TAPES: list["Tape"] = []


class Tensor:
    """Dense array plus an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Append-only operation record; creation order is topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self, "tapes must nest"
        return False

    def backward(self, loss: Tensor):
        """Reverse sweep from a scalar loss; leaf grads land on .grad."""
        if loss.size != 1:
            raise ValueError("backward expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            for parent, dg in zip(node.parents, node.vjp(g)):
                if dg is None or not parent.requires_grad:
                    continue
                parent.grad = dg if parent.grad is None else parent.grad + dg


def _record(out: Tensor, parents: tuple, vjp):
    if _TAPES and out.requires_grad:
        _TAPES[-1].nodes.append(_Node(out, parents, vjp))


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the parent shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    _record(out, (a, b), vjp)
    return out


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    _record(out, (a, b), vjp)
    return out


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    _record(out, (a, b), vjp)
    return out


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)
    out = Tensor(a.data / b.data, a.requires_grad or b.requires_grad)

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    _record(out, (a, b), vjp)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, a.requires_grad)
    _record(out, (a,), lambda g: (-g,))
    return out


def pow_const(a: Tensor, p: float) -> Tensor:
    out = Tensor(a.data ** p, a.requires_grad)

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    _record(out, (a,), vjp)
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, a.requires_grad)
    _record(out, (a,), lambda g: (g * y,))
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), a.requires_grad)
    _record(out, (a,), lambda g: (g / a.data,))
    return out


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = Tensor(y, a.requires_grad)
    _record(out, (a,), lambda g: (g / (2.0 * y),))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Large negative x overflows exp harmlessly (inf -> 0 after division).
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    out = Tensor(y, a.requires_grad)
    _record(out, (a,), lambda g: (g * y * (1.0 - y),))
    return out


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = Tensor(a.data * s, a.requires_grad)

    def vjp(g):
        return (g * s * (1.0 + a.data * (1.0 - s)),)

    _record(out, (a,), vjp)
    return out


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(np.asarray(0.0, dtype=a.dtype), a.data), a.requires_grad)

    def vjp(g):
        return (g * _sigmoid(a.data),)

    _record(out, (a,), vjp)
    return out


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).astype(a.dtype, copy=False),)

    _record(out, (a,), vjp)
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), a.requires_grad)

    def vjp(g):
        gg = g / a.dtype.type(count)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.shape).astype(a.dtype, copy=False),)

    _record(out, (a,), vjp)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), a.requires_grad)
    _record(out, (a,), lambda g: (g.reshape(a.shape),))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    out = Tensor(a.data.transpose(axes), a.requires_grad)
    inv = np.argsort(axes)
    _record(out, (a,), lambda g: (g.transpose(inv),))
    return out


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis),
                 any(t.requires_grad for t in tensors))
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    _record(out, tuple(tensors), vjp)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    _record(out, (a, b), vjp)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, a.requires_grad)

    def vjp(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    _record(out, (a,), vjp)
    return out


# ---------------------------------------------------------------------------
# structured ops


def _pad2d(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return x
    spec = ((0, 0), (0, 0), (p, p), (p, p))
    return np.pad(x, spec, mode="wrap" if mode == "periodic" else "constant")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    v = v[:, :, ::stride, ::stride]
    B, C, Ho, Wo = v.shape[:4]
    return np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5)).reshape(B, Ho, Wo, C * kh * kw)


def _fold_wrap(buf: np.ndarray, p: int, H: int, W: int) -> np.ndarray:
    if p == 0:
        return buf
    mid = buf[:, :, :, p:p + W].copy()
    mid[:, :, :, W - p:] += buf[:, :, :, :p]
    mid[:, :, :, :p] += buf[:, :, :, p + W:]
    core = mid[:, :, p:p + H, :].copy()
    core[:, :, H - p:, :] += mid[:, :, :p, :]
    core[:, :, :p, :] += mid[:, :, p + H:, :]
    return core


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: str = "periodic") -> Tensor:
    """2-D convolution (cross-correlation), same-size output for stride 1.

    x is (B, Cin, H, W); w is (Cout, Cin, kh, kw) with odd kernels; the
    optional bias is (Cout,) and is folded in before the layout transpose.
    Periodic padding keeps the op exactly shift-equivariant; zero padding
    is available for parity with ordinary U-Nets.
    """
    B, Cin, H, W = x.shape
    Cout, Cin2, kh, kw = w.shape
    if Cin != Cin2:
        raise ValueError(f"conv2d channel mismatch: input {Cin}, weight {Cin2}")
    if kh != kw or kh % 2 == 0:
        raise ValueError("conv2d expects square odd kernels")
    if padding not in ("periodic", "zero"):
        raise ValueError(f"unknown padding {padding!r}")
    p = (kh - 1) // 2
    xp = _pad2d(x.data, p, padding)
    cols = _im2col(xp, kh, kw, stride)
    wmat = w.data.reshape(Cout, Cin * kh * kw)
    y = cols @ wmat.T
    if bias is not None:
        y += bias.data
    grad_needed = (x.requires_grad or w.requires_grad
                   or (bias is not None and bias.requires_grad))
    out = Tensor(np.ascontiguousarray(y.transpose(0, 3, 1, 2)), grad_needed)
    Ho, Wo = y.shape[1], y.shape[2]

    def vjp(g):
        gperm = g.transpose(0, 2, 3, 1)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(gperm, cols, axes=([0, 1, 2], [0, 1, 2]))
            gw = gw.reshape(Cout, Cin, kh, kw)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = (gperm @ wmat).reshape(B, Ho, Wo, Cin, kh, kw)
            gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
            buf = np.zeros_like(xp)
            for dy in range(kh):
                ys = slice(dy, dy + (Ho - 1) * stride + 1, stride)
                for dx in range(kw):
                    xs = slice(dx, dx + (Wo - 1) * stride + 1, stride)
                    buf[:, :, ys, xs] += gcols[:, :, :, :, dy, dx]
            if padding == "periodic":
                gx = _fold_wrap(buf, p, H, W)
            else:
                gx = buf[:, :, p:p + H, p:p + W] if p else buf
        if bias is None:
            return gx, gw
        return gx, gw, gb

    _record(out, (x, w) if bias is None else (x, w, bias), vjp)
    return out


def upsample_nearest2x(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    out = Tensor(x.data.repeat(2, axis=2).repeat(2, axis=3), x.requires_grad)

    def vjp(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    _record(out, (x,), vjp)
    return out


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               num_groups: int = 1, eps: float = 1e-5) -> Tensor:
    """Normalize per (sample, group) over channels-within-group and space.

    Built from differentiable primitives, so its gradient is exact by
    construction. num_groups=1 normalizes over all of (C, H, W), which
    keeps the op equivariant under arbitrary channel permutations.
    """
    B, C, H, W = x.shape
    if C % num_groups != 0:
        raise ValueError("channels must divide evenly into groups")
    xg = reshape(x, (B, num_groups, (C // num_groups) * H * W))
    mu = mean(xg, axis=2, keepdims=True)
    xc = sub(xg, mu)
    var = mean(mul(xc, xc), axis=2, keepdims=True)
    xn = div(xc, sqrt(add(var, np.asarray(eps, dtype=x.dtype))))
    xn = reshape(xn, (B, C, H, W))
    return add(mul(xn, reshape(gamma, (1, C, 1, 1))), reshape(beta, (1, C, 1, 1)))


def window_min(x: Tensor, pen: Tensor) -> Tensor:
    """Trainable windowed min: out = min over offsets of x(y) + pen(offset).

    x is (B, C, H, W), pen (C, K, K). Backward routes the cotangent to the
    argmin position and to the penalty entry that won (first scan-order
    index on ties).
    """
    return _window_reduce(x, pen, kernels.window_min)


def window_max(x: Tensor, pen: Tensor) -> Tensor:
    """Trainable windowed max: out = max over offsets of x(y) + pen(offset)."""
    return _window_reduce(x, pen, kernels.window_max)


def _window_reduce(x: Tensor, pen: Tensor, kernel) -> Tensor:
    B, C, H, W = x.shape
    if pen.shape[0] != C:
        raise ValueError("penalty table needs one slice per channel")
    stack = np.ascontiguousarray(x.data.reshape(B * C, H, W))
    pend = np.ascontiguousarray(pen.data.astype(x.dtype, copy=False))
    idx = np.tile(np.arange(C, dtype=np.int64), B)
    vals, arg = kernel(stack, pend, idx)
    out = Tensor(vals.reshape(B, C, H, W), x.requires_grad or pen.requires_grad)
    K = pend.shape[1]

    def vjp(g):
        df, dpen = kernels.window_reduce_backward(
            np.ascontiguousarray(g.reshape(B * C, H, W)), arg, idx, K, C)
        return (df.reshape(B, C, H, W),
                dpen.astype(pen.dtype, copy=False))

    _record(out, (x, pen), vjp)
    return out


def convect(x: Tensor, vel: Tensor, time: float = 1.0) -> Tensor:
    """Per-channel transport by bilinear periodic shift; trainable velocity.

    x is (B, C, H, W); vel is (C, 2) in (rows, cols) order. The output at
    pixel p samples the input at p - time * vel[c].
    """
    B, C, H, W = x.shape
    if vel.shape != (C, 2):
        raise ValueError("velocity must be (channels, 2)")
    stack = np.ascontiguousarray(x.data.reshape(B * C, H, W))
    sy = np.ascontiguousarray(np.tile((time * vel.data[:, 0]).astype(x.dtype), B))
    sx = np.ascontiguousarray(np.tile((time * vel.data[:, 1]).astype(x.dtype), B))
    out = Tensor(kernels.shift_bilinear(stack, sy, sx).reshape(B, C, H, W),
                 x.requires_grad or vel.requires_grad)

    def vjp(g):
        df, dsy, dsx = kernels.shift_bilinear_backward(
            np.ascontiguousarray(g.reshape(B * C, H, W)), stack, sy, sx)
        dvel = None
        if vel.requires_grad:
            dvel = np.stack([dsy.reshape(B, C).sum(axis=0),
                             dsx.reshape(B, C).sum(axis=0)], axis=1)
            dvel = (time * dvel).astype(vel.dtype, copy=False)
        return df.reshape(B, C, H, W), dvel

    _record(out, (x, vel), vjp)
    return out


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict
    v: dict
    step: int = 0

    @staticmethod
    def init(params: dict) -> "AdamState":
        return AdamState(m={k: np.zeros_like(p.data) for k, p in params.items()},
                         v={k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
    """One Adam update with bias correction; mutates params and state in place.

    Missing gradients count as zero (detached parameters are legal);
    non-finite gradients abort with the offending parameter named.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def ema_update(shadow: dict, params: dict, decay: float):
    """shadow <- decay * shadow + (1 - decay) * params, in place."""
    for name, p in params.items():
        s = shadow[name]
        s *= decay
        s += (1.0 - decay) * p.data
