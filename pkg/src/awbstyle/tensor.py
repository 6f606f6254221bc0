"""Dense-tensor core with reverse-mode differentiation.

Design notes:
  * data lives in numpy arrays; float32 is the training dtype, float64 is
    used by the gradient checks (ops preserve the dtype of their inputs);
  * each op records a closure that scatters the upstream gradient into its
    parents' `.grad` buffers; `backward` walks the tape in reverse
    topological order, which is deterministic because graph construction
    order is deterministic;
  * graph recording is skipped entirely when no input requires gradients or
    inside a `no_grad()` block, so inference carries no autograd overhead.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError, NumericError

_GRAD_ENABLED = True
_ANOMALY_CHECK = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def anomaly_check():
    """Raise NumericError as soon as any op produces a NaN/Inf."""
    global _ANOMALY_CHECK
    prev = _ANOMALY_CHECK
    _ANOMALY_CHECK = True
    try:
        yield
    finally:
        _ANOMALY_CHECK = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: Tuple["Tensor", ...] = ()
        self._backward_fn: Optional[Callable[[np.ndarray], None]] = None

    # -- introspection ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __neg__(self):
        return neg(self)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording the tape edge when gradients are live."""
    if _ANOMALY_CHECK and not np.all(np.isfinite(data)):
        raise NumericError("op produced non-finite values")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        a.accumulate_grad(-g)

    return _make(-a.data, (a,), bwd)


def power(a: Tensor, p: float) -> Tensor:
    out = a.data**p

    def bwd(g):
        a.accumulate_grad(g * p * a.data ** (p - 1.0))

    return _make(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        a.accumulate_grad(g * out)

    return _make(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        a.accumulate_grad(g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    """Numerically stable log(1 + exp(x))."""
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        a.accumulate_grad(g / (1.0 + np.exp(-x)))

    return _make(out, (a,), bwd)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    """Elementwise max(x, slope*x); subgradient at 0 taken as slope."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must be in [0, 1), got {slope}")
    x = a.data
    mask = x > 0
    out = np.where(mask, x, slope * x)

    def bwd(g):
        a.accumulate_grad(g * np.where(mask, np.asarray(1.0, x.dtype), np.asarray(slope, x.dtype)))

    return _make(out.astype(x.dtype, copy=False), (a,), bwd)


# -- reductions / shape ops ---------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(gg, a.data.shape).copy())

    return _make(np.asarray(out, dtype=a.dtype), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for i in ax:
            n *= a.data.shape[i]
    return tsum(a, axis=axis, keepdims=keepdims) * float(1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        a.accumulate_grad(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along `axis`."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a.accumulate_grad(full)

    return _make(a.data[idx].copy(), (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        t = tensors[0]

        def bwd_one(g):
            t.accumulate_grad(g)

        return _make(t.data.copy(), (t,), bwd_one)
    base = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(base) or any(s[i] != base[i] for i in range(len(base)) if i != axis):
            raise DimensionError(f"concat: incompatible shapes {base} vs {s} along axis {axis}")
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bwd(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            if t.requires_grad:
                t.accumulate_grad(g[tuple(idx)])
            offset += n

    return _make(out, tuple(tensors), bwd)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis, input order preserved."""
    return concat(xs, axis=1)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: inner dims disagree {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _make(out, (a, b), bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """out = x @ weight.T + bias for x (N,F), weight (G,F), bias (G,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError("linear expects 2-D input and weight")
    if x.data.shape[1] != weight.data.shape[1]:
        raise DimensionError(
            f"linear: feature dims disagree, input {x.data.shape} vs weight {weight.data.shape}"
        )
    if bias.data.shape != (weight.data.shape[0],):
        raise DimensionError("linear: bias shape must be (out_features,)")
    out = x.data @ weight.data.T + bias.data

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data)
        if weight.requires_grad:
            weight.accumulate_grad(g.T @ x.data)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    return _make(out, (x, weight, bias), bwd)


# -- convolution --------------------------------------------------------------

def _conv_out_dim(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N,C,H,W) -> (N, C*kh*kw, out_h*out_w) patch matrix."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = _conv_out_dim(h, kh, stride, pad)
    ow = _conv_out_dim(w, kw, stride, pad)
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(n, c * kh * kw, oh * ow)


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh = _conv_out_dim(h, kh, stride, pad)
    ow = _conv_out_dim(w, kw, stride, pad)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
    if pad:
        return dxp[:, :, pad : pad + h, pad : pad + w]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW input with OIkk weight and O bias."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv2d expects NCHW input and OIkk weight")
    n, c, h, w = x.data.shape
    o, i, kh, kw = weight.data.shape
    if c != i:
        raise DimensionError(f"conv2d: input channels {c} != weight channels {i}")
    if bias.data.shape != (o,):
        raise DimensionError("conv2d: bias shape must be (out_channels,)")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d: stride must be >= 1 and pad >= 0")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise DimensionError("conv2d: kernel larger than padded input")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("conv2d: non-finite input")

    cols = _im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(o, -1)
    out = np.matmul(wmat, cols) + bias.data[:, None]
    oh = _conv_out_dim(h, kh, stride, pad)
    ow = _conv_out_dim(w, kw, stride, pad)
    out = out.reshape(n, o, oh, ow)

    def bwd(g):
        gmat = g.reshape(n, o, oh * ow)
        if bias.requires_grad:
            bias.accumulate_grad(gmat.sum(axis=(0, 2)))
        if weight.requires_grad:
            gw = np.tensordot(gmat, cols, axes=([0, 2], [0, 2]))
            weight.accumulate_grad(gw.reshape(weight.data.shape))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gmat)
            x.accumulate_grad(_col2im(dcols, x.data.shape, kh, kw, stride, pad))

    return _make(out, (x, weight, bias), bwd)


# -- resampling ---------------------------------------------------------------

def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-stochastic (n_out, n_in) bilinear sampling matrix (half-pixel centers)."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling of NCHW maps (half-pixel-center convention)."""
    if out_h < 1 or out_w < 1:
        raise ValueError("bilinear_resize: output dims must be >= 1")
    n, c, h, w = x.data.shape
    if out_h == h and out_w == w:
        def bwd_id(g):
            x.accumulate_grad(g)

        return _make(x.data.copy(), (x,), bwd_id)

    ry = _resize_matrix(h, out_h, x.dtype)
    rx = _resize_matrix(w, out_w, x.dtype)
    tmp = np.tensordot(x.data, ry, axes=([2], [1]))  # (N,C,W,out_h)
    out = np.tensordot(tmp, rx, axes=([2], [1]))  # (N,C,out_h,out_w)

    def bwd(g):
        t = np.tensordot(g, rx, axes=([3], [0]))  # (N,C,out_h,W)
        dx = np.tensordot(t, ry, axes=([2], [0]))  # (N,C,W,H)
        x.accumulate_grad(np.ascontiguousarray(dx.transpose(0, 1, 3, 2)))

    return _make(np.ascontiguousarray(out), (x,), bwd)


# -- feature statistics -------------------------------------------------------

def instance_stats(x: Tensor, eps: float = 1e-5):
    """Per-(sample, channel) spatial mean and epsilon-padded population std.

    Returns `(mu, sigma)` with shape (N, C); sigma = sqrt(var + eps).
    """
    n, c, h, w = x.data.shape
    mu = tmean(x, axis=(2, 3))
    centered = sub(x, reshape(mu, (n, c, 1, 1)))
    var = tmean(power(centered, 2.0), axis=(2, 3))
    sigma = power(var + float(eps), 0.5)
    return mu, sigma


def adain(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Rescale per-channel spatial statistics of `x` to (gamma, beta)."""
    n, c = x.data.shape[0], x.data.shape[1]
    if gamma.data.shape != (n, c) or beta.data.shape != (n, c):
        raise DimensionError(
            f"adain: gamma/beta must be shaped {(n, c)}, got {gamma.data.shape} / {beta.data.shape}"
        )
    mu, sigma = instance_stats(x, eps=eps)
    normed = div(sub(x, reshape(mu, (n, c, 1, 1))), reshape(sigma, (n, c, 1, 1)))
    return add(mul(reshape(gamma, (n, c, 1, 1)), normed), reshape(beta, (n, c, 1, 1)))


# -- backward pass ------------------------------------------------------------

def _topo_order(root: Tensor):
    order = []
    visited = set()
    on_path = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            on_path.discard(id(node))
            order.append(node)
            continue
        if id(node) in on_path:
            raise NumericError("backward: cycle detected in op graph")
        if id(node) in visited:
            continue
        visited.add(id(node))
        on_path.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if not p.requires_grad:
                continue
            if id(p) in on_path:
                raise NumericError("backward: cycle detected in op graph")
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None):
    """Reverse-mode sweep from scalar `loss`; fills `.grad` of reachable tensors.

    When a ParamStore is passed, parameters the loss does not reach get
    zero-filled grads so the optimizer sees a complete gradient.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not require grad (no parameters reachable)")
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)
    if params is not None:
        for _, p in params.items():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# -- parameter store ----------------------------------------------------------

class ParamStore:
    """Named parameter tensors with deterministic (lexicographic) iteration."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self) -> Iterable[Tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self):
        for _, p in self.items():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.data.size for _, p in self.items())

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, p in self.items():
            out.add(name, Tensor(p.data.astype(dtype), requires_grad=True))
        return out
