"""Small reverse-mode autodiff over numpy arrays.

Only the operations needed by the loss network, the attention subnet and the
transformation network are provided. Activations follow the (batch, channels,
height, width) layout; reductions return ``(1, 1, 1, 1)`` tensors so every
value stays 4-D.

Values default to float32. Float64 input is kept as float64 so gradient checks
can run at double precision.
"""

from __future__ import annotations

import warnings
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "GradientMap",
    "backward",
    "finite_diff_gradient",
    "conv2d",
    "conv_transpose2d",
    "relu",
    "sigmoid",
    "tanh",
    "scaled_tanh",
    "max_pool2d",
    "avg_pool2d",
    "add",
    "sub",
    "mul",
    "square",
    "sum_all",
    "gram",
    "concat",
    "reflect_pad",
    "crop",
    "select_batch",
    "batch_norm",
    "dropout",
]


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if isinstance(value, np.ndarray) and arr.dtype == np.float64:
        return arr
    return arr.astype(np.float32, copy=False)


class Tensor:
    """Immutable array value with an optional link to the op that produced it."""

    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = _as_array(data).view()
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def _from_op(cls, data, parents, backward_fn, op: str) -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = tuple(parents)
            out.backward_fn = backward_fn
            out.op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)


def _raise_item(shape):
    raise ValueError(f"item() needs a single-element tensor, got shape {shape}")


def _wrap(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(_as_array(value, dtype))


class GradientMap(dict):
    """Mapping leaf tensor -> gradient array; ``disconnected`` lists leaves the loss never reached."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.disconnected: list[Tensor] = []


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, leaves: Iterable[Tensor]) -> GradientMap:
    """Reverse-mode gradients of a scalar ``loss`` with respect to ``leaves``.

    Each node of the tape is visited once, in reverse topological order. Leaves
    the loss does not depend on get a zero gradient and are listed in
    ``GradientMap.disconnected``; a ``RuntimeWarning`` is emitted for them.
    """
    leaves = list(leaves)
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss of shape (1, 1, 1, 1), got {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topo_order(loss)):
            g = grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
            if node.parents:
                del grads[id(node)]
    out = GradientMap()
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            out.disconnected.append(leaf)
            g = np.zeros_like(leaf.data)
        elif not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for leaf {leaf!r}")
        out[leaf] = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    if out.disconnected:
        names = ", ".join(repr(t) for t in out.disconnected)
        warnings.warn(f"leaves not connected to the loss: {names}", RuntimeWarning, stacklevel=2)
    return out


def finite_diff_gradient(objective: Callable[[np.ndarray], float], x, epsilon: float = 1e-3) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = float(objective(x))
        flat[i] = orig - epsilon
        fm = float(objective(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * epsilon)
    return grad


# ---------------------------------------------------------------- elementwise


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    """Pointwise product; a single-channel operand broadcasts over channels."""
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), bw, "mul")


def square(x: Tensor) -> Tensor:
    def bw(g):
        return (2.0 * x.data * g,)

    return Tensor._from_op(x.data * x.data, (x,), bw, "square")


def sum_all(x: Tensor) -> Tensor:
    def bw(g):
        return (np.broadcast_to(g.reshape(()), x.shape).astype(x.dtype),)

    total = x.data.sum(dtype=np.float64).astype(x.dtype)
    return Tensor._from_op(total.reshape(1, 1, 1, 1), (x,), bw, "sum")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), bw, "relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def bw(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (x,), bw, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return Tensor._from_op(out, (x,), bw, "tanh")


def scaled_tanh(x: Tensor) -> Tensor:
    """127.5 * (tanh(x) + 1): maps the reals into [0, 255]."""
    t = np.tanh(x.data)
    out = (127.5 * (t + 1.0)).astype(x.dtype)

    def bw(g):
        return (g * 127.5 * (1.0 - t * t),)

    return Tensor._from_op(out, (x,), bw, "scaled_tanh")


# ---------------------------------------------------------------- convolution


def _check_conv_shapes(x: Tensor, w: Tensor, in_axis: int, op: str) -> None:
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"{op}: expected 4-D input and kernel, got input {x.shape} and kernel {w.shape}")
    if w.shape[in_axis] != x.shape[1]:
        raise ValueError(
            f"{op}: kernel {w.shape} expects {w.shape[in_axis]} input channels, input {x.shape} has {x.shape[1]}"
        )


def _pad(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) view, no copy
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    return win


def _col2im(cols: np.ndarray, out_shape, stride: int) -> np.ndarray:
    """Scatter-add (N, C, Ho, Wo, kh, kw) patches back into an (N, C, H, W) array."""
    n, c, ho, wo, kh, kw = cols.shape
    out = np.zeros(out_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, :, :, i, j]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip). Kernel layout is (out, in, kh, kw)."""
    _check_conv_shapes(x, w, 1, "conv2d")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride {stride} / padding {padding}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d: input {x.shape} too small for kernel {w.shape} with padding {padding}")
    xp = _pad(x.data, padding)
    win = _windows(xp, kh, kw, stride)[:, :, :ho, :wo]
    # (N, Ho, Wo, O)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))
    if b is not None:
        out = out + b.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            # (N, Ho, Wo, C, kh, kw) -> (N, C, Ho, Wo, kh, kw)
            cols = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
            gxp = _col2im(cols, xp.shape, stride)
            gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, bw, "conv2d")


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of ``conv2d`` with respect to its input. Kernel layout is (in, out, kh, kw)."""
    _check_conv_shapes(x, w, 0, "conv_transpose2d")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv_transpose2d: bad stride {stride} / padding {padding}")
    n, c, h, wd = x.shape
    _, o, kh, kw = w.shape
    hf = (h - 1) * stride + kh
    wf = (wd - 1) * stride + kw
    ho, wo = hf - 2 * padding, wf - 2 * padding
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv_transpose2d: input {x.shape} with kernel {w.shape} gives empty output")
    cols = np.tensordot(x.data, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    full = _col2im(cols, (n, o, hf, wf), stride)
    out = full[:, :, padding : padding + ho, padding : padding + wo]
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def bw(g):
        gx = gw = gb = None
        gfull = _pad(g, padding)
        win = _windows(gfull, kh, kw, stride)[:, :, :h, :wd]
        if x.requires_grad:
            # (N, H, W, C_in) from windows (N, O, H, W, kh, kw) . w (C_in, O, kh, kw)
            gx = np.ascontiguousarray(np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
        if w.requires_grad:
            gw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, bw, "conv_transpose2d")


# ---------------------------------------------------------------- pooling


def max_pool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Window maximum. Ties go to the lowest flat index inside the window."""
    stride = window if stride is None else stride
    n, c, h, wd = x.shape
    if window > h or window > wd:
        raise ValueError(f"max_pool2d: window {window} larger than input {x.shape}")
    ho = (h - window) // stride + 1
    wo = (wd - window) // stride + 1
    win = _windows(x.data, window, window, stride)[:, :, :ho, :wo].reshape(n, c, ho, wo, window * window)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        cols = np.zeros((n, c, ho, wo, window * window), dtype=g.dtype)
        np.put_along_axis(cols, arg[..., None], g[..., None], axis=-1)
        cols = cols.reshape(n, c, ho, wo, window, window)
        return (_col2im(cols, x.shape, stride),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), bw, "max_pool2d")


def avg_pool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    stride = window if stride is None else stride
    n, c, h, wd = x.shape
    if window > h or window > wd:
        raise ValueError(f"avg_pool2d: window {window} larger than input {x.shape}")
    ho = (h - window) // stride + 1
    wo = (wd - window) // stride + 1
    win = _windows(x.data, window, window, stride)[:, :, :ho, :wo]
    out = win.mean(axis=(4, 5)).astype(x.dtype)
    scale = 1.0 / (window * window)

    def bw(g):
        cols = np.broadcast_to((g * scale)[..., None, None], (n, c, ho, wo, window, window))
        return (_col2im(cols, x.shape, stride),)

    return Tensor._from_op(out, (x,), bw, "avg_pool2d")


# ---------------------------------------------------------------- structure


def gram(features: Tensor) -> Tensor:
    """Un-normalized Gram matrix F F^T of a (1, N, H, W) map, returned as (1, 1, N, N)."""
    if features.data.ndim != 4 or features.shape[0] != 1:
        raise ValueError(f"gram: expected a single (1, N, H, W) map, got {features.shape}")
    _, nc, h, wd = features.shape
    f = features.data.reshape(nc, h * wd)
    out = (f @ f.T).reshape(1, 1, nc, nc)

    def bw(g):
        g2 = g.reshape(nc, nc)
        return (((g2 + g2.T) @ f).reshape(features.shape),)

    return Tensor._from_op(out, (features,), bw, "gram")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(out, tuple(tensors), bw, "concat")


def reflect_pad(x: Tensor, p: int | tuple[int, int, int, int]) -> Tensor:
    """Reflection padding on the spatial axes; ``p`` is an int or (top, bottom, left, right)."""
    top, bottom, left, right = (p, p, p, p) if isinstance(p, int) else p
    if top == bottom == left == right == 0:
        return x
    h, wd = x.shape[2:]
    out = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)), mode="reflect")
    # source row/column index of each padded position
    rows = np.pad(np.arange(h), (top, bottom), mode="reflect")
    cols = np.pad(np.arange(wd), (left, right), mode="reflect")

    def bw(g):
        gr = np.zeros(g.shape[:2] + (h, g.shape[3]), dtype=g.dtype)
        np.add.at(gr, (slice(None), slice(None), rows), g)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), slice(None), cols), gr)
        return (gx,)

    return Tensor._from_op(out, (x,), bw, "reflect_pad")


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    out = x.data[:, :, top : top + height, left : left + width]

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, top : top + height, left : left + width] = g
        return (gx,)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), bw, "crop")


def select_batch(x: Tensor, index: int) -> Tensor:
    """Item ``index`` of the batch, kept 4-D."""
    out = x.data[index : index + 1]

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[index : index + 1] = g
        return (gx,)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), bw, "select_batch")


# ---------------------------------------------------------------- normalization / regularization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Spatial batch normalization.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place; otherwise the stored statistics are
    used and nothing changes.
    """
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.data.size // x.shape[1]
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    out = (xhat * gamma.data.reshape(1, -1, 1, 1) + beta.data.reshape(1, -1, 1, 1)).astype(x.dtype)

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(1, -1, 1, 1)
        if training:
            m = x.data.size // x.shape[1]
            gx = (
                inv.reshape(1, -1, 1, 1)
                / m
                * (m * gxhat - gxhat.sum(axis=axes, keepdims=True) - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
            )
        else:
            gx = gxhat * inv.reshape(1, -1, 1, 1)
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), bw, "batch_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def bw(g):
        return (g * keep,)

    return Tensor._from_op(x.data * keep, (x,), bw, "dropout")
