"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every op is a free function taking and returning :class:`Tensor`.  An op
computes its forward value eagerly and, when any input requires a
gradient, records a closure mapping the output gradient to one gradient
per parent.  ``Tensor.backward`` walks the graph in reverse topological
order and accumulates into ``.grad``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, NonFiniteError

SQRT_EPS = 1e-12


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        for axis, (m, n) in enumerate(zip(a.shape, b.shape)):
            if m != n:
                raise DimensionError(f"{op}: axis {axis} differs ({m} vs {n})")
        raise DimensionError(f"{op}: rank differs ({a.ndim} vs {b.ndim})")


# ----------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def sqrt_eps(a: Tensor, eps: float = SQRT_EPS) -> Tensor:
    """sqrt(x + eps); finite derivative at x = 0."""
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data + eps)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt_eps")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise DimensionError("mean: empty tensor")
    shape, n = a.shape, a.data.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),), "mean")


# ----------------------------------------------------------------- structural

def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_channels: nothing to concatenate")
    ref = parts[0].shape
    for t in parts[1:]:
        if t.ndim != len(ref):
            raise DimensionError(f"concat_channels: rank differs ({t.ndim} vs {len(ref)})")
        for axis in range(len(ref)):
            if axis != 1 and t.shape[axis] != ref[axis]:
                raise DimensionError(f"concat_channels: axis {axis} differs ({t.shape[axis]} vs {ref[axis]})")
    sizes = [t.shape[1] for t in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=1))

    return _make(np.concatenate([t.data for t in parts], axis=1), parts, backward, "concat")


def split_channels(a: Tensor, n: int) -> list[Tensor]:
    c = a.shape[1]
    if n <= 0 or c % n:
        raise ConfigurationError(f"split_channels: {c} channels not divisible into {n} groups")
    k = c // n
    return [channel_slice(a, i * k, (i + 1) * k) for i in range(n)]


def channel_slice(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _make(a.data[:, start:stop].copy(), (a,), backward, "channel_slice")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a: Tensor) -> Tensor:
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def _symmetric_index(n: int, before: int, after: int) -> np.ndarray:
    return np.pad(np.arange(n), (before, after), mode="symmetric")


def pad_symmetric(a: Tensor, bottom: int, right: int) -> Tensor:
    """Mirror-pad the last two axes at the bottom/right edge (edge sample repeated)."""
    if bottom == 0 and right == 0:
        return a
    h, w = a.shape[-2:]
    if bottom > h or right > w:
        raise ConfigurationError(f"pad_symmetric: padding ({bottom}, {right}) exceeds extent ({h}, {w})")
    iy = _symmetric_index(h, 0, bottom)
    ix = _symmetric_index(w, 0, right)
    out = a.data[..., iy, :][..., ix]

    def backward(g):
        gy = np.zeros(g.shape[:-2] + (h, g.shape[-1]))
        np.add.at(gy, (..., iy, slice(None)), g)
        gx = np.zeros(g.shape[:-2] + (h, w))
        np.add.at(gx, (..., ix), gy)
        return (gx,)

    return _make(out, (a,), backward, "pad_symmetric")


def crop(a: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left h x w region of the last two axes."""
    if (h, w) == a.shape[-2:]:
        return a
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[..., :h, :w] = g
        return (full,)

    return _make(a.data[..., :h, :w].copy(), (a,), backward, "crop")


def pixel_shuffle(a: Tensor, r: int) -> Tensor:
    if r <= 0:
        raise ConfigurationError(f"pixel_shuffle: factor must be positive, got {r}")
    b, c, h, w = a.shape
    if c % (r * r):
        raise ConfigurationError(f"pixel_shuffle: {c} channels not divisible by r^2 = {r * r}")
    co = c // (r * r)
    out = a.data.reshape(b, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, co, h * r, w * r)

    def backward(g):
        return (g.reshape(b, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c, h, w),)

    return _make(out, (a,), backward, "pixel_shuffle")


def pixel_unshuffle(a: Tensor, r: int) -> Tensor:
    if r <= 0:
        raise ConfigurationError(f"pixel_unshuffle: factor must be positive, got {r}")
    b, c, hh, ww = a.shape
    if hh % r or ww % r:
        raise ConfigurationError(f"pixel_unshuffle: spatial dims ({hh}, {ww}) not divisible by {r}")
    h, w = hh // r, ww // r
    out = a.data.reshape(b, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * r * r, h, w)

    def backward(g):
        return (g.reshape(b, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, hh, ww),)

    return _make(out, (a,), backward, "pixel_unshuffle")


# ----------------------------------------------------------------- linear algebra

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul: operands must have at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner axis differs ({a.shape[-1]} vs {b.shape[-2]})")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


def separable_resample(a: Tensor, rows: np.ndarray, cols: np.ndarray, lo: float | None = None,
                       hi: float | None = None) -> Tensor:
    """out = rows @ a @ cols.T over the last two axes, optionally clamped."""
    lin = rows @ a.data @ cols.T
    if lo is None and hi is None:
        out, mask = lin, None
    else:
        out = np.clip(lin, lo, hi)
        mask = out == lin

    def backward(g):
        if mask is not None:
            g = g * mask
        return (rows.T @ g @ cols,)

    return _make(out, (a,), backward, "resample")


# ----------------------------------------------------------------- nonlinear maps

def softmax(a: Tensor, axis: str = "spatial") -> Tensor:
    """Softmax over channels (axis 1) or over the flattened h*w positions of each channel."""
    if a.ndim != 4:
        raise DimensionError(f"softmax: expected (b, c, h, w), got rank {a.ndim}")
    b, c, h, w = a.shape
    if axis == "spatial":
        flat, red = a.data.reshape(b, c, h * w), 2
    elif axis == "channel":
        flat, red = a.data, 1
    else:
        raise ConfigurationError(f"softmax: unknown axis {axis!r}")
    if flat.shape[red] == 0:
        raise DimensionError(f"softmax: axis {axis!r} is empty")
    e = np.exp(flat - flat.max(axis=red, keepdims=True))
    y = e / e.sum(axis=red, keepdims=True)

    def backward(g):
        gf = g.reshape(y.shape)
        gi = y * (gf - (gf * y).sum(axis=red, keepdims=True))
        return (gi.reshape(b, c, h, w),)

    return _make(y.reshape(b, c, h, w), (a,), backward, f"softmax[{axis}]")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
           groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d: input must be (b, c, h, w), got rank {x.ndim}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d: weight must be (out, in/groups, kh, kw), got rank {weight.ndim}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ConfigurationError(f"conv2d: bad stride/padding/groups ({stride}, {padding}, {groups})")
    bsz, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"conv2d: kernel dims must be odd, got {kh}x{kw}")
    if cin % groups or cout % groups:
        raise ConfigurationError(f"conv2d: groups={groups} does not divide channels ({cin} in, {cout} out)")
    if cin // groups != cin_g:
        raise DimensionError(f"conv2d: weight axis 1 is {cin_g}, expected {cin // groups}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias axis 0 is {bias.shape}, expected ({cout},)")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")

    g, co_g = groups, cout // groups
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wg = weight.data.reshape(g, co_g, cin_g, kh, kw)
    out = np.zeros((bsz, g, co_g, ho * wo))
    span_y, span_x = stride * (ho - 1) + 1, stride * (wo - 1) + 1

    def window(i, j):
        xs = xp[:, :, i:i + span_y:stride, j:j + span_x:stride]
        return xs.reshape(bsz, g, cin_g, ho * wo)

    for i in range(kh):
        for j in range(kw):
            out += wg[:, :, :, i, j] @ window(i, j)
    out = out.reshape(bsz, cout, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(grad):
        gr = grad.reshape(bsz, g, co_g, ho * wo)
        gw = np.zeros_like(wg)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gw[:, :, :, i, j] = (gr @ np.swapaxes(window(i, j), -1, -2)).sum(axis=0)
                gx = np.swapaxes(wg[:, :, :, i, j], -1, -2) @ gr
                gxp[:, :, i:i + span_y:stride, j:j + span_x:stride] += gx.reshape(bsz, cin, ho, wo)
        gx_full = gxp[:, :, padding:padding + h, padding:padding + w]
        grads = [gx_full, gw.reshape(weight.shape)]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward, f"conv2d[{kh}x{kw}]")


# ----------------------------------------------------------------- checking

def grad_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-6,
               name: str | None = None) -> float:
    """Max relative error between backprop and central differences of sum(f(*inputs)).

    Error per coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    label = name or getattr(f, "__name__", "f")
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(x.copy(), requires_grad=True) for x in arrays]
    try:
        out = sum_all(f(*leaves))
    except NonFiniteError as exc:
        raise NonFiniteError(f"{label}: {exc}") from exc
    out.backward()

    def scalar(vals):
        return float(f(*[Tensor(v) for v in vals]).data.sum())

    worst = 0.0
    for k, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[k])
        base = arrays[k]
        flat = base.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = scalar(arrays)
            flat[idx] = orig - h
            fm = scalar(arrays)
            flat[idx] = orig
            numeric = (fp - fm) / (2 * h)
            if not np.isfinite(numeric):
                raise NonFiniteError(f"{label}: non-finite difference at input {k}, coordinate {idx}")
            err = abs(analytic.reshape(-1)[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
