"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every tensor is ``(N, C, H, W)`` row-major; scalars are ``(1, 1, 1, 1)``.
Operations performed while gradients are enabled, and with at least one
input that requires a gradient, record a :class:`Node` holding the inputs
and a backward rule. :func:`backward` orders the recorded nodes reachable
from a loss by recording sequence and replays them in reverse.
"""

from __future__ import annotations

import hashlib
import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class NumericalError(ArithmeticError):
    """A forward result contains NaN or Inf."""


_state = threading.local()
_seq = itertools.count()

DEFAULT_DTYPE = np.float32


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable recording inside the block (forward-only evaluation)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Node:
    __slots__ = ("seq", "op", "parents", "backward")

    def __init__(self, op: str, parents: tuple, backward: Callable):
        self.seq = next(_seq)
        self.op = op
        self.parents = parents
        self.backward = backward

    def __repr__(self):
        return f"Node({self.op}, seq={self.seq})"


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1, 1, 1)
        if arr.ndim != 4:
            raise ContractError(f"tensors are 4-D (N,C,H,W); got ndim={arr.ndim}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None

    shape = property(lambda self: self.data.shape)
    dtype = property(lambda self: self.data.dtype)

    @property
    def numel(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


Tensorish = Tensor | float | int


def _lift(x: Tensorish, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full((1, 1, 1, 1), x, dtype=like.dtype))


def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------- recording

def _finish(op: str, out: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    # sum() is cheap and turns non-finite anywhere into non-finite
    if not np.isfinite(out.sum(dtype=np.float64)):
        if not np.isfinite(out).all():
            raise NumericalError(f"{op} produced non-finite values")
    t = Tensor(out)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t.node = Node(op, parents, backward)
    return t


class Tape:
    """Recorded operations reachable from a loss, in recording order."""

    def __init__(self, entries: list[tuple[Tensor, Node]]):
        self.entries = entries

    @property
    def ops(self) -> list[Node]:
        return [node for _, node in self.entries]

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        seen: set[int] = set()
        entries = []
        stack = [loss]
        while stack:
            t = stack.pop()
            if t.node is None or id(t.node) in seen:
                continue
            seen.add(id(t.node))
            entries.append((t, t.node))
            stack.extend(p for p in t.node.parents if p.requires_grad)
        entries.sort(key=lambda e: e[1].seq)
        return cls(entries)

    def backward(self, loss: Tensor) -> None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        for out, node in reversed(self.entries):
            if out.grad is None:
                continue
            grads = node.backward(out.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                g = g.astype(parent.dtype, copy=False)
                parent.grad = g if parent.grad is None else parent.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad ancestor of a scalar loss."""
    if loss.shape != (1, 1, 1, 1):
        raise ContractError(f"backward needs a scalar (1,1,1,1) loss, got {loss.shape}")
    if loss.node is None:
        raise ContractError("loss was not recorded; nothing requires grad")
    Tape.from_loss(loss).backward(loss)


# ---------------------------------------------------------------- kink tracking

class KinkTracker:
    """Collects, during forward passes, how close non-smooth ops sit to
    their kinks and a signature of which side of each kink they took."""

    def __init__(self):
        self.margin = np.inf
        self._hash = hashlib.sha1()

    def observe(self, margin: float, pattern: np.ndarray):
        self.margin = min(self.margin, float(margin))
        self._hash.update(np.ascontiguousarray(pattern).tobytes())

    @property
    def signature(self) -> str:
        return self._hash.hexdigest()


@contextmanager
def track_kinks():
    tracker = KinkTracker()
    prev = getattr(_state, "tracker", None)
    _state.tracker = tracker
    try:
        yield tracker
    finally:
        _state.tracker = prev


def _tracker() -> KinkTracker | None:
    return getattr(_state, "tracker", None)


# ---------------------------------------------------------------- elementwise

def _check_broadcast(a: Tensor, b: Tensor, op: str):
    for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
        if da != db and da != 1 and db != 1:
            raise ContractError(
                f"{op}: shapes {a.shape} and {b.shape} do not broadcast "
                f"(dimension {'NCHW'[axis]}: {da} vs {db})"
            )


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensorish, b: Tensorish) -> Tensor:
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _finish("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensorish, b: Tensorish) -> Tensor:
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _finish("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensorish, b: Tensorish) -> Tensor:
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _finish("mul", ad * bd, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    tracker = _tracker()
    if tracker is not None:
        tracker.observe(np.abs(xd).min(), np.packbits(mask))
    return _finish("relu", np.maximum(xd, 0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _finish("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype).reshape(1, 1, 1, 1)
    return _finish("sum", out, (x,), lambda g: (np.broadcast_to(g, shape),))


def mean(x: Tensor) -> Tensor:
    n = x.numel
    shape = x.shape
    out = np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype).reshape(1, 1, 1, 1)
    return _finish("mean", out, (x,), lambda g: (np.broadcast_to(g / n, shape),))


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute error; the subgradient at zero difference is zero."""
    b = _lift(b, a)
    if a.shape != b.shape:
        raise ContractError(f"l1_loss: shapes differ, {a.shape} vs {b.shape}")
    diff = a.data - b.data
    tracker = _tracker()
    if tracker is not None:
        tracker.observe(np.abs(diff).min(), np.packbits(diff > 0))
    n = diff.size
    out = np.asarray(np.abs(diff).mean(dtype=np.float64), dtype=a.dtype).reshape(1, 1, 1, 1)

    def bw(g):
        s = np.sign(diff) * (g.reshape(()) / n)
        return s, -s

    return _finish("l1_loss", out, (a, b), bw)


# ---------------------------------------------------------------- structure

def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ContractError("concat_channels needs at least one tensor")
    n, _, h, w = xs[0].shape
    for t in xs[1:]:
        for axis, (d0, d) in zip("NHW", ((n, t.shape[0]), (h, t.shape[2]), (w, t.shape[3]))):
            if d0 != d:
                raise ContractError(f"concat_channels: dimension {axis} mismatch ({d0} vs {d})")
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _finish("concat", np.concatenate([t.data for t in xs], axis=1), tuple(xs), bw)


def _shuffle(d: np.ndarray) -> np.ndarray:
    n, c4, h, w = d.shape
    c = c4 // 4
    return d.reshape(n, c, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, 2 * h, 2 * w)


def _unshuffle(d: np.ndarray) -> np.ndarray:
    n, c, h2, w2 = d.shape
    h, w = h2 // 2, w2 // 2
    return d.reshape(n, c, h, 2, w, 2).transpose(0, 1, 3, 5, 2, 4).reshape(n, 4 * c, h, w)


def pixel_shuffle(x: Tensor) -> Tensor:
    """``out[n, c, 2h+i, 2w+j] = x[n, 4c + 2i + j, h, w]``."""
    if x.shape[1] % 4:
        raise ContractError(f"pixel_shuffle: channels {x.shape[1]} not divisible by 4")
    return _finish("pixel_shuffle", _shuffle(x.data), (x,), lambda g: (_unshuffle(g),))


def pixel_unshuffle(x: Tensor) -> Tensor:
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ContractError(f"pixel_unshuffle: spatial dims {x.shape[2:]} must be even")
    return _finish("pixel_unshuffle", _unshuffle(x.data), (x,), lambda g: (_shuffle(g),))


def nearest_indices(src: int, out: int) -> np.ndarray:
    return (np.arange(out) * src) // out


def nearest_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Nearest-neighbour resampling with source index ``floor(dst*src/out)``."""
    if out_h <= 0 or out_w <= 0:
        raise ContractError(f"nearest_resize: output size must be positive, got {(out_h, out_w)}")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x
    ih, iw = nearest_indices(h, out_h), nearest_indices(w, out_w)
    out = x.data[:, :, ih][:, :, :, iw]

    def bw(g):
        if out_h % h == 0 and out_w % w == 0:
            return (g.reshape(n, c, h, out_h // h, w, out_w // w).sum(axis=(3, 5)),)
        gx = np.zeros_like(x.data)
        gh = np.zeros((n, c, h, out_w), dtype=g.dtype)
        np.add.at(gh, (slice(None), slice(None), ih), g)
        np.add.at(gx, (slice(None), slice(None), slice(None), iw), gh)
        return (gx,)

    return _finish("nearest_resize", out, (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return _finish("global_avg_pool", out, (x,),
                   lambda g: (np.broadcast_to(g / (h * w), (n, c, h, w)),))


def channel_stats(x: Tensor) -> Tensor:
    """Per-pixel channel mean (channel 0) and channel max (channel 1).

    The max gradient goes to the lowest channel index among ties.
    """
    n, c, h, w = x.shape
    xd = x.data
    arg = xd.argmax(axis=1)[:, None]
    mx = np.take_along_axis(xd, arg, axis=1)
    tracker = _tracker()
    if tracker is not None and c > 1:
        top2 = np.partition(xd, c - 2, axis=1)[:, c - 2:]
        tracker.observe((top2[:, 1] - top2[:, 0]).min(), arg.astype(np.int32))
    out = np.concatenate([xd.mean(axis=1, keepdims=True), mx], axis=1)

    def bw(g):
        gx = np.broadcast_to(g[:, :1] / c, xd.shape).copy()
        np.put_along_axis(gx, arg, np.take_along_axis(gx, arg, axis=1) + g[:, 1:], axis=1)
        return (gx,)

    return _finish("channel_stats", out, (x,), bw)


# ---------------------------------------------------------------- convolution

# saved im2col stacks above this many bytes are recomputed in backward
_STACK_CACHE_BYTES = 64 << 20


def _stack(xflat: np.ndarray, k: int, wp: int, m: int) -> np.ndarray:
    n, c, _ = xflat.shape
    cols = np.empty((n, k * k, c, m), dtype=xflat.dtype)
    for i in range(k):
        for j in range(k):
            off = i * wp + j
            cols[:, i * k + j] = xflat[:, :, off:off + m]
    return cols.reshape(n, k * k * c, m)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` is ``(C_out, C_in, k, k)`` with odd ``k``; ``bias`` is a
    ``(1, C_out, 1, 1)`` tensor (or ``None``).
    """
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise ContractError(f"conv2d: input has C={cin} channels but weight expects C_in={wcin}")
    if k != k2 or k % 2 == 0:
        raise ContractError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if stride < 1 or padding < 0:
        raise ContractError(f"conv2d: invalid stride={stride} or padding={padding}")
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise ContractError(f"conv2d: bias shape {bias.shape} != (1, {cout}, 1, 1)")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise ContractError(f"conv2d: padded input {hp}x{wp} smaller than kernel {k}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    wd = weight.data
    dtype = np.result_type(x.dtype, weight.dtype)

    if k == 1 and padding == 0 and stride == 1:
        xm = x.data.reshape(n, cin, h * w)
        wm = wd.reshape(cout, cin)
        out = np.matmul(wm, xm).reshape(n, cout, h, w)
        if bias is not None:
            out += bias.data

        def bw1(g):
            gm = g.reshape(n, cout, h * w)
            gx = np.matmul(wm.T, gm).reshape(x.shape) if x.requires_grad else None
            gw = np.matmul(gm, xm.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape) if weight.requires_grad else None
            gb = g.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1) if bias is not None else None
            return gx, gw, gb

        parents = (x, weight) if bias is None else (x, weight, bias)
        return _finish("conv2d", out.astype(dtype, copy=False), parents, bw1)

    # Flattened padded grid: output pixel (r, s) of the stride-1 result sits
    # at flat index r*wp + s, and tap (i, j) reads flat index + i*wp + j.
    xp = np.zeros((n, cin, hp, wp), dtype=dtype)
    xp[:, :, padding:padding + h, padding:padding + w] = x.data
    xflat = xp.reshape(n, cin, hp * wp)
    m = (hp - k) * wp + (wp - k) + 1
    cols = _stack(xflat, k, wp, m)
    wm = wd.transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    yflat = np.zeros((n, cout, hp * wp), dtype=dtype)
    np.matmul(wm, cols, out=yflat[:, :, :m])
    full = yflat.reshape(n, cout, hp, wp)[:, :, :hp - k + 1, :wp - k + 1]
    out = np.ascontiguousarray(full[:, :, ::stride, ::stride][:, :, :ho, :wo])
    if bias is not None:
        out += bias.data
    saved = cols if cols.nbytes <= _STACK_CACHE_BYTES else None
    del cols

    def bw(g):
        gfull = np.zeros((n, cout, hp, wp), dtype=dtype)
        gfull[:, :, :(ho - 1) * stride + 1:stride, :(wo - 1) * stride + 1:stride] = g
        gm = gfull.reshape(n, cout, hp * wp)[:, :, :m]
        gx = gw = gb = None
        if weight.requires_grad:
            c = saved if saved is not None else _stack(xflat, k, wp, m)
            gw = np.matmul(gm, c.transpose(0, 2, 1)).sum(axis=0)
            gw = gw.reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
        if x.requires_grad:
            gcols = np.matmul(wm.T, gm).reshape(n, k * k, cin, m)
            gxflat = np.zeros((n, cin, hp * wp), dtype=dtype)
            for i in range(k):
                for j in range(k):
                    off = i * wp + j
                    gxflat[:, :, off:off + m] += gcols[:, i * k + j]
            gx = gxflat.reshape(n, cin, hp, wp)[:, :, padding:padding + h, padding:padding + w]
        if bias is not None:
            gb = g.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _finish("conv2d", out, parents, bw)
