"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a pullback closure mapping the output cotangent to one
cotangent per parent.  :func:`backward` walks that record in reverse
topological order, accumulates into leaf ``.grad`` arrays and then drops the
record, so each backward pass consumes the graph it was given.

Shapes must agree exactly for elementwise arithmetic.  The only implicit
broadcasting is over the leading batch dimensions of :func:`matmul`;
anything else goes through :func:`broadcast_to`, whose pullback sums.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ContractError, DimensionError, NonFiniteError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32
_local = threading.local()


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


def _debug_enabled() -> bool:
    return getattr(_local, "debug", False)


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    _default_dtype = _resolve_dtype(dtype)


def _resolve_dtype(dtype):
    if isinstance(dtype, str):
        try:
            return _DTYPES[dtype]
        except KeyError:
            raise ContractError(f"unsupported dtype {dtype!r}; use float32 or float64") from None
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported dtype {dtype}")
    return dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the element type used for new tensors."""
    global _default_dtype
    previous = _default_dtype
    _default_dtype = _resolve_dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them for differentiation."""
    previous = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


@contextlib.contextmanager
def debug_checks(enabled: bool = True) -> Iterator[None]:
    """Raise :class:`NonFiniteError` as soon as an op yields NaN/inf."""
    previous = _debug_enabled()
    _local.debug = enabled
    try:
        yield
    finally:
        _local.debug = previous


Pullback = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_pullback", "_leaf", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        dtype = _resolve_dtype(dtype) if dtype is not None else _default_dtype
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] | None = None
        self._pullback: Pullback | None = None
        self._leaf = True
        self._op = ""

    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple["Tensor", ...], pullback: Pullback, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._leaf = False
        out._op = op
        out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._pullback = pullback
        else:
            out._parents = None
            out._pullback = None
        if _debug_enabled() and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values produced by {op}")
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents or ():
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    The recorded graph behind ``loss`` is released afterwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    cotangents: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = cotangents.pop(id(node), None)
        if g is None:
            continue
        if node._parents is None:
            if node._leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._pullback(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in cotangents:
                cotangents[key] = cotangents[key] + pg
            else:
                cotangents[key] = pg
    for node in order:
        node._parents = None
        node._pullback = None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return Tensor._result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._result(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(a.dtype)

    def pullback(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return ((g * (cdf + x * pdf)).astype(g.dtype),)

    return Tensor._result(out, (a,), pullback, "gelu")


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor._result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor._result(
        np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
    )


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return Tensor._result(
        np.asarray(a.data.mean(), dtype=a.dtype),
        (a,),
        lambda g: (np.full(shape, g / n, dtype=g.dtype),),
        "mean",
    )


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference, fused so no intermediate graph is kept."""
    _same_shape("l1", a, b)
    diff = a.data - b.data
    sign = np.sign(diff)
    n = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=a.dtype)

    def pullback(g):
        ga = sign * (g / n)
        return ga, -ga

    return Tensor._result(out, (a, b), pullback, "l1")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return Tensor._result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permute axes {axes} invalid for rank {a.ndim}")
    inverse = tuple(np.argsort(axes))
    return Tensor._result(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inverse),), "permute")


def transpose_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(a, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise DimensionError(f"concat: incompatible shapes {[x.shape for x in tensors]} on axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._result(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def split(a: Tensor, sections: int | Sequence[int], axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into equal ``sections`` or chunks of the given sizes."""
    axis = axis % a.ndim
    extent = a.shape[axis]
    if isinstance(sections, int):
        if sections <= 0 or extent % sections:
            raise DimensionError(f"cannot split extent {extent} into {sections} equal parts")
        sizes = [extent // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != extent:
            raise DimensionError(f"split sizes {sizes} do not sum to {extent}")
    outs = []
    start = 0
    for size in sizes:
        index = [slice(None)] * a.ndim
        index[axis] = slice(start, start + size)
        index = tuple(index)

        def pullback(g, index=index):
            full = np.zeros(a.shape, dtype=g.dtype)
            full[index] = g
            return (full,)

        outs.append(Tensor._result(a.data[index].copy(), (a,), pullback, "split"))
        start += size
    return outs


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {src} to {shape}") from exc
    lead = len(shape) - len(src)

    def pullback(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return Tensor._result(out, (a,), pullback, "broadcast_to")


def roll(a: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    return Tensor._result(np.roll(a.data, shifts, axis=axes), (a,), lambda g: (np.roll(g, back, axis=axes),), "roll")


def take(a: Tensor, index: np.ndarray, axis: int = 0) -> Tensor:
    """Gather rows of ``a`` along ``axis``; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim

    def pullback(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        g_moved = np.moveaxis(g, tuple(range(axis, axis + index.ndim)), tuple(range(index.ndim)))
        np.add.at(moved, index, g_moved)
        return (full,)

    return Tensor._result(np.take(a.data, index, axis=axis), (a,), pullback, "take")


# ---------------------------------------------------------------------------
# linear algebra and normalisation
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading dimensions must match exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul: ranks of {a.shape} and {b.shape} incompatible")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions of {a.shape} and {b.shape} differ")
    if a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions of {a.shape} and {b.shape} differ")

    def pullback(g):
        return np.matmul(g, np.swapaxes(b.data, -1, -2)), np.matmul(np.swapaxes(a.data, -1, -2), g)

    return Tensor._result(np.matmul(a.data, b.data), (a, b), pullback, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; ``w`` is (in, out)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    out = out.reshape(*lead, w.shape[1])

    def pullback(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = x2.T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(out, parents, pullback, "linear")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def pullback(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (x,), pullback, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def pullback(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gb = g.sum(axis=lead)
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx.astype(g.dtype), gg, gb

    return Tensor._result(out.astype(x.dtype), (x, gamma, beta), pullback, "layer_norm")


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N*ho*wo, k*k*C) patch matrix of an already padded NCHW array, columns ordered (i, j, c)."""
    n, c = xp.shape[:2]
    nhwc = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    view = sliding_window_view(nhwc, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    return view.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, NCHW layout."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if kh != kw:
        raise DimensionError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv2d: bias {b.shape} does not match {cout} output channels")
    if stride < 1 or pad < 0:
        raise ContractError("conv2d needs stride >= 1 and pad >= 0")
    k = kh
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d: kernel {k} larger than padded input {hp}x{wp}")
    cols = _im2col(xp, k, stride, ho, wo)
    w2 = w.data.transpose(0, 2, 3, 1).reshape(cout, k * k * cin)
    out = cols @ w2.T
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def pullback(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (g2.T @ cols).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=0) if b is not None else None
        if stride == 1 and pad <= k - 1:
            # input gradient is a full correlation with the flipped, transposed kernel
            q = k - 1 - pad
            gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q))) if q else g
            wf = w.data[:, :, ::-1, ::-1].transpose(1, 2, 3, 0).reshape(cin, k * k * cout)
            gx = (_im2col(gp, k, 1, h, wd) @ wf.T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2)
            return np.ascontiguousarray(gx), gw, gb
        gcols = (g2 @ w2).reshape(n, ho, wo, k, k, cin)
        gxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
        span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + span_h : stride, j : j + span_w : stride] += gcols[:, :, :, i, j, :].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(out, parents, pullback, "conv2d")
