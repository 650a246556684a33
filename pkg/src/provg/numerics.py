"""Dense-tensor substrate with reverse-mode automatic differentiation.

Graphs are built define-by-run: every primitive records its parents and an
adjoint closure on the output tensor, and ``Tensor.backward`` replays the
tape in reverse topological order.  Two precision modes exist: float32 for
training, float64 for gradient verification (``grad_check`` refuses to run
in 32-bit mode).
"""

from __future__ import annotations

import math
import os
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericsError(Exception):
    """Base class for tensor-engine failures."""


class ShapeMismatchError(NumericsError):
    """Operand shapes are incompatible; message names the offending op."""


class NonFiniteValueError(NumericsError):
    """A forward pass produced NaN or Inf; message names the offending op."""


class GradientError(NumericsError):
    """Backward was misused (bad seed, no graph, wrong precision mode)."""


_DTYPES = {32: np.float32, 64: np.float64}
_dtype = _DTYPES[int(os.environ.get("PROVG_PRECISION", "32"))]


def set_precision(bits: int) -> None:
    """Select the global precision mode (32 or 64)."""
    global _dtype
    if bits not in _DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _dtype = _DTYPES[bits]


def precision_bits() -> int:
    return 32 if _dtype == np.float32 else 64


def active_dtype() -> np.dtype:
    return np.dtype(_dtype)


class precision:
    """Context manager that temporarily switches the precision mode."""

    def __init__(self, bits: int):
        self.bits = bits
        self._saved = 0

    def __enter__(self):
        self._saved = precision_bits()
        set_precision(self.bits)
        return self

    def __exit__(self, *exc):
        set_precision(self._saved)
        return False


_grad_enabled = True


class no_grad:
    """Context manager that skips tape construction (inference passes)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def _check_finite(arr: np.ndarray, op: str) -> None:
    # A single NaN/Inf poisons the sum, so this cheap reduction suffices
    # at the magnitudes this engine sees.
    if not math.isfinite(float(arr.sum())):
        raise NonFiniteValueError(f"non-finite value produced by op '{op}'")


class Tensor:
    """A dense array plus the tape entry that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        arr = np.asarray(data).astype(_dtype, copy=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward
        _check_finite(arr, op)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> np.ndarray:
        return np.array(self.data, copy=True)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return mul(self, power(as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, seed=None) -> None:
        """Accumulate d(seed . self)/dp into ``.grad`` of every tensor that
        requires grad and contributed to this output."""
        if not self.requires_grad:
            raise GradientError("backward on a tensor that does not require grad "
                                "(no recorded graph reaches it)")
        if seed is None:
            if self.size != 1:
                raise GradientError("an explicit seed is required for non-scalar outputs")
            seed_arr = np.ones_like(self.data)
        else:
            seed_arr = seed.data if isinstance(seed, Tensor) else np.asarray(seed)
            seed_arr = seed_arr.astype(self.data.dtype, copy=False)
            if seed_arr.shape != self.data.shape:
                raise ShapeMismatchError(
                    f"seed shape {seed_arr.shape} does not match output shape {self.shape}")
        pending: dict[int, np.ndarray] = {id(self): seed_arr}
        for node in _reverse_topo(self):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                acc = pending.get(id(parent))
                pending[id(parent)] = pg if acc is None else acc + pg


def _reverse_topo(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_dtype))


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, op="param")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...],
            backward: Callable | None) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, op=op,
                  parents=parents if needs else (),
                  backward=backward if needs else None)


# -- elementwise and reduction primitives -------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeMismatchError(f"add: cannot broadcast {a.shape} with {b.shape}") from e

    def backward(g):
        grads = []
        if a.requires_grad:
            grads.append((a, g if g.shape == a.data.shape else _unbroadcast(g, a.shape)))
        if b.requires_grad:
            grads.append((b, g if g.shape == b.data.shape else _unbroadcast(g, b.shape)))
        return grads

    return _result(out, "add", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeMismatchError(f"multiply: cannot broadcast {a.shape} with {b.shape}") from e

    def backward(g):
        grads = []
        if a.requires_grad:
            ga = g * b.data
            grads.append((a, ga if ga.shape == a.data.shape else _unbroadcast(ga, a.shape)))
        if b.requires_grad:
            gb = g * a.data
            grads.append((b, gb if gb.shape == b.data.shape else _unbroadcast(gb, b.shape)))
        return grads

    return _result(out, "multiply", (a, b), backward)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = np.maximum(a.data, b.data)
    except ValueError as e:
        raise ShapeMismatchError(f"maximum: cannot broadcast {a.shape} with {b.shape}") from e
    take_a = a.data >= b.data  # ties route to the first operand

    def backward(g):
        return [(a, _unbroadcast(g * take_a, a.shape)),
                (b, _unbroadcast(g * ~take_a, b.shape))]

    return _result(out, "maximum", (a, b), backward)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = np.minimum(a.data, b.data)
    except ValueError as e:
        raise ShapeMismatchError(f"minimum: cannot broadcast {a.shape} with {b.shape}") from e
    take_a = a.data <= b.data

    def backward(g):
        return [(a, _unbroadcast(g * take_a, a.shape)),
                (b, _unbroadcast(g * ~take_a, b.shape))]

    return _result(out, "minimum", (a, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)
    mask = x.data > 0

    def backward(g):
        return [(x, g * mask)]

    return _result(out, "relu", (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.where(x.data >= 0,
                       1.0 / (1.0 + np.exp(-np.abs(x.data))),
                       np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    out = out.astype(x.data.dtype, copy=False)

    def backward(g):
        return [(x, g * out * (1.0 - out))]

    return _result(out, "sigmoid", (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return [(x, g * out)]

    return _result(out, "exp", (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    _check_finite(out, "log")

    def backward(g):
        return [(x, g / x.data)]

    return _result(out, "log", (x,), backward)


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(x.data, p)
    _check_finite(out, "power")

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(x.data, p - 1.0)
        return [(x, g * d)]

    return _result(out, "power", (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return [(x, out * (g - inner))]

    return _result(out, "softmax", (x,), backward)


def mean_reduce(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])

    def backward(g):
        g = np.asarray(g)
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return [(x, np.broadcast_to(g, x.shape) / count)]

    return _result(out, "mean-reduce", (x,), backward)


def sum_reduce(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return [(x, np.broadcast_to(g, x.shape).copy())]

    return _result(out, "sum-reduce", (x,), backward)


# -- structural primitives ----------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ShapeMismatchError(f"matmul: rank mismatch {a.shape} @ {b.shape} "
                                 "(2-D or equal-rank 3-D operands required)")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeMismatchError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        grads = []
        if a.requires_grad:
            grads.append((a, np.matmul(g, np.swapaxes(b.data, -1, -2))))
        if b.requires_grad:
            grads.append((b, np.matmul(np.swapaxes(a.data, -1, -2), g)))
        return grads

    return _result(out, "matmul", (a, b), backward)


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def backward(g):
        return [(x, np.transpose(g, inv))]

    return _result(out, "transpose", (x,), backward)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatchError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from e

    def backward(g):
        return [(x, g.reshape(x.shape))]

    return _result(out, "reshape", (x,), backward)


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError(
            f"concat: incompatible shapes {[p.shape for p in parts]} on axis {axis}") from e
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            grads.append((p, g[tuple(idx)]))
        return grads

    return _result(out, "concat", tuple(parts), backward)


def stack(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"stack: shapes differ: {sorted(shapes)}")
    out = np.stack([p.data for p in parts], axis=axis)

    def backward(g):
        slabs = np.split(g, len(parts), axis=axis)
        return [(p, s.reshape(p.shape)) for p, s in zip(parts, slabs)]

    return _result(out, "stack", tuple(parts), backward)


def slice_axis(x, start: int, stop: int, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    if not (0 <= start <= stop <= x.shape[axis]):
        raise ShapeMismatchError(
            f"slice: range [{start}, {stop}) out of bounds for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return [(x, full)]

    return _result(out, "slice", (x,), backward)


def gather_rows(table, ids: np.ndarray) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeMismatchError("gather-rows: ids must be a 1-D index vector")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatchError(
            f"gather-rows: index out of range for table with {table.shape[0]} rows")
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return [(table, full)]

    return _result(out, "gather-rows", (table,), backward)


# -- spatial primitives (row-major (H*W, C) feature maps) -----------------

def _conv_geometry(h: int, w: int, k: int, stride: int, pad: int) -> tuple[int, int]:
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeMismatchError(f"conv: window {k} exceeds padded input {h}x{w}")
    return oh, ow


def _im2col(img: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    # img: (H, W, C) -> (oh*ow, k*k*C) with (kh, kw, C) patch ordering;
    # built from k*k block copies, which beats a strided gather here
    if pad:
        img = np.pad(img, ((pad, pad), (pad, pad), (0, 0)))
    h, w, c = img.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    cols = np.empty((oh, ow, k, k, c), dtype=img.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = img[i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(oh * ow, k * k * c)


def _col2im(dcols: np.ndarray, h: int, w: int, c: int, k: int,
            stride: int, pad: int, oh: int, ow: int) -> np.ndarray:
    dpad = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    dview = dcols.reshape(oh, ow, k, k, c)
    for i in range(k):
        for j in range(k):
            dpad[i:i + stride * oh:stride, j:j + stride * ow:stride] += dview[:, :, i, j]
    if pad:
        dpad = dpad[pad:-pad, pad:-pad]
    return dpad


def conv2d(x, h: int, w: int, weight, bias=None, *, ksize: int,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Strided sliding-window convolution on an (H*W, C_in) map.

    ``weight`` is (ksize*ksize*C_in, C_out) with (kh, kw, C_in) patch order;
    returns an (oh*ow, C_out) map.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or x.shape[0] != h * w:
        raise ShapeMismatchError(f"conv: expected ({h * w}, C) input, got {x.shape}")
    c_in = x.shape[1]
    if weight.shape[0] != ksize * ksize * c_in:
        raise ShapeMismatchError(
            f"conv: weight rows {weight.shape[0]} != ksize^2*C_in = {ksize * ksize * c_in}")
    oh, ow = _conv_geometry(h, w, ksize, stride, pad)
    cols = _im2col(x.data.reshape(h, w, c_in), ksize, stride, pad)
    out = cols @ weight.data
    parents: list[Tensor] = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeMismatchError(f"conv: bias shape {bias.shape} != ({weight.shape[1]},)")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        grads = []
        if x.requires_grad:
            dcols = g @ weight.data.T
            dx = _col2im(dcols, h, w, c_in, ksize, stride, pad, oh, ow).reshape(h * w, c_in)
            grads.append((x, dx))
        if weight.requires_grad:
            grads.append((weight, cols.T @ g))
        if bias is not None and bias.requires_grad:
            grads.append((bias, g.sum(axis=0)))
        return grads

    return _result(out, "conv2d", tuple(parents), backward)


def depthwise_conv3x3(x, h: int, w: int, weight, bias=None) -> Tensor:
    """Per-channel 3x3 convolution, stride 1, zero padding 1.

    ``weight`` is (9, C) with (kh, kw) offset order; preserves the map shape.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or x.shape[0] != h * w:
        raise ShapeMismatchError(f"depthwise-conv: expected ({h * w}, C) input, got {x.shape}")
    c = x.shape[1]
    if weight.shape != (9, c):
        raise ShapeMismatchError(f"depthwise-conv: weight shape {weight.shape} != (9, {c})")
    cols = _im2col(x.data.reshape(h, w, c), 3, 1, 1).reshape(h * w, 9, c)
    out = np.einsum("pkc,kc->pc", cols, weight.data)
    parents: list[Tensor] = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c,):
            raise ShapeMismatchError(f"depthwise-conv: bias shape {bias.shape} != ({c},)")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        grads = []
        if x.requires_grad:
            dcols = np.einsum("pc,kc->pkc", g, weight.data)
            dx = _col2im(dcols.reshape(h * w, 9 * c), h, w, c, 3, 1, 1, h, w).reshape(h * w, c)
            grads.append((x, dx))
        if weight.requires_grad:
            grads.append((weight, np.einsum("pkc,pc->kc", cols, g)))
        if bias is not None and bias.requires_grad:
            grads.append((bias, g.sum(axis=0)))
        return grads

    return _result(out, "depthwise-conv3x3", tuple(parents), backward)


_BILINEAR_CACHE: dict[int, np.ndarray] = {}


def _bilinear_matrix(n: int) -> np.ndarray:
    # 2x upsampling weights, half-pixel centres, edges clamped
    mat = _BILINEAR_CACHE.get(n)
    if mat is None:
        mat = np.zeros((2 * n, n))
        src = np.clip((np.arange(2 * n) + 0.5) / 2.0 - 0.5, 0.0, n - 1.0)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n - 1)
        frac = src - lo
        mat[np.arange(2 * n), lo] += 1.0 - frac
        mat[np.arange(2 * n), hi] += frac
        _BILINEAR_CACHE[n] = mat
    return mat


def upsample2x_bilinear(x, h: int, w: int) -> Tensor:
    """Bilinear 2x upsampling of an (H*W, C) map to (4*H*W, C)."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] != h * w:
        raise ShapeMismatchError(f"bilinear-upsample: expected ({h * w}, C) input, got {x.shape}")
    c = x.shape[1]
    rows = _bilinear_matrix(h).astype(x.data.dtype)
    cols = _bilinear_matrix(w).astype(x.data.dtype)
    img = x.data.reshape(h, w, c)
    tall = np.tensordot(rows, img, (1, 0))                    # (2h, w, c)
    out = np.tensordot(cols, tall, (1, 1)).transpose(1, 0, 2)  # (2h, 2w, c)
    out = np.ascontiguousarray(out).reshape(4 * h * w, c)

    def backward(g):
        gi = g.reshape(2 * h, 2 * w, c)
        tall_g = np.tensordot(cols.T, gi, (1, 1)).transpose(1, 0, 2)  # (2h, w, c)
        dx = np.tensordot(rows.T, tall_g, (1, 0))                     # (h, w, c)
        return [(x, np.ascontiguousarray(dx).reshape(h * w, c))]

    return _result(out, "bilinear-upsample", (x,), backward)


def upsample2x(x, h: int, w: int) -> Tensor:
    """Nearest-neighbour 2x upsampling of an (H*W, C) map to (4*H*W, C)."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] != h * w:
        raise ShapeMismatchError(f"nearest-upsample: expected ({h * w}, C) input, got {x.shape}")
    c = x.shape[1]
    img = x.data.reshape(h, w, c)
    out = img.repeat(2, axis=0).repeat(2, axis=1).reshape(4 * h * w, c)

    def backward(g):
        gi = g.reshape(2 * h, 2 * w, c)
        dx = gi[0::2, 0::2] + gi[0::2, 1::2] + gi[1::2, 0::2] + gi[1::2, 1::2]
        return [(x, dx.reshape(h * w, c))]

    return _result(out, "nearest-upsample", (x,), backward)


# -- composites used throughout the model --------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias); weight is (fan_in, fan_out). A 1x1 convolution."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float) -> Tensor:
    """Scaled dot-product attention; rows of q attend rows of k/v."""
    logits = mul(matmul(q, transpose(k, None if q.ndim == 2 else (0, 2, 1))), scale)
    return matmul(softmax(logits, axis=-1), v)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift.  Fused primitive
    with an analytic adjoint (the composite form is tape-heavy in the text
    encoder's inner loop)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeMismatchError(
            f"layer-norm: scale/shift {gamma.shape}/{beta.shape} do not match "
            f"feature width {x.shape[-1:]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = np.square(x.data - mu).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = (x.data - mu) * inv
    out = normed * gamma.data + beta.data

    def backward(g):
        grads = []
        if x.requires_grad:
            gn = g * gamma.data
            inner = gn - gn.mean(axis=-1, keepdims=True) \
                - normed * (gn * normed).mean(axis=-1, keepdims=True)
            grads.append((x, inner * inv))
        if gamma.requires_grad:
            grads.append((gamma, _unbroadcast(g * normed, gamma.shape)))
        if beta.requires_grad:
            grads.append((beta, _unbroadcast(g, beta.shape)))
        return grads

    return _result(out, "layer-norm", (x, gamma, beta), backward)


# -- verification ---------------------------------------------------------

def grad_check(fn: Callable[..., Tensor], params: Sequence[Tensor],
               step: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar-valued ``fn`` against central
    differences; returns max over parameter entries of
    |analytic - numeric| / max(1, |numeric|).  64-bit mode only.
    """
    if precision_bits() != 64:
        raise GradientError("grad_check requires 64-bit precision mode")
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise GradientError("grad_check parameters must be float64 tensors")
        p.zero_grad()
    out = fn(*params)
    if out.size != 1:
        raise GradientError("grad_check target must be scalar-valued")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            f_plus = fn(*params).item()
            flat[i] = saved - step
            f_minus = fn(*params).item()
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
