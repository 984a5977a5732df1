"""Differentiable primitives over Tensors.

Broadcasting follows numpy rules (the pipeline itself only relies on scalar
and per-channel broadcasts); adjoints of broadcast ops sum the gradient back
to the operand's shape. Reductions and elementwise max/min break ties toward
the first index / first operand so adjoints are deterministic.
"""

from __future__ import annotations

import numpy as np

from .engine import DomainError, ShapeError, Tensor, apply_op, as_tensor


def _coerce_pair(a, b):
    """Promote python scalars to the other operand's dtype, not float64."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over broadcast dimensions down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# binary elementwise


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast("add", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return apply_op("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast("sub", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return apply_op("sub", a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast("mul", a, b)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return apply_op("mul", a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast("div", a, b)
    if not np.all(b.data != 0):
        raise DomainError("div: divisor contains zeros")

    def bwd(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return apply_op("div", a.data / b.data, (a, b), bwd)


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient routes to the first operand."""
    a, b = _coerce_pair(a, b)
    _check_broadcast("maximum", a, b)
    take_a = a.data >= b.data

    def bwd(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), a.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.shape),
        )

    return apply_op("maximum", np.where(take_a, a.data, b.data), (a, b), bwd)


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient routes to the first operand."""
    a, b = _coerce_pair(a, b)
    _check_broadcast("minimum", a, b)
    take_a = a.data <= b.data

    def bwd(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), a.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.shape),
        )

    return apply_op("minimum", np.where(take_a, a.data, b.data), (a, b), bwd)


# ---------------------------------------------------------------------------
# unary elementwise


def neg(a) -> Tensor:
    a = as_tensor(a)
    return apply_op("neg", -a.data, (a,), lambda g: (-g,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if not np.all(a.data > 0):
        raise DomainError("log: operand has non-positive entries")
    return apply_op("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return apply_op("exp", out_data, (a,), lambda g: (g * out_data,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return apply_op("sigmoid", out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def absolute(a) -> Tensor:
    """|a| with subgradient 0 at exact zeros."""
    a = as_tensor(a)
    return apply_op("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip to [lo, hi]; gradient passes where lo <= a <= hi (bounds inclusive,
    so texels saturated at exactly 0 or 1 keep their gradient)."""
    a = as_tensor(a)
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    out_data = np.clip(a.data, lo, hi)
    return apply_op("clamp", out_data, (a,), lambda g: (np.where(mask, g, 0.0),))


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def reduce_sum(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    if any(a.shape[ax] == 0 for ax in axes) or a.size == 0:
        raise ShapeError("reduce_sum: empty reduction")

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return apply_op("sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), bwd)


def reduce_mean(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes]))
    if n == 0:
        raise ShapeError("reduce_mean: empty reduction")

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return apply_op("mean", a.data.mean(axis=axes, keepdims=keepdims), (a,), bwd)


def reduce_max(a, axes=None, keepdims: bool = False) -> Tensor:
    """Max over `axes`; the adjoint routes to the first (C-order) argmax."""
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    if any(a.shape[ax] == 0 for ax in axes) or a.size == 0:
        raise ShapeError("reduce_max: empty reduction")
    out_data = a.data.max(axis=axes, keepdims=keepdims)

    # Move reduced axes last so first-occurrence argmax matches C order.
    kept = tuple(i for i in range(a.ndim) if i not in axes)
    perm = kept + axes
    moved = a.data.transpose(perm)
    kept_shape = moved.shape[: len(kept)]
    flat = moved.reshape(kept_shape + (-1,))
    arg = flat.argmax(axis=-1)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        g_kept = g.transpose(perm).reshape(kept_shape)
        d_flat = np.zeros_like(flat)
        np.put_along_axis(d_flat, arg[..., None], g_kept[..., None], axis=-1)
        d_moved = d_flat.reshape(moved.shape)
        inv = np.argsort(perm)
        return (d_moved.transpose(inv),)

    return apply_op("max", out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# shape / indexing


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return apply_op("reshape", a.data.reshape(shape), (a,),
                    lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return apply_op("transpose", a.data.transpose(axes), (a,),
                    lambda g: (g.transpose(inv),))


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return apply_op("flip", np.flip(a.data, axis=axis).copy(), (a,),
                    lambda g: (np.flip(g, axis=axis),))


def cast(a, dtype) -> Tensor:
    """Change float precision; the adjoint casts gradients back."""
    a = as_tensor(a)
    target = np.dtype(dtype)
    source = a.data.dtype
    if target == source:
        return a
    return apply_op("cast", a.data.astype(target), (a,),
                    lambda g: (g.astype(source),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return apply_op("concat", data, tuple(tensors), bwd)


def crop(a, slices) -> Tensor:
    """Sub-tensor by a tuple of slice objects (no steps)."""
    a = as_tensor(a)
    slices = tuple(slices)

    def bwd(g):
        d = np.zeros_like(a.data)
        d[slices] = g
        return (d,)

    return apply_op("crop", a.data[slices].copy(), (a,), bwd)


def take(a, indices, axis: int) -> Tensor:
    """Select indices along one axis; duplicate indices accumulate in adjoint."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)

    def bwd(g):
        d = np.zeros_like(a.data)
        key = (slice(None),) * axis + (idx,)
        np.add.at(d, key, g)
        return (d,)

    return apply_op("take", np.take(a.data, idx, axis=axis), (a,), bwd)


def gather2d(texture, u_idx, v_idx) -> Tensor:
    """out[h, w, :] = texture[u_idx[h, w], v_idx[h, w], :].

    The adjoint scatter-adds output gradients into texel cells, so pixels
    sharing a texel sum their contributions (gradient mass is conserved).
    """
    texture = as_tensor(texture)
    u = np.asarray(u_idx)
    v = np.asarray(v_idx)
    if not (np.issubdtype(u.dtype, np.integer) and np.issubdtype(v.dtype, np.integer)):
        raise DomainError("gather2d: index maps must be integer arrays")
    if u.shape != v.shape:
        raise ShapeError(f"gather2d: index shapes differ: {u.shape} vs {v.shape}")
    rows, cols = texture.shape[0], texture.shape[1]
    if u.size and (u.min() < 0 or u.max() >= rows or v.min() < 0 or v.max() >= cols):
        raise DomainError("gather2d: index out of range (indices must be pre-clamped)")

    def bwd(g):
        d = np.zeros_like(texture.data)
        np.add.at(d, (u, v), g)
        return (d,)

    return apply_op("gather2d", texture.data[u, v], (texture,), bwd)


def softmax_channel(logits) -> Tensor:
    """Per-pixel channel softmax for NCHW logits, stabilized by max-subtraction."""
    logits = as_tensor(logits)
    if logits.ndim != 4:
        raise ShapeError(f"softmax_channel expects NCHW, got {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return apply_op("softmax_channel", p, (logits,), bwd)


# ---------------------------------------------------------------------------
# dispatchers mirroring the primitive inventory


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div,
                       "max": maximum, "min": minimum}
_ELEMENTWISE_UNARY = {"neg": neg, "log": log, "exp": exp, "sigmoid": sigmoid,
                      "abs": absolute}


def elementwise(op_kind: str, a, b=None, **kwargs) -> Tensor:
    """Dispatch by name: add/sub/mul/div/max/min (binary), neg/log/exp/
    sigmoid/abs (unary), clamp(lo=..., hi=...)."""
    if op_kind == "clamp":
        return clamp(a, **kwargs)
    if op_kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ShapeError(f"elementwise {op_kind!r} needs two operands")
        return _ELEMENTWISE_BINARY[op_kind](a, b)
    if op_kind in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ShapeError(f"elementwise {op_kind!r} takes one operand")
        return _ELEMENTWISE_UNARY[op_kind](a)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


def reduce(kind: str, a, axes=None, keepdims: bool = False) -> Tensor:
    fns = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}
    if kind not in fns:
        raise ValueError(f"unknown reduction {kind!r}")
    return fns[kind](a, axes=axes, keepdims=keepdims)


# ---------------------------------------------------------------------------
# operator sugar on Tensor

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.sum = lambda self, axes=None, keepdims=False: reduce_sum(self, axes, keepdims)
Tensor.mean = lambda self, axes=None, keepdims=False: reduce_mean(self, axes, keepdims)
Tensor.max = lambda self, axes=None, keepdims=False: reduce_max(self, axes, keepdims)
Tensor.reshape = lambda self, shape: reshape(self, shape)
Tensor.transpose = lambda self, axes: transpose(self, axes)
