"""Minimal reverse-mode autodiff on numpy arrays.

The attack pipeline needs gradients of a handful of image-sized ops, not a
framework: tensors wrap float arrays, a tape records executed ops, and
backward() replays the tape in reverse execution order, which keeps repeated
runs bit-identical.
"""

from .engine import (
    DiffcoreError,
    DomainError,
    Node,
    ShapeError,
    Tape,
    Tensor,
    as_tensor,
    constant,
)
from .ops import (
    absolute,
    add,
    cast,
    clamp,
    concat,
    crop,
    div,
    elementwise,
    exp,
    flip,
    gather2d,
    log,
    maximum,
    minimum,
    mul,
    neg,
    reduce,
    reduce_max,
    reduce_mean,
    reduce_sum,
    reshape,
    sigmoid,
    softmax_channel,
    sub,
    take,
    transpose,
)
from .conv import conv2d, same_padding, upsample2x
from . import gradcheck

__all__ = [
    "DiffcoreError", "DomainError", "ShapeError", "Node", "Tape", "Tensor",
    "as_tensor", "constant",
    "absolute", "add", "cast", "clamp", "concat", "crop", "div", "elementwise", "exp",
    "flip", "gather2d", "log", "maximum", "minimum", "mul", "neg", "reduce",
    "reduce_max", "reduce_mean", "reduce_sum", "reshape", "sigmoid",
    "softmax_channel", "sub", "take", "transpose",
    "conv2d", "same_padding", "upsample2x", "gradcheck",
]
