"""Spatial ops: 2d convolution (im2col + matmul) and nearest upsampling.

Layouts are NCHW for activations and (C_out, C_in, kH, kW) for weights.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .engine import ShapeError, Tensor, apply_op, as_tensor


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def same_padding(kernel, dilation=1) -> tuple[int, int]:
    """Padding that preserves H, W at stride 1 (and halves them cleanly at
    stride 2 for even inputs). Odd kernels only."""
    kh, kw = _pair(kernel)
    dh, dw = _pair(dilation)
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"same_padding needs odd kernel, got {(kh, kw)}")
    return dh * (kh - 1) // 2, dw * (kw - 1) // 2


def conv2d(x, w, b=None, stride=1, padding=0, dilation=1) -> Tensor:
    """Cross-correlation of NCHW input with OIHW weights.

    Zero padding is applied symmetrically. The forward is a single matmul on
    the unfolded input; the adjoint reuses the unfolded buffer for the weight
    gradient and scatters strided slices for the input gradient.
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW x and OIHW w, got {x.shape}, {w.shape}")
    n, c_in, h, wd = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv2d channel mismatch: input {c_in}, weight {c_in_w}")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"conv2d bias shape {b.shape}, expected ({c_out},)")
    khe = (kh - 1) * dh + 1
    kwe = (kw - 1) * dw + 1
    h_out = (h + 2 * ph - khe) // sh + 1
    w_out = (wd + 2 * pw - kwe) // sw + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(f"conv2d output would be empty: {(h_out, w_out)}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    # (n, c, h', w', khe, kwe) view, subsampled to stride/dilation taps
    win = sliding_window_view(xp, (khe, kwe), axis=(2, 3))
    win = win[:, :, ::sh, ::sw, ::dh, ::dw][:, :, :h_out, :w_out]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c_in * kh * kw)
    w2 = w.data.reshape(c_out, c_in * kh * kw)
    out = (cols @ w2.T).reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * h_out * w_out, c_out)
        dw_flat = g2.T @ cols
        dcols = (g2 @ w2).reshape(n, h_out, w_out, c_in, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros((n, c_in, h + 2 * ph, wd + 2 * pw), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :,
                    i * dh: i * dh + (h_out - 1) * sh + 1: sh,
                    j * dw: j * dw + (w_out - 1) * sw + 1: sw] += dcols[:, :, :, :, i, j]
        dx = dxp[:, :, ph: ph + h, pw: pw + wd] if (ph or pw) else dxp
        grads = [dx, dw_flat.reshape(w.shape)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (x, w) if b is None else (x, w, b)
    return apply_op("conv2d", np.ascontiguousarray(out), inputs, bwd)


def upsample2x(x) -> Tensor:
    """Nearest-neighbor 2x upsampling of NCHW; adjoint sums each 2x2 block."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample2x expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bwd(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return apply_op("upsample2x", out, (x,), bwd)
