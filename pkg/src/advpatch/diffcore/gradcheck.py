"""Central finite-difference oracle for gradient verification.

All checks run in double precision. `fn` must be a pure function of its
Tensor arguments returning a scalar Tensor; it is re-evaluated many times
with perturbed inputs, so keep test problems small.
"""

from __future__ import annotations

import numpy as np

from .engine import Tape, Tensor


def scalar_value(fn, arrays) -> float:
    """Evaluate fn on untracked tensors (no tape) and return the float."""
    out = fn(*[Tensor(a) for a in arrays])
    return out.item()


def analytic_gradients(fn, arrays) -> list[np.ndarray]:
    """Gradients of fn wrt every input, via one taped forward + backward."""
    params = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    with Tape():
        loss = fn(*params)
        loss.backward()
    return [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]


def numeric_gradient(fn, arrays, wrt: int, h: float = 1e-3) -> np.ndarray:
    """Full central-difference gradient wrt arrays[wrt]."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    target = arrays[wrt]
    grad = np.zeros_like(target)
    flat_t, flat_g = target.reshape(-1), grad.reshape(-1)
    for k in range(flat_t.size):
        orig = flat_t[k]
        flat_t[k] = orig + h
        fp = scalar_value(fn, arrays)
        flat_t[k] = orig - h
        fm = scalar_value(fn, arrays)
        flat_t[k] = orig
        flat_g[k] = (fp - fm) / (2.0 * h)
    return grad


def numeric_gradient_at(fn, arrays, wrt: int, positions, h: float = 1e-3) -> np.ndarray:
    """Central differences at selected flat positions of arrays[wrt] only."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    flat_t = arrays[wrt].reshape(-1)
    out = np.zeros(len(positions))
    for i, k in enumerate(positions):
        orig = flat_t[k]
        flat_t[k] = orig + h
        fp = scalar_value(fn, arrays)
        flat_t[k] = orig - h
        fm = scalar_value(fn, arrays)
        flat_t[k] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       small: float = 1e-3, abs_tol: float = 1e-7) -> float:
    """Worst relative discrepancy, ignoring entries where both gradients are
    tiny and instead requiring them to agree within abs_tol there."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    tiny = scale < small
    if np.any(diff[tiny] > abs_tol):
        return float("inf")
    rel = np.where(tiny, 0.0, diff / np.where(tiny, 1.0, scale))
    return float(rel.max()) if rel.size else 0.0


def check_gradients(fn, arrays, wrt=None, h: float = 1e-3,
                    rel_tol: float = 1e-4, small: float = 1e-3,
                    abs_tol: float = 1e-7) -> float:
    """Assert autodiff matches central differences for the given inputs.

    Returns the worst relative error seen; raises AssertionError with the
    offending input index otherwise.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = analytic_gradients(fn, arrays)
    indices = range(len(arrays)) if wrt is None else wrt
    worst = 0.0
    for i in indices:
        num = numeric_gradient(fn, arrays, i, h=h)
        err = max_relative_error(grads[i], num, small=small, abs_tol=abs_tol)
        if err > rel_tol:
            k = int(np.argmax(np.abs(grads[i] - num)))
            raise AssertionError(
                f"gradient mismatch on input {i} (rel err {err:.3e} > {rel_tol:.0e}); "
                f"worst entry {k}: analytic {grads[i].reshape(-1)[k]:.6e} "
                f"vs numeric {num.reshape(-1)[k]:.6e}")
        worst = max(worst, err)
    return worst
