"""Adam optimizer used for both victim training and texture optimization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OptimError(ValueError):
    pass


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def ensure(self, shapes: list[tuple[int, ...]]) -> None:
        if not self.m:
            self.m = [np.zeros(s) for s in shapes]
            self.v = [np.zeros(s) for s in shapes]
        elif len(self.m) != len(shapes):
            raise OptimError("optimizer state does not match parameter count")


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, lr: float,
              clamp: tuple[float, float] | None = None) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns the new parameter arrays.

    clamp, when given, projects each updated parameter into the box — the
    texture's [0,1] constraint is enforced this way rather than through a
    reparameterization.
    """
    if lr <= 0:
        raise OptimError("learning rate must be positive")
    if len(params) != len(grads):
        raise OptimError("parameter/gradient count mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise OptimError(f"shape mismatch {p.shape} vs {g.shape}")
    state.ensure([p.shape for p in params])
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        new = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if clamp is not None:
            new = np.clip(new, clamp[0], clamp[1])
        # moments accumulate in float64; keep the parameter's own precision
        out.append(new.astype(p.dtype, copy=False))
    return out
