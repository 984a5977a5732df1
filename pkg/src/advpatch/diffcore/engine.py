"""Reverse-mode autodiff core: Tensor, Tape, and the backward pass.

Tensors wrap dense numpy arrays. Operations (see ops.py / conv.py) record
nodes on the innermost active Tape; backward() replays the tape in reverse
execution order, which makes gradient accumulation order deterministic.
"""

from __future__ import annotations

import numpy as np


class DiffcoreError(Exception):
    """Base class for autodiff errors."""


class ShapeError(DiffcoreError):
    """Operand shapes are incompatible."""


class DomainError(DiffcoreError):
    """Operand values are outside the operation's domain."""


class Tensor:
    """Dense real tensor with optional gradient accumulation.

    `grad` is lazily allocated on the first backward pass that reaches this
    tensor and accumulates across backward calls until `zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None

    @property
    def shape(self) -> tuple:
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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed=None) -> None:
        backward(self, seed=seed)

    def __repr__(self) -> str:
        flags = []
        if self.requires_grad:
            flags.append("requires_grad")
        if self.node is not None:
            flags.append("recorded")
        tail = (", " + ",".join(flags)) if flags else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tail})"

    # arithmetic dunders are attached by ops.py at import time


class Node:
    """One executed operation: inputs, output, and its adjoint rule."""

    __slots__ = ("op", "inputs", "output", "backward_fn", "tape")

    def __init__(self, op, inputs, output, backward_fn, tape):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.tape = tape


class Tape:
    """Ordered record of executed operations.

    Used as a context manager; ops executed inside record themselves here
    when any input participates in gradient tracking.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _STACK.pop()
        assert popped is self
        # Break Tensor<->Node cycles so the step graph (and the arrays its
        # adjoint closures capture) frees immediately; otherwise training
        # loops stack up dead graphs waiting for the cyclic collector.
        for node in self.nodes:
            node.output.node = None
            node.output = None
            node.inputs = ()
            node.backward_fn = None
            node.tape = None
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


_STACK: list[Tape] = []


def record() -> Tape:
    """Fresh tape for a forward/backward episode: `with record() as tape:`."""
    return Tape()


def active_tape() -> Tape | None:
    return _STACK[-1] if _STACK else None


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def constant(x, dtype=None) -> Tensor:
    """Tensor that never tracks gradients (scene pixels, masks, targets)."""
    return Tensor(x, requires_grad=False, dtype=dtype)


def apply_op(op: str, out_data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    """Wrap an op result, recording a tape node when gradients are tracked.

    `backward_fn(out_grad) -> tuple of input grads (or None per input)`.
    """
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad or t.node is not None for t in inputs):
        node = Node(op, inputs, out, backward_fn, tape)
        tape.nodes.append(node)
        out.node = node
    return out


def backward(loss: Tensor, seed=None) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf on the tape.

    The tape is replayed in reverse execution order, so gradients are
    bit-reproducible for identical forward passes. Repeated calls without
    zero_grad accumulate.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if seed is None:
        seed_arr = np.ones_like(loss.data)
    else:
        seed_arr = np.full_like(loss.data, seed)

    if loss.node is None:
        if loss.requires_grad:
            if loss.grad is None:
                loss.grad = np.zeros_like(loss.data)
            loss.grad += seed_arr
            return
        raise DiffcoreError("loss was not recorded on any tape and is not a leaf")

    tape = loss.node.tape
    pending: dict[int, np.ndarray] = {id(loss): seed_arr}
    start = tape.nodes.index(loss.node) if tape.nodes[-1] is not loss.node else len(tape.nodes) - 1
    for node in reversed(tape.nodes[: start + 1]):
        out_grad = pending.pop(id(node.output), None)
        if out_grad is None:
            continue
        in_grads = node.backward_fn(out_grad)
        for tensor, grad in zip(node.inputs, in_grads):
            if grad is None:
                continue
            if tensor.requires_grad:
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad += grad
            if tensor.node is not None:
                key = id(tensor)
                if key in pending:
                    pending[key] = pending[key] + grad
                else:
                    pending[key] = grad
