"""Dense-tensor reverse-mode automatic differentiation.

A :class:`Tape` records every operation performed on its tensors; calling
:meth:`Tape.backward` on a scalar result walks the recording in reverse and
accumulates gradients into the :class:`Parameter` leaves that were watched via
:meth:`Tape.leaf`. Tensors belong to exactly one tape and are immutable once
created; independent tapes are independent units of work.

Shapes are strict: the only implicit broadcast is adding a trailing-dimension
bias vector (``[..., d] + [d]``). Everything else must match exactly or the
operation raises :class:`ShapeMismatchError`.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """The tape cannot support the requested operation (stale or misused)."""


class Parameter:
    """A named, trainable array. Holds the latest gradient after backward."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Tensor:
    """A node in a tape's computation graph. Do not construct directly."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data: np.ndarray, tape: "Tape", node_id: int):
        self.data = data
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, node={self.node_id})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return multiply(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class _Node:
    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents: tuple[int, ...], backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered recording of one forward pass.

    Parents always precede children in the node list, so a single reverse
    sweep suffices for backward. A tape is single-use: after ``backward`` it
    refuses further recording.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._nodes: list[_Node] = []
        self._values: list[np.ndarray] = []
        self._watched: dict[int, tuple[Parameter, int]] = {}
        self._consumed = False

    def _record(self, data: np.ndarray, parents: tuple[int, ...], backward_fn) -> Tensor:
        if self._consumed:
            raise TapeError("tape already consumed by backward(); build a new tape")
        node_id = len(self._nodes)
        self._nodes.append(_Node(parents, backward_fn))
        self._values.append(data)
        return Tensor(data, self, node_id)

    def constant(self, array) -> Tensor:
        """A graph input with no gradient (data, targets, masks)."""
        data = np.asarray(array, dtype=self.dtype)
        return self._record(data, (), None)

    def leaf(self, param: Parameter) -> Tensor:
        """Watch a parameter; repeated calls return the same graph node."""
        cached = self._watched.get(id(param))
        if cached is not None:
            _, node_id = cached
            return Tensor(self._values[node_id], self, node_id)
        data = param.data.astype(self.dtype, copy=False)
        t = self._record(data, (), None)
        self._watched[id(param)] = (param, t.node_id)
        return t

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into every watched parameter's ``.grad``.

        ``root`` must be a scalar tensor recorded on this tape. Leaves that do
        not influence the root receive zero gradients.
        """
        if root.tape is not self:
            raise TapeError("root tensor does not belong to this tape")
        if self._consumed:
            raise TapeError("tape already consumed by backward(); build a new tape")
        if root.data.shape != ():
            raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
        self._consumed = True

        grads: list[Optional[np.ndarray]] = [None] * len(self._nodes)
        grads[root.node_id] = np.ones((), dtype=self.dtype)
        for node_id in range(root.node_id, -1, -1):
            g = grads[node_id]
            if g is None:
                continue
            node = self._nodes[node_id]
            if node.backward_fn is None:
                continue
            contributions = node.backward_fn(g)
            for parent_id, contrib in zip(node.parents, contributions):
                if contrib is None:
                    continue
                if grads[parent_id] is None:
                    grads[parent_id] = contrib
                else:
                    # Out-of-place: stored grads may be views into other buffers.
                    grads[parent_id] = grads[parent_id] + contrib

        for param, node_id in self._watched.values():
            g = grads[node_id]
            if g is None:
                param.grad = np.zeros(param.data.shape, dtype=self.dtype)
            else:
                param.grad = np.ascontiguousarray(g)


def _same_tape(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise TapeError("operands were recorded on different tapes")
    return tape


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undo leading-dim broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes, with leading-axis batching."""
    tape = _same_tape(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)
    a_data, b_data = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    def backward_fn(g):
        ga = _unbroadcast(np.matmul(g, b_data.swapaxes(-1, -2)), a_shape)
        gb = _unbroadcast(np.matmul(a_data.swapaxes(-1, -2), g), b_shape)
        return ga, gb

    return tape._record(out, (a.node_id, b.node_id), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a trailing-dimension bias vector."""
    tape = _same_tape(a, b)
    bias = b.ndim == 1 and a.ndim > 1 and a.shape[-1] == b.shape[0]
    if not bias and a.shape != b.shape:
        raise ShapeMismatchError(f"add shapes disagree: {a.shape} + {b.shape}")
    out = a.data + b.data
    b_shape = b.shape

    def backward_fn(g):
        gb = g.reshape(-1, b_shape[0]).sum(axis=0) if bias else g
        return g, gb

    return tape._record(out, (a.node_id, b.node_id), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"sub shapes disagree: {a.shape} - {b.shape}")
    out = a.data - b.data

    def backward_fn(g):
        return g, -g

    return tape._record(out, (a.node_id, b.node_id), backward_fn)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"multiply shapes disagree: {a.shape} * {b.shape}")
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        return g * b_data, g * a_data

    return tape._record(out, (a.node_id, b.node_id), backward_fn)


def mul_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Scale the trailing dimension of ``a`` by vector ``v`` (layer-norm gain)."""
    tape = _same_tape(a, v)
    if v.ndim != 1 or a.shape[-1] != v.shape[0]:
        raise ShapeMismatchError(f"mul_rowvec needs trailing dims to agree: {a.shape} * {v.shape}")
    out = a.data * v.data
    a_data, v_data = a.data, v.data
    d = v.shape[0]

    def backward_fn(g):
        return g * v_data, (g * a_data).reshape(-1, d).sum(axis=0)

    return tape._record(out, (a.node_id, v.node_id), backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a compile-time constant."""
    c = a.tape.dtype.type(factor)
    out = a.data * c

    def backward_fn(g):
        return (g * c,)

    return a.tape._record(out, (a.node_id,), backward_fn)


def transpose2d(a: Tensor) -> Tensor:
    """Swap the trailing two axes (plain transpose for rank-2 tensors)."""
    if a.ndim < 2:
        raise ShapeMismatchError(f"transpose2d needs rank >= 2, got {a.shape}")
    out = np.ascontiguousarray(a.data.swapaxes(-1, -2))

    def backward_fn(g):
        return (g.swapaxes(-1, -2),)

    return a.tape._record(out, (a.node_id,), backward_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    old_shape = a.shape

    def backward_fn(g):
        return (g.reshape(old_shape),)

    return a.tape._record(out, (a.node_id,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree."""
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    tape = _same_tape(*tensors)
    rank = tensors[0].ndim
    if not -rank <= axis < rank:
        raise ShapeMismatchError(f"concat axis {axis} out of range for rank {rank}")
    axis = axis % rank
    for t in tensors[1:]:
        if t.ndim != rank or any(
            i != axis and t.shape[i] != tensors[0].shape[i] for i in range(rank)
        ):
            raise ShapeMismatchError(
                f"concat shapes disagree off axis {axis}: "
                f"{[tuple(t.shape) for t in tensors]}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return tape._record(out, tuple(t.node_id for t in tensors), backward_fn)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start:stop]`` along one axis."""
    rank = a.ndim
    if not -rank <= axis < rank:
        raise ShapeMismatchError(f"slice axis {axis} out of range for rank {rank}")
    axis = axis % rank
    if not 0 <= start < stop <= a.shape[axis]:
        raise ShapeMismatchError(
            f"slice [{start}:{stop}] out of bounds for axis {axis} of shape {a.shape}"
        )
    index = tuple(slice(start, stop) if i == axis else slice(None) for i in range(rank))
    out = np.ascontiguousarray(a.data[index])
    in_shape = a.shape

    def backward_fn(g):
        full = np.zeros(in_shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return a.tape._record(out, (a.node_id,), backward_fn)


def mean(a: Tensor) -> Tensor:
    """Mean over all elements, producing a scalar."""
    out = a.data.mean(dtype=a.tape.dtype)
    size = a.data.size
    shape = a.shape

    def backward_fn(g):
        return (np.broadcast_to(g / size, shape),)

    return a.tape._record(out, (a.node_id,), backward_fn)


def tsum(a: Tensor) -> Tensor:
    """Sum over all elements, producing a scalar."""
    out = a.data.sum(dtype=a.tape.dtype)
    shape = a.shape

    def backward_fn(g):
        return (np.broadcast_to(g, shape),)

    return a.tape._record(out, (a.node_id,), backward_fn)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward_fn(g):
        return (g * (0.5 / out),)

    return a.tape._record(out, (a.node_id,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward_fn(g):
        return (g * (1.0 - out * out),)

    return a.tape._record(out, (a.node_id,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward_fn(g):
        return (g * out * (1.0 - out),)

    return a.tape._record(out, (a.node_id,), backward_fn)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    mask = a.data > 0

    def backward_fn(g):
        return (g * mask,)

    return a.tape._record(out, (a.node_id,), backward_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``: shifts by the max before exponentiating,
    so large or -inf logits are safe. Fully -inf slices produce NaN; callers
    masking attention must guarantee at least one attendable key per query.
    """
    rank = a.ndim
    if not -rank <= axis < rank:
        raise ShapeMismatchError(f"softmax axis {axis} out of range for rank {rank}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return a.tape._record(out, (a.node_id,), backward_fn)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + a.tape.dtype.type(eps))
    out = (a.data - mu) * inv

    def backward_fn(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - g_mean - out * gy_mean),)

    return a.tape._record(out, (a.node_id,), backward_fn)


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and rescale survivors by
    ``1/(1-p)`` during training; identity (no RNG consumed) in eval mode.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.tape.dtype)
    mask = keep / a.tape.dtype.type(1.0 - p)
    out = a.data * mask

    def backward_fn(g):
        return (g * mask,)

    return a.tape._record(out, (a.node_id,), backward_fn)
