"""Minimal tape-based reverse-mode autodiff over dense float64 matrices.

Operations run eagerly. While a :class:`Tape` is active (``with Tape():``),
every op whose inputs require gradients appends a record to it; ``backward``
walks the records in exact reverse order. With no active tape the ops are
plain numpy computations, which is what inference uses.

Only the handful of ops the graph classifier needs are provided.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"Tensor expects a 2-D array, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of (output, inputs, backward rule)."""

    _active: list["Tape"] = []

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.pop()

    def __len__(self) -> int:
        return len(self.records)


def _current_tape() -> Optional[Tape]:
    return Tape._active[-1] if Tape._active else None


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._tape = None
    tape = _current_tape()
    out.requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        out._tape = tape
        tape.records.append((out, inputs, rule))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every gradient-requiring tensor that ``loss`` depends on.

    Gradients accumulate into existing ``.grad`` buffers; callers zero leaf
    gradients between steps.
    """
    if loss.shape != (1, 1):
        raise NonScalarLoss(f"backward needs a 1x1 loss, got shape {loss.shape}")
    if not loss.requires_grad or loss._tape is None:
        return
    loss.grad = np.ones((1, 1))
    for out, inputs, rule in reversed(loss._tape.records):
        if out.grad is None:
            continue
        for t, g in zip(inputs, rule(out.grad)):
            if g is not None and t.requires_grad:
                _accumulate(t, g)


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    if b.shape != (1, a.shape[1]):
        raise ShapeMismatch("add_bias", a.shape, b.shape)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def add(*terms: Tensor) -> Tensor:
    shape = terms[0].shape
    for t in terms[1:]:
        if t.shape != shape:
            raise ShapeMismatch("add", shape, t.shape)
    data = terms[0].data
    for t in terms[1:]:
        data = data + t.data
    return _emit(data, tuple(terms), lambda g: (g,) * len(terms))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def dropout(a: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; the identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    scale = (rng.random(a.shape) >= p) / (1.0 - p)
    return _emit(a.data * scale, (a,), lambda g: (g * scale,))


def mean_adjacency(edges, num_nodes: int) -> np.ndarray:
    """Dense N x N operator ``A`` with ``(A @ X)[v]`` the mean of ``X[u]`` over pairs (u, v)."""
    A = np.zeros((num_nodes, num_nodes))
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size == 0:
        return A
    if e.min() < 0 or e.max() >= num_nodes:
        raise ValueError(f"edge endpoint out of range for {num_nodes} nodes")
    src, dst = e[:, 0], e[:, 1]
    np.add.at(A, (dst, src), 1.0)
    deg = A.sum(axis=1, keepdims=True)
    np.divide(A, deg, out=A, where=deg > 0)
    return A


def propagate(source: Tensor, adjacency: np.ndarray) -> Tensor:
    """``adjacency @ source`` with ``adjacency`` held constant."""
    if adjacency.shape != (source.shape[0], source.shape[0]):
        raise ShapeMismatch("propagate", adjacency.shape, source.shape)
    return _emit(adjacency @ source.data, (source,), lambda g: (adjacency.T @ g,))


def scatter_mean(source: Tensor, edges, num_nodes: int) -> Tensor:
    """Row v of the output is the mean of ``source[u]`` over directed pairs (u, v).

    Rows with no incoming pair are zero.
    """
    if source.shape[0] != num_nodes:
        raise ShapeMismatch("scatter_mean", source.shape, (num_nodes, source.shape[1]))
    return propagate(source, mean_adjacency(edges, num_nodes))


def assemble_rows(parts: Sequence[Tensor], indices: Sequence[np.ndarray], num_rows: int) -> Tensor:
    """Scatter each ``parts[i]`` into rows ``indices[i]`` of a fresh matrix."""
    cols = parts[0].shape[1]
    out = np.zeros((num_rows, cols))
    for p, idx in zip(parts, indices):
        if p.shape != (len(idx), cols):
            raise ShapeMismatch("assemble_rows", p.shape, (len(idx), cols))
        out[idx] = p.data
    return _emit(out, tuple(parts), lambda g: tuple(g[idx] for idx in indices))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-likelihood over the masked rows, as a 1x1 tensor."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    n, k = logits.shape
    if labels.shape != (n,) or mask.shape != (n,):
        raise ShapeMismatch("softmax_cross_entropy", logits.shape, labels.shape, mask.shape)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("softmax_cross_entropy: mask selects no rows")
    y = labels[rows]
    if y.min() < 0 or y.max() >= k:
        raise ValueError(f"label out of range for {k} classes")
    logp = log_softmax(logits.data[rows])
    loss = -logp[np.arange(rows.size), y].mean()

    def rule(g):
        probs = np.exp(logp)
        probs[np.arange(rows.size), y] -= 1.0
        grad = np.zeros((n, k))
        grad[rows] = probs * (g[0, 0] / rows.size)
        return (grad,)

    return _emit(np.array([[loss]]), (logits,), rule)
