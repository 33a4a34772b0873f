"""
The fixed op set: add, mul, matmul, gather_rows, log_softmax, exp, log1p,
mean, sum, reshape/transpose, concat, mask_fill and detach.

Every op returns a new Node. When none of the inputs requires a gradient the
result records no parents, so inference on frozen parameters builds no graph.
"""
import contextlib
import logging
import threading
from collections.abc import Iterator, Sequence

import numpy as np

from numeric_core.node import GraphError, Node

logger = logging.getLogger(__name__)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x, op="constant")


def _make(value: np.ndarray, parents: Sequence[Node], backward_fn, op: str) -> Node:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Node(value, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Node(value, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), backward, "add")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(a.value * b.value, (a, b), backward, "mul")


def matmul(a, b) -> Node:
    """Batched matrix product over the last two axes; both inputs must be at least 2-D."""
    a, b = as_node(a), as_node(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise GraphError("matmul expects operands of rank >= 2")

    def backward(g: np.ndarray):
        grad_a = g @ np.swapaxes(b.value, -1, -2)
        grad_b = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _make(a.value @ b.value, (a, b), backward, "matmul")


def gather_rows(table, ids) -> Node:
    table = as_node(table)
    idx = np.asarray(ids, dtype=np.intp)

    def backward(g: np.ndarray):
        grad = np.zeros_like(table.value)
        np.add.at(grad, idx, g)
        return (grad,)

    return _make(table.value[idx], (table,), backward, "gather_rows")


def log_softmax(x, axis: int = -1) -> Node:
    x = as_node(x)
    if x.value.ndim == 0 or x.value.shape[axis] == 0:
        raise ValueError("log_softmax of an empty vector")
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g: np.ndarray):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def exp(x) -> Node:
    x = as_node(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.value)

    def backward(g: np.ndarray):
        return (g * out,)

    return _make(out, (x,), backward, "exp")


def log1p(x) -> Node:
    x = as_node(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log1p(x.value)

    def backward(g: np.ndarray):
        return (g / (1.0 + x.value),)

    return _make(out, (x,), backward, "log1p")


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    x = as_node(x)

    def backward(g: np.ndarray):
        return (_expand_reduced(g, x.shape, axis, keepdims),)

    return _make(x.value.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Node:
    x = as_node(x)
    count = x.value.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))

    def backward(g: np.ndarray):
        return (_expand_reduced(g, x.shape, axis, keepdims) / count,)

    return _make(x.value.mean(axis=axis, keepdims=keepdims), (x,), backward, "mean")


def reshape(x, shape: tuple[int, ...]) -> Node:
    x = as_node(x)

    def backward(g: np.ndarray):
        return (g.reshape(x.shape),)

    return _make(x.value.reshape(shape), (x,), backward, "reshape")


def transpose(x, axes: tuple[int, ...]) -> Node:
    x = as_node(x)
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray):
        return (g.transpose(inverse),)

    return _make(x.value.transpose(axes), (x,), backward, "transpose")


def concat(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ValueError("concat of an empty sequence")
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([n.value for n in nodes], axis=axis), nodes, backward, "concat")


def mask_fill(x, mask: np.ndarray, fill: float) -> Node:
    """Replace entries where `mask` is true by `fill`; no gradient flows through them."""
    x = as_node(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)

    def backward(g: np.ndarray):
        return (np.where(mask, 0.0, g),)

    return _make(np.where(mask, fill, x.value), (x,), backward, "mask_fill")


class _DetachTape(threading.local):
    """
    Per-thread record of detached values. While replaying, detach returns the
    recorded values in call order, so a perturbed re-evaluation sees detached
    quantities held at their base values.
    """

    def __init__(self) -> None:
        self.mode: str | None = None
        self.values: list[np.ndarray] = []
        self.cursor = 0


_tape = _DetachTape()


@contextlib.contextmanager
def recording_detached() -> Iterator[list[np.ndarray]]:
    previous = (_tape.mode, _tape.values, _tape.cursor)
    _tape.mode, _tape.values, _tape.cursor = "record", [], 0
    try:
        yield _tape.values
    finally:
        _tape.mode, _tape.values, _tape.cursor = previous


@contextlib.contextmanager
def replaying_detached(values: list[np.ndarray]) -> Iterator[None]:
    previous = (_tape.mode, _tape.values, _tape.cursor)
    _tape.mode, _tape.values, _tape.cursor = "replay", values, 0
    try:
        yield
    finally:
        _tape.mode, _tape.values, _tape.cursor = previous


def detach(x) -> Node:
    x = as_node(x)
    value = x.value
    if _tape.mode == "record":
        _tape.values.append(value.copy())
    elif _tape.mode == "replay":
        if _tape.cursor >= len(_tape.values):
            raise GraphError("detach replay ran past the recorded values")
        value = _tape.values[_tape.cursor]
        if value.shape != x.value.shape:
            raise GraphError("detach replay shape mismatch")
        _tape.cursor += 1
    return Node(value, op="detach")


def softplus(x) -> Node:
    return log1p(exp(x))


def rsqrt(y) -> Node:
    """y ** -0.5 for positive y, written with the op set as exp(-0.5 * log(y))."""
    return exp(mul(log1p(add(y, -1.0)), -0.5))


def rms_norm(x, gain, eps: float = 1e-6) -> Node:
    x = as_node(x)
    ms = add(mean(mul(x, x), axis=-1, keepdims=True), eps)
    return mul(mul(x, rsqrt(ms)), gain)
