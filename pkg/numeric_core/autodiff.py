import logging
from collections.abc import Sequence

import numpy as np

from numeric_core.node import GraphError, Node
from numeric_core.params import ParamStore

logger = logging.getLogger(__name__)


def _topological(loss: Node) -> list[Node]:
    """Every node reachable through gradient-carrying edges, newest first."""
    seen: dict[int, Node] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen[id(node)] = node
        for parent in node.parents:
            if parent.index >= node.index:
                raise GraphError(f"cycle in op record at {node!r}")
            if parent.requires_grad:
                stack.append(parent)
    return sorted(seen.values(), key=lambda n: n.index, reverse=True)


def _backprop(loss: Node) -> dict[int, np.ndarray]:
    if loss.value.ndim != 0:
        raise GraphError(f"loss must be a scalar, got shape {loss.value.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    if not loss.requires_grad:
        return grads
    for node in _topological(loss):
        g = grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, parent_grad in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad or parent_grad is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = np.array(parent_grad, dtype=np.float64)
    return grads


def gradients(loss: Node, wrt: Sequence[Node]) -> list[np.ndarray]:
    """d loss / d node for each node in `wrt`; exact zeros for nodes off every path."""
    grads = _backprop(loss)
    return [grads.get(id(node), np.zeros_like(node.value)) for node in wrt]


def backward(loss: Node, params: ParamStore) -> dict[str, np.ndarray]:
    grads = _backprop(loss)
    return {
        name: grads.get(id(node), np.zeros_like(node.value))
        for name, node in params.items()
    }
