import itertools
import logging
from collections.abc import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Creation index; parents always carry a smaller index than their children.
_creation_counter = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class NonFiniteError(ValueError):
    """Raised when an op produces NaN or Inf."""

    def __init__(self, op: str) -> None:
        super().__init__(f"non-finite value produced by op {op!r}")
        self.op = op


class GraphError(RuntimeError):
    pass


class Node:
    """
    A dense float64 array in a reverse-mode graph.

    Leaf nodes are parameters or constants. Interior nodes keep their parents
    and a backward function mapping the upstream gradient to one gradient per
    parent. Nodes that do not require gradients record no parents at all.
    """

    __slots__ = ("value", "requires_grad", "parents", "backward_fn", "op", "index", "name")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        parents: tuple["Node", ...] = (),
        backward_fn: BackwardFn | None = None,
        op: str = "leaf",
        name: str | None = None,
    ) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(op)
        self.value = arr
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name
        self.index = next(_creation_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Node({label}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other) -> "Node":
        from numeric_core.ops import add
        return add(self, other)

    def __radd__(self, other) -> "Node":
        from numeric_core.ops import add
        return add(other, self)

    def __sub__(self, other) -> "Node":
        from numeric_core.ops import add, mul
        return add(self, mul(other, -1.0))

    def __rsub__(self, other) -> "Node":
        from numeric_core.ops import add, mul
        return add(other, mul(self, -1.0))

    def __mul__(self, other) -> "Node":
        from numeric_core.ops import mul
        return mul(self, other)

    def __rmul__(self, other) -> "Node":
        from numeric_core.ops import mul
        return mul(other, self)

    def __neg__(self) -> "Node":
        from numeric_core.ops import mul
        return mul(self, -1.0)

    def __truediv__(self, other: float) -> "Node":
        from numeric_core.ops import mul
        if isinstance(other, Node):
            raise TypeError("division is only defined by a constant")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other) -> "Node":
        from numeric_core.ops import matmul
        return matmul(self, other)


def constant(value) -> Node:
    return Node(value, op="constant")
