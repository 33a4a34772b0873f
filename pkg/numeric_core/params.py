import logging
from collections.abc import Iterator, Mapping

import numpy as np

from numeric_core.node import Node

logger = logging.getLogger(__name__)


class ParamStore:
    """Named parameter nodes in insertion order."""

    def __init__(self, frozen: bool = False) -> None:
        self._nodes: dict[str, Node] = {}
        self.frozen_snapshot = frozen

    def add(self, name: str, value: np.ndarray) -> Node:
        if name in self._nodes:
            raise KeyError(f"duplicate parameter {name!r}")
        node = Node(np.array(value, dtype=np.float64), requires_grad=not self.frozen_snapshot, name=name)
        self._nodes[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self._nodes[name]

    def __contains__(self, name: str) -> bool:
        return name in self._nodes

    def __iter__(self) -> Iterator[str]:
        return iter(self._nodes)

    def __len__(self) -> int:
        return len(self._nodes)

    def items(self) -> Iterator[tuple[str, Node]]:
        return iter(self._nodes.items())

    @property
    def num_parameters(self) -> int:
        return int(sum(node.value.size for node in self._nodes.values()))

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: node.value.shape for name, node in self._nodes.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self._nodes.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self._nodes) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, node in self._nodes.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != node.value.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} != {node.value.shape}")
            np.copyto(node.value, value)

    def frozen(self) -> "ParamStore":
        """Copy whose nodes do not require gradients; safe to share for inference."""
        snapshot = ParamStore(frozen=True)
        for name, node in self._nodes.items():
            snapshot.add(name, node.value)
        return snapshot

    def copy(self) -> "ParamStore":
        clone = ParamStore(frozen=self.frozen_snapshot)
        for name, node in self._nodes.items():
            clone.add(name, node.value)
        return clone
