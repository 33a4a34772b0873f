import logging
from collections.abc import Callable, Mapping, Sequence

import numpy as np

from numeric_core.node import Node, NonFiniteError
from numeric_core.ops import recording_detached, replaying_detached
from numeric_core.params import ParamStore

logger = logging.getLogger(__name__)


class FiniteDifferenceError(ValueError):
    def __init__(self, name: str, index: int) -> None:
        super().__init__(f"objective is non-finite when perturbing {name}[{index}]")
        self.name = name
        self.index = index


def _evaluate(f: Callable[[ParamStore], Node | float], params: ParamStore, name: str, index: int) -> float:
    try:
        out = f(params)
    except NonFiniteError as exc:
        raise FiniteDifferenceError(name, index) from exc
    value = float(out.value if isinstance(out, Node) else out)
    if not np.isfinite(value):
        raise FiniteDifferenceError(name, index)
    return value


def finite_diff_grad(
    f: Callable[[ParamStore], Node | float],
    params: ParamStore,
    eps: float = 1e-5,
    hold_detached: bool = True,
    coordinates: Mapping[str, Sequence[int]] | None = None,
) -> dict[str, np.ndarray]:
    """
    Central-difference gradient of a scalar objective, one coordinate at a time.

    With `hold_detached`, every detach inside `f` returns the value it had at the
    unperturbed point, which is what backward differentiates. `coordinates`
    restricts the check to the listed flat indices per parameter; every other
    entry of the result is NaN and parameters not listed are left out.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    with recording_detached() as held:
        f(params)

    grads: dict[str, np.ndarray] = {}
    for name, node in params.items():
        flat = node.value.reshape(-1)
        if coordinates is None:
            indices = range(flat.size)
            grad = np.zeros(flat.size)
        elif name in coordinates:
            indices = coordinates[name]
            grad = np.full(flat.size, np.nan)
        else:
            continue
        for i in indices:
            original = flat[i]
            flat[i] = original + eps
            if hold_detached:
                with replaying_detached(held):
                    up = _evaluate(f, params, name, i)
            else:
                up = _evaluate(f, params, name, i)
            flat[i] = original - eps
            if hold_detached:
                with replaying_detached(held):
                    down = _evaluate(f, params, name, i)
            else:
                down = _evaluate(f, params, name, i)
            flat[i] = original
            grad[i] = (up - down) / (2.0 * eps)
        grads[name] = grad.reshape(node.value.shape)
    return grads


def max_relative_error(a: dict[str, np.ndarray], b: dict[str, np.ndarray], floor: float = 1e-6) -> float:
    """Worst |a - b| / max(|a|, |b|, floor) over the entries of b that were computed."""
    worst = 0.0
    for name in b:
        checked = ~np.isnan(b[name])
        diff = np.abs(a[name] - b[name])[checked]
        scale = np.maximum(np.maximum(np.abs(a[name]), np.abs(b[name])), floor)[checked]
        if diff.size:
            worst = max(worst, float((diff / scale).max()))
    return worst
