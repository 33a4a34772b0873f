import logging
from dataclasses import dataclass

import numpy as np

from bev_adapter.raster import BevFeature

logger = logging.getLogger(__name__)


class GridShapeError(ValueError):
    pass


@dataclass(frozen=True)
class VisualTokens:
    """Token-major layout: tokens[(i * W/w) + j] is grid cell (i, j)."""

    tokens: np.ndarray  # (H/h * W/w, C*h*w)
    grid_spec: tuple[int, int]

    @property
    def count(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def dim(self) -> int:
        return int(self.tokens.shape[1])


def _as_array(bev: BevFeature | np.ndarray) -> np.ndarray:
    return bev.data if isinstance(bev, BevFeature) else np.asarray(bev)


def _check_grid(shape: tuple[int, ...], h: int, w: int) -> None:
    if len(shape) != 3:
        raise GridShapeError(f"expected a C x H x W array, got shape {shape}")
    _, height, width = shape
    if h <= 0 or w <= 0 or height % h or width % w:
        raise GridShapeError(f"grid {h}x{w} does not divide {height}x{width}")


def grid_flatten(bev: BevFeature | np.ndarray, h: int, w: int) -> VisualTokens:
    data = _as_array(bev)
    _check_grid(data.shape, h, w)
    c, height, width = data.shape
    blocks = data.reshape(c, height // h, h, width // w, w).transpose(1, 3, 0, 2, 4)
    return VisualTokens(tokens=blocks.reshape((height // h) * (width // w), c * h * w), grid_spec=(h, w))


def grid_unflatten(tokens: VisualTokens, shape: tuple[int, int, int]) -> np.ndarray:
    c, height, width = shape
    h, w = tokens.grid_spec
    _check_grid(shape, h, w)
    if tokens.tokens.shape != ((height // h) * (width // w), c * h * w):
        raise GridShapeError(f"tokens of shape {tokens.tokens.shape} do not fit {shape} with grid {h}x{w}")
    blocks = tokens.tokens.reshape(height // h, width // w, c, h, w).transpose(2, 0, 3, 1, 4)
    return blocks.reshape(c, height, width)


def grid_pool(bev: BevFeature | np.ndarray, h: int, w: int) -> VisualTokens:
    """Average each h x w block down to one C-dimensional token."""
    data = _as_array(bev)
    _check_grid(data.shape, h, w)
    c, height, width = data.shape
    pooled = data.reshape(c, height // h, h, width // w, w).mean(axis=(2, 4))
    return VisualTokens(tokens=pooled.transpose(1, 2, 0).reshape(-1, c), grid_spec=(h, w))


def visual_tokens(bev: BevFeature, h: int, w: int, adapter: str = "flatten") -> VisualTokens:
    if adapter == "flatten":
        return grid_flatten(bev, h, w)
    if adapter == "pool":
        return grid_pool(bev, h, w)
    raise ValueError(f"unknown adapter {adapter!r}")


def token_layout(c: int, height: int, width: int, h: int, w: int, adapter: str = "flatten") -> tuple[int, int]:
    """(token count, token dim) for a C x H x W feature."""
    _check_grid((c, height, width), h, w)
    count = (height // h) * (width // w)
    return count, (c * h * w if adapter == "flatten" else c)
