import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from planeval.geometry import ObjectBox

logger = logging.getLogger(__name__)

N_CHANNELS = 4
OCCUPANCY, VELOCITY_X, VELOCITY_Y, CLASS_FLAG = range(N_CHANNELS)

CLASS_CODES = {"car": 1.0, "pedestrian": 2.0, "red_light": 3.0, "green_light": 4.0}


@dataclass(frozen=True)
class BevSpec:
    extent_m: float = 32.0
    resolution_m: float = 0.5

    def __post_init__(self) -> None:
        if self.extent_m <= 0 or self.resolution_m <= 0:
            raise ValueError("extent and resolution must be positive")
        cells = self.extent_m / self.resolution_m
        if abs(cells - round(cells)) > 1e-9:
            raise ValueError(f"extent {self.extent_m} is not a whole number of {self.resolution_m} m cells")

    @property
    def size(self) -> int:
        return int(round(self.extent_m / self.resolution_m))

    def cell_centers(self) -> np.ndarray:
        """(H, W, 2) ego-frame (x, y) of every cell center; rows follow x, columns follow y."""
        coords = -self.extent_m / 2 + (np.arange(self.size) + 0.5) * self.resolution_m
        return np.stack(np.meshgrid(coords, coords, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class BevFeature:
    data: np.ndarray  # (C, H, W)
    resolution_m: float
    extent_m: float
    skipped: int = 0

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def rasterize_scene(objects: Sequence[ObjectBox], spec: BevSpec = BevSpec()) -> BevFeature:
    """
    Rule-based BEV encoder. A cell belongs to an object when its center lies in
    the object's footprint; later objects overwrite earlier ones.
    """
    size = spec.size
    data = np.zeros((N_CHANNELS, size, size), dtype=np.float64)
    centers = spec.cell_centers()
    half = spec.extent_m / 2
    skipped = 0
    for obj in objects:
        corners = obj.corners()
        if (corners[:, 0].max() < -half or corners[:, 0].min() > half
                or corners[:, 1].max() < -half or corners[:, 1].min() > half):
            skipped += 1
            logger.debug("Object %s at (%.2f, %.2f) lies outside the BEV extent", obj.cls, obj.x, obj.y)
            continue
        inside = obj.contains(centers)
        data[OCCUPANCY][inside] = 1.0
        data[VELOCITY_X][inside] = obj.vx
        data[VELOCITY_Y][inside] = obj.vy
        data[CLASS_FLAG][inside] = CLASS_CODES.get(obj.cls, 0.0)
    return BevFeature(data=data, resolution_m=spec.resolution_m, extent_m=spec.extent_m, skipped=skipped)
