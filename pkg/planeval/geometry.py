import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

# nuScenes ego vehicle footprint (length, width) in meters.
EGO_DIMS = (4.084, 1.730)


def wrap_angle(angle: float) -> float:
    """Map an angle into (-pi, pi]."""
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class ObjectBox:
    x: float
    y: float
    length: float
    width: float
    yaw: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    cls: str = "car"

    def __post_init__(self) -> None:
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"box dimensions must be positive, got {self.length}x{self.width}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def axes(self) -> np.ndarray:
        """Unit heading axis and unit lateral axis as rows."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, s], [-s, c]])

    def corners(self) -> np.ndarray:
        half = np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]]) * np.array([self.length / 2, self.width / 2])
        return self.center + half @ self.axes

    def moved(self, dt: float) -> "ObjectBox":
        """Constant-velocity extrapolation by dt seconds."""
        return ObjectBox(
            x=self.x + self.vx * dt, y=self.y + self.vy * dt,
            length=self.length, width=self.width, yaw=self.yaw,
            vx=self.vx, vy=self.vy, cls=self.cls,
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Point-in-rectangle test, boundary inclusive. points: (..., 2)."""
        local = (np.asarray(points) - self.center) @ self.axes.T
        return (np.abs(local[..., 0]) <= self.length / 2) & (np.abs(local[..., 1]) <= self.width / 2)

    def to_dict(self) -> dict:
        return {
            "x": self.x, "y": self.y, "l": self.length, "w": self.width,
            "yaw": self.yaw, "vx": self.vx, "vy": self.vy, "class": self.cls,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectBox":
        return cls(
            x=data["x"], y=data["y"], length=data["l"], width=data["w"],
            yaw=data.get("yaw", 0.0), vx=data.get("vx", 0.0), vy=data.get("vy", 0.0),
            cls=data.get("class", "car"),
        )


def obb_intersect(a: ObjectBox, b: ObjectBox) -> bool:
    """
    Separating-axis test for two rectangles over the 4 candidate axes
    (each box's heading and lateral directions). Touching counts as intersecting.
    """
    corners_a, corners_b = a.corners(), b.corners()
    for axis in np.vstack([a.axes, b.axes]):
        proj_a = corners_a @ axis
        proj_b = corners_b @ axis
        if proj_a.max() < proj_b.min() or proj_b.max() < proj_a.min():
            return False
    return True


def _footprint_points(box: ObjectBox, resolution_m: float) -> np.ndarray:
    nu = int(math.ceil(box.length / resolution_m)) + 1
    nv = int(math.ceil(box.width / resolution_m)) + 1
    u = np.linspace(-box.length / 2, box.length / 2, nu)
    v = np.linspace(-box.width / 2, box.width / 2, nv)
    grid = np.stack(np.meshgrid(u, v, indexing="ij"), axis=-1).reshape(-1, 2)
    return box.center + grid @ box.axes


def obb_intersect_oracle(a: ObjectBox, b: ObjectBox, resolution_m: float) -> bool:
    """Brute force: sample each footprint on a dense grid and test points against the other box."""
    if resolution_m <= 0:
        raise ValueError("resolution must be positive")
    if b.contains(_footprint_points(a, resolution_m)).any():
        return True
    return bool(a.contains(_footprint_points(b, resolution_m)).any())
