import csv
import io
import logging
import math
from collections.abc import Sequence
from enum import Enum

import numpy as np
from pydantic import BaseModel, Field

from planeval.geometry import EGO_DIMS, ObjectBox, obb_intersect

logger = logging.getLogger(__name__)

WAYPOINT_DT = 0.5
N_WAYPOINTS = 6
HORIZONS = (1, 2, 3)


class Convention(str, Enum):
    STP3 = "stp3"    # averaged over all waypoints up to the horizon
    UNIAD = "uniad"  # read at the horizon waypoint


class MetricInputError(ValueError):
    pass


def _horizon_index(horizon_s: float) -> int:
    if horizon_s not in HORIZONS:
        raise MetricInputError(f"horizon must be one of {HORIZONS}, got {horizon_s}")
    return int(round(horizon_s / WAYPOINT_DT))


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise MetricInputError(f"waypoint count mismatch: {pred.shape} vs {gt.shape}")


def waypoint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def l2_metric(pred: np.ndarray, gt: np.ndarray, horizon_s: float, convention: Convention) -> float:
    n = _horizon_index(horizon_s)
    errors = waypoint_errors(pred, gt)
    if Convention(convention) is Convention.UNIAD:
        return float(errors[n - 1])
    return float(errors[:n].mean())


def average_l2(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean waypoint error over the full 3 s window."""
    return float(waypoint_errors(pred, gt).mean())


def ego_boxes(traj: np.ndarray, ego_dims: tuple[float, float] = EGO_DIMS) -> list[ObjectBox]:
    """Ego box at each waypoint, heading along the last displacement (first waypoint: +x)."""
    boxes = []
    heading = 0.0
    prev = None
    for point in np.asarray(traj, dtype=np.float64):
        if prev is not None:
            delta = point - prev
            if np.hypot(*delta) > 1e-6:
                heading = math.atan2(delta[1], delta[0])
        boxes.append(ObjectBox(x=float(point[0]), y=float(point[1]), length=ego_dims[0], width=ego_dims[1], yaw=heading))
        prev = point
    return boxes


def waypoint_collisions(
    traj: np.ndarray,
    objects: Sequence[ObjectBox],
    ego_dims: tuple[float, float] = EGO_DIMS,
    ignore: Sequence[set[int]] | None = None,
) -> np.ndarray:
    """
    Per-waypoint collision flags. Objects are advanced at constant velocity to
    each waypoint's time. `ignore[i]` lists object indices skipped at waypoint i.
    """
    flags = np.zeros(len(traj), dtype=bool)
    for i, ego in enumerate(ego_boxes(traj, ego_dims)):
        t = (i + 1) * WAYPOINT_DT
        skipped = ignore[i] if ignore is not None else set()
        flags[i] = any(
            obb_intersect(ego, obj.moved(t)) for j, obj in enumerate(objects) if j not in skipped
        )
    return flags


def gt_collision_mask(
    gt: np.ndarray, objects: Sequence[ObjectBox], ego_dims: tuple[float, float] = EGO_DIMS
) -> list[set[int]]:
    """Object indices already colliding with the ground-truth ego box, per waypoint."""
    masks = []
    for i, ego in enumerate(ego_boxes(gt, ego_dims)):
        t = (i + 1) * WAYPOINT_DT
        masks.append({j for j, obj in enumerate(objects) if obb_intersect(ego, obj.moved(t))})
    return masks


def collides(
    pred: np.ndarray,
    objects: Sequence[ObjectBox],
    horizon_s: float,
    convention: Convention,
    ego_dims: tuple[float, float] = EGO_DIMS,
) -> bool:
    n = _horizon_index(horizon_s)
    return _flag_at(waypoint_collisions(pred, objects, ego_dims), n, Convention(convention))


def _flag_at(flags: np.ndarray, n: int, convention: Convention) -> bool:
    if convention is Convention.UNIAD:
        return bool(flags[n - 1])
    return bool(flags[:n].any())


class HorizonValues(BaseModel):
    h1: float = Field(alias="1s")
    h2: float = Field(alias="2s")
    h3: float = Field(alias="3s")
    avg: float

    model_config = {"populate_by_name": True, "extra": "forbid"}

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "HorizonValues":
        h1, h2, h3 = (float(v) for v in values)
        return cls(h1=h1, h2=h2, h3=h3, avg=(h1 + h2 + h3) / 3.0)

    def row(self) -> list[float]:
        return [self.h1, self.h2, self.h3, self.avg]


class PlanReport(BaseModel):
    """L2 (m) and collision rate (%) at 1s/2s/3s under both conventions."""

    l2: dict[Convention, HorizonValues]
    collision: dict[Convention, HorizonValues]
    n_samples: int
    n_failed: int = 0

    model_config = {"extra": "forbid"}

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["convention", "L2_1s", "L2_2s", "L2_3s", "L2_avg", "col_1s", "col_2s", "col_3s", "col_avg"])
        for convention in Convention:
            writer.writerow(
                [convention.value]
                + [f"{v:.4f}" for v in self.l2[convention].row()]
                + [f"{v:.4f}" for v in self.collision[convention].row()]
            )
        return buf.getvalue()


def evaluate(
    predictions: Sequence[np.ndarray | None],
    gts: Sequence[np.ndarray],
    objects: Sequence[Sequence[ObjectBox]],
    ego_dims: tuple[float, float] = EGO_DIMS,
    mask_gt_collisions: bool = False,
) -> PlanReport:
    """
    Aggregate open-loop metrics. A missing prediction (failed generation) is
    scored as a stationary trajectory at the origin.
    """
    if not (len(predictions) == len(gts) == len(objects)):
        raise MetricInputError(
            f"count mismatch: {len(predictions)} predictions, {len(gts)} ground truths, {len(objects)} object lists"
        )
    if not gts:
        raise MetricInputError("nothing to evaluate")

    l2 = {c: np.zeros((len(gts), len(HORIZONS))) for c in Convention}
    hits = {c: np.zeros((len(gts), len(HORIZONS))) for c in Convention}
    n_failed = 0
    for i, (pred, gt, objs) in enumerate(zip(predictions, gts, objects)):
        gt = np.asarray(gt, dtype=np.float64)
        if pred is None:
            n_failed += 1
            pred = np.zeros_like(gt)
        ignore = gt_collision_mask(gt, objs, ego_dims) if mask_gt_collisions else None
        flags = waypoint_collisions(pred, objs, ego_dims, ignore=ignore)
        for k, horizon in enumerate(HORIZONS):
            n = _horizon_index(horizon)
            for convention in Convention:
                l2[convention][i, k] = l2_metric(pred, gt, horizon, convention)
                hits[convention][i, k] = _flag_at(flags, n, convention)

    report = PlanReport(
        l2={c: HorizonValues.from_values(l2[c].mean(axis=0)) for c in Convention},
        collision={c: HorizonValues.from_values(100.0 * hits[c].mean(axis=0)) for c in Convention},
        n_samples=len(gts),
        n_failed=n_failed,
    )
    logger.info(
        "Evaluated %d samples (%d failed): L2 avg stp3=%.3f uniad=%.3f, collision avg stp3=%.2f%% uniad=%.2f%%",
        report.n_samples, n_failed,
        report.l2[Convention.STP3].avg, report.l2[Convention.UNIAD].avg,
        report.collision[Convention.STP3].avg, report.collision[Convention.UNIAD].avg,
    )
    return report
