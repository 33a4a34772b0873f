import logging
import re

import numpy as np

from tokenizer.vocab import EOT, SOT

logger = logging.getLogger(__name__)

N_WAYPOINTS = 6

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")
_PAIR_RE = re.compile(r"\(([^()]*)\)")


class TrajectoryParseError(ValueError):
    pass


class MissingMarker(TrajectoryParseError):
    def __init__(self, marker: str) -> None:
        super().__init__(f"missing {marker} marker")
        self.marker = marker


class WaypointCount(TrajectoryParseError):
    def __init__(self, count: int) -> None:
        super().__init__(f"expected {N_WAYPOINTS} waypoints, got {count}")
        self.count = count


class BadNumber(TrajectoryParseError):
    def __init__(self, text: str) -> None:
        super().__init__(f"unparseable coordinate {text!r}")
        self.text = text


def quantize(value: float) -> float:
    # + 0.0 turns -0.0 into 0.0
    return float(f"{value:.2f}") + 0.0


def quantize_trajectory(traj: np.ndarray) -> np.ndarray:
    return np.vectorize(quantize, otypes=[np.float64])(np.asarray(traj, dtype=np.float64))


def format_number(value: float) -> str:
    return f"{quantize(value):.2f}"


def serialize_trajectory(traj: np.ndarray) -> str:
    traj = np.asarray(traj, dtype=np.float64)
    if traj.shape != (N_WAYPOINTS, 2):
        raise WaypointCount(traj.shape[0] if traj.ndim else 0)
    pairs = ",".join(f"({format_number(x)},{format_number(y)})" for x, y in traj)
    return f"{SOT}{pairs}{EOT}"


def parse_trajectory(text: str) -> np.ndarray:
    """Waypoints of the first <SOT>...<EOT> span in `text`, shape (6, 2)."""
    start = text.find(SOT)
    if start < 0:
        raise MissingMarker(SOT)
    end = text.find(EOT, start)
    if end < 0:
        raise MissingMarker(EOT)
    body = text[start + len(SOT): end]
    pairs = _PAIR_RE.findall(body)
    if len(pairs) != N_WAYPOINTS:
        raise WaypointCount(len(pairs))
    waypoints = []
    for pair in pairs:
        fields = [field.strip() for field in pair.split(",")]
        if len(fields) != 2:
            raise BadNumber(pair)
        for field in fields:
            if not _NUMBER_RE.fullmatch(field):
                raise BadNumber(field)
        waypoints.append((float(fields[0]), float(fields[1])))
    return np.array(waypoints, dtype=np.float64)
