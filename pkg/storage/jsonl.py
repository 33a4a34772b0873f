import hashlib
import json
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)

TRAIN, VAL = "train", "val"
VAL_FRACTION = 0.2


class StorageError(OSError):
    def __init__(self, path: Path, reason: str) -> None:
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


def write_jsonl(rows: Iterable[dict[str, Any]], path: Path) -> int:
    """One compact, key-sorted JSON object per line, so equal data gives equal bytes."""
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as f:
            for row in rows:
                f.write(json.dumps(row, sort_keys=True, separators=(",", ":"), allow_nan=False))
                f.write("\n")
                count += 1
    except OSError as exc:
        raise StorageError(path, f"cannot write ({exc.strerror or exc})") from exc
    logger.debug("Wrote %d rows -> %s", count, path)
    return count


def read_jsonl(path: Path) -> list[dict[str, Any]]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise StorageError(path, f"cannot read ({exc.strerror or exc})") from exc
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise StorageError(path, f"line {lineno} is not valid JSON") from exc
    return rows


def split_of(scene_id: str, val_fraction: float = VAL_FRACTION) -> str:
    """Stable train/val assignment from a hash of the scene id."""
    bucket = int.from_bytes(hashlib.sha256(scene_id.encode("utf-8")).digest()[:8], "big") % 10_000
    return VAL if bucket < val_fraction * 10_000 else TRAIN


def split_rows(rows: Sequence, split: str, scene_id=lambda r: r.scene_id) -> list:
    if split not in (TRAIN, VAL):
        raise ValueError(f"unknown split {split!r}")
    return [r for r in rows if split_of(scene_id(r)) == split]
