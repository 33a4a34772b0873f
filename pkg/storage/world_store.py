import logging
from collections import Counter
from collections.abc import Sequence
from pathlib import Path

from pydantic import BaseModel

from datagen.world import SceneSample
from storage.jsonl import TRAIN, VAL, read_jsonl, split_of, write_jsonl

logger = logging.getLogger(__name__)


class WorldSummary(BaseModel):
    path: str
    samples: int
    scenes: int
    train: int
    val: int
    scenarios: dict[str, int]
    decision_changes: int


def summarize_world(samples: Sequence[SceneSample], path: Path) -> WorldSummary:
    decisions: dict[str, set] = {}
    for s in samples:
        decisions.setdefault(s.scene_id, set()).add(s.decision)
    splits = Counter(split_of(s.scene_id) for s in samples)
    return WorldSummary(
        path=str(path),
        samples=len(samples),
        scenes=len(decisions),
        train=splits[TRAIN],
        val=splits[VAL],
        scenarios=dict(sorted(Counter(s.scenario for s in samples).items())),
        decision_changes=sum(1 for d in decisions.values() if len(d) > 1),
    )


def save_world(samples: Sequence[SceneSample], path: Path) -> WorldSummary:
    write_jsonl((s.to_dict() for s in samples), path)
    summary = summarize_world(samples, path)
    logger.info("World saved: %d samples in %d scenes -> %s", summary.samples, summary.scenes, path)
    return summary


def load_world(path: Path) -> list[SceneSample]:
    return [SceneSample.from_dict(row) for row in read_jsonl(path)]
