import logging
from dataclasses import dataclass
from enum import Enum

from cot.prompts import PLANNING
from datagen.world import SceneSample
from tokenizer.conversation import Turn

logger = logging.getLogger(__name__)


class PairingError(ValueError):
    pass


class NegativeKind(str, Enum):
    COT_SWAPPED = "cot_swapped"
    ANSWER_SWAPPED = "answer_swapped"
    BOTH_SWAPPED = "both_swapped"


@dataclass(frozen=True)
class NegativeTuple:
    kind: NegativeKind
    cot: tuple[Turn, ...]

    def to_dict(self) -> dict:
        return {"provenance": self.kind.value, "cot": [list(t) for t in self.cot]}

    @classmethod
    def from_dict(cls, data: dict) -> "NegativeTuple":
        return cls(kind=NegativeKind(data["provenance"]), cot=tuple((p, r) for p, r in data["cot"]))


@dataclass(frozen=True)
class DataBasedSet:
    """Positive conversation of `sample_id` and the negatives made by borrowing from `partner_id`."""

    sample_id: str
    partner_id: str
    positive: tuple[Turn, ...]
    negatives: tuple[NegativeTuple, ...]

    def to_dict(self) -> dict:
        return {
            "partner": self.partner_id,
            "positive": [list(t) for t in self.positive],
            "negatives": [n.to_dict() for n in self.negatives],
        }

    @classmethod
    def from_dict(cls, sample_id: str, data: dict) -> "DataBasedSet":
        return cls(
            sample_id=sample_id,
            partner_id=data["partner"],
            positive=tuple((p, r) for p, r in data["positive"]),
            negatives=tuple(NegativeTuple.from_dict(n) for n in data["negatives"]),
        )


def _splice(prompts_from: SceneSample, reasoning_from: SceneSample, answer_from: SceneSample) -> tuple[Turn, ...]:
    """u's prompts with the reasoning responses of one sample and the planning response of another."""
    turns = []
    for i, (prompt, _) in enumerate(prompts_from.cot):
        source = answer_from if i == PLANNING else reasoning_from
        turns.append((prompt, source.cot[i][1]))
    return tuple(turns)


def permute_negatives(u: SceneSample, v: SceneSample) -> DataBasedSet:
    """
    Keep u's visual input and ego status, and swap in v's reasoning, v's
    answer, or both. u and v must be two timestamps of one scene with
    different decisions.
    """
    if u.scene_id != v.scene_id:
        raise PairingError(f"{u.sample_id} and {v.sample_id} come from different scenes")
    if u.timestamp_index == v.timestamp_index:
        raise PairingError(f"{u.sample_id} cannot be paired with itself")
    if u.decision == v.decision:
        raise PairingError(f"{u.sample_id} and {v.sample_id} share the decision {u.decision}")
    positive = tuple(u.cot)
    negatives = tuple(
        NegativeTuple(kind, _splice(u, reasoning, answer))
        for kind, reasoning, answer in (
            (NegativeKind.COT_SWAPPED, v, u),
            (NegativeKind.ANSWER_SWAPPED, u, v),
            (NegativeKind.BOTH_SWAPPED, v, v),
        )
    )
    for negative in negatives:
        if negative.cot == positive:
            raise PairingError(f"{negative.kind.value} negative for {u.sample_id} equals the positive")
    return DataBasedSet(sample_id=u.sample_id, partner_id=v.sample_id, positive=positive, negatives=negatives)
