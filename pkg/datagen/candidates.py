import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from datagen.encoding import SampleEncoder
from datagen.world import SceneSample
from model.generation import generate
from model.transformer import Model, score
from planeval.metrics import average_l2
from tokenizer.conversation import Turn

logger = logging.getLogger(__name__)


class Provenance(str, Enum):
    # Data-based conversations carry their NegativeKind instead.
    MODEL_BASED = "model_based"


@dataclass(frozen=True)
class ScoredCandidate:
    """
    A generated conversation ranked by how close its trajectory lands to the
    ground truth. Failed parses carry l2_to_gt = inf and rank after every
    parsed candidate.
    """

    turns: tuple[Turn, ...]
    trajectory: np.ndarray | None
    l2_to_gt: float
    rank: int
    index: int
    score: float | None = None
    failure: str | None = None
    provenance: Provenance = Provenance.MODEL_BASED

    def to_dict(self) -> dict:
        return {
            "turns": [list(t) for t in self.turns],
            "trajectory": None if self.trajectory is None else self.trajectory.tolist(),
            "l2": None if math.isinf(self.l2_to_gt) else self.l2_to_gt,
            "rank": self.rank,
            "index": self.index,
            "score": self.score,
            "failure": self.failure,
            "provenance": self.provenance.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScoredCandidate":
        return cls(
            turns=tuple((p, r) for p, r in data["turns"]),
            trajectory=None if data["trajectory"] is None else np.asarray(data["trajectory"], dtype=np.float64),
            l2_to_gt=math.inf if data["l2"] is None else float(data["l2"]),
            rank=data["rank"],
            index=data["index"],
            score=data.get("score"),
            failure=data.get("failure"),
            provenance=Provenance(data.get("provenance", Provenance.MODEL_BASED.value)),
        )


def is_ranked(candidates: list[ScoredCandidate]) -> bool:
    """Ranks are 0..n-1 in order and l2 never decreases with rank."""
    return all(c.rank == i for i, c in enumerate(candidates)) and all(
        a.l2_to_gt <= b.l2_to_gt for a, b in zip(candidates, candidates[1:])
    )


def rank_candidates(candidates: list[ScoredCandidate]) -> list[ScoredCandidate]:
    """Drop repeated conversations (first kept), sort by (l2, generation index), renumber."""
    seen: set[tuple[Turn, ...]] = set()
    unique = []
    for cand in sorted(candidates, key=lambda c: c.index):
        if cand.turns in seen:
            continue
        seen.add(cand.turns)
        unique.append(cand)
    ordered = sorted(unique, key=lambda c: (c.l2_to_gt, c.index))
    return [
        ScoredCandidate(c.turns, c.trajectory, c.l2_to_gt, rank, c.index, c.score, c.failure, c.provenance)
        for rank, c in enumerate(ordered)
    ]


def sample_candidates(
    model: Model,
    encoder: SampleEncoder,
    sample: SceneSample,
    k: int = 4,
    temperature: float = 1.0,
    seed: int = 0,
) -> list[ScoredCandidate]:
    visual = encoder.visual(sample)
    prompts = [p for p, _ in encoder.turns(sample)]
    generated = generate(model, encoder.vocab, visual, encoder.prompt_ids(sample), k=k, temperature=temperature, seed=seed)
    frozen = model.frozen()
    candidates = []
    for index, conv in enumerate(generated):
        turns = tuple(zip(prompts, conv.responses))
        l2 = average_l2(conv.trajectory, sample.gt_trajectory) if conv.ok else math.inf
        stream = conv.stream()
        s = float(score(frozen, visual, stream).value) if stream.n_supervised else None
        candidates.append(ScoredCandidate(turns, conv.trajectory, l2, rank=0, index=index, score=s, failure=conv.failure))
    ranked = rank_candidates(candidates)
    failed = sum(1 for c in ranked if c.trajectory is None)
    if failed:
        logger.warning("%s: %d of %d candidates failed to parse", sample.sample_id, failed, len(ranked))
    return ranked
