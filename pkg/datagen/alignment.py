import logging
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from pydantic import BaseModel

from datagen.candidates import ScoredCandidate, is_ranked, sample_candidates
from datagen.encoding import SampleEncoder
from datagen.negatives import DataBasedSet, PairingError, permute_negatives
from datagen.world import SceneSample
from losses.objectives import AlignedExample
from model.transformer import Model
from storage.jsonl import read_jsonl, write_jsonl
from tokenizer.conversation import TokenStream, encode_conversation

logger = logging.getLogger(__name__)


class AlignmentRecordError(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentRecord:
    sample: SceneSample
    model_based: tuple[ScoredCandidate, ...]
    data_based: DataBasedSet | None

    def to_dict(self) -> dict:
        return self.sample.to_dict() | {
            "model_based": [c.to_dict() for c in self.model_based],
            "data_based": None if self.data_based is None else self.data_based.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AlignmentRecord":
        sample = SceneSample.from_dict(data)
        model_based = tuple(ScoredCandidate.from_dict(c) for c in data["model_based"])
        if not is_ranked(list(model_based)):
            raise AlignmentRecordError(f"{sample.sample_id}: model-based candidates are not in l2 order")
        data_based = None
        if data.get("data_based") is not None:
            data_based = DataBasedSet.from_dict(sample.sample_id, data["data_based"])
        return cls(sample=sample, model_based=model_based, data_based=data_based)


class AlignmentSummary(BaseModel):
    path: str
    records: int
    model_based_sets: int
    model_based_candidates: int
    failed_candidates: int
    data_based_pairs: int


def partners(samples: Sequence[SceneSample]) -> dict[str, SceneSample]:
    """For each sample, another timestamp of its scene with a different decision."""
    by_scene: dict[str, list[SceneSample]] = defaultdict(list)
    for s in samples:
        by_scene[s.scene_id].append(s)
    out = {}
    for group in by_scene.values():
        for u in group:
            match = next((v for v in group if v.timestamp_index != u.timestamp_index and v.decision != u.decision), None)
            if match is not None:
                out[u.sample_id] = match
    return out


def build_alignment_records(
    model: Model,
    encoder: SampleEncoder,
    samples: Sequence[SceneSample],
    k: int = 4,
    temperature: float = 1.0,
    seed: int = 0,
) -> list[AlignmentRecord]:
    paired = partners(samples)
    records = []
    for i, sample in enumerate(samples):
        ranked = sample_candidates(model, encoder, sample, k=k, temperature=temperature, seed=seed * 1_000_003 + i)
        data_based = None
        partner = paired.get(sample.sample_id)
        if partner is not None:
            try:
                data_based = permute_negatives(sample, partner)
            except PairingError:
                logger.exception("Skipping data-based pair for %s", sample.sample_id)
        records.append(AlignmentRecord(sample=sample, model_based=tuple(ranked), data_based=data_based))
        if (i + 1) % 25 == 0:
            logger.info("Alignment candidates: %d/%d samples", i + 1, len(samples))
    return records


def summarize(records: Sequence[AlignmentRecord], path: Path) -> AlignmentSummary:
    return AlignmentSummary(
        path=str(path),
        records=len(records),
        model_based_sets=sum(1 for r in records if len(r.model_based) > 1),
        model_based_candidates=sum(len(r.model_based) for r in records),
        failed_candidates=sum(1 for r in records for c in r.model_based if c.trajectory is None),
        data_based_pairs=sum(len(r.data_based.negatives) for r in records if r.data_based is not None),
    )


def build_alignment_dataset(
    model: Model,
    encoder: SampleEncoder,
    samples: Sequence[SceneSample],
    k: int,
    out_path: Path,
    temperature: float = 1.0,
    seed: int = 0,
) -> AlignmentSummary:
    records = build_alignment_records(model, encoder, samples, k=k, temperature=temperature, seed=seed)
    write_jsonl((r.to_dict() for r in records), out_path)
    summary = summarize(records, out_path)
    logger.info(
        "Alignment dataset: %d records, %d model-based sets, %d data-based pairs -> %s",
        summary.records, summary.model_based_sets, summary.data_based_pairs, out_path,
    )
    return summary


def load_alignment_dataset(path: Path) -> list[AlignmentRecord]:
    return [AlignmentRecord.from_dict(row) for row in read_jsonl(path)]


def vanilla_example(sample: SceneSample, encoder: SampleEncoder) -> AlignedExample:
    return AlignedExample(visual=encoder.visual(sample), stream=encoder.stream(sample), sample_id=sample.sample_id)


def _inside(streams, max_text: int | None, sample_id: str) -> tuple[TokenStream, ...]:
    kept = []
    for stream in streams:
        stream = stream.clipped(max_text)
        if stream.n_supervised:
            kept.append(stream)
        else:
            logger.debug("%s: dropped a conversation with no response inside the window", sample_id)
    return tuple(kept)


def aligned_example(record: AlignmentRecord, encoder: SampleEncoder, max_text: int | None = None) -> AlignedExample:
    """
    The sample's own conversation doubles as the data-based positive. Failed
    candidates stay in the ranking, at the bottom. With `max_text`, candidate
    and negative streams are cut to that many text positions and the ones left
    with nothing to score are dropped; the reference stream is never cut.
    """
    sample = record.sample
    ranked = _inside((encode_conversation(list(c.turns), encoder.vocab) for c in record.model_based),
                     max_text, sample.sample_id)
    negatives = ()
    if record.data_based is not None:
        negatives = _inside((encoder.stream(sample, cot=n.cot) for n in record.data_based.negatives),
                            max_text, sample.sample_id)
    return AlignedExample(
        visual=encoder.visual(sample),
        stream=encoder.stream(sample),
        ranked=ranked,
        negatives=negatives,
        sample_id=sample.sample_id,
    )
