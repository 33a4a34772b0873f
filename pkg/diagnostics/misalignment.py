import csv
import json
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from cot.prompts import reasoning_rounds
from datagen.encoding import SampleEncoder
from datagen.world import SceneSample
from diagnostics.judge import JudgeClient, JudgeReport, judge_cot
from diagnostics.plots import scatter_svg
from model.generation import generate
from model.transformer import Model, score
from planeval.metrics import average_l2
from storage.jsonl import write_jsonl

logger = logging.getLogger(__name__)

POINTS_FILE = "points.csv"
SCATTER_FILE = "scatter.svg"
STATS_FILE = "stats.json"
JUDGE_FILE = "judge.jsonl"


@dataclass(frozen=True)
class MisalignmentPoint:
    sample_id: str
    cot_score: float
    decision_error: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.cot_score) and math.isfinite(self.decision_error)):
            raise ValueError(f"{self.sample_id}: non-finite point")
        if self.decision_error < 0:
            raise ValueError(f"{self.sample_id}: negative decision error")


@dataclass
class MisalignmentResult:
    points: list[MisalignmentPoint]
    failures: dict[str, str]
    predicted_rounds: list[list[str]] = field(default_factory=list)
    reference_rounds: list[list[str]] = field(default_factory=list)
    sample_ids: list[str] = field(default_factory=list)
    judge: JudgeReport | None = None

    def stats(self) -> dict:
        scores = [p.cot_score for p in self.points]
        neg_errors = [-p.decision_error for p in self.points]
        out = {
            "n": len(self.points),
            "failures": len(self.failures),
            "pearson": correlation(scores, neg_errors, "pearson"),
            "spearman": correlation(scores, neg_errors, "spearman"),
            "mean_cot_score": float(np.mean(scores)) if scores else "n/a",
            "mean_decision_error_m": -float(np.mean(neg_errors)) if scores else "n/a",
        }
        if self.judge is not None:
            out["judge"] = self.judge.stats()
        return out


def correlation(x: Sequence[float], y: Sequence[float], method: str) -> float | str:
    """Pearson or Spearman coefficient, or "n/a" when it is undefined."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return "n/a"
    if method == "pearson":
        value = stats.pearsonr(x, y)[0]
    elif method == "spearman":
        value = stats.spearmanr(x, y)[0]
    else:
        raise ValueError(f"unknown correlation method {method!r}")
    return float(value) if math.isfinite(value) else "n/a"


def collect_points(
    model: Model,
    encoder: SampleEncoder,
    samples: Sequence[SceneSample],
    seed: int = 0,
    temperature: float | None = None,
) -> MisalignmentResult:
    """
    Decode every sample (greedy unless a temperature is given) and pair the
    model's own score of what it generated with the L2 of the plan it produced.
    """
    frozen = model.frozen()
    result = MisalignmentResult(points=[], failures={})
    for i, sample in enumerate(samples):
        visual = encoder.visual(sample)
        reference = encoder.turns(sample)
        prompts = [p for p, _ in reference]
        (conv,) = generate(
            frozen, encoder.vocab, visual, encoder.prompt_ids(sample), k=1,
            temperature=temperature or 1.0, seed=seed * 1_000_003 + i, greedy=temperature is None,
        )
        turns = list(zip(prompts, conv.responses))
        result.sample_ids.append(sample.sample_id)
        predicted = reasoning_rounds(turns, encoder.options)
        expected = reasoning_rounds(reference, encoder.options)
        result.predicted_rounds.append(predicted + [""] * (len(expected) - len(predicted)))
        result.reference_rounds.append(expected)
        if not conv.ok:
            result.failures[sample.sample_id] = conv.failure or "no trajectory"
            logger.warning("%s: generation failed (%s)", sample.sample_id, conv.failure)
            continue
        s = float(score(frozen, visual, conv.stream()).value)
        result.points.append(MisalignmentPoint(sample.sample_id, s, average_l2(conv.trajectory, sample.gt_trajectory)))
    return result


def write_points(points: Sequence[MisalignmentPoint], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["sample_id", "cot_score", "decision_error_m"])
        for p in points:
            writer.writerow([p.sample_id, repr(p.cot_score), repr(p.decision_error)])


def misalignment_report(
    model: Model,
    encoder: SampleEncoder,
    samples: Sequence[SceneSample],
    seed: int,
    out_dir: Path,
    judge: JudgeClient | None = None,
    max_in_flight: int = 4,
    temperature: float | None = None,
) -> MisalignmentResult:
    """
    Writes points.csv and scatter.svg, and stats.json with the correlation of
    the CoT score against the negated decision error. With a judge, the
    reasoning rounds are also scored and judge.jsonl keeps every raw score.
    """
    result = collect_points(model, encoder, samples, seed=seed, temperature=temperature)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_points(result.points, out_dir / POINTS_FILE)
    scatter_svg(
        [p.cot_score for p in result.points],
        [p.decision_error for p in result.points],
        out_dir / SCATTER_FILE,
        title=f"{len(result.points)} samples",
    )
    if judge is not None:
        result.judge = judge_cot(
            judge, result.predicted_rounds, result.reference_rounds, result.sample_ids, max_in_flight
        )
        write_jsonl(result.judge.audit, out_dir / JUDGE_FILE)
    summary = result.stats()
    (out_dir / STATS_FILE).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(
        "Misalignment: n=%d failures=%d pearson=%s spearman=%s -> %s",
        summary["n"], summary["failures"], summary["pearson"], summary["spearman"], out_dir,
    )
    return result
