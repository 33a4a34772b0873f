"""
Loss ablation: one vanilla model per seed, then the same fine-tuning run on
its alignment dataset under four loss settings. Every variant sees the same
examples and epochs; only the alignment weights differ.
"""
import csv
import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from cli.pipeline import (
    CliUsageError,
    Context,
    evaluate_samples,
    history_path,
    load_samples,
    predict,
    train_aligned,
    train_vanilla,
)
from datagen.alignment import build_alignment_records
from diagnostics.judge import MockJudge, judge_cot
from diagnostics.misalignment import collect_points
from model.checkpoint import save_checkpoint
from planeval.metrics import Convention
from storage.jsonl import TRAIN, VAL

logger = logging.getLogger(__name__)

VARIANTS = ("vanilla", "rank_only", "binary_only", "full")


@dataclass(frozen=True)
class AblationRow:
    seed: int | str
    variant: str
    l2_avg: float
    collision_avg: float
    spearman: float | str
    s_cot: float | str


def variant_weights(variant: str, lambda_rank: float, lambda_binary: float) -> tuple[float, float]:
    return {
        "vanilla": (0.0, 0.0),
        "rank_only": (lambda_rank, 0.0),
        "binary_only": (0.0, lambda_binary),
        "full": (lambda_rank, lambda_binary),
    }[variant]


def _measure(ctx: Context, model, val, seed: int, variant: str) -> AblationRow:
    report = evaluate_samples(ctx, predict(ctx, model, val), val)
    judged = val[: ctx.cfg.judge.max_samples]
    points = collect_points(model, ctx.encoder, judged, seed=seed)
    judge = judge_cot(MockJudge(), points.predicted_rounds, points.reference_rounds, points.sample_ids,
                      ctx.cfg.judge.max_in_flight)
    return AblationRow(
        seed=seed,
        variant=variant,
        l2_avg=report.l2[Convention.STP3].avg,
        collision_avg=report.collision[Convention.STP3].avg,
        spearman=points.stats()["spearman"],
        s_cot="n/a" if judge.s_cot is None else judge.s_cot,
    )


def _means(rows: Sequence[AblationRow]) -> list[AblationRow]:
    out = []
    for variant in VARIANTS:
        group = [r for r in rows if r.variant == variant]
        if not group:
            continue

        def mean(attr: str) -> float | str:
            values = [getattr(r, attr) for r in group if not isinstance(getattr(r, attr), str)]
            return float(np.mean(values)) if values else "n/a"

        out.append(AblationRow("mean", variant, mean("l2_avg"), mean("collision_avg"), mean("spearman"), mean("s_cot")))
    return out


def write_rows(rows: Sequence[AblationRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(AblationRow.__dataclass_fields__), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: v if isinstance(v, str) else repr(v) for k, v in asdict(row).items()})


def run_ablation(ctx: Context, seeds: Sequence[int], out_dir: Path) -> list[AblationRow]:
    cfg = ctx.cfg
    train_samples, val = load_samples(ctx, TRAIN), load_samples(ctx, VAL)
    if not train_samples or not val:
        raise CliUsageError("ablation needs both a training and a validation split")
    rows: list[AblationRow] = []
    for seed in seeds:
        run_dir = out_dir / f"seed-{seed}"
        logger.info("Ablation seed %d: vanilla phase", seed)
        schedule = cfg.train.model_copy(update={"seed": seed})
        vanilla = train_vanilla(
            ctx, train_samples, schedule, history_path(run_dir / "vanilla.ckpt"), model_seed=seed
        ).model
        save_checkpoint(vanilla, run_dir / "vanilla.ckpt")
        records = build_alignment_records(
            vanilla, ctx.encoder, train_samples, k=cfg.align.k, temperature=cfg.align.temperature, seed=seed,
        )
        for variant in VARIANTS:
            lambda_rank, lambda_binary = variant_weights(variant, cfg.train.lambda_rank, cfg.train.lambda_binary)
            logger.info("Ablation seed %d: %s (rank %.2f, binary %.2f)", seed, variant, lambda_rank, lambda_binary)
            tuned = schedule.model_copy(update={"lambda_rank": lambda_rank, "lambda_binary": lambda_binary})
            model = train_aligned(ctx, vanilla.copy(), records, tuned, history_path(run_dir / f"{variant}.ckpt")).model
            rows.append(_measure(ctx, model, val, seed, variant))
    rows.extend(_means(rows))
    write_rows(rows, out_dir / "ablation.csv")
    logger.info("Ablation table (%d runs) -> %s", len(rows), out_dir / "ablation.csv")
    return rows
