import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from config import RunConfig
from cot.prompts import template_corpus
from datagen.alignment import (
    AlignmentRecord,
    AlignmentSummary,
    aligned_example,
    build_alignment_dataset,
    load_alignment_dataset,
    vanilla_example,
)
from datagen.encoding import SampleEncoder
from datagen.world import SceneSample, gen_world
from diagnostics.judge import build_judge
from diagnostics.misalignment import MisalignmentResult, misalignment_report
from losses.training import TrainResult, TrainSchedule, train
from model.checkpoint import load_checkpoint, save_checkpoint
from model.generation import generate
from model.transformer import Model, init_model
from planeval.metrics import PlanReport, evaluate
from storage.jsonl import TRAIN, split_rows
from storage.world_store import WorldSummary, load_world, save_world
from tokenizer.vocab import Vocab, build_vocab

logger = logging.getLogger(__name__)


class CliUsageError(ValueError):
    """Bad flags, missing prerequisite files or incompatible artifacts (exit 2)."""


class ModelQualityError(RuntimeError):
    """The model is too broken to evaluate (exit 3)."""


@dataclass
class Context:
    cfg: RunConfig
    vocab: Vocab
    encoder: SampleEncoder


def make_context(cfg: RunConfig) -> Context:
    vocab = Vocab.load(cfg.paths.vocab) if cfg.paths.vocab.is_file() else build_vocab(template_corpus())
    encoder = SampleEncoder(
        vocab,
        bev=cfg.bev.spec,
        grid=(cfg.bev.grid_h, cfg.bev.grid_w),
        adapter=cfg.bev.adapter,
        options=cfg.cot.options,
    )
    return Context(cfg=cfg, vocab=vocab, encoder=encoder)


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CliUsageError(f"{what} not found: {path}")
    return path


def history_path(checkpoint: Path) -> Path:
    return checkpoint.with_suffix(".history.csv")


def load_samples(ctx: Context, split: str | None = None) -> list[SceneSample]:
    samples = load_world(_require(ctx.cfg.paths.world, "world file (run gen-data first)"))
    return samples if split is None else split_rows(samples, split)


def load_model(ctx: Context, checkpoint: Path) -> Model:
    model = load_checkpoint(_require(checkpoint, "checkpoint"))
    n_visual, dim = ctx.encoder.visual_layout
    config = model.config
    if (config.vocab_size, config.n_visual_tokens, config.visual_token_dim) != (len(ctx.vocab), n_visual, dim):
        raise CliUsageError(
            f"{checkpoint} expects vocab {config.vocab_size} and {config.n_visual_tokens}x{config.visual_token_dim} "
            f"visual tokens, the run config gives {len(ctx.vocab)} and {n_visual}x{dim}"
        )
    return model


def gen_data(ctx: Context, out: Path | None = None) -> WorldSummary:
    out = out or ctx.cfg.paths.world
    samples = gen_world(ctx.cfg.world.seed, ctx.cfg.world.n_scenes)
    summary = save_world(samples, out)
    ctx.cfg.paths.vocab.parent.mkdir(parents=True, exist_ok=True)
    ctx.vocab.save(ctx.cfg.paths.vocab)
    out.with_suffix(".summary.json").write_text(summary.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return summary


def train_vanilla(ctx: Context, samples: Sequence[SceneSample], schedule: TrainSchedule,
                  history: Path | None = None, model_seed: int | None = None) -> TrainResult:
    section = ctx.cfg.model if model_seed is None else ctx.cfg.model.model_copy(update={"seed": model_seed})
    config = section.resolve(len(ctx.vocab), ctx.encoder.visual_layout)
    model = init_model(config)
    examples = [vanilla_example(s, ctx.encoder) for s in samples]
    return train(model, examples, schedule, history_path=history)


def train_aligned(ctx: Context, model: Model, records: Sequence[AlignmentRecord], schedule: TrainSchedule,
                  history: Path | None = None) -> TrainResult:
    if not records:
        raise CliUsageError("alignment dataset is empty")
    max_text = model.config.max_seq_len - ctx.encoder.visual_layout[0]
    examples = [aligned_example(r, ctx.encoder, max_text) for r in records]
    with_alignment = sum(1 for e in examples if e.has_alignment)
    logger.info("Aligned training: %d examples, %d with alignment terms", len(examples), with_alignment)
    return train(model, examples, schedule, history_path=history)


def train_command(ctx: Context, mode: str, out_checkpoint: Path | None = None,
                  checkpoint: Path | None = None) -> TrainResult:
    paths = ctx.cfg.paths
    if mode == "vanilla":
        out = out_checkpoint or paths.vanilla_checkpoint
        result = train_vanilla(ctx, load_samples(ctx, TRAIN), ctx.cfg.train, history_path(out))
    elif mode == "aligned":
        out = out_checkpoint or paths.aligned_checkpoint
        vanilla = load_model(ctx, _require(checkpoint or paths.vanilla_checkpoint, "vanilla checkpoint"))
        records = load_alignment_dataset(_require(paths.alignment, "alignment dataset (run build-align first)"))
        result = train_aligned(ctx, vanilla, records, ctx.cfg.train, history_path(out))
    else:
        raise CliUsageError(f"unknown training mode {mode!r}")
    save_checkpoint(result.model, out)
    return result


def build_align(ctx: Context, checkpoint: Path | None = None, out: Path | None = None) -> AlignmentSummary:
    model = load_model(ctx, checkpoint or ctx.cfg.paths.vanilla_checkpoint)
    align = ctx.cfg.align
    return build_alignment_dataset(
        model, ctx.encoder, load_samples(ctx, TRAIN), k=align.k,
        out_path=out or ctx.cfg.paths.alignment, temperature=align.temperature, seed=align.seed,
    )


def predict(ctx: Context, model: Model, samples: Sequence[SceneSample]) -> list:
    frozen = model.frozen()
    predictions = []
    for sample in samples:
        (conv,) = generate(frozen, ctx.vocab, ctx.encoder.visual(sample), ctx.encoder.prompt_ids(sample), greedy=True)
        if not conv.ok:
            logger.debug("%s: no trajectory (%s)", sample.sample_id, conv.failure)
        predictions.append(conv.trajectory)
    return predictions


def evaluate_samples(ctx: Context, predictions: Sequence, samples: Sequence[SceneSample]) -> PlanReport:
    return evaluate(
        predictions,
        [s.gt_trajectory for s in samples],
        [s.objects for s in samples],
        ego_dims=ctx.cfg.eval.ego_dims,
        mask_gt_collisions=ctx.cfg.eval.mask_gt_collisions,
    )


def eval_command(ctx: Context, split: str, checkpoint: Path | None = None, report: Path | None = None,
                 oracle: bool = False) -> PlanReport:
    samples = load_samples(ctx, split)
    if not samples:
        raise CliUsageError(f"split {split!r} is empty")
    if oracle:
        predictions = [s.gt_trajectory for s in samples]
    else:
        predictions = predict(ctx, load_model(ctx, checkpoint or ctx.cfg.paths.aligned_checkpoint), samples)
    result = evaluate_samples(ctx, predictions, samples)

    report = report or ctx.cfg.paths.out_dir / f"eval-{split}.json"
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(result.to_json() + "\n", encoding="utf-8")
    report.with_suffix(".csv").write_text(result.to_csv(), encoding="utf-8")
    logger.info("Plan report -> %s", report)

    failure_rate = result.n_failed / result.n_samples
    if failure_rate > ctx.cfg.eval.max_failure_rate:
        raise ModelQualityError(
            f"{result.n_failed} of {result.n_samples} generations had no parseable trajectory "
            f"({failure_rate:.0%} > {ctx.cfg.eval.max_failure_rate:.0%})"
        )
    return result


def judged_samples(ctx: Context, split: str) -> list[SceneSample]:
    """A fixed prefix of the split, in file order."""
    return load_samples(ctx, split)[: ctx.cfg.judge.max_samples]


def diagnose(ctx: Context, checkpoint: Path | None = None, out_dir: Path | None = None,
             split: str = "val") -> MisalignmentResult:
    judge = build_judge(ctx.cfg.judge)
    model = load_model(ctx, checkpoint or ctx.cfg.paths.aligned_checkpoint)
    samples = judged_samples(ctx, split)
    if not samples:
        raise CliUsageError(f"split {split!r} is empty")
    return misalignment_report(
        model, ctx.encoder, samples, seed=ctx.cfg.align.seed,
        out_dir=out_dir or ctx.cfg.paths.out_dir / "diagnose",
        judge=judge, max_in_flight=ctx.cfg.judge.max_in_flight,
    )
