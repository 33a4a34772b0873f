import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from losses.objectives import AlignedExample, LossWeights, example_terms
from losses.optim import AdamW, cosine_lr
from model.transformer import Model
from numeric_core.autodiff import backward
from numeric_core.node import NonFiniteError

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, step: int, reason: str) -> None:
        super().__init__(f"training aborted at epoch {epoch}, step {step}: {reason}")
        self.epoch = epoch
        self.step = step


class TrainSchedule(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=10, ge=1)
    batch_size: int = Field(default=4, ge=1)
    lr: float = Field(default=3e-4, gt=0)
    min_lr: float = Field(default=3e-5, ge=0)
    weight_decay: float = Field(default=0.01, ge=0)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    lambda_rank: float = 1.0
    lambda_binary: float = 1.0
    detach: bool = True
    data_fraction: float = Field(default=1.0, gt=0, le=1)
    seed: int = 0

    @property
    def weights(self) -> LossWeights:
        return LossWeights(lambda_rank=self.lambda_rank, lambda_binary=self.lambda_binary, detach=self.detach)


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    step: int
    L_van: float
    L_rank: float
    L_binary: float
    total: float
    lr: float


@dataclass
class TrainResult:
    model: Model
    history: list[HistoryRow]

    def epoch_means(self) -> list[float]:
        epochs = sorted({row.epoch for row in self.history})
        return [float(np.mean([r.total for r in self.history if r.epoch == e])) for e in epochs]


def subset(examples: Sequence[AlignedExample], fraction: float, seed: int) -> list[AlignedExample]:
    """Seeded subset used by the few-shot runs; fraction 1 keeps every example."""
    if fraction >= 1.0:
        return list(examples)
    keep = max(1, math.ceil(fraction * len(examples)))
    order = np.random.default_rng(seed).permutation(len(examples))[:keep]
    return [examples[i] for i in sorted(order)]


def write_history(history: Sequence[HistoryRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([column.name for column in fields(HistoryRow)])
        for row in history:
            writer.writerow([repr(v) for v in astuple(row)])
    logger.info("Loss history written: %d rows -> %s", len(history), path)


def train(
    model: Model,
    examples: Sequence[AlignedExample],
    schedule: TrainSchedule = TrainSchedule(),
    history_path: Path | None = None,
) -> TrainResult:
    """
    AdamW with cosine-annealed learning rate. Each step averages the per-example
    losses of one batch; the example order is reshuffled every epoch from the seed.
    """
    data = subset(examples, schedule.data_fraction, schedule.seed)
    if not data:
        raise ValueError("training set is empty")
    steps_per_epoch = math.ceil(len(data) / schedule.batch_size)
    total_steps = schedule.epochs * steps_per_epoch
    optimizer = AdamW(model.params, schedule.betas, schedule.eps, schedule.weight_decay)
    weights = schedule.weights
    history: list[HistoryRow] = []
    logger.info(
        "Training on %d examples: %d epochs x %d steps, lr %.2e -> %.2e",
        len(data), schedule.epochs, steps_per_epoch, schedule.lr, schedule.min_lr,
    )

    step = 0
    for epoch in range(schedule.epochs):
        order = np.random.default_rng([schedule.seed, epoch]).permutation(len(data))
        for start in range(0, len(data), schedule.batch_size):
            batch = [data[i] for i in order[start: start + schedule.batch_size]]
            lr = cosine_lr(step, total_steps, schedule.lr, schedule.min_lr)
            grads = {name: np.zeros_like(node.value) for name, node in model.params.items()}
            sums = np.zeros(4)
            for example in batch:
                try:
                    terms = example_terms(model, example, weights)
                except NonFiniteError as exc:
                    raise TrainingError(epoch, step, f"non-finite value in {example.sample_id or 'example'}") from exc
                values = terms.values()
                if not all(math.isfinite(v) for v in values.values()):
                    raise TrainingError(epoch, step, "non-finite loss")
                sums += [values["L_van"], values["L_rank"], values["L_binary"], values["total"]]
                for name, g in backward(terms.total, model.params).items():
                    grads[name] += g / len(batch)
            optimizer.step(grads, lr)
            means = sums / len(batch)
            history.append(HistoryRow(epoch, step, *(float(v) for v in means), lr))
            logger.debug("epoch %d step %d total %.4f lr %.3e", epoch, step, means[3], lr)
            step += 1
        epoch_rows = [r.total for r in history if r.epoch == epoch]
        logger.info("Epoch %d/%d mean loss %.4f", epoch + 1, schedule.epochs, float(np.mean(epoch_rows)))

    if history_path is not None:
        write_history(history, history_path)
    return TrainResult(model=model, history=history)
