"""
Training objectives over token-average scores.

    vanilla  = -sum_j log P(r_j | context)                 (response tokens)
    rank     = log(1 + sum_{i<j} exp(D(s_j) - s_i))        (candidates best first)
    binary   = log(1 + sum_n exp(D(s_n) - s_p))            (positive vs negatives)
    total    = vanilla + lambda_rank * rank + lambda_binary * binary

D is the stop-gradient, applied to the worse candidate only.
"""
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from model.transformer import Model, score, sequence_nll
from numeric_core import ops
from numeric_core.node import Node, constant
from tokenizer.conversation import TokenStream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlignedExample:
    """
    One training sample: its own conversation (also the data-based positive),
    model-generated candidates ranked best first, and data-based negatives.
    """

    visual: np.ndarray
    stream: TokenStream
    ranked: tuple[TokenStream, ...] = ()
    negatives: tuple[TokenStream, ...] = ()
    sample_id: str = ""

    @property
    def has_alignment(self) -> bool:
        return len(self.ranked) > 1 or bool(self.negatives)


@dataclass(frozen=True)
class LossWeights:
    lambda_rank: float = 1.0
    lambda_binary: float = 1.0
    detach: bool = True


@dataclass
class LossTerms:
    vanilla: Node
    rank: Node = field(default_factory=lambda: constant(0.0))
    binary: Node = field(default_factory=lambda: constant(0.0))
    total: Node = field(default_factory=lambda: constant(0.0))

    def values(self) -> dict[str, float]:
        return {
            "L_van": self.vanilla.item(),
            "L_rank": self.rank.item(),
            "L_binary": self.binary.item(),
            "total": self.total.item(),
        }


def _stop(x: Node, detach: bool) -> Node:
    return ops.detach(x) if detach else x


def _log1p_sum(terms: list[Node]) -> Node:
    if not terms:
        return constant(0.0)
    stacked = ops.concat([ops.reshape(t, (1,)) for t in terms], axis=0)
    return ops.log1p(ops.sum(stacked))


def vanilla_loss(model: Model, visual: np.ndarray, stream: TokenStream) -> Node:
    return sequence_nll(model, visual, stream)


def rank_loss(scores: Sequence[Node], detach: bool = True) -> Node:
    """`scores` ordered best first; zero when there is no pair."""
    terms = [
        ops.exp(_stop(scores[j], detach) - scores[i])
        for i in range(len(scores))
        for j in range(i + 1, len(scores))
    ]
    return _log1p_sum(terms)


def binary_loss(positive: Node, negatives: Sequence[Node], detach: bool = True) -> Node:
    return _log1p_sum([ops.exp(_stop(neg, detach) - positive) for neg in negatives])


def example_terms(model: Model, example: AlignedExample, weights: LossWeights = LossWeights()) -> LossTerms:
    vanilla = vanilla_loss(model, example.visual, example.stream)
    terms = LossTerms(vanilla=vanilla, total=vanilla)

    use_rank = weights.lambda_rank != 0 and len(example.ranked) > 1
    use_binary = weights.lambda_binary != 0 and bool(example.negatives)
    if use_rank:
        terms.rank = rank_loss([score(model, example.visual, s) for s in example.ranked], weights.detach)
        terms.total = terms.total + terms.rank * weights.lambda_rank
    if use_binary:
        positive = score(model, example.visual, example.stream)
        negatives = [score(model, example.visual, s) for s in example.negatives]
        terms.binary = binary_loss(positive, negatives, weights.detach)
        terms.total = terms.total + terms.binary * weights.lambda_binary
    return terms


def total_loss(model: Model, batch: Sequence[AlignedExample], weights: LossWeights = LossWeights()) -> Node:
    """Mean over the batch of vanilla + weighted alignment terms."""
    if not batch:
        raise ValueError("empty batch")
    totals = [example_terms(model, example, weights).total for example in batch]
    return ops.mean(ops.concat([ops.reshape(t, (1,)) for t in totals], axis=0))
