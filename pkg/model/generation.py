import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from model.transformer import Model, forward
from tokenizer.conversation import TokenStream, encode_token_turns
from tokenizer.trajectory_text import TrajectoryParseError, parse_trajectory
from tokenizer.vocab import BOS_ID, EOS_ID, Vocab

logger = logging.getLogger(__name__)

MAX_TURN_TOKENS = 160


@dataclass(frozen=True)
class GeneratedConversation:
    prompt_ids: tuple[tuple[int, ...], ...]
    response_ids: tuple[tuple[int, ...], ...]
    responses: tuple[str, ...]
    trajectory: np.ndarray | None
    failure: str | None = None
    max_text: int | None = None

    @property
    def ok(self) -> bool:
        return self.trajectory is not None

    def stream(self) -> TokenStream:
        """The generated token ids, cut to the text window the model decoded in."""
        return encode_token_turns(list(zip(self.prompt_ids, self.response_ids))).clipped(self.max_text)


def _next_token(logp: np.ndarray, rng: np.random.Generator | None, temperature: float) -> int:
    if rng is None:
        return int(np.argmax(logp))
    z = logp / temperature
    p = np.exp(z - z.max())
    return int(rng.choice(p.size, p=p / p.sum()))


def _generate_one(
    model: Model,
    vocab: Vocab,
    visual: np.ndarray,
    prompts: Sequence[Sequence[int]],
    rng: np.random.Generator | None,
    temperature: float,
    max_turn_tokens: int,
) -> GeneratedConversation:
    period = vocab.id(".")
    limit = model.config.max_seq_len - visual.shape[0]
    ids: list[int] = [BOS_ID]
    responses: list[tuple[int, ...]] = []
    failure = None
    exhausted = False
    for turn, prompt in enumerate(prompts):
        last = turn == len(prompts) - 1
        terminator = EOS_ID if last else period
        ids.extend(prompt)
        response: list[int] = []
        terminated = False
        while len(response) < max_turn_tokens and len(ids) < limit:
            logp = forward(model, visual, np.asarray(ids)).value[-1]
            token = _next_token(logp, rng, temperature)
            ids.append(token)
            if token == terminator:
                terminated = True
                if not last:
                    response.append(token)
                break
            response.append(token)
        responses.append(tuple(response))
        if terminated:
            continue
        if len(ids) >= limit:
            # Later prompts no longer fit; the conversation cannot be completed.
            exhausted = True
            failure = failure or "context window exhausted"
            responses.extend(() for _ in prompts[turn + 1:])
            break
        failure = failure or f"turn {turn + 1} hit the length cap"

    texts = tuple(vocab.decode_ids(r) for r in responses)
    trajectory = None
    if not exhausted:
        try:
            trajectory = parse_trajectory(texts[-1])
        except TrajectoryParseError as exc:
            failure = failure or str(exc)
    return GeneratedConversation(
        prompt_ids=tuple(tuple(p) for p in prompts),
        response_ids=tuple(responses),
        responses=texts,
        trajectory=trajectory,
        failure=None if trajectory is not None else failure,
        max_text=limit,
    )


def generate(
    model: Model,
    vocab: Vocab,
    visual: np.ndarray,
    prompts: Sequence[Sequence[int]],
    k: int = 1,
    temperature: float = 1.0,
    seed: int = 0,
    greedy: bool = False,
    max_turn_tokens: int = MAX_TURN_TOKENS,
) -> list[GeneratedConversation]:
    """
    Sample k multi-turn conversations. Each turn appends its prompt and then
    decodes until the turn terminator ("." for reasoning turns, <EOS> for the
    last) or the per-turn cap. Inference runs on a frozen parameter snapshot.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if not greedy and temperature <= 0:
        raise ValueError("temperature must be positive")
    frozen = model.frozen()
    visual = np.asarray(visual, dtype=np.float64)
    out = []
    for j in range(k):
        rng = None if greedy else np.random.default_rng([seed, j])
        candidate = _generate_one(frozen, vocab, visual, prompts, rng, temperature, max_turn_tokens)
        if not candidate.ok:
            logger.debug("Candidate %d failed: %s", j, candidate.failure)
        out.append(candidate)
    return out
