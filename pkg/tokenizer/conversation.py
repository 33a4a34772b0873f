import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from tokenizer.vocab import BOS_ID, EOS_ID, PAD_ID, Vocab, tokenize

logger = logging.getLogger(__name__)

Turn = tuple[str, str]


@dataclass(frozen=True)
class TokenStream:
    """
    ids:        <BOS> prompt_1 response_1 ... prompt_n response_n <EOS> [<PAD>...]
    loss_mask:  true on response tokens and on <EOS>
    turn_spans: (prompt_range, response_range) per turn; the first prompt range
                starts at <BOS> and the last response range ends with <EOS>
    """

    ids: np.ndarray
    loss_mask: np.ndarray
    turn_spans: tuple[tuple[range, range], ...]

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def n_supervised(self) -> int:
        return int(self.loss_mask.sum())

    def padded(self, length: int) -> "TokenStream":
        extra = length - len(self)
        if extra < 0:
            raise ValueError("cannot pad to a shorter length")
        return TokenStream(
            ids=np.concatenate([self.ids, np.full(extra, PAD_ID, dtype=np.int64)]),
            loss_mask=np.concatenate([self.loss_mask, np.zeros(extra, dtype=bool)]),
            turn_spans=self.turn_spans,
        )

    def clipped(self, length: int | None) -> "TokenStream":
        """The first `length` positions; turns starting past the cut are dropped."""
        if length is None or len(self) <= length:
            return self
        if length < 1:
            raise ValueError("cannot clip a stream to fewer than one position")
        spans = tuple(
            (range(p.start, min(p.stop, length)), range(min(r.start, length), min(r.stop, length)))
            for p, r in self.turn_spans
            if p.start < length
        )
        return TokenStream(ids=self.ids[:length].copy(), loss_mask=self.loss_mask[:length].copy(), turn_spans=spans)


def encode_token_turns(turns: Sequence[tuple[Sequence[int], Sequence[int]]]) -> TokenStream:
    if not turns:
        raise ValueError("conversation has no turns")
    ids: list[int] = [BOS_ID]
    mask: list[bool] = [False]
    spans: list[tuple[range, range]] = []
    for i, (prompt_ids, response_ids) in enumerate(turns):
        prompt_start = 0 if i == 0 else len(ids)
        ids.extend(prompt_ids)
        mask.extend([False] * len(prompt_ids))
        response_start = len(ids)
        ids.extend(response_ids)
        mask.extend([True] * len(response_ids))
        if i == len(turns) - 1:
            ids.append(EOS_ID)
            mask.append(True)
        spans.append((range(prompt_start, response_start), range(response_start, len(ids))))
    return TokenStream(
        ids=np.array(ids, dtype=np.int64),
        loss_mask=np.array(mask, dtype=bool),
        turn_spans=tuple(spans),
    )


def encode_conversation(turns: Sequence[Turn], vocab: Vocab) -> TokenStream:
    return encode_token_turns(
        [([vocab.id(t) for t in tokenize(prompt)], [vocab.id(t) for t in tokenize(response)]) for prompt, response in turns]
    )


def decode_conversation(stream: TokenStream, vocab: Vocab) -> str:
    return vocab.decode_ids(stream.ids.tolist())


def conversation_text(turns: Sequence[Turn]) -> str:
    return " ".join(f"{prompt} {response}" for prompt, response in turns)
