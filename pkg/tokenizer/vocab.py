import json
import logging
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

PAD, BOS, EOS, SOT, EOT = "<PAD>", "<BOS>", "<EOS>", "<SOT>", "<EOT>"
RESERVED = (PAD, BOS, EOS, SOT, EOT)
PAD_ID, BOS_ID, EOS_ID, SOT_ID, EOT_ID = range(len(RESERVED))
MAX_VOCAB = 1024

# Words may carry digits after the first letter (c4) and inner hyphens (left-turn).
_TOKEN_RE = re.compile(
    r"<PAD>|<BOS>|<EOS>|<SOT>|<EOT>"
    r"|[A-Za-z_][A-Za-z0-9_]*(?:-[A-Za-z_][A-Za-z0-9_]*)*"
    r"|\d"
    r"|\S"
)
BASE_SYMBOLS = tuple("0123456789") + (".", ",", "(", ")", "-")

_OPENERS = {"(", "<", SOT, "-", "/"}
_CLOSERS = {".", ",", "?", ":", ")", ">", "/", EOT}


class VocabError(ValueError):
    pass


class OutOfVocabularyError(KeyError):
    def __init__(self, word: str) -> None:
        super().__init__(f"out-of-vocabulary word {word!r}")
        self.word = word


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def _glued(prev: str, tok: str) -> bool:
    """True when `tok` follows `prev` without a separating space."""
    if prev in _OPENERS or tok in _CLOSERS:
        return True
    if prev.isdigit() and (tok.isdigit() or tok == "-"):
        return True
    if prev == "." and tok.isdigit():
        return True
    return prev == "," and (tok.isdigit() or tok in ("(", "-"))


def join_tokens(tokens: Sequence[str]) -> str:
    parts: list[str] = []
    prev: str | None = None
    for tok in tokens:
        if prev is not None and not _glued(prev, tok):
            parts.append(" ")
        parts.append(tok)
        prev = tok
    return "".join(parts)


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.tokens[: len(RESERVED)] != RESERVED:
            raise VocabError("reserved tokens must occupy ids 0..4")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_index", {tok: i for i, tok in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise OutOfVocabularyError(token) from None

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode_text(self, text: str) -> list[int]:
        return [self.id(tok) for tok in tokenize(text)]

    def decode_ids(self, ids: Iterable[int], skip_special: bool = True) -> str:
        skipped = {PAD_ID, BOS_ID, EOS_ID} if skip_special else set()
        return join_tokens([self.tokens[i] for i in ids if i not in skipped])

    def save(self, path: Path) -> None:
        path.write_text(json.dumps({tok: i for i, tok in enumerate(self.tokens)}, indent=1), encoding="utf-8")
        logger.info("Vocabulary saved: %d tokens -> %s", len(self.tokens), path)

    @classmethod
    def load(cls, path: Path) -> "Vocab":
        mapping: dict[str, int] = json.loads(path.read_text(encoding="utf-8"))
        ordered = sorted(mapping.items(), key=lambda kv: kv[1])
        if [i for _, i in ordered] != list(range(len(ordered))):
            raise VocabError(f"token ids in {path} are not contiguous")
        return cls(tuple(tok for tok, _ in ordered))


def build_vocab(template_corpus: Sequence[str]) -> Vocab:
    """Reserved tokens, then template tokens in first-seen order, then the base symbols."""
    if not template_corpus:
        raise VocabError("template corpus is empty")
    tokens: list[str] = list(RESERVED)
    seen = set(tokens)
    for text in template_corpus:
        for tok in tokenize(text):
            if tok.isdigit() or tok in seen:
                continue
            seen.add(tok)
            tokens.append(tok)
    for sym in BASE_SYMBOLS:
        if sym not in seen:
            seen.add(sym)
            tokens.append(sym)
    if len(tokens) > MAX_VOCAB:
        raise VocabError(f"corpus yields {len(tokens)} tokens, limit is {MAX_VOCAB}")
    logger.debug("Vocabulary built with %d tokens", len(tokens))
    return Vocab(tuple(tokens))
