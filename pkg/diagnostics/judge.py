import asyncio
import logging
import math
import os
import re
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field

from langchain_core.messages import HumanMessage, SystemMessage
from langchain_openai import ChatOpenAI

from config import JudgeSection, get_settings
from tokenizer.vocab import tokenize
from workers.worker import JudgeClient, JudgeJob, JudgePool

logger = logging.getLogger(__name__)

SCORE_MIN, SCORE_MAX = 0.0, 100.0

_SYSTEM = (
    "Rate my answer based on the correct answer out of 100, with higher scores indicating that "
    "the answer is closer to the correct answer, and you should be accurate to single digits "
    "like 62, 78, 41, etc. Output the number only"
)
_SCORE_RE = re.compile(r"-?\d+(?:\.\d+)?")


class JudgeError(RuntimeError):
    def __init__(self, sample_id: str | None, reason: str) -> None:
        super().__init__(f"{sample_id}: {reason}" if sample_id else reason)
        self.sample_id = sample_id
        self.reason = reason


class JudgeConfigError(ValueError):
    pass


class MockJudge:
    """Token-overlap F1 between prediction and ground truth, scaled to 0-100."""

    async def score(self, prediction: str, ground_truth: str) -> float:
        return overlap_f1(prediction, ground_truth) * 100.0


def overlap_f1(prediction: str, ground_truth: str) -> float:
    pred, gold = Counter(tokenize(prediction)), Counter(tokenize(ground_truth))
    if not pred and not gold:
        return 1.0
    common = sum((pred & gold).values())
    if common == 0:
        return 0.0
    precision = common / sum(pred.values())
    recall = common / sum(gold.values())
    return 2 * precision * recall / (precision + recall)


class ChatJudge:
    """Chat-completion judge prompted with the DriveLM scoring instruction."""

    def __init__(self, section: JudgeSection, api_key: str) -> None:
        self._retries = section.retries
        self._backoff_s = section.backoff_s
        self._llm = ChatOpenAI(
            model=section.model,
            api_key=api_key,
            base_url=section.endpoint,
            timeout=section.timeout_s,
            max_retries=0,
            temperature=0,
        )

    async def score(self, prediction: str, ground_truth: str) -> float:
        messages = [
            SystemMessage(content=_SYSTEM),
            HumanMessage(content=f"This is the correct answer: {ground_truth}, This is my answer: {prediction}"),
        ]
        last_error = "no attempt made"
        for attempt in range(self._retries + 1):
            if attempt:
                await asyncio.sleep(self._backoff_s * 2 ** (attempt - 1))
            try:
                response = await self._llm.ainvoke(messages)
            except Exception as exc:
                last_error = f"request failed: {exc}"
                logger.warning("Judge attempt %d/%d failed: %s", attempt + 1, self._retries + 1, exc)
                continue
            raw = response.content.strip()
            match = _SCORE_RE.search(raw)
            if match is not None:
                return float(match.group())
            last_error = f"unparseable reply {raw[:80]!r}"
            logger.warning("Judge returned no number: %r", raw[:200])
        raise JudgeError(None, last_error)


def build_judge(section: JudgeSection) -> JudgeClient:
    if section.kind == "mock":
        return MockJudge()
    key_env = get_settings().JUDGE_API_KEY_ENV
    api_key = os.getenv(key_env, "")
    if not api_key:
        raise JudgeConfigError(f"judge.kind is 'real' but ${key_env} is not set")
    return ChatJudge(section, api_key)


@dataclass
class JudgeReport:
    s_cot: float | None
    per_sample: dict[str, float]
    audit: list[dict] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)

    def stats(self) -> dict:
        return {
            "s_cot": "n/a" if self.s_cot is None else self.s_cot,
            "judged": len(self.per_sample),
            "failed": len(self.failures),
        }


def _clamp(value: float, sample_id: str, round_index: int) -> float:
    if not math.isfinite(value):
        raise JudgeError(sample_id, f"round {round_index} scored {value}")
    if not SCORE_MIN <= value <= SCORE_MAX:
        logger.warning("%s round %d: score %s outside [0, 100], clamped", sample_id, round_index, value)
        return min(max(value, SCORE_MIN), SCORE_MAX)
    return value


async def judge_cot_async(
    client: JudgeClient,
    predictions: Sequence[Sequence[str]],
    ground_truths: Sequence[Sequence[str]],
    sample_ids: Sequence[str] | None = None,
    max_in_flight: int = 4,
) -> JudgeReport:
    """
    Mean over samples of the mean round score. A sample with a failed round is
    left out of the mean and listed in `failures`; a sample without rounds is
    skipped.
    """
    if len(predictions) != len(ground_truths):
        raise ValueError(f"{len(predictions)} predictions for {len(ground_truths)} ground truths")
    ids = list(sample_ids) if sample_ids is not None else [str(i) for i in range(len(predictions))]
    jobs = []
    for i, (pred, gold) in enumerate(zip(predictions, ground_truths)):
        if len(pred) != len(gold):
            raise ValueError(f"{ids[i]}: {len(pred)} predicted rounds for {len(gold)} reference rounds")
        jobs.extend(JudgeJob(i, j, p, g) for j, (p, g) in enumerate(zip(pred, gold)))

    results = await JudgePool(client, max_in_flight).run(jobs)

    report = JudgeReport(s_cot=None, per_sample={})
    for i, sample_id in enumerate(ids):
        n_rounds = len(predictions[i])
        if n_rounds == 0:
            continue
        scores = []
        for j in range(n_rounds):
            raw = results[(i, j)]
            if isinstance(raw, BaseException):
                report.audit.append({"sample_id": sample_id, "round": j, "raw_score": None, "error": str(raw)})
                report.failures.setdefault(sample_id, str(raw))
                continue
            report.audit.append({"sample_id": sample_id, "round": j, "raw_score": raw if math.isfinite(raw) else None})
            try:
                scores.append(_clamp(raw, sample_id, j))
            except JudgeError as exc:
                report.failures.setdefault(sample_id, exc.reason)
        if sample_id not in report.failures:
            report.per_sample[sample_id] = sum(scores) / len(scores)
    if report.failures:
        logger.warning("Judge failed on %d of %d samples", len(report.failures), len(ids))
    if report.per_sample:
        report.s_cot = sum(report.per_sample.values()) / len(report.per_sample)
    logger.info("CoT score %s over %d samples", report.stats()["s_cot"], len(report.per_sample))
    return report


def judge_cot(
    client: JudgeClient,
    predictions: Sequence[Sequence[str]],
    ground_truths: Sequence[Sequence[str]],
    sample_ids: Sequence[str] | None = None,
    max_in_flight: int = 4,
) -> JudgeReport:
    return asyncio.run(judge_cot_async(client, predictions, ground_truths, sample_ids, max_in_flight))
