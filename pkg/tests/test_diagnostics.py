import asyncio
import csv
import json
import math
from types import SimpleNamespace

import pytest
from langchain_core.messages import HumanMessage, SystemMessage

from config import JudgeSection
from diagnostics.judge import (
    ChatJudge,
    JudgeConfigError,
    JudgeError,
    MockJudge,
    build_judge,
    judge_cot,
    overlap_f1,
)
from diagnostics.misalignment import (
    JUDGE_FILE,
    POINTS_FILE,
    SCATTER_FILE,
    STATS_FILE,
    MisalignmentPoint,
    correlation,
    misalignment_report,
)
from diagnostics.plots import scatter_svg
from workers.worker import JudgeJob, JudgePool


class FixedJudge:
    """Scores every answer by looking it up; raises for the ones mapped to an exception."""

    def __init__(self, table: dict[str, object]) -> None:
        self.table = table

    async def score(self, prediction: str, ground_truth: str) -> float:
        value = self.table[prediction]
        if isinstance(value, Exception):
            raise value
        return value


class SlowJudge:
    def __init__(self) -> None:
        self.in_flight = 0
        self.peak = 0

    async def score(self, prediction: str, ground_truth: str) -> float:
        self.in_flight += 1
        self.peak = max(self.peak, self.in_flight)
        await asyncio.sleep(0.001 * (len(prediction) % 3))
        self.in_flight -= 1
        return float(len(prediction))


class FakeLlm:
    def __init__(self, replies: list) -> None:
        self.replies = list(replies)
        self.calls = 0
        self.messages = []

    async def ainvoke(self, messages):
        self.calls += 1
        self.messages.append(messages)
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return SimpleNamespace(content=reply)


class TestJudgeScore:
    def test_all_perfect(self):
        report = judge_cot(FixedJudge({"a": 100.0}), [["a", "a"], ["a"]], [["x", "y"], ["z"]])
        assert report.s_cot == 100.0

    def test_rounds_are_averaged_per_sample(self):
        report = judge_cot(FixedJudge({"good": 80.0, "fair": 60.0}), [["good", "fair"]], [["g", "f"]], ["s0"])
        assert report.per_sample == {"s0": 70.0}
        assert report.s_cot == 70.0

    def test_sample_mean_not_round_mean(self):
        table = {"hi": 100.0, "lo": 0.0}
        report = judge_cot(FixedJudge(table), [["hi"], ["lo", "lo", "lo"]], [["r"], ["r", "r", "r"]])
        assert report.s_cot == 50.0

    def test_scores_are_clamped(self):
        report = judge_cot(FixedJudge({"over": 150.0, "under": -5.0}), [["over"], ["under"]], [["r"], ["r"]], ["a", "b"])
        assert report.per_sample == {"a": 100.0, "b": 0.0}
        assert [row["raw_score"] for row in report.audit] == [150.0, -5.0]

    def test_failed_round_excludes_sample(self):
        table = {"ok": 40.0, "boom": RuntimeError("timeout"), "nan": math.nan}
        report = judge_cot(FixedJudge(table), [["ok"], ["ok", "boom"], ["nan"]], [["r"], ["r", "r"], ["r"]],
                           ["a", "b", "c"])
        assert report.per_sample == {"a": 40.0}
        assert set(report.failures) == {"b", "c"}
        assert report.s_cot == 40.0
        errors = [row for row in report.audit if row["sample_id"] == "b" and row["raw_score"] is None]
        assert errors and "timeout" in errors[0]["error"]
        assert report.stats() == {"s_cot": 40.0, "judged": 1, "failed": 2}

    def test_nothing_judged(self):
        report = judge_cot(MockJudge(), [[]], [[]])
        assert report.s_cot is None
        assert report.stats()["s_cot"] == "n/a"

    def test_round_count_mismatch(self):
        with pytest.raises(ValueError):
            judge_cot(MockJudge(), [["a"]], [["a", "b"]])


class TestMockJudge:
    def test_identical_text(self):
        text = "The important objects are <c1, CAM_FRONT> car."
        report = judge_cot(MockJudge(), [[text]], [[text]])
        assert report.s_cot == 100.0

    def test_disjoint_text(self):
        assert overlap_f1("stop", "keep going") == 0.0

    def test_partial_overlap(self):
        assert overlap_f1("speed is keep", "speed is stop") == pytest.approx(2 / 3)

    def test_both_empty(self):
        assert overlap_f1("", "") == 1.0


class TestChatJudge:
    def judge(self, replies) -> ChatJudge:
        judge = ChatJudge(JudgeSection(kind="real", retries=2, backoff_s=0.0), api_key="sk-test")
        judge._llm = FakeLlm(replies)
        return judge

    def test_reads_the_number(self):
        assert asyncio.run(self.judge([" 72 "]).score("a", "b")) == 72.0

    def test_sends_system_and_human_messages(self):
        judge = self.judge(["80"])
        asyncio.run(judge.score("speed is keep", "speed is stop"))
        ((system, human),) = judge._llm.messages
        assert isinstance(system, SystemMessage)
        assert isinstance(human, HumanMessage)
        assert human.content == "This is the correct answer: speed is stop, This is my answer: speed is keep"

    def test_retries_after_errors(self):
        judge = self.judge([ConnectionError("reset"), "I would say 55."])
        assert asyncio.run(judge.score("a", "b")) == 55.0
        assert judge._llm.calls == 2

    def test_gives_up(self):
        judge = self.judge(["no idea"] * 3)
        with pytest.raises(JudgeError, match="unparseable"):
            asyncio.run(judge.score("a", "b"))
        assert judge._llm.calls == 3


class TestBuildJudge:
    def test_mock(self):
        assert isinstance(build_judge(JudgeSection()), MockJudge)

    def test_real_without_key(self, monkeypatch):
        monkeypatch.delenv("OPENAI_API_KEY", raising=False)
        with pytest.raises(JudgeConfigError, match="OPENAI_API_KEY"):
            build_judge(JudgeSection(kind="real"))

    def test_real_with_key(self, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "sk-test")
        assert isinstance(build_judge(JudgeSection(kind="real")), ChatJudge)


class TestJudgePool:
    def test_results_keyed_and_bounded(self):
        client = SlowJudge()
        jobs = [JudgeJob(i, j, "x" * (i + j), "") for i in range(5) for j in range(3)]
        results = asyncio.run(JudgePool(client, num_workers=2).run(jobs))
        assert results == {(i, j): float(i + j) for i in range(5) for j in range(3)}
        assert client.peak <= 2

    def test_errors_are_recorded(self):
        client = FixedJudge({"ok": 1.0, "bad": ValueError("nope")})
        results = asyncio.run(JudgePool(client, 3).run([JudgeJob(0, 0, "ok", ""), JudgeJob(0, 1, "bad", "")]))
        assert results[(0, 0)] == 1.0
        assert isinstance(results[(0, 1)], ValueError)

    def test_needs_a_worker(self):
        with pytest.raises(ValueError):
            JudgePool(MockJudge(), 0)


class TestCorrelation:
    def test_aligned_scores(self):
        errors = [0.3, 1.2, 0.1, 2.5, 0.8]
        scores = [-e for e in errors]
        neg_errors = [-e for e in errors]
        assert correlation(scores, neg_errors, "spearman") == pytest.approx(1.0)
        assert correlation(scores, neg_errors, "pearson") == pytest.approx(1.0)

    def test_reversed_ranking(self):
        assert correlation([1.0, 2.0, 3.0], [3.0, 2.0, 1.0], "spearman") == pytest.approx(-1.0)

    def test_undefined(self):
        assert correlation([1.0, 1.0, 1.0], [0.1, 0.2, 0.3], "spearman") == "n/a"
        assert correlation([1.0], [2.0], "pearson") == "n/a"

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            correlation([1.0, 2.0], [2.0, 1.0], "kendall")

    def test_point_validation(self):
        with pytest.raises(ValueError):
            MisalignmentPoint("s", -1.0, -0.5)
        with pytest.raises(ValueError):
            MisalignmentPoint("s", math.nan, 0.5)


class TestReport:
    def test_output_files(self, tiny_model, encoder, world, tmp_path):
        samples = world[:3]
        result = misalignment_report(tiny_model, encoder, samples, seed=0, out_dir=tmp_path, judge=MockJudge())
        assert sorted(p.name for p in tmp_path.iterdir()) == sorted([POINTS_FILE, SCATTER_FILE, STATS_FILE, JUDGE_FILE])
        with (tmp_path / POINTS_FILE).open(newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["sample_id", "cot_score", "decision_error_m"]
        assert len(rows) - 1 == len(result.points)
        stats = json.loads((tmp_path / STATS_FILE).read_text())
        assert stats["n"] + stats["failures"] == len(samples)
        assert "judge" in stats
        assert (tmp_path / SCATTER_FILE).read_text().lstrip().startswith("<?xml")

    def test_without_judge(self, tiny_model, encoder, world, tmp_path):
        misalignment_report(tiny_model, encoder, world[:2], seed=0, out_dir=tmp_path)
        assert not (tmp_path / JUDGE_FILE).exists()

    def test_scatter_is_reproducible(self, tmp_path):
        first, second = tmp_path / "a.svg", tmp_path / "b.svg"
        scatter_svg([-1.0, -2.0, -0.5], [0.2, 1.5, 0.1], first, title="3 samples")
        scatter_svg([-1.0, -2.0, -0.5], [0.2, 1.5, 0.1], second, title="3 samples")
        assert first.read_bytes() == second.read_bytes()
