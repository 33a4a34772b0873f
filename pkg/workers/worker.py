import asyncio
import logging
from dataclasses import dataclass
from typing import Protocol

logger = logging.getLogger(__name__)


class JudgeClient(Protocol):
    async def score(self, prediction: str, ground_truth: str) -> float: ...


@dataclass(frozen=True)
class JudgeJob:
    sample_index: int
    round_index: int
    prediction: str
    ground_truth: str


class JudgePool:
    """
    Spawns `num_workers` async coroutines that drain a queue of judge jobs.
    At most `num_workers` requests are in flight; results are keyed by
    (sample, round) so the order in which they complete does not matter.
    A job whose client call raises is recorded with its exception.
    """

    def __init__(self, client: JudgeClient, num_workers: int) -> None:
        if num_workers < 1:
            raise ValueError("num_workers must be at least 1")
        self._client = client
        self._num_workers = num_workers
        self._queue: asyncio.Queue[JudgeJob] = asyncio.Queue()
        self._tasks: list[asyncio.Task] = []
        self.results: dict[tuple[int, int], float | BaseException] = {}

    def start(self) -> None:
        """Spawn all worker coroutines as asyncio Tasks."""
        self._tasks = [
            asyncio.create_task(self._worker_loop(i), name=f"judge-worker-{i}")
            for i in range(self._num_workers)
        ]
        logger.debug("JudgePool started (%d workers)", self._num_workers)

    async def stop(self) -> None:
        """Cancel all worker tasks and wait for them to finish."""
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        self._tasks.clear()
        logger.debug("JudgePool stopped")

    async def run(self, jobs: list[JudgeJob]) -> dict[tuple[int, int], float | BaseException]:
        for job in jobs:
            self._queue.put_nowait(job)
        self.start()
        try:
            await self._queue.join()
        finally:
            await self.stop()
        return self.results

    async def _worker_loop(self, worker_id: int) -> None:
        """Single worker coroutine. Runs until cancelled."""
        while True:
            job = await self._queue.get()
            key = (job.sample_index, job.round_index)
            try:
                self.results[key] = await self._client.score(job.prediction, job.ground_truth)
            except asyncio.CancelledError:
                raise
            except Exception as exc:
                logger.warning("Worker %d: judge call failed for sample %d round %d: %s",
                               worker_id, job.sample_index, job.round_index, exc)
                self.results[key] = exc
            finally:
                self._queue.task_done()
