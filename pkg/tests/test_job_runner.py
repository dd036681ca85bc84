import threading
import time

import pytest

from core.job_runner import Job, JobRunner, JobStatus


def _slow_square(x: int) -> int:
    time.sleep(0.01 * (5 - x % 5))
    return x * x


def _fail_on_three(x: int) -> int:
    if x == 3:
        raise ValueError("three")
    return x


@pytest.mark.asyncio
async def test_results_follow_submission_order():
    runner = JobRunner(max_concurrent=4)
    jobs = [Job(id=f"j{i}", func=_slow_square, args=(i,)) for i in range(10)]
    batch = await runner.run_batch(jobs)
    assert batch.ok
    assert batch.results == [i * i for i in range(10)]
    assert all(job.status == JobStatus.COMPLETED for job in jobs)
    assert all(job.completed_at >= job.started_at for job in jobs)


@pytest.mark.asyncio
async def test_failures_are_captured():
    runner = JobRunner(max_concurrent=2)
    jobs = [Job(id=f"j{i}", func=_fail_on_three, args=(i,)) for i in range(5)]
    batch = await runner.run_batch(jobs)
    assert not batch.ok
    assert [job.id for job in batch.failures] == ["j3"]
    assert batch.results[:3] == [0, 1, 2]
    with pytest.raises(ValueError, match="three"):
        batch.raise_first()


@pytest.mark.asyncio
async def test_concurrency_limit():
    active = 0
    peak = 0
    lock = threading.Lock()

    def work():
        nonlocal active, peak
        with lock:
            active += 1
            peak = max(peak, active)
        time.sleep(0.02)
        with lock:
            active -= 1

    runner = JobRunner(max_concurrent=2)
    await runner.run_batch([Job(id=str(i), func=work) for i in range(8)])
    assert peak <= 2


def test_run_batch_sync_and_validation():
    batch = JobRunner().run_batch_sync([Job(id="a", func=len, args=("abc",))])
    assert batch.results == [3]
    with pytest.raises(ValueError):
        JobRunner(max_concurrent=0)
