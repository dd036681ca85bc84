"""
Job Runner - Concurrent execution of per-utterance work

Feature resolution and feature-file extraction are independent per
utterance. This module runs them in worker threads under a concurrency
limit and returns results in submission order, so callers that need a
seed-determined ordering get it regardless of completion order.
"""

import asyncio
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence


class JobStatus(Enum):
    """Enumeration of possible job states."""

    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class Job:
    """One unit of synchronous work, usually keyed by utterance id."""

    id: str
    func: Callable[..., Any]
    args: Sequence[Any] = ()
    kwargs: Dict[str, Any] = field(default_factory=dict)
    status: JobStatus = JobStatus.PENDING
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    started_at: Optional[datetime] = None
    completed_at: Optional[datetime] = None
    result: Optional[Any] = None
    error: Optional[BaseException] = None


@dataclass
class BatchResult:
    """Outcome of a batch; ``results`` follows submission order."""

    jobs: List[Job]

    @property
    def results(self) -> List[Any]:
        return [job.result for job in self.jobs]

    @property
    def failures(self) -> List[Job]:
        return [job for job in self.jobs if job.status == JobStatus.FAILED]

    @property
    def ok(self) -> bool:
        return not self.failures

    def raise_first(self) -> None:
        """Re-raise the first failure in submission order, if any."""
        for job in self.failures:
            raise job.error


class JobRunner:
    """
    Runs synchronous jobs in threads with a concurrency limit.

    Failures are captured on the job rather than aborting the batch.
    """

    def __init__(self, max_concurrent: int = 4):
        """
        Initialize the JobRunner.

        Args:
            max_concurrent: Maximum number of jobs running at once
        """
        if max_concurrent < 1:
            raise ValueError(f"max_concurrent must be >= 1, got {max_concurrent}")
        self.max_concurrent = max_concurrent
        self.logger = logging.getLogger(__name__)

    async def execute_job(self, job: Job) -> Any:
        """
        Execute a single job in a worker thread.

        Raises:
            Exception: whatever the job raised, after recording it
        """
        self.logger.debug(f"Starting job {job.id}")
        job.status = JobStatus.RUNNING
        job.started_at = datetime.now(timezone.utc)

        try:
            result = await asyncio.to_thread(job.func, *job.args, **job.kwargs)
            job.status = JobStatus.COMPLETED
            job.result = result
            return result
        except Exception as e:
            job.status = JobStatus.FAILED
            job.error = e
            self.logger.error(f"Job {job.id} failed: {e}")
            raise
        finally:
            job.completed_at = datetime.now(timezone.utc)

    async def run_batch(self, jobs: List[Job]) -> BatchResult:
        """Execute jobs concurrently; every job ends COMPLETED or FAILED."""
        semaphore = asyncio.Semaphore(self.max_concurrent)

        async def run_with_semaphore(job: Job):
            async with semaphore:
                return await self.execute_job(job)

        await asyncio.gather(
            *(run_with_semaphore(job) for job in jobs), return_exceptions=True
        )

        batch = BatchResult(list(jobs))
        if batch.failures:
            self.logger.warning(f"{len(batch.failures)} of {len(jobs)} jobs failed")
        return batch

    def run_batch_sync(self, jobs: List[Job]) -> BatchResult:
        """Blocking wrapper for callers outside an event loop."""
        return asyncio.run(self.run_batch(jobs))
