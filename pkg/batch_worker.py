"""Bounded thread pool for running episode batches off the caller thread.

Tasks run on at most ``max_workers`` daemon threads. Their results (or
exceptions) are not handed back directly: completion callbacks are queued and
only run when the caller drains the queue with process_pending(), so all
result bookkeeping happens on one thread.
"""

import logging
import queue
import threading
import time
from collections.abc import Callable
from typing import Any

from config import DEFAULT_JOBS

logger = logging.getLogger(__name__)


class BatchWorker:
    """Runs tasks on a bounded pool of daemon threads and queues their callbacks.

    Usage:
        worker = BatchWorker(max_workers=4)
        worker.run_async(
            task=lambda: runner.run(stream, rng),
            on_done=lambda result: rows.append(result),
            on_error=lambda e: failures.append(e),
        )
        worker.wait()
        worker.process_pending()
    """

    def __init__(self, max_workers: int = DEFAULT_JOBS):
        if max_workers < 1:
            raise ValueError("max_workers must be >= 1")
        self.max_workers = max_workers
        self._tasks: queue.SimpleQueue = queue.SimpleQueue()
        self._results: queue.SimpleQueue = queue.SimpleQueue()
        self._active = 0
        self._threads = 0
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)

    @property
    def is_busy(self) -> bool:
        """True while any submitted task has not finished."""
        with self._lock:
            return self._active > 0

    def run_async(
        self,
        task: Callable[[], Any],
        on_done: Callable[[Any], None] | None = None,
        on_error: Callable[[Exception], None] | None = None,
    ) -> None:
        """Queue a task for the pool.

        on_done(result) or on_error(exception) is queued for the next
        process_pending() call on the caller's thread.
        """
        with self._lock:
            self._active += 1
            self._tasks.put((task, on_done, on_error))
            if self._threads < self.max_workers:
                self._threads += 1
                threading.Thread(target=self._drain, daemon=True).start()

    def _drain(self) -> None:
        while True:
            try:
                task, on_done, on_error = self._tasks.get_nowait()
            except queue.Empty:
                with self._lock:
                    if self._tasks.empty():
                        self._threads -= 1
                        return
                continue
            try:
                result = task()
                if on_done is not None:
                    self.post_result(lambda r=result, cb=on_done: cb(r))
            except Exception as exc:
                logger.debug("Batch task failed", exc_info=True)
                if on_error is not None:
                    self.post_result(lambda e=exc, cb=on_error: cb(e))
            finally:
                with self._lock:
                    self._active -= 1
                    self._idle.notify_all()

    def post_result(self, callback: Callable[[], Any]) -> None:
        """Schedule a callback for the caller thread."""
        self._results.put(callback)

    def process_pending(
        self,
        *,
        time_budget_seconds: float | None = None,
        max_callbacks: int | None = None,
    ) -> int:
        """Run queued callbacks; the limits are checked between callbacks."""
        started_at = time.perf_counter()
        processed = 0

        while max_callbacks is None or processed < max_callbacks:
            try:
                fn = self._results.get_nowait()
            except queue.Empty:
                break
            fn()
            processed += 1

            if (
                time_budget_seconds is not None
                and time.perf_counter() - started_at >= time_budget_seconds
            ):
                break

        return processed

    def wait(self, timeout: float | None = None) -> bool:
        """Block until every submitted task has finished; False on timeout."""
        with self._idle:
            return self._idle.wait_for(lambda: self._active == 0, timeout)

    def run_ordered(
        self,
        tasks: list[Callable[[], Any]],
        on_progress: Callable[[int, int], None] | None = None,
        poll_seconds: float = 0.05,
    ) -> list[Any]:
        """Run tasks on the pool and return their results in submission order.

        Raises:
            Exception: the failure of the lowest-indexed failing task.
        """
        total = len(tasks)
        results: list[Any] = [None] * total
        errors: dict[int, Exception] = {}
        done = 0

        def finished(index: int, value: Any = None, error: Exception | None = None):
            nonlocal done
            if error is None:
                results[index] = value
            else:
                errors[index] = error
            done += 1
            if on_progress is not None:
                on_progress(done, total)

        for index, task in enumerate(tasks):
            self.run_async(
                task,
                on_done=lambda value, i=index: finished(i, value),
                on_error=lambda error, i=index: finished(i, error=error),
            )

        while not self.wait(timeout=poll_seconds):
            self.process_pending()
        self.process_pending()

        if errors:
            raise errors[min(errors)]
        return results
