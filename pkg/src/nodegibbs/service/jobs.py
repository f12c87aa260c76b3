"""Thread-backed job registry for long-running chain jobs."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

from nodegibbs.errors import NodeGibbsError


@dataclass
class Job:
    job_id: str
    status: str = "queued"
    error_message: str | None = None
    error_category: str | None = None
    error_exit_code: int | None = None
    result: dict | None = None
    _thread: threading.Thread | None = field(default=None, repr=False)

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)


class JobRegistry:
    """Launches callables on daemon threads and tracks their outcome."""

    def __init__(self) -> None:
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._counter = itertools.count(1)

    def submit(self, fn) -> Job:
        with self._lock:
            job = Job(job_id=f"job-{next(self._counter)}")
            self._jobs[job.job_id] = job

        def target() -> None:
            job.status = "running"
            try:
                job.result = fn()
                job.status = "done"
            except NodeGibbsError as exc:
                job.status = "error"
                job.error_message = str(exc)
                job.error_category = type(exc).__name__
                job.error_exit_code = exc.exit_code
            except Exception as exc:
                job.status = "error"
                job.error_message = f"{type(exc).__name__}: {exc}"
                job.error_category = "internal"
                job.error_exit_code = 1

        thread = threading.Thread(target=target, daemon=True)
        job._thread = thread
        thread.start()
        return job

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)
