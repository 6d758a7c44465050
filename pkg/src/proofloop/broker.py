"""Verification job broker: many producers, one queue, a pool of workers.

Rollouts submit sketch-check jobs without blocking and collect results in
completion order. Each worker owns one verifier backend exclusively,
enforces the per-job timeout through it, and is recycled after a service
threshold or a stale heartbeat to bound backend memory growth. Every
accepted job yields exactly one result — success, failure, timeout, or
crash — and a crashing backend never disturbs other jobs.

All timing runs on an injectable clock so timeout behavior is testable on
virtual time.
"""

from __future__ import annotations

import threading
import time
import queue as queue_mod
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .backends import BackendCrashed, CheckTimeout, VerifierBackend
from .clock import Clock, SystemClock
from .verdict import VerifierVerdict, classify_raw, crash_verdict, timeout_verdict

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_QUEUE_CAPACITY = 10_000
DEFAULT_RECYCLE_THRESHOLD = 200
DEFAULT_HEARTBEAT_TIMEOUT_S = 10.0
DEFAULT_GRACE_S = 2.0


class BrokerError(Exception):
    pass


class QueueFull(BrokerError):
    """Backpressure: the pending-job queue is at capacity."""


class BrokerDown(BrokerError):
    """The broker is not running."""


class UnknownJob(BrokerError):
    """No job with that id was ever accepted."""


class DeadlineExceeded(BrokerError):
    """The await deadline passed; the job keeps running and stays retrievable."""


@dataclass
class SketchJob:
    job_id: str
    code: str
    prompt_id: str = ""
    timeout: float = DEFAULT_TIMEOUT_S
    submitted_at: float = 0.0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("job timeout must be positive")


@dataclass
class JobResult:
    job_id: str
    verdict: VerifierVerdict
    worker_id: str
    queue_wait: float
    exec_time: float


class WorkerStatus(Enum):
    IDLE = "idle"
    BUSY = "busy"
    RECYCLING = "recycling"
    DEAD = "dead"


@dataclass
class WorkerState:
    worker_id: str
    jobs_served: int = 0
    status: WorkerStatus = WorkerStatus.IDLE
    last_heartbeat: float = 0.0


class RecycleDecision(Enum):
    KEEP = "keep"
    RECYCLE = "recycle"


def recycle_policy_tick(
    worker: WorkerState,
    now: float,
    recycle_threshold: int = DEFAULT_RECYCLE_THRESHOLD,
    heartbeat_timeout: float = DEFAULT_HEARTBEAT_TIMEOUT_S,
) -> RecycleDecision:
    """Recycle a worker that served its quota or whose heartbeat went stale.

    The caller applies the decision between jobs, so an in-flight job always
    drains (bounded by its timeout) before the backend restarts.
    """
    if worker.jobs_served >= recycle_threshold:
        return RecycleDecision.RECYCLE
    if now - worker.last_heartbeat > heartbeat_timeout:
        return RecycleDecision.RECYCLE
    return RecycleDecision.KEEP


@dataclass
class BrokerStats:
    queue_depth: int
    in_flight: int
    submitted: int
    completed: int
    timeouts: int
    recycles: int
    workers: dict[str, int]
    throughput_per_s: float
    timeout_rate: float


@dataclass
class _JobEntry:
    job: SketchJob
    done: threading.Event = field(default_factory=threading.Event)
    result: JobResult | None = None


class Broker:
    """Thread-safe in-process verification service.

    ``backend_factory`` builds one backend per worker; workers never share
    backends. Use as a context manager or call :meth:`start` /
    :meth:`shutdown` explicitly.
    """

    def __init__(
        self,
        backend_factory: Callable[[], VerifierBackend],
        worker_count: int = 4,
        *,
        queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
        recycle_threshold: int = DEFAULT_RECYCLE_THRESHOLD,
        heartbeat_timeout: float = DEFAULT_HEARTBEAT_TIMEOUT_S,
        grace: float = DEFAULT_GRACE_S,
        clock: Clock | None = None,
    ):
        if worker_count < 1:
            raise ValueError("worker_count must be at least 1")
        self._backend_factory = backend_factory
        self._worker_count = worker_count
        self._capacity = queue_capacity
        self._recycle_threshold = recycle_threshold
        self._heartbeat_timeout = heartbeat_timeout
        self.grace = grace
        self.clock = clock or SystemClock()

        self._lock = threading.Lock()
        # Items are job ids; None is the worker-shutdown sentinel. Workers
        # block on get() so an idle pool costs nothing (no poll herd).
        self._queue: queue_mod.Queue[str | None] = queue_mod.Queue()
        self._entries: dict[str, _JobEntry] = {}
        self._submitted = 0
        self._dispatched = 0
        self._completed = 0
        self._timeouts = 0
        self._recycles = 0
        self._id_counter = 0
        self._running = False
        self._accepting = False
        self._started_at = 0.0
        self._threads: list[threading.Thread] = []
        self.workers: list[WorkerState] = []

    # -- lifecycle -----------------------------------------------------

    def start(self) -> None:
        with self._lock:
            if self._running:
                return
            self._running = True
            self._accepting = True
            self._started_at = self.clock.now()
        self.workers = [
            WorkerState(worker_id=f"worker-{i}", last_heartbeat=self.clock.now())
            for i in range(self._worker_count)
        ]
        self._threads = [
            threading.Thread(target=self._worker_loop, args=(state,), daemon=True, name=state.worker_id)
            for state in self.workers
        ]
        for t in self._threads:
            t.start()

    def shutdown(self, drain: bool = True, timeout: float = 30.0) -> None:
        """Stop the broker; with ``drain`` wait for in-flight work first.

        Jobs still pending after the drain window (or when not draining)
        are failed with crash verdicts so conservation holds.
        """
        with self._lock:
            self._accepting = False
        if drain:
            # Real-time polling: drain is a lifecycle concern, so it must
            # make progress even when job timing runs on a virtual clock.
            end = time.monotonic() + timeout
            while time.monotonic() < end:
                with self._lock:
                    if self._completed == self._submitted:
                        break
                time.sleep(0.01)
        self._fail_pending("broker shutdown before execution")
        with self._lock:
            self._running = False
        for _ in self._threads:
            self._queue.put(None)
        for t in self._threads:
            t.join(timeout=5.0)

    def _fail_pending(self, reason: str) -> None:
        while True:
            try:
                job_id = self._queue.get_nowait()
            except queue_mod.Empty:
                return
            if job_id is None:
                continue
            entry = self._entries[job_id]
            now = self.clock.now()
            with self._lock:
                self._dispatched += 1
            self._deliver(
                entry,
                JobResult(
                    job_id=job_id,
                    verdict=crash_verdict(raw=reason, elapsed=0.0),
                    worker_id="",
                    queue_wait=now - entry.job.submitted_at,
                    exec_time=0.0,
                ),
            )

    def __enter__(self) -> "Broker":
        self.start()
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.shutdown()

    # -- producer surface ----------------------------------------------

    def submit(self, job: SketchJob) -> str:
        """Enqueue a job FIFO and return immediately.

        Re-submitting a known job_id is an idempotent no-op returning the
        same id, so producer retries never duplicate execution.
        """
        with self._lock:
            if not self._running or not self._accepting:
                raise BrokerDown("broker is not accepting jobs")
            if job.job_id in self._entries:
                return job.job_id
            if self._submitted - self._dispatched >= self._capacity:
                raise QueueFull(f"queue at capacity ({self._capacity})")
            job.submitted_at = self.clock.now()
            self._entries[job.job_id] = _JobEntry(job=job)
            self._submitted += 1
        self._queue.put(job.job_id)
        return job.job_id

    def submit_code(self, code: str, timeout: float | None = None, prompt_id: str = "") -> str:
        with self._lock:
            self._id_counter += 1
            job_id = f"job-{self._id_counter:08d}"
        return self.submit(
            SketchJob(job_id=job_id, code=code, prompt_id=prompt_id, timeout=timeout or DEFAULT_TIMEOUT_S)
        )

    def await_result(self, job_id: str, deadline: float) -> JobResult:
        """Block until the job's result or until ``deadline`` of clock time.

        Results arrive in completion order, independent of submission
        order. On :class:`DeadlineExceeded` the job keeps running and the
        result stays retrievable by a later call.
        """
        with self._lock:
            entry = self._entries.get(job_id)
        if entry is None:
            raise UnknownJob(job_id)
        if self.clock.wait_event(entry.done, deadline):
            assert entry.result is not None
            return entry.result
        raise DeadlineExceeded(f"no result for {job_id} within {deadline}s")

    def try_result(self, job_id: str) -> JobResult | None:
        with self._lock:
            entry = self._entries.get(job_id)
        if entry is None:
            raise UnknownJob(job_id)
        return entry.result

    def stats(self) -> BrokerStats:
        with self._lock:
            submitted = self._submitted
            completed = self._completed
            dispatched = self._dispatched
            timeouts = self._timeouts
            recycles = self._recycles
            by_status = {status.value: 0 for status in WorkerStatus}
            for w in self.workers:
                by_status[w.status.value] += 1
            elapsed = max(self.clock.now() - self._started_at, 1e-9) if self._started_at else 1e-9
        return BrokerStats(
            queue_depth=submitted - dispatched,
            in_flight=dispatched - completed,
            submitted=submitted,
            completed=completed,
            timeouts=timeouts,
            recycles=recycles,
            workers=by_status,
            throughput_per_s=completed / elapsed,
            timeout_rate=(timeouts / completed) if completed else 0.0,
        )

    # -- worker side -----------------------------------------------------

    def _worker_loop(self, state: WorkerState) -> None:
        backend = self._backend_factory()
        try:
            while True:
                job_id = self._queue.get()
                if job_id is None:
                    return
                entry = self._entries[job_id]
                dispatch_time = self.clock.now()
                with self._lock:
                    self._dispatched += 1
                state.status = WorkerStatus.BUSY
                state.last_heartbeat = dispatch_time

                verdict = self._run_job(backend, entry.job, dispatch_time)

                done_time = self.clock.now()
                state.jobs_served += 1
                self._deliver(
                    entry,
                    JobResult(
                        job_id=job_id,
                        verdict=verdict,
                        worker_id=state.worker_id,
                        queue_wait=dispatch_time - entry.job.submitted_at,
                        exec_time=done_time - dispatch_time,
                    ),
                )
                # Tick the policy before refreshing the heartbeat: the last
                # beat was at dispatch, so a check that outran the heartbeat
                # window recycles here, right after the job drained.
                decision = recycle_policy_tick(
                    state, done_time, self._recycle_threshold, self._heartbeat_timeout
                )
                state.last_heartbeat = done_time
                if decision is RecycleDecision.RECYCLE:
                    state.status = WorkerStatus.RECYCLING
                    backend.reset()
                    state.jobs_served = 0
                    state.last_heartbeat = self.clock.now()
                    with self._lock:
                        self._recycles += 1
                state.status = WorkerStatus.IDLE
        finally:
            state.status = WorkerStatus.DEAD
            backend.close()

    def _run_job(self, backend: VerifierBackend, job: SketchJob, started: float) -> VerifierVerdict:
        try:
            raw = backend.check(job.code, job.timeout)
            return classify_raw(raw, elapsed=self.clock.now() - started)
        except CheckTimeout as exc:
            return timeout_verdict(elapsed=exc.elapsed)
        except BackendCrashed as exc:
            backend.reset()
            return crash_verdict(raw=str(exc), elapsed=self.clock.now() - started)
        except Exception as exc:  # isolation: a rogue backend never kills the worker
            backend.reset()
            return crash_verdict(raw=f"worker exception: {exc}", elapsed=self.clock.now() - started)

    def _deliver(self, entry: _JobEntry, result: JobResult) -> None:
        entry.result = result
        with self._lock:
            self._completed += 1
            if result.verdict.status.value == "timeout":
                self._timeouts += 1
        entry.done.set()
        self.clock.kick()
