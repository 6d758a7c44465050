"""Injectable time source so timeout behavior is testable on virtual time.

All broker and backend timing goes through a :class:`Clock`. Production
uses :class:`SystemClock` (monotonic time, real sleeps). Tests use
:class:`VirtualClock`, where time only moves when the driver calls
``advance``; threads sleeping on virtual time block on a condition
variable until their wake-up time is reached.
"""

from __future__ import annotations

import threading
import time


class Clock:
    def now(self) -> float:
        raise NotImplementedError

    def sleep(self, duration: float) -> None:
        raise NotImplementedError

    def wait_event(self, event: threading.Event, timeout: float) -> bool:
        """Block until ``event`` is set or ``timeout`` of clock time passes."""
        raise NotImplementedError

    def kick(self) -> None:
        """Wake threads blocked in wait_event to re-check their condition."""


class SystemClock(Clock):
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, duration: float) -> None:
        if duration > 0:
            time.sleep(duration)

    def wait_event(self, event: threading.Event, timeout: float) -> bool:
        return event.wait(timeout)


class VirtualClock(Clock):
    """Manually advanced clock for deterministic timeout tests.

    ``sleep`` and ``wait_event`` park the calling thread until ``advance``
    moves time past its deadline (or the awaited event is set). A short
    real-time backstop wait keeps waiters responsive to events set by
    threads that do not call :meth:`kick`.
    """

    def __init__(self, start: float = 0.0, backstop: float = 0.05) -> None:
        self._now = start
        self._cond = threading.Condition()
        self._backstop = backstop

    def now(self) -> float:
        with self._cond:
            return self._now

    def advance(self, dt: float) -> None:
        if dt < 0:
            raise ValueError("cannot move virtual time backwards")
        with self._cond:
            self._now += dt
            self._cond.notify_all()

    def kick(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def sleep(self, duration: float) -> None:
        with self._cond:
            deadline = self._now + duration
            while self._now < deadline:
                self._cond.wait()

    def wait_event(self, event: threading.Event, timeout: float) -> bool:
        with self._cond:
            deadline = self._now + timeout
            while not event.is_set() and self._now < deadline:
                self._cond.wait(self._backstop)
        return event.is_set()
