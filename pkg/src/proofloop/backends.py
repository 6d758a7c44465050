"""Pluggable verifier backends behind one contract.

A backend checks one self-contained code snippet and returns the checker's
raw output text. Checks are stateless by design: each snippet carries its
own imports, so no environment leaks between jobs. Three implementations:

* :class:`MockBackend` — deterministic, rule-driven; the test workhorse.
* :class:`ScriptedBackend` — replays a fixed sequence of canned outcomes.
* :class:`SubprocessReplBackend` — drives a real proof-checker REPL over
  a line-oriented JSON pipe protocol.

A backend signals abnormal outcomes by raising :class:`CheckTimeout`
(never later than timeout + grace) or :class:`BackendCrashed` (after
which :meth:`reset` restores a usable backend).
"""

from __future__ import annotations

import json
import os
import re
import select
import subprocess
import time
from dataclasses import dataclass

from .clock import Clock, SystemClock


class CheckTimeout(Exception):
    """The check did not finish within its timeout."""

    def __init__(self, elapsed: float):
        super().__init__(f"check timed out after {elapsed:.3f}s")
        self.elapsed = elapsed


class BackendCrashed(Exception):
    """The backend died or its protocol broke mid-check."""


class VerifierBackend:
    """Contract shared by all backends."""

    def check(self, code: str, timeout: float) -> str:
        """Verify ``code``; return raw checker output within the timeout."""
        raise NotImplementedError

    def reset(self) -> None:
        """Restore a usable backend after a crash or for recycling."""
        raise NotImplementedError

    def close(self) -> None:
        """Release any held resources; the backend is unusable afterwards."""


# Canned outputs the mock serves. Shapes match the checker's JSON schema.
MOCK_SORRY_OUTPUT = json.dumps(
    {
        "sorries": [
            {
                "proofState": 0,
                "pos": {"line": 1, "column": 0},
                "endPos": {"line": 1, "column": 5},
                "goal": "⊢ True",
            }
        ]
    }
)
MOCK_FAIL_OUTPUT = json.dumps(
    {
        "messages": [
            {
                "severity": "error",
                "pos": {"line": 1, "column": 0},
                "endPos": None,
                "data": "simulated verification failure",
            }
        ]
    }
)
MOCK_SUCCESS_OUTPUT = "{}"

_SLEEP_RE = re.compile(r"MOCK_SLEEP:([0-9]*\.?[0-9]+)")


@dataclass(frozen=True)
class MockRule:
    """First-match rule: if ``trigger`` occurs in the code, produce ``response``.

    ``parse_delay`` rules read their delay from the code text itself
    (``MOCK_SLEEP:<seconds>``); ``crash`` rules raise instead of replying.
    """

    trigger: str
    response: str = MOCK_SUCCESS_OUTPUT
    delay: float = 0.0
    parse_delay: bool = False
    crash: bool = False


DEFAULT_MOCK_RULES: tuple[MockRule, ...] = (
    MockRule(trigger="sorry", response=MOCK_SORRY_OUTPUT),
    MockRule(trigger="MOCK_FAIL", response=MOCK_FAIL_OUTPUT),
    MockRule(trigger="MOCK_SLEEP:", parse_delay=True),
    MockRule(trigger="MOCK_CRASH", crash=True),
)


class MockBackend(VerifierBackend):
    """Deterministic verifier: output is a pure function of (rules, code).

    Rules apply first-match in declaration order; code matching nothing
    verifies cleanly. Delays run on the injected clock, so tests can
    exercise timeout paths on virtual time.
    """

    def __init__(self, rules: tuple[MockRule, ...] = DEFAULT_MOCK_RULES, clock: Clock | None = None):
        self.rules = rules
        self.clock = clock or SystemClock()

    def check(self, code: str, timeout: float) -> str:
        for rule in self.rules:
            if rule.trigger in code:
                return self._apply(rule, code, timeout)
        return MOCK_SUCCESS_OUTPUT

    def _apply(self, rule: MockRule, code: str, timeout: float) -> str:
        delay = rule.delay
        if rule.parse_delay:
            m = _SLEEP_RE.search(code)
            if m:
                delay = float(m.group(1))
        if delay > timeout:
            self.clock.sleep(timeout)
            raise CheckTimeout(elapsed=timeout)
        if delay > 0:
            self.clock.sleep(delay)
        if rule.crash:
            raise BackendCrashed(f"simulated crash on trigger {rule.trigger!r}")
        return rule.response

    def reset(self) -> None:
        pass


class ScriptedBackend(VerifierBackend):
    """Replays a fixed outcome sequence, one entry per check.

    Entries are raw output strings or exception instances to raise
    (:class:`CheckTimeout` / :class:`BackendCrashed`). Used to pin a
    recorded session's feedback during rollout replay.
    """

    def __init__(self, outcomes: list[str | Exception]):
        self._outcomes = list(outcomes)
        self._next = 0

    def check(self, code: str, timeout: float) -> str:
        if self._next >= len(self._outcomes):
            raise RuntimeError("scripted backend exhausted")
        outcome = self._outcomes[self._next]
        self._next += 1
        if isinstance(outcome, Exception):
            raise outcome
        return outcome

    @property
    def served(self) -> int:
        return self._next

    def reset(self) -> None:
        pass


class SubprocessReplBackend(VerifierBackend):
    """Adapter speaking a line-oriented JSON protocol to a checker REPL.

    Each check writes one request object ``{"cmd": <code>}`` as a single
    line followed by one blank line, then reads response lines until a
    blank line and returns the accumulated text. The subprocess is killed
    on timeout and restarted lazily by :meth:`reset` after a crash.
    """

    def __init__(self, cmd: list[str], cwd: str | None = None, grace: float = 2.0):
        self.cmd = list(cmd)
        self.cwd = cwd
        self.grace = grace
        self._proc: subprocess.Popen[bytes] | None = None
        self._rbuf = b""

    def _ensure_proc(self) -> subprocess.Popen[bytes]:
        if self._proc is None or self._proc.poll() is not None:
            self._rbuf = b""
            self._proc = subprocess.Popen(
                self.cmd,
                cwd=self.cwd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        return self._proc

    def check(self, code: str, timeout: float) -> str:
        proc = self._ensure_proc()
        request = json.dumps({"cmd": code}, ensure_ascii=False)
        started = time.monotonic()
        try:
            assert proc.stdin is not None
            proc.stdin.write(request.encode("utf-8") + b"\n\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._kill()
            raise BackendCrashed(f"request write failed: {exc}") from None

        deadline = started + timeout
        lines: list[str] = []
        assert proc.stdout is not None
        fd = proc.stdout.fileno()
        while True:
            line, eof = self._read_line(fd, deadline)
            if line is None:
                self._kill()
                if eof:
                    raise BackendCrashed("checker subprocess closed its output")
                raise CheckTimeout(elapsed=time.monotonic() - started)
            if line == "":
                return "\n".join(lines)
            lines.append(line)

    def _read_line(self, fd: int, deadline: float) -> tuple[str | None, bool]:
        """Next decoded line, or (None, eof_flag) on timeout/EOF."""
        while b"\n" not in self._rbuf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None, False
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                return None, False
            chunk = os.read(fd, 65536)
            if not chunk:
                return None, True
            self._rbuf += chunk
        raw, self._rbuf = self._rbuf.split(b"\n", 1)
        return raw.decode("utf-8", errors="replace").rstrip("\r"), False

    def _kill(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=self.grace)
            except Exception:
                pass
            self._proc = None
        self._rbuf = b""

    def reset(self) -> None:
        self._kill()

    def close(self) -> None:
        self._kill()
