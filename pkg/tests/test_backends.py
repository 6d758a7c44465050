from __future__ import annotations

import os
import shutil
import sys
import time

import pytest

from proofloop.backends import (
    BackendCrashed,
    CheckTimeout,
    MockBackend,
    MockRule,
    ScriptedBackend,
    SubprocessReplBackend,
    VerifierBackend,
)
from proofloop.clock import VirtualClock
from proofloop.verdict import VerdictStatus, classify_raw

STUB_CMD = [sys.executable, os.path.join(os.path.dirname(__file__), "repl_stub.py")]


# -- mock backend -------------------------------------------------------------


def test_mock_default_success() -> None:
    assert MockBackend().check("exact rfl", timeout=60.0) == "{}"


def test_mock_sorry_rule() -> None:
    raw = MockBackend().check("nlinarith\n  sorry -- todo", timeout=60.0)
    verdict = classify_raw(raw, elapsed=0.0)
    assert verdict.status is VerdictStatus.INCOMPLETE
    assert verdict.sorries


def test_mock_fail_rule() -> None:
    raw = MockBackend().check("MOCK_FAIL", timeout=60.0)
    verdict = classify_raw(raw, elapsed=0.0)
    assert verdict.status is VerdictStatus.FAILED


def test_mock_sleep_within_timeout_succeeds() -> None:
    clock = VirtualClock()
    backend = MockBackend(clock=clock)
    results: list[str] = []
    import threading

    worker = threading.Thread(target=lambda: results.append(backend.check("MOCK_SLEEP:0.5", 1.0)))
    worker.start()
    time.sleep(0.05)
    clock.advance(0.5)
    worker.join(timeout=2.0)
    assert results == ["{}"]


def test_mock_sleep_beyond_timeout_times_out() -> None:
    clock = VirtualClock()
    backend = MockBackend(clock=clock)
    failures: list[Exception] = []
    import threading

    def run() -> None:
        try:
            backend.check("MOCK_SLEEP:3", timeout=1.0)
        except Exception as exc:
            failures.append(exc)

    worker = threading.Thread(target=run)
    worker.start()
    time.sleep(0.05)
    clock.advance(1.0)  # the backend waits out the timeout, never the full delay
    worker.join(timeout=2.0)
    assert not worker.is_alive()
    assert len(failures) == 1
    assert isinstance(failures[0], CheckTimeout)
    assert failures[0].elapsed == pytest.approx(1.0)


def test_mock_crash_rule() -> None:
    backend = MockBackend()
    with pytest.raises(BackendCrashed):
        backend.check("theorem x : True := MOCK_CRASH", timeout=60.0)
    backend.reset()
    assert backend.check("exact rfl", timeout=60.0) == "{}"


def test_mock_rules_first_match_in_order() -> None:
    rules = (
        MockRule(trigger="alpha", response='{"messages": []}'),
        MockRule(trigger="alp", response="{}"),
    )
    backend = MockBackend(rules=rules)
    assert backend.check("alpha", timeout=1.0) == '{"messages": []}'


def test_mock_repeatability() -> None:
    backend = MockBackend()
    codes = ["exact rfl", "MOCK_FAIL", "with sorry inside", "plain"]
    first = [backend.check(c, 60.0) for c in codes]
    second = [backend.check(c, 60.0) for c in codes]
    assert first == second


# -- scripted backend ----------------------------------------------------------


def test_scripted_backend_plays_in_order() -> None:
    backend = ScriptedBackend(["{}", '{"messages": []}', CheckTimeout(1.0)])
    assert backend.check("a", 60.0) == "{}"
    assert backend.check("b", 60.0) == '{"messages": []}'
    with pytest.raises(CheckTimeout):
        backend.check("c", 60.0)
    with pytest.raises(RuntimeError):
        backend.check("d", 60.0)


# -- contract conformance across backends ---------------------------------------


def _conformance_cases() -> list[tuple[str, VerdictStatus]]:
    return [
        ("exact rfl", VerdictStatus.SUCCESS),
        ("MOCK_FAIL STUB_FAIL", VerdictStatus.FAILED),
        ("sorry STUB_SORRY", VerdictStatus.INCOMPLETE),
    ]


def _verdict_via(backend: VerifierBackend, code: str) -> VerdictStatus:
    try:
        raw = backend.check(code, timeout=5.0)
    except CheckTimeout:
        return VerdictStatus.TIMEOUT
    except BackendCrashed:
        return VerdictStatus.CRASH
    return classify_raw(raw, elapsed=0.0).status


@pytest.mark.parametrize("backend_name", ["mock", "stub_subprocess"])
def test_conformance_same_verdicts(backend_name: str) -> None:
    backend: VerifierBackend
    if backend_name == "mock":
        backend = MockBackend()
    else:
        backend = SubprocessReplBackend(STUB_CMD)
    try:
        for code, expected in _conformance_cases():
            assert _verdict_via(backend, code) is expected
    finally:
        backend.close()


# -- subprocess backend ----------------------------------------------------------


def test_subprocess_success_and_reuse() -> None:
    backend = SubprocessReplBackend(STUB_CMD)
    try:
        assert backend.check("exact rfl", timeout=5.0) == "{}"
        raw = backend.check("STUB_FAIL", timeout=5.0)
        assert classify_raw(raw, 0.0).status is VerdictStatus.FAILED
    finally:
        backend.close()


def test_subprocess_timeout_kills_and_recovers() -> None:
    backend = SubprocessReplBackend(STUB_CMD)
    try:
        start = time.monotonic()
        with pytest.raises(CheckTimeout):
            backend.check("STUB_HANG", timeout=0.3)
        assert time.monotonic() - start < 0.3 + backend.grace
        backend.reset()
        assert backend.check("exact rfl", timeout=5.0) == "{}"
    finally:
        backend.close()


def test_subprocess_killed_mid_check_then_reset_recovers() -> None:
    backend = SubprocessReplBackend(STUB_CMD)
    try:
        with pytest.raises(BackendCrashed):
            backend.check("STUB_EXIT", timeout=5.0)
        backend.reset()
        assert backend.check("exact rfl", timeout=5.0) == "{}"
    finally:
        backend.close()


def test_subprocess_garbage_classified_crash_upstream() -> None:
    backend = SubprocessReplBackend(STUB_CMD)
    try:
        raw = backend.check("STUB_GARBAGE", timeout=5.0)
        assert classify_raw(raw, 0.0).status is VerdictStatus.CRASH
    finally:
        backend.close()


def test_subprocess_request_framing() -> None:
    # The request must be exactly one JSON line {"cmd": code} plus a blank
    # line; the probe subprocess validates the bytes it received.
    import json

    script = (
        "import sys, json\n"
        "line1 = sys.stdin.readline()\n"
        "line2 = sys.stdin.readline()\n"
        "ok = line2 == '\\n' and json.loads(line1) == {'cmd': 'X'}\n"
        "sys.stdout.write(json.dumps({'framing_ok': ok}) + '\\n\\n')\n"
        "sys.stdout.flush()\n"
    )
    backend = SubprocessReplBackend([sys.executable, "-c", script])
    try:
        raw = backend.check("X", timeout=5.0)
        assert json.loads(raw) == {"framing_ok": True}
    finally:
        backend.close()


@pytest.mark.skipif(shutil.which("lake") is None, reason="no real proof checker installed")
def test_real_checker_integration(golden_session: str) -> None:
    # Exercised only where a real checker toolchain exists.
    from proofloop.protocol import extract_final_answer

    cmd = os.environ.get("REPL_CMD")
    if not cmd:
        pytest.skip("REPL_CMD not configured")
    backend = SubprocessReplBackend(cmd.split(), cwd=os.environ.get("REPL_CWD") or None)
    try:
        raw = backend.check(extract_final_answer(golden_session), timeout=120.0)
        assert classify_raw(raw, 0.0).status is VerdictStatus.SUCCESS
    finally:
        backend.close()
