"""Proof-checker output parsing, verdict classification, and binary reward.

The checker's REPL replies with a JSON object whose ``messages`` array
carries diagnostics (severity error/warning/info) and whose ``sorries``
array lists admitted-but-unproven goals. A check outcome is classified
with the precedence

    Timeout > Crash > Failed > Incomplete > Success

so a timed-out run is never misread as a failure, garbage output is never
a success, any error-severity message fails the proof even when sorries
are also present, and warnings alone never block a proof.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum


class ParseError(Exception):
    """Raw checker output was not a JSON object."""


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


@dataclass(frozen=True)
class Position:
    line: int      # 1-based
    column: int    # 0-based


@dataclass
class ReplMessage:
    severity: Severity
    data: str
    pos: Position | None = None
    end_pos: Position | None = None


@dataclass
class SorryRecord:
    proof_state: int
    goal: str
    pos: Position | None = None
    end_pos: Position | None = None


class VerdictStatus(Enum):
    SUCCESS = "success"
    FAILED = "failed"
    INCOMPLETE = "incomplete"
    TIMEOUT = "timeout"
    CRASH = "crash"


@dataclass
class VerifierVerdict:
    status: VerdictStatus
    messages: list[ReplMessage] = field(default_factory=list)
    sorries: list[SorryRecord] = field(default_factory=list)
    raw: str = ""
    elapsed: float = 0.0

    def error_messages(self) -> list[ReplMessage]:
        return [m for m in self.messages if m.severity is Severity.ERROR]


def _parse_position(obj: object) -> Position | None:
    if not isinstance(obj, dict):
        return None
    try:
        return Position(line=int(obj["line"]), column=int(obj["column"]))
    except (KeyError, TypeError, ValueError):
        return None


def _parse_severity(value: object) -> Severity:
    try:
        return Severity(value)
    except ValueError:
        # Anything the checker invents beyond the three known levels is
        # advisory; the full payload stays available in the raw text.
        return Severity.INFO


def parse_repl_output(raw: str) -> tuple[list[ReplMessage], list[SorryRecord]]:
    """Extract the messages and sorries arrays from raw checker output.

    Both arrays default to empty when absent; fields beyond the known
    schema are preserved only in the raw text. Raises :class:`ParseError`
    for anything that is not a JSON object (classified upstream as Crash).
    """
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ParseError(f"checker output is not JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ParseError("checker output is not a JSON object")

    messages = []
    for m in data.get("messages", []) or []:
        if not isinstance(m, dict):
            continue
        messages.append(
            ReplMessage(
                severity=_parse_severity(m.get("severity")),
                data=str(m.get("data", "")),
                pos=_parse_position(m.get("pos")),
                end_pos=_parse_position(m.get("endPos")),
            )
        )
    sorries = []
    for s in data.get("sorries", []) or []:
        if not isinstance(s, dict):
            continue
        sorries.append(
            SorryRecord(
                proof_state=int(s.get("proofState", -1)),
                goal=str(s.get("goal", "")),
                pos=_parse_position(s.get("pos")),
                end_pos=_parse_position(s.get("endPos")),
            )
        )
    return messages, sorries


def classify(
    messages: list[ReplMessage],
    sorries: list[SorryRecord],
    elapsed: float,
    timed_out: bool,
    raw: str = "",
) -> VerifierVerdict:
    """Classify parsed checker output into a verdict.

    Timeout dominates everything; otherwise any error-severity message
    means Failed (even with sorries present), sorries alone mean
    Incomplete, and a clean reply is Success. Warnings never fail a proof.
    """
    if timed_out:
        status = VerdictStatus.TIMEOUT
    elif any(m.severity is Severity.ERROR for m in messages):
        status = VerdictStatus.FAILED
    elif sorries:
        status = VerdictStatus.INCOMPLETE
    else:
        status = VerdictStatus.SUCCESS
    return VerifierVerdict(status=status, messages=messages, sorries=sorries, raw=raw, elapsed=elapsed)


def classify_raw(raw: str, elapsed: float, timed_out: bool = False) -> VerifierVerdict:
    """Parse and classify in one step; unparseable output becomes Crash."""
    if timed_out:
        return VerifierVerdict(status=VerdictStatus.TIMEOUT, raw=raw, elapsed=elapsed)
    try:
        messages, sorries = parse_repl_output(raw)
    except ParseError:
        return VerifierVerdict(status=VerdictStatus.CRASH, raw=raw, elapsed=elapsed)
    return classify(messages, sorries, elapsed, timed_out=False, raw=raw)


def crash_verdict(raw: str, elapsed: float) -> VerifierVerdict:
    """Verdict for a backend that died or produced no usable output."""
    return VerifierVerdict(status=VerdictStatus.CRASH, raw=raw, elapsed=elapsed)


def timeout_verdict(elapsed: float) -> VerifierVerdict:
    return VerifierVerdict(status=VerdictStatus.TIMEOUT, raw="", elapsed=elapsed)


def reward(verdict: VerifierVerdict) -> int:
    """Binary outcome reward: 1 only for a fully successful verification.

    Warning-only output still earns 1; sorries, errors, timeouts, and
    crashes all score 0.
    """
    return 1 if verdict.status is VerdictStatus.SUCCESS else 0
