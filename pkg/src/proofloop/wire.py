"""Newline-delimited JSON wire protocol for the verification service.

One JSON object per line, UTF-8. Requests:

    {"type": "submit", "job_id": str, "code": str, "timeout_s": num}
    {"type": "await", "job_id": str, "deadline_s": num}
    {"type": "fetch_masked", "prompt_id": str}

Responses:

    {"type": "ack", "job_id": str}
    {"type": "result", "job_id": str, "status": str, "raw": str, "exec_time_s": num}
    {"type": "trajectory", "prompt_id": str, "stop_reason": str, "reward": int|null,
     "segments": [{"kind": str, "text": str, "token_len": int}], "loss_mask": [0|1, ...]}
    {"type": "error", "code": str}

``submit`` is idempotent keyed by job_id: re-submitting a known id is
acknowledged without re-execution. Error codes: bad_request, queue_full,
broker_down, unknown_job, deadline_exceeded, not_found, internal.
"""

from __future__ import annotations

import json
from typing import Any

REQUEST_TYPES = ("submit", "await", "fetch_masked")
RESPONSE_TYPES = ("ack", "result", "trajectory", "error")

ERROR_BAD_REQUEST = "bad_request"
ERROR_QUEUE_FULL = "queue_full"
ERROR_BROKER_DOWN = "broker_down"
ERROR_UNKNOWN_JOB = "unknown_job"
ERROR_DEADLINE_EXCEEDED = "deadline_exceeded"
ERROR_NOT_FOUND = "not_found"
ERROR_INTERNAL = "internal"


class WireError(Exception):
    """A frame failed schema validation."""


def encode(obj: dict[str, Any]) -> bytes:
    return (json.dumps(obj, ensure_ascii=False) + "\n").encode("utf-8")


def decode_line(line: bytes | str) -> dict[str, Any]:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"frame is not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise WireError("frame is not a JSON object")
    return obj


def _require(obj: dict[str, Any], key: str, types: type | tuple[type, ...]) -> Any:
    if key not in obj:
        raise WireError(f"missing field {key!r}")
    value = obj[key]
    if not isinstance(value, types):
        raise WireError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


def validate_request(obj: dict[str, Any]) -> str:
    """Check a request frame against the schema; returns its type."""
    rtype = _require(obj, "type", str)
    if rtype == "submit":
        _require(obj, "job_id", str)
        _require(obj, "code", str)
        timeout = _require(obj, "timeout_s", (int, float))
        if isinstance(timeout, bool) or timeout <= 0:
            raise WireError("timeout_s must be a positive number")
    elif rtype == "await":
        _require(obj, "job_id", str)
        deadline = _require(obj, "deadline_s", (int, float))
        if isinstance(deadline, bool) or deadline < 0:
            raise WireError("deadline_s must be a nonnegative number")
    elif rtype == "fetch_masked":
        _require(obj, "prompt_id", str)
    else:
        raise WireError(f"unknown request type {rtype!r}")
    return rtype


def validate_response(obj: dict[str, Any]) -> str:
    """Check a response frame against the schema; returns its type."""
    rtype = _require(obj, "type", str)
    if rtype == "ack":
        _require(obj, "job_id", str)
    elif rtype == "result":
        _require(obj, "job_id", str)
        _require(obj, "status", str)
        _require(obj, "raw", str)
        _require(obj, "exec_time_s", (int, float))
    elif rtype == "trajectory":
        _require(obj, "prompt_id", str)
        _require(obj, "stop_reason", str)
        segments = _require(obj, "segments", list)
        for seg in segments:
            if not isinstance(seg, dict):
                raise WireError("segment entries must be objects")
            _require(seg, "kind", str)
            _require(seg, "text", str)
            _require(seg, "token_len", int)
        mask = _require(obj, "loss_mask", list)
        if any(m not in (0, 1) for m in mask):
            raise WireError("loss_mask entries must be 0 or 1")
    elif rtype == "error":
        _require(obj, "code", str)
    else:
        raise WireError(f"unknown response type {rtype!r}")
    return rtype


def error_response(code: str) -> dict[str, Any]:
    return {"type": "error", "code": code}
