"""Client session for the verification service's wire protocol.

The protocol is newline-delimited JSON over a stream socket, one object
per line, UTF-8:

    -> {"type": "submit", "job_id": str, "code": str, "timeout_s": num}
    <- {"type": "ack", "job_id": str}
    -> {"type": "await", "job_id": str, "deadline_s": num}
    <- {"type": "result", "job_id": str, "status": str, "raw": str, "exec_time_s": num}
    -> {"type": "fetch_masked", "prompt_id": str}
    <- {"type": "trajectory", ..., "segments": [...], "loss_mask": [0|1, ...]}
    <- {"type": "error", "code": str}

This client is deliberately logic-free: verdict classification, loss
masking, and all training math live server-side. Submissions are
idempotent keyed by job_id, so transport retries can never duplicate a
job's execution.
"""

from __future__ import annotations

import json
import socket
import time
import uuid
from dataclasses import dataclass, field
from typing import Any


class ClientError(Exception):
    pass


class ConnectionFailed(ClientError):
    """The service stayed unreachable through all retries."""


class ProtocolViolation(ClientError):
    """The service answered with a frame outside the wire schema."""


class QueueFull(ClientError):
    pass


class BrokerDown(ClientError):
    pass


class UnknownJob(ClientError):
    pass


class DeadlineExceeded(ClientError):
    pass


class NotFound(ClientError):
    pass


_ERROR_MAP: dict[str, type[ClientError]] = {
    "queue_full": QueueFull,
    "broker_down": BrokerDown,
    "unknown_job": UnknownJob,
    "deadline_exceeded": DeadlineExceeded,
    "not_found": NotFound,
}


@dataclass(frozen=True)
class JobOutcome:
    job_id: str
    status: str
    raw: str
    exec_time_s: float

    @property
    def succeeded(self) -> bool:
        return self.status == "success"


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    backoff_s: float = 0.2
    backoff_factor: float = 2.0

    def delays(self) -> list[float]:
        return [self.backoff_s * self.backoff_factor ** i for i in range(self.max_retries)]


@dataclass
class ClientSession:
    """One session per training process; safe for concurrent submits.

    Each request uses its own connection, so concurrent calls (including
    long-blocking awaits) never head-of-line block each other.
    """

    host: str
    port: int
    default_timeout_s: float = 60.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    connect_timeout_s: float = 10.0

    # -- transport -------------------------------------------------------

    def _roundtrip(self, request: dict[str, Any], io_timeout_s: float) -> dict[str, Any]:
        payload = (json.dumps(request) + "\n").encode("utf-8")
        last_error: Exception | None = None
        for attempt, delay in enumerate([0.0] + self.retry.delays()):
            if delay:
                time.sleep(delay)
            try:
                with socket.create_connection(
                    (self.host, self.port), timeout=self.connect_timeout_s
                ) as sock:
                    sock.settimeout(io_timeout_s)
                    sock.sendall(payload)
                    line = self._read_line(sock)
                return self._parse_response(line)
            except (OSError, socket.timeout) as exc:
                last_error = exc
        raise ConnectionFailed(
            f"{self.host}:{self.port} unreachable after {self.retry.max_retries + 1} attempts: {last_error}"
        )

    @staticmethod
    def _read_line(sock: socket.socket) -> bytes:
        chunks = bytearray()
        while True:
            chunk = sock.recv(65536)
            if not chunk:
                break
            chunks.extend(chunk)
            if b"\n" in chunk:
                break
        if not chunks:
            raise OSError("connection closed before a response line arrived")
        return bytes(chunks).split(b"\n", 1)[0]

    @staticmethod
    def _parse_response(line: bytes) -> dict[str, Any]:
        try:
            response = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolViolation(f"response is not JSON: {exc}") from None
        if not isinstance(response, dict) or not isinstance(response.get("type"), str):
            raise ProtocolViolation("response frame has no type field")
        if response["type"] == "error":
            code = response.get("code", "")
            raise _ERROR_MAP.get(code, ClientError)(f"service error: {code}")
        return response

    @staticmethod
    def _expect(response: dict[str, Any], rtype: str, fields: dict[str, type | tuple]) -> None:
        if response.get("type") != rtype:
            raise ProtocolViolation(f"expected {rtype} frame, got {response.get('type')!r}")
        for name, types in fields.items():
            if name not in response or not isinstance(response[name], types):
                raise ProtocolViolation(f"{rtype} frame missing or mistyped field {name!r}")

    # -- operations --------------------------------------------------------

    def submit(self, code: str, timeout_s: float | None = None, job_id: str | None = None) -> str:
        """Submit a verification job; returns its id immediately.

        A caller-supplied ``job_id`` pins idempotency across retries and
        process restarts; otherwise a fresh unique id is stamped.
        """
        job_id = job_id or f"client-{uuid.uuid4().hex}"
        response = self._roundtrip(
            {
                "type": "submit",
                "job_id": job_id,
                "code": code,
                "timeout_s": timeout_s if timeout_s is not None else self.default_timeout_s,
            },
            io_timeout_s=self.connect_timeout_s,
        )
        self._expect(response, "ack", {"job_id": str})
        return response["job_id"]

    def await_result(self, job_id: str, deadline_s: float) -> JobOutcome:
        """Block until the job's outcome or ``deadline_s`` passes server-side."""
        response = self._roundtrip(
            {"type": "await", "job_id": job_id, "deadline_s": deadline_s},
            io_timeout_s=deadline_s + self.connect_timeout_s,
        )
        self._expect(
            response,
            "result",
            {"job_id": str, "status": str, "raw": str, "exec_time_s": (int, float)},
        )
        return JobOutcome(
            job_id=response["job_id"],
            status=response["status"],
            raw=response["raw"],
            exec_time_s=float(response["exec_time_s"]),
        )

    def submit_and_await(
        self, code: str, timeout_s: float | None = None, deadline_s: float | None = None
    ) -> JobOutcome:
        job_id = self.submit(code, timeout_s=timeout_s)
        wait = deadline_s if deadline_s is not None else (timeout_s or self.default_timeout_s) + 30.0
        return self.await_result(job_id, deadline_s=wait)

    def fetch_masked(self, prompt_id: str) -> tuple[dict[str, Any], list[int]]:
        """Fetch a stored trajectory and its per-token loss mask.

        Returns the trajectory record (JSONL schema fields) and the mask.
        The only client-side processing is structural validation: the mask
        must be as long as the trajectory's token total.
        """
        response = self._roundtrip(
            {"type": "fetch_masked", "prompt_id": prompt_id},
            io_timeout_s=self.connect_timeout_s,
        )
        self._expect(
            response,
            "trajectory",
            {"prompt_id": str, "stop_reason": str, "segments": list, "loss_mask": list},
        )
        record = {
            "prompt_id": response["prompt_id"],
            "stop_reason": response["stop_reason"],
            "reward": response.get("reward"),
            "segments": response["segments"],
        }
        mask = response["loss_mask"]
        if any(m not in (0, 1) for m in mask):
            raise ProtocolViolation("loss_mask entries must be 0 or 1")
        token_total = sum(int(seg.get("token_len", 0)) for seg in record["segments"])
        if len(mask) != token_total:
            raise ProtocolViolation(
                f"mask length {len(mask)} does not cover {token_total} tokens"
            )
        return record, mask


def trajectory_jsonl_line(record: dict[str, Any]) -> str:
    """Serialize a fetched trajectory record to the service's JSONL format."""
    ordered = {
        "prompt_id": record["prompt_id"],
        "stop_reason": record["stop_reason"],
        "reward": record.get("reward"),
        "segments": [
            {"kind": s["kind"], "text": s["text"], "token_len": s["token_len"]}
            for s in record["segments"]
        ],
    }
    return json.dumps(ordered, ensure_ascii=False)
