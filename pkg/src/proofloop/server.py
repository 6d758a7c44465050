"""Socket service exposing a broker (and trajectory store) over the wire protocol.

One thread per connection; frames are processed in order per connection,
so concurrent clients open as many connections as they need. Shutdown
drains in-flight jobs before the broker stops.
"""

from __future__ import annotations

import logging
import socketserver
import threading
from typing import Any

from . import wire
from .broker import Broker, BrokerDown, DeadlineExceeded, QueueFull, SketchJob, UnknownJob
from .protocol import Trajectory, build_loss_mask

logger = logging.getLogger(__name__)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        service: BrokerService = self.server.service  # type: ignore[attr-defined]
        while True:
            line = self.rfile.readline()
            if not line:
                return
            if not line.strip():
                continue
            try:
                request = wire.decode_line(line)
                wire.validate_request(request)
                response = service.dispatch(request)
            except wire.WireError:
                response = wire.error_response(wire.ERROR_BAD_REQUEST)
            except Exception:
                logger.exception("request dispatch failed")
                response = wire.error_response(wire.ERROR_INTERNAL)
            try:
                self.wfile.write(wire.encode(response))
            except (BrokenPipeError, ConnectionResetError):
                return


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True
    request_queue_size = 256  # default backlog of 5 drops bursty client fleets


class BrokerService:
    """Serves submit/await/fetch_masked over newline-delimited JSON."""

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = 0):
        self.broker = broker
        self._server = _Server((host, port), _Handler)
        self._server.service = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None
        self._trajectories: dict[str, Trajectory] = {}
        self._traj_lock = threading.Lock()

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return str(host), int(port)

    def add_trajectory(self, trajectory: Trajectory) -> None:
        with self._traj_lock:
            self._trajectories[trajectory.prompt_id] = trajectory

    def start(self) -> tuple[str, int]:
        self.broker.start()
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self.address

    def shutdown(self, drain: bool = True) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
        self.broker.shutdown(drain=drain)

    def __enter__(self) -> "BrokerService":
        self.start()
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.shutdown()

    # -- dispatch --------------------------------------------------------

    def dispatch(self, request: dict[str, Any]) -> dict[str, Any]:
        rtype = request["type"]
        if rtype == "submit":
            return self._handle_submit(request)
        if rtype == "await":
            return self._handle_await(request)
        if rtype == "fetch_masked":
            return self._handle_fetch(request)
        return wire.error_response(wire.ERROR_BAD_REQUEST)

    def _handle_submit(self, request: dict[str, Any]) -> dict[str, Any]:
        job = SketchJob(
            job_id=request["job_id"],
            code=request["code"],
            timeout=float(request["timeout_s"]),
            prompt_id=str(request.get("prompt_id", "")),
        )
        try:
            job_id = self.broker.submit(job)
        except QueueFull:
            return wire.error_response(wire.ERROR_QUEUE_FULL)
        except BrokerDown:
            return wire.error_response(wire.ERROR_BROKER_DOWN)
        return {"type": "ack", "job_id": job_id}

    def _handle_await(self, request: dict[str, Any]) -> dict[str, Any]:
        try:
            result = self.broker.await_result(request["job_id"], float(request["deadline_s"]))
        except UnknownJob:
            return wire.error_response(wire.ERROR_UNKNOWN_JOB)
        except DeadlineExceeded:
            return wire.error_response(wire.ERROR_DEADLINE_EXCEEDED)
        return {
            "type": "result",
            "job_id": result.job_id,
            "status": result.verdict.status.value,
            "raw": result.verdict.raw,
            "exec_time_s": result.exec_time,
        }

    def _handle_fetch(self, request: dict[str, Any]) -> dict[str, Any]:
        with self._traj_lock:
            traj = self._trajectories.get(request["prompt_id"])
        if traj is None:
            return wire.error_response(wire.ERROR_NOT_FOUND)
        mask = build_loss_mask(traj)
        return {
            "type": "trajectory",
            "prompt_id": traj.prompt_id,
            "stop_reason": traj.stop_reason.value,
            "reward": traj.reward,
            "segments": [
                {"kind": s.kind.value, "text": s.text, "token_len": s.token_len}
                for s in traj.segments
            ],
            "loss_mask": [1 if m else 0 for m in mask.included],
        }
