from __future__ import annotations

import subprocess
import sys

import pytest

# Server-side setup and oracles use the service package directly; the
# client under test only ever touches the socket.
from proofloop.fixtures import load_golden_session
from proofloop.protocol import assemble, parse_transcript, whitespace_tokens, write_jsonl


def build_golden_trajectory():
    events, feedbacks = parse_transcript(load_golden_session())
    return assemble(
        events,
        feedbacks,
        prompt_id="golden",
        reward=1,
        token_counter=whitespace_tokens,
    )


@pytest.fixture(scope="session")
def golden_trajectory():
    return build_golden_trajectory()


@pytest.fixture(scope="session")
def live_server(tmp_path_factory, golden_trajectory):
    """A mock-backed service subprocess; yields its (host, port)."""
    store = tmp_path_factory.mktemp("fixtures") / "trajectories.jsonl"
    write_jsonl([golden_trajectory], str(store))
    proc = subprocess.Popen(
        [
            sys.executable, "-m", "proofloop.cli", "serve",
            "--backend", "mock",
            "--listen", "127.0.0.1:0",
            "--workers", "4",
            "--trajectories", str(store),
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
    )
    line = proc.stdout.readline().strip()
    assert line.startswith("listening on "), line
    host, port = line.removeprefix("listening on ").rsplit(":", 1)
    yield host, int(port)
    proc.terminate()
    proc.wait(timeout=15)
