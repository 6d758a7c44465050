from __future__ import annotations

import json
import signal
import socket
import subprocess
import sys

from proofloop import wire
from proofloop.cli import (
    EXIT_CONFIG_ERROR,
    EXIT_INFRA_ERROR,
    EXIT_OK,
    EXIT_VERIFICATION_FAILED,
    build_parser,
    main,
    resolve_config,
)


def run_cli(*argv: str) -> int:
    return main(list(argv))


# -- configuration resolution -----------------------------------------------------


def test_flags_beat_env_beat_file(tmp_path, monkeypatch) -> None:
    config_file = tmp_path / "harness.conf"
    config_file.write_text("workers=2\ntimeout_s=10\nbackend=mock\n")
    monkeypatch.setenv("HARNESS_WORKERS", "5")
    parser = build_parser()
    args = parser.parse_args(["check", "--config", str(config_file), "--workers", "9", "x.txt"])
    config = resolve_config(args)
    assert config.workers == 9          # flag wins
    assert config.timeout_s == 10.0     # file value survives
    monkeypatch.delenv("HARNESS_WORKERS")
    args = parser.parse_args(["check", "--config", str(config_file), "x.txt"])
    assert resolve_config(args).workers == 2


def test_env_overrides_file(tmp_path, monkeypatch) -> None:
    config_file = tmp_path / "harness.conf"
    config_file.write_text("workers=2\n")
    monkeypatch.setenv("WORKER_COUNT", "7")
    parser = build_parser()
    args = parser.parse_args(["check", "--config", str(config_file), "x.txt"])
    assert resolve_config(args).workers == 7


def test_bad_config_file_is_config_error(tmp_path) -> None:
    config_file = tmp_path / "broken.conf"
    config_file.write_text("not a key value line\n")
    code = run_cli("check", "--config", str(config_file), "whatever.txt")
    assert code == EXIT_CONFIG_ERROR


def test_unknown_backend_is_config_error(monkeypatch, tmp_path) -> None:
    monkeypatch.setenv("HARNESS_BACKEND", "quantum")
    target = tmp_path / "f.txt"
    target.write_text("exact rfl")
    assert run_cli("check", str(target)) == EXIT_CONFIG_ERROR


# -- check ---------------------------------------------------------------------


def test_check_success_exit_zero(tmp_path, capsys) -> None:
    target = tmp_path / "good.txt"
    target.write_text("exact rfl")
    assert run_cli("check", "--backend", "mock", str(target)) == EXIT_OK
    assert "status: success" in capsys.readouterr().out


def test_check_failure_exit_one(tmp_path, capsys) -> None:
    target = tmp_path / "bad.txt"
    target.write_text("MOCK_FAIL")
    assert run_cli("check", "--backend", "mock", str(target)) == EXIT_VERIFICATION_FAILED
    out = capsys.readouterr().out
    assert "status: failed" in out
    assert "simulated verification failure" in out


def test_check_sorry_is_incomplete(tmp_path, capsys) -> None:
    target = tmp_path / "partial.txt"
    target.write_text("intro x\nsorry")
    assert run_cli("check", "--backend", "mock", str(target)) == EXIT_VERIFICATION_FAILED
    assert "status: incomplete" in capsys.readouterr().out


def test_check_empty_file_fails_with_diagnostics(tmp_path, capsys) -> None:
    target = tmp_path / "empty.txt"
    target.write_text("   \n\n")
    assert run_cli("check", "--backend", "mock", str(target)) == EXIT_VERIFICATION_FAILED
    out = capsys.readouterr().out
    assert "status: failed" in out
    assert "empty input" in out


def test_check_unreadable_file_is_config_error(tmp_path) -> None:
    assert run_cli("check", "--backend", "mock", str(tmp_path / "missing.txt")) == EXIT_CONFIG_ERROR


def test_check_backend_crash_is_infra_error(tmp_path, capsys) -> None:
    target = tmp_path / "crashy.txt"
    target.write_text("MOCK_CRASH")
    assert run_cli("check", "--backend", "mock", str(target)) == EXIT_INFRA_ERROR
    assert "status: crash" in capsys.readouterr().out


# -- rollout ----------------------------------------------------------------------


def _fixture_file(tmp_path, n_prompts: int = 10) -> str:
    prompts = []
    for i in range(n_prompts):
        success = [
            {"text": f"r{i} <sketch>MOCK_FAIL</sketch>", "stop": "sketch_end"},
            {"text": "fix\n</think>\nexact rfl", "stop": "natural_end"},
        ]
        failure = [
            {"text": "hmm\n</think>\nMOCK_FAIL", "stop": "natural_end"},
        ]
        prompts.append(
            {
                "prompt_id": f"p{i}",
                "prompt": f"prove {i}: ",
                "trials": [success, failure] if i % 2 == 0 else [success],
            }
        )
    path = tmp_path / "fixture.json"
    path.write_text(json.dumps({"prompts": prompts}))
    return str(path)


def test_rollout_counts_and_report(tmp_path, capsys) -> None:
    fixture = _fixture_file(tmp_path)
    out = tmp_path / "trajs.jsonl"
    code = run_cli(
        "rollout", "--fixture", fixture, "--trials", "4", "--out", str(out), "--seed", "1"
    )
    assert code == EXIT_OK
    lines = [l for l in out.read_text().splitlines() if l.strip()]
    assert len(lines) == 40
    report = capsys.readouterr().out
    assert "pass@1" in report
    record = json.loads(lines[0])
    assert {"prompt_id", "stop_reason", "reward", "segments", "sketch_verdicts", "final_status"} <= set(record)
    # first trial of p0 replays the repair script: one failed sketch round
    assert record["sketch_verdicts"] == ["failed"]
    assert record["final_status"] == "success"
    report_payload = json.loads((tmp_path / "trajs.jsonl.report.json").read_text())
    assert report_payload["problems"] == 10


def test_rollout_group_size_chunks_trials(tmp_path, capsys) -> None:
    fixture = _fixture_file(tmp_path, n_prompts=2)
    out = tmp_path / "grouped.jsonl"
    code = run_cli(
        "rollout", "--fixture", fixture, "--trials", "5", "--group-size", "2",
        "--out", str(out),
    )
    assert code == EXIT_OK
    lines = [l for l in out.read_text().splitlines() if l.strip()]
    assert len(lines) == 10  # trials per prompt unchanged by grouping


def test_rollout_deterministic_under_seed(tmp_path) -> None:
    fixture = _fixture_file(tmp_path, n_prompts=4)
    out1 = tmp_path / "a.jsonl"
    out2 = tmp_path / "b.jsonl"
    assert run_cli("rollout", "--fixture", fixture, "--trials", "3", "--out", str(out1), "--seed", "7") == EXIT_OK
    assert run_cli("rollout", "--fixture", fixture, "--trials", "3", "--out", str(out2), "--seed", "7") == EXIT_OK
    assert out1.read_bytes() == out2.read_bytes()


def test_rollout_golden_replay(tmp_path, capsys) -> None:
    out = tmp_path / "golden.jsonl"
    assert run_cli("rollout", "--fixture", "golden", "--out", str(out)) == EXIT_OK
    report = capsys.readouterr().out
    assert "pass@1: 1.0000" in report
    assert "6 rounds: 1" in report
    record = json.loads(out.read_text().splitlines()[0])
    assert record["reward"] == 1
    assert record["sketch_verdicts"] == ["failed"] * 5 + ["success"]
    assert record["final_status"] == "success"


def test_rollout_bad_fixture_is_config_error(tmp_path) -> None:
    path = tmp_path / "broken.json"
    path.write_text("{\"prompts\": [{\"prompt_id\": \"x\"}]}")
    assert run_cli("rollout", "--fixture", str(path)) == EXIT_CONFIG_ERROR
    path.write_text("not json")
    assert run_cli("rollout", "--fixture", str(path)) == EXIT_CONFIG_ERROR
    assert run_cli("rollout") == EXIT_CONFIG_ERROR


# -- serve ---------------------------------------------------------------------


def _rpc(address: tuple[str, int], request: dict) -> dict:
    with socket.create_connection(address, timeout=10.0) as sock:
        sock.sendall(wire.encode(request))
        return wire.decode_line(sock.makefile("rb").readline())


def test_serve_end_to_end_and_graceful_drain() -> None:
    proc = subprocess.Popen(
        [sys.executable, "-m", "proofloop.cli", "serve", "--backend", "mock",
         "--listen", "127.0.0.1:0", "--workers", "2"],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        line = proc.stdout.readline().strip()
        assert line.startswith("listening on ")
        host, port = line.removeprefix("listening on ").rsplit(":", 1)
        address = (host, int(port))

        ack = _rpc(address, {"type": "submit", "job_id": "s1", "code": "exact rfl", "timeout_s": 10})
        assert ack == {"type": "ack", "job_id": "s1"}
        result = _rpc(address, {"type": "await", "job_id": "s1", "deadline_s": 10})
        assert result["status"] == "success"

        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=15) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()
