"""Operator entry point: serve the broker, run rollout suites, check one file.

Configuration is resolved in precedence order: command-line flags beat
environment variables (``HARNESS_<FLAG>``; broker-specific names
``BROKER_LISTEN``, ``WORKER_COUNT``, ``RECYCLE_THRESHOLD``,
``DEFAULT_TIMEOUT_S``, ``REPL_CMD``, ``REPL_CWD`` also honored), which
beat a flat key=value config file, which beats defaults.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 infrastructure failure.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import shlex
import signal
import sys
import threading
from dataclasses import dataclass, field

from .backends import (
    BackendCrashed,
    CheckTimeout,
    MockBackend,
    ScriptedBackend,
    SubprocessReplBackend,
    VerifierBackend,
)
from .broker import Broker
from .fixtures import golden_feedback_payloads, load_golden_prompt, load_golden_session
from .metrics import DEFAULT_BUDGETS, EvalRun, TrialOutcome, render_report
from .protocol import Trajectory, read_jsonl, to_jsonl_line
from .rollout import (
    GeneratorStop,
    RolloutLimits,
    RolloutTrace,
    ScriptedGenerator,
    TranscriptGenerator,
    run_group,
    run_rollout,
)
from .server import BrokerService
from .verdict import ReplMessage, Severity, VerdictStatus, VerifierVerdict, classify_raw

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_INFRA_ERROR = 3


class ConfigError(Exception):
    pass


class BadFixture(ConfigError):
    pass


@dataclass
class RunConfig:
    backend: str = "mock"
    workers: int = 4
    timeout_s: float = 60.0
    max_tokens: int = 16384
    group_size: int = 8
    trials: int = 32
    budgets: tuple[int, ...] = DEFAULT_BUDGETS
    seed: int = 0
    out: str = ""
    listen: str = "127.0.0.1:0"
    recycle_threshold: int = 200
    repl_cmd: str = ""
    repl_cwd: str = ""
    trajectories: str = ""
    fixture: str = ""
    check_max_interactions: int | None = None
    extras: dict[str, str] = field(default_factory=dict)


_ENV_ALIASES = {
    "listen": ("HARNESS_LISTEN", "BROKER_LISTEN"),
    "workers": ("HARNESS_WORKERS", "WORKER_COUNT"),
    "recycle_threshold": ("HARNESS_RECYCLE_THRESHOLD", "RECYCLE_THRESHOLD"),
    "timeout_s": ("HARNESS_TIMEOUT_S", "DEFAULT_TIMEOUT_S"),
    "repl_cmd": ("HARNESS_REPL_CMD", "REPL_CMD"),
    "repl_cwd": ("HARNESS_REPL_CWD", "REPL_CWD"),
    "backend": ("HARNESS_BACKEND",),
    "max_tokens": ("HARNESS_MAX_TOKENS",),
    "group_size": ("HARNESS_GROUP_SIZE",),
    "trials": ("HARNESS_TRIALS",),
    "budgets": ("HARNESS_BUDGETS",),
    "seed": ("HARNESS_SEED",),
    "out": ("HARNESS_OUT",),
}

_INT_KEYS = {"workers", "max_tokens", "group_size", "trials", "seed", "recycle_threshold"}
_FLOAT_KEYS = {"timeout_s"}


def _parse_budgets(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.replace(" ", "").split(",") if part)
    except ValueError as exc:
        raise ConfigError(f"bad budgets list {text!r}: {exc}") from None
    if not values:
        raise ConfigError("budgets list is empty")
    return values


def _coerce(key: str, value: str) -> object:
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "budgets":
            return _parse_budgets(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    return value


def load_config_file(path: str) -> dict[str, str]:
    """Flat ``key=value`` lines; blank lines and #-comments ignored."""
    values: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    for key, value in file_values.items():
        if hasattr(config, key) and key != "extras":
            setattr(config, key, _coerce(key, value))
        else:
            config.extras[key] = value
    for key, env_names in _ENV_ALIASES.items():
        for name in env_names:
            if name in os.environ:
                setattr(config, key, _coerce(key, os.environ[name]))
                break
    for key in (
        "backend", "workers", "timeout_s", "max_tokens", "group_size",
        "trials", "seed", "out", "listen", "recycle_threshold",
        "trajectories", "fixture",
    ):
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    if getattr(args, "budgets", None) is not None:
        config.budgets = _parse_budgets(args.budgets)
    if config.backend not in ("mock", "repl"):
        raise ConfigError(f"unknown backend {config.backend!r} (expected mock or repl)")
    if config.workers < 1:
        raise ConfigError("workers must be at least 1")
    if config.timeout_s <= 0:
        raise ConfigError("timeout-s must be positive")
    return config


def make_backend(config: RunConfig) -> VerifierBackend:
    if config.backend == "mock":
        return MockBackend()
    if not config.repl_cmd:
        raise ConfigError("repl backend requires REPL_CMD")
    return SubprocessReplBackend(shlex.split(config.repl_cmd), cwd=config.repl_cwd or None)


def backend_factory(config: RunConfig):
    def build() -> VerifierBackend:
        return make_backend(config)
    return build


def _parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"bad listen address {listen!r} (expected host:port)")
    return host, int(port)


# -- serve ---------------------------------------------------------------


def cmd_serve(config: RunConfig) -> int:
    host, port = _parse_listen(config.listen)
    broker = Broker(
        backend_factory(config),
        worker_count=config.workers,
        recycle_threshold=config.recycle_threshold,
    )
    service = BrokerService(broker, host=host, port=port)
    if config.trajectories:
        for traj in read_jsonl(config.trajectories):
            service.add_trajectory(traj)
    try:
        bound_host, bound_port = service.start()
    except OSError as exc:
        print(f"bind failed: {exc}", file=sys.stderr)
        return EXIT_INFRA_ERROR

    stop = threading.Event()

    def on_signal(signum: int, frame: object) -> None:
        stop.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    print(f"listening on {bound_host}:{bound_port}", flush=True)
    stop.wait()
    print("draining in-flight jobs", flush=True)
    service.shutdown(drain=True)
    return EXIT_OK


# -- rollout ---------------------------------------------------------------

_STOP_NAMES = {s.value: s for s in GeneratorStop}


def _load_fixture(config: RunConfig) -> dict:
    if config.fixture == "golden":
        return {"transcripts": ["golden"]}
    if not config.fixture:
        raise ConfigError("rollout requires --fixture (a fixture JSON file or 'golden')")
    try:
        with open(config.fixture, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise BadFixture(f"cannot read fixture {config.fixture}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise BadFixture(f"fixture is not valid JSON: {exc}") from None
    if not isinstance(data, dict) or not ("prompts" in data or "transcripts" in data):
        raise BadFixture("fixture must contain a 'prompts' or 'transcripts' key")
    return data


def _script_from_turns(turns: list) -> list[tuple[str, GeneratorStop]]:
    script = []
    for turn in turns:
        if not isinstance(turn, dict) or "text" not in turn or "stop" not in turn:
            raise BadFixture(f"bad turn {turn!r}: need text and stop")
        stop = _STOP_NAMES.get(turn["stop"])
        if stop is None:
            raise BadFixture(f"unknown stop {turn['stop']!r}")
        script.append((turn["text"], stop))
    return script


def _replay_transcript(name: str, config: RunConfig) -> tuple[Trajectory, RolloutTrace]:
    if name == "golden":
        transcript = load_golden_session()
        prompt = load_golden_prompt()
    else:
        try:
            with open(name, encoding="utf-8") as fh:
                transcript = fh.read()
        except OSError as exc:
            raise BadFixture(f"cannot read transcript {name}: {exc}") from None
        prompt = ""
    if name == "golden":
        payloads = golden_feedback_payloads()
    else:
        payloads = re.findall(r"<REPL>\n(.*?)\n</REPL>\n", transcript, re.DOTALL)
    # Replay wants the recorded feedback back verbatim, in order, plus one
    # clean verdict for the final answer: a single-worker scripted broker.
    backend = ScriptedBackend(list(payloads) + ["{}"])
    trace = RolloutTrace()
    with Broker(lambda: backend, worker_count=1) as broker:
        trajectory = run_rollout(
            prompt,
            TranscriptGenerator(transcript),
            broker,
            RolloutLimits(max_tokens_for_replay(transcript), sketch_timeout=config.timeout_s),
            prompt_id=name,
            trace=trace,
        )
    return trajectory, trace


def max_tokens_for_replay(transcript: str) -> int:
    # Replays must never trip the budget; size it to the transcript.
    return max(len(transcript.split()) * 2, 1024)


def cmd_rollout(config: RunConfig) -> int:
    fixture = _load_fixture(config)
    results: list[tuple[Trajectory, RolloutTrace]] = []
    run = EvalRun(trials_per_problem=config.trials)

    if "transcripts" in fixture:
        run = EvalRun(trials_per_problem=1)
        for name in fixture["transcripts"]:
            traj, trace = _replay_transcript(name, config)
            results.append((traj, trace))
            run.add(traj.prompt_id, TrialOutcome(
                reward=traj.reward or 0,
                finish_token=traj.total_tokens(),
                repl_rounds=traj.repl_rounds(),
            ))
    else:
        limits = RolloutLimits(max_total_tokens=config.max_tokens, sketch_timeout=config.timeout_s)
        with Broker(backend_factory(config), worker_count=config.workers) as broker:
            for entry in fixture["prompts"]:
                if not isinstance(entry, dict) or "prompt_id" not in entry or "trials" not in entry:
                    raise BadFixture("prompt entries need prompt_id and trials")
                prompt_id = entry["prompt_id"]
                prompt = entry.get("prompt", "")
                scripts = [_script_from_turns(t) for t in entry["trials"]]
                if not scripts:
                    raise BadFixture(f"prompt {prompt_id} has no trial scripts")
                # trials run in sample groups of G (the last group may be
                # short); trial i always replays script i mod len(scripts)
                for base in range(0, config.trials, config.group_size):
                    size = min(config.group_size, config.trials - base)
                    group = run_group(
                        prompt,
                        lambda j, b=base: ScriptedGenerator(scripts[(b + j) % len(scripts)]),
                        broker,
                        limits,
                        group_size=size,
                        prompt_id=prompt_id,
                    )
                    for traj, trace in zip(group.trajectories, group.traces):
                        results.append((traj, trace))
                        run.add(prompt_id, TrialOutcome(
                            reward=traj.reward or 0,
                            finish_token=traj.total_tokens(),
                            repl_rounds=traj.repl_rounds(),
                        ))

    if config.out:
        with open(config.out, "w", encoding="utf-8") as fh:
            for traj, trace in results:
                record = json.loads(to_jsonl_line(traj))
                record["sketch_verdicts"] = [s.value for s in trace.sketch_verdicts]
                record["final_status"] = (
                    trace.final_verdict.status.value if trace.final_verdict else None
                )
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    text, payload = render_report(run, config.budgets)
    print(text, end="")
    if config.out:
        with open(config.out + ".report.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


# -- check ---------------------------------------------------------------


def _empty_input_verdict() -> VerifierVerdict:
    return VerifierVerdict(
        status=VerdictStatus.FAILED,
        messages=[
            ReplMessage(severity=Severity.ERROR, data="empty input: nothing to verify")
        ],
        raw="",
    )


def cmd_check(config: RunConfig, file_path: str) -> int:
    try:
        with open(file_path, encoding="utf-8") as fh:
            code = fh.read()
    except OSError as exc:
        print(f"cannot read {file_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    if not code.strip():
        verdict = _empty_input_verdict()
    else:
        backend = make_backend(config)
        try:
            raw = backend.check(code, config.timeout_s)
            verdict = classify_raw(raw, elapsed=0.0)
        except CheckTimeout as exc:
            verdict = VerifierVerdict(status=VerdictStatus.TIMEOUT, elapsed=exc.elapsed)
        except BackendCrashed as exc:
            verdict = VerifierVerdict(status=VerdictStatus.CRASH, raw=str(exc))
        finally:
            backend.close()

    print(f"status: {verdict.status.value}")
    for message in verdict.messages:
        where = f"{message.pos.line}:{message.pos.column}: " if message.pos else ""
        print(f"  {message.severity.value}: {where}{message.data}")
    for sorry in verdict.sorries:
        print(f"  sorry: proofState {sorry.proof_state}")
    if verdict.status is VerdictStatus.SUCCESS:
        return EXIT_OK
    if verdict.status is VerdictStatus.CRASH:
        return EXIT_INFRA_ERROR
    return EXIT_VERIFICATION_FAILED


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proofloop",
        description="Tool-integrated proving rollout harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--backend", choices=["mock", "repl"])
        p.add_argument("--workers", type=int)
        p.add_argument("--timeout-s", dest="timeout_s", type=float)
        p.add_argument("--seed", type=int)

    serve = sub.add_parser("serve", help="run the verification service")
    common(serve)
    serve.add_argument("--listen", help="host:port (port 0 picks a free port)")
    serve.add_argument("--recycle-threshold", dest="recycle_threshold", type=int)
    serve.add_argument("--trajectories", help="trajectory JSONL preloaded for fetch_masked")

    rollout = sub.add_parser("rollout", help="run a scripted rollout suite")
    common(rollout)
    rollout.add_argument("--fixture", help="fixture JSON file, or 'golden' for the bundled session")
    rollout.add_argument("--max-tokens", dest="max_tokens", type=int)
    rollout.add_argument("--group-size", dest="group_size", type=int)
    rollout.add_argument("--trials", type=int)
    rollout.add_argument("--budgets", help="comma-separated token budgets")
    rollout.add_argument("--out", help="trajectory JSONL output path")

    check = sub.add_parser("check", help="verify a single file")
    common(check)
    check.add_argument("file", help="file containing the code to verify")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        if args.command == "serve":
            return cmd_serve(config)
        if args.command == "rollout":
            return cmd_rollout(config)
        if args.command == "check":
            return cmd_check(config, args.file)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    parser.error(f"unknown command {args.command!r}")
    return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
