#!/usr/bin/env python3
"""Replay the bundled golden proving session through the rollout engine.

The recorded session repaired a cyclic-fractions inequality over six
sketch/feedback rounds before committing a final answer. A scripted
generator re-emits the generator-side spans, a scripted backend returns
the recorded feedback, and the engine reproduces the full trajectory
byte-for-byte, scoring reward 1 from the final verification.
"""

from proofloop import (
    Broker,
    RolloutLimits,
    RolloutTrace,
    ScriptedBackend,
    TranscriptGenerator,
    flatten,
    run_rollout,
)
from proofloop.fixtures import (
    golden_feedback_payloads,
    load_golden_prompt,
    load_golden_session,
)


def main() -> None:
    transcript = load_golden_session()
    payloads = golden_feedback_payloads()
    backend = ScriptedBackend(list(payloads) + ["{}"])  # +1 for the final answer check
    trace = RolloutTrace()

    with Broker(lambda: backend, worker_count=1) as broker:
        trajectory = run_rollout(
            load_golden_prompt(),
            TranscriptGenerator(transcript, chunk_size=2048),
            broker,
            RolloutLimits(max_total_tokens=100_000),
            prompt_id="golden",
            trace=trace,
        )

    print(f"segments: {len(trajectory.segments)}  feedback rounds: {trajectory.repl_rounds()}")
    print(f"tokens (whitespace): {trajectory.total_tokens()}")
    print(f"stop reason: {trajectory.stop_reason.value}   reward: {trajectory.reward}")
    print("sketch verdicts:", " -> ".join(s.value for s in trace.sketch_verdicts))
    print("final verification:", trace.final_verdict.status.value)
    print("byte-exact replay:", flatten(trajectory) == transcript)


if __name__ == "__main__":
    main()
