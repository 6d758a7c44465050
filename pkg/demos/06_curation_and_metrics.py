#!/usr/bin/env python3
"""Dynamic prompt curation and evaluation metrics on a simulated sweep.

Per-prompt success rates accumulate over a simulated training run; the
curation rules keep only prompts that are neither hopeless nor saturated,
and harvest correct trajectories from hard prompts for the next tuning
round. The metrics side estimates pass@1 and its scaling with the token
budget.
"""

import random

from proofloop import (
    EvalRun,
    PromptTracker,
    Segment,
    SegmentKind,
    StopReason,
    Trajectory,
    TrialOutcome,
    eligible_prompts,
    render_report,
    select_rlsft,
)


def make_trajectory(pid: str, reward: int, rounds: int, analysis_tokens: int) -> Trajectory:
    segments = [Segment(SegmentKind.REASONING, "setup", token_len=12)]
    for _ in range(rounds):
        segments.append(Segment(SegmentKind.SKETCH, "tactic block", token_len=30))
        segments.append(Segment(SegmentKind.REPL_FEEDBACK, "{}", token_len=25))
        segments.append(Segment(SegmentKind.REASONING, "feedback analysis", token_len=analysis_tokens))
    segments.append(Segment(SegmentKind.FINAL_ANSWER, "answer", token_len=40))
    return Trajectory(pid, segments, StopReason.FINAL_ANSWER, reward=reward)


def main() -> None:
    rng = random.Random(2026)
    tracker = PromptTracker()
    harvested = []

    # simulate a sweep: per-prompt difficulty fixes the group success odds
    difficulty = {f"p{i:03d}": rng.random() for i in range(60)}
    for pid, p_success in difficulty.items():
        for _ in range(4):  # four groups of 8 samples each
            rewards = [1 if rng.random() < p_success else 0 for _ in range(8)]
            tracker.record_group(pid, rewards)
            for r in rewards:
                if r == 1:
                    harvested.append(
                        make_trajectory(pid, r, rounds=rng.randint(0, 3),
                                        analysis_tokens=rng.choice([10, 80]))
                    )

    records = tracker.snapshot()
    in_band = eligible_prompts(records)
    print(f"{len(records)} prompts tracked; {len(in_band)} remain in the strict (0,1) band")

    record_map = {r.prompt_id: r for r in records}
    selected = select_rlsft(harvested, record_map)
    print(f"{len(harvested)} correct trajectories harvested; "
          f"{len(selected)} pass the hard-prompt + feedback-analysis filter")
    rates = sorted(record_map[t.prompt_id].rate for t in selected)
    if rates:
        print(f"selected prompt rates span {rates[0]:.2f} .. {rates[-1]:.2f} (all < 0.5)")

    # evaluation: 40 problems x 16 trials with budget-dependent finishes
    run = EvalRun(trials_per_problem=16)
    for i in range(40):
        p = rng.uniform(0.2, 0.9)
        for _ in range(16):
            run.add(f"eval{i}", TrialOutcome(
                reward=1 if rng.random() < p else 0,
                finish_token=rng.randint(500, 20480),
                repl_rounds=rng.randint(0, 6),
            ))
    text, _ = render_report(run)
    print("\n" + text)


if __name__ == "__main__":
    main()
