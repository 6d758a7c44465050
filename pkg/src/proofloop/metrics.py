"""Evaluation metrics: pass@1, interaction histograms, length scaling.

pass@1 for a problem is estimated by averaging k independent trials; the
suite-level figure is the macro average over problems. Length scaling
replays an evaluation under tighter token budgets: a trial only counts as
a success under budget L if it succeeded and finished within L tokens,
which makes the pass@1 column nondecreasing in L by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .protocol import Trajectory

DEFAULT_TRIALS_PER_PROBLEM = 32
DEFAULT_BUDGETS = (4096, 8192, 12288, 16384, 20480)


@dataclass(frozen=True)
class TrialOutcome:
    reward: int
    finish_token: int
    repl_rounds: int = 0


@dataclass
class EvalRun:
    """Per-problem trial outcomes; every problem carries exactly k trials."""

    trials_per_problem: int = DEFAULT_TRIALS_PER_PROBLEM
    problems: dict[str, list[TrialOutcome]] = field(default_factory=dict)

    def add(self, problem_id: str, outcome: TrialOutcome) -> None:
        self.problems.setdefault(problem_id, []).append(outcome)

    def validate(self) -> None:
        for pid, trials in self.problems.items():
            if len(trials) != self.trials_per_problem:
                raise ValueError(
                    f"problem {pid} has {len(trials)} trials, expected {self.trials_per_problem}"
                )


def pass_at_1(run: EvalRun) -> float:
    """Macro average over problems of per-problem success rate."""
    run.validate()
    if not run.problems:
        return 0.0
    k = run.trials_per_problem
    per_problem = [sum(t.reward for t in trials) / k for trials in run.problems.values()]
    return sum(per_problem) / len(per_problem)


def interaction_histogram(trajectories: Iterable[Trajectory]) -> dict[int, int]:
    """Feedback-round frequency over successful trajectories only."""
    hist: dict[int, int] = {}
    for traj in trajectories:
        if traj.reward == 1:
            rounds = traj.repl_rounds()
            hist[rounds] = hist.get(rounds, 0) + 1
    return hist


def outcome_histogram(run: EvalRun) -> dict[int, int]:
    """Feedback-round frequency over successful trial outcomes."""
    hist: dict[int, int] = {}
    for trials in run.problems.values():
        for t in trials:
            if t.reward == 1:
                hist[t.repl_rounds] = hist.get(t.repl_rounds, 0) + 1
    return hist


def length_scaling(run: EvalRun, budgets: Sequence[int] = DEFAULT_BUDGETS) -> list[tuple[int, float]]:
    """pass@1 recomputed under each token budget.

    A trial succeeds under budget L iff it earned reward 1 and its finish
    token is within L.
    """
    run.validate()
    k = run.trials_per_problem
    table = []
    for budget in budgets:
        if not run.problems:
            table.append((budget, 0.0))
            continue
        per_problem = [
            sum(1 for t in trials if t.reward == 1 and t.finish_token <= budget) / k
            for trials in run.problems.values()
        ]
        table.append((budget, sum(per_problem) / len(per_problem)))
    return table


def render_report(run: EvalRun, budgets: Sequence[int] = DEFAULT_BUDGETS) -> tuple[str, dict]:
    """Plain-text table plus a JSON-ready dict of the same numbers."""
    overall = pass_at_1(run)
    table = length_scaling(run, budgets)
    hist = outcome_histogram(run)

    lines = [
        f"problems: {len(run.problems)}   trials/problem: {run.trials_per_problem}",
        f"pass@1: {overall:.4f}",
        "",
        "max generation length -> pass@1",
    ]
    for budget, value in table:
        lines.append(f"  {budget:>8} -> {value:.4f}")
    lines.append("")
    lines.append("feedback rounds histogram (successes)")
    for rounds in sorted(hist):
        lines.append(f"  {rounds:>3} rounds: {hist[rounds]}")
    text = "\n".join(lines) + "\n"

    payload = {
        "problems": len(run.problems),
        "trials_per_problem": run.trials_per_problem,
        "pass_at_1": overall,
        "length_scaling": [{"budget": b, "pass_at_1": v} for b, v in table],
        "interaction_histogram": {str(k): v for k, v in sorted(hist.items())},
    }
    return text, payload


def report_json(run: EvalRun, budgets: Sequence[int] = DEFAULT_BUDGETS) -> str:
    _, payload = render_report(run, budgets)
    return json.dumps(payload, indent=2, sort_keys=True)
