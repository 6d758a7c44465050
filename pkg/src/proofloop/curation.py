"""Dynamic prompt filtering and trajectory selection for refinement cycles.

Per-prompt attempt/success counts accumulate over the whole run. Two
selection rules operate on them:

* In-training filtering keeps prompts whose cumulative success rate lies
  strictly between 0 and 1 (never-solved and always-solved prompts carry
  no gradient signal) and that were not already consumed by supervised
  fine-tuning.
* Refinement-cycle selection harvests reward-1 trajectories from hard
  prompts (rate below 0.5) that actually engaged with verifier feedback:
  at least one feedback round followed by a substantive reasoning span.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .protocol import SegmentKind, Trajectory

DEFAULT_MIN_ANALYSIS_TOKENS = 50


@dataclass
class PromptRecord:
    prompt_id: str
    attempts: int = 0
    successes: int = 0
    seen_in_sft: bool = False

    def __post_init__(self) -> None:
        if self.successes > self.attempts:
            raise ValueError("successes cannot exceed attempts")

    @property
    def rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0


class PromptTracker:
    """Thread-safe registry of per-prompt rolling counts."""

    def __init__(self) -> None:
        self._records: dict[str, PromptRecord] = {}
        self._lock = threading.Lock()

    def record_group(self, prompt_id: str, rewards: Sequence[int]) -> PromptRecord:
        """Fold one sample group into the prompt's cumulative counts."""
        with self._lock:
            rec = self._records.setdefault(prompt_id, PromptRecord(prompt_id=prompt_id))
            rec.attempts += len(rewards)
            rec.successes += sum(1 for r in rewards if r == 1)
            return replace(rec)

    def mark_seen_in_sft(self, prompt_id: str) -> None:
        with self._lock:
            rec = self._records.setdefault(prompt_id, PromptRecord(prompt_id=prompt_id))
            rec.seen_in_sft = True

    def get(self, prompt_id: str) -> PromptRecord | None:
        with self._lock:
            rec = self._records.get(prompt_id)
            return replace(rec) if rec else None

    def snapshot(self) -> list[PromptRecord]:
        with self._lock:
            return [replace(r) for r in self._records.values()]


def eligible_prompts(records: Iterable[PromptRecord]) -> set[str]:
    """Prompts whose cumulative rate is strictly inside (0, 1), minus SFT reruns."""
    return {
        r.prompt_id
        for r in records
        if r.attempts > 0 and 0.0 < r.rate < 1.0 and not r.seen_in_sft
    }


def has_feedback_analysis(trajectory: Trajectory, min_analysis_tokens: int = DEFAULT_MIN_ANALYSIS_TOKENS) -> bool:
    """True if some feedback round is followed by reasoning of useful length."""
    segs = trajectory.segments
    for i, seg in enumerate(segs[:-1]):
        if (
            seg.kind is SegmentKind.REPL_FEEDBACK
            and segs[i + 1].kind is SegmentKind.REASONING
            and segs[i + 1].token_len >= min_analysis_tokens
        ):
            return True
    return False


def select_rlsft(
    trajectories: Iterable[Trajectory],
    records: Mapping[str, PromptRecord] | Iterable[PromptRecord],
    min_analysis_tokens: int = DEFAULT_MIN_ANALYSIS_TOKENS,
) -> list[Trajectory]:
    """Pick correct trajectories from hard prompts for the next tuning round.

    Keeps a trajectory iff its reward is 1, its prompt's cumulative rate is
    below 0.5, and it passes the feedback-analysis filter. Trajectories
    whose prompt has no record are skipped.
    """
    if not isinstance(records, Mapping):
        records = {r.prompt_id: r for r in records}
    selected = []
    for traj in trajectories:
        rec = records.get(traj.prompt_id)
        if rec is None or rec.attempts == 0:
            continue
        if traj.reward == 1 and rec.rate < 0.5 and has_feedback_analysis(traj, min_analysis_tokens):
            selected.append(traj)
    return selected


def save_records(records: Iterable[PromptRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "prompt_id": r.prompt_id,
                        "attempts": r.attempts,
                        "successes": r.successes,
                        "seen_in_sft": r.seen_in_sft,
                    }
                )
                + "\n"
            )


def load_records(path: str) -> list[PromptRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(
                    PromptRecord(
                        prompt_id=d["prompt_id"],
                        attempts=d["attempts"],
                        successes=d["successes"],
                        seen_in_sft=d.get("seen_in_sft", False),
                    )
                )
    return out
