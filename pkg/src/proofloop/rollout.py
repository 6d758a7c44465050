"""Tool-integrated rollout orchestration.

One rollout streams generator output through the delimiter parser, pauses
at each completed sketch to verify it via the broker, injects the
verifier's feedback into the generator's context, resumes, and finally
scores the answer after the think-end marker. Only the final answer's
verification sets the binary reward; intermediate sketch verdicts are
feedback, not reward.

Grouped rollouts run G independent samples of one prompt for
group-normalized advantage computation downstream.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol

from .broker import Broker, BrokerDown, DeadlineExceeded, QueueFull
from .protocol import (
    THINK_END,
    EventKind,
    MalformedNesting,
    ParseEvent,
    Segment,
    SegmentKind,
    StopReason,
    StreamParser,
    Trajectory,
    assemble,
    extract_final_answer,
    parse_transcript,
    render_feedback,
    whitespace_tokens,
)
from .verdict import VerdictStatus, VerifierVerdict, reward as verdict_reward

logger = logging.getLogger(__name__)

# In-context rendering of outcomes that produce no checker output. The
# production strings are unknown; these are configurable per rollout.
TIMEOUT_FEEDBACK = '{"error":"timeout"}'
CRASH_FEEDBACK = '{"error":"crash"}'


class GeneratorStop(Enum):
    SKETCH_END = "sketch_end"
    THINK_END = "think_end"
    BUDGET_EXHAUSTED = "budget_exhausted"
    NATURAL_END = "natural_end"


class GeneratorError(Exception):
    """The generator violated its contract or failed mid-rollout."""


class Generator(Protocol):
    def next(self, context: str, budget: int) -> tuple[list[str], GeneratorStop]:
        """Produce the next chunks given the full context; ≤ budget tokens."""
        ...


@dataclass
class RolloutLimits:
    max_total_tokens: int = 16384  # training default; evaluation runs use 20480
    sketch_timeout: float = 60.0
    max_interactions: int | None = None

    def __post_init__(self) -> None:
        if self.max_total_tokens <= 0:
            raise ValueError("max_total_tokens must be positive")


EVAL_MAX_TOTAL_TOKENS = 20480


@dataclass
class GroupRewards:
    prompt_id: str
    rewards: list[int]
    trajectories: list[Trajectory]
    traces: list["RolloutTrace"] = field(default_factory=list)


@dataclass
class RolloutTrace:
    """Optional per-rollout instrumentation filled in by run_rollout."""

    sketch_verdicts: list[VerdictStatus] = field(default_factory=list)
    final_verdict: VerifierVerdict | None = None


class ScriptedGenerator:
    """Deterministic generator replaying a fixed list of turns.

    Each turn is ``(text, stop)``; text is optionally re-chunked into
    ``chunk_size`` pieces to exercise chunk-boundary handling. An
    exhausted script ends the stream naturally unless ``strict`` is set.
    """

    def __init__(self, turns: list[tuple[str, GeneratorStop]], chunk_size: int = 0, strict: bool = False):
        self._turns = list(turns)
        self._next = 0
        self._chunk_size = chunk_size
        self._strict = strict

    def next(self, context: str, budget: int) -> tuple[list[str], GeneratorStop]:
        if self._next >= len(self._turns):
            if self._strict:
                raise GeneratorError("scripted generator exhausted")
            return [], GeneratorStop.NATURAL_END
        text, stop = self._turns[self._next]
        self._next += 1
        return self._chunks(text), stop

    def _chunks(self, text: str) -> list[str]:
        if self._chunk_size <= 0 or not text:
            return [text] if text else []
        n = self._chunk_size
        return [text[i:i + n] for i in range(0, len(text), n)]


def transcript_turns(transcript: str) -> list[tuple[str, GeneratorStop]]:
    """Split a rendered transcript into the generator-side turns that produced it."""
    events, _ = parse_transcript(transcript)
    turns: list[tuple[str, GeneratorStop]] = []
    pending = ""
    saw_think = False
    for ev in events:
        if ev.kind is EventKind.REASONING_TEXT:
            pending += ev.text
        elif ev.kind is EventKind.SKETCH_COMPLETE:
            turns.append((pending + "<sketch>" + ev.text + "</sketch>", GeneratorStop.SKETCH_END))
            pending = ""
        elif ev.kind is EventKind.THINK_END:
            pending += "</think>"
            saw_think = True
        elif ev.kind is EventKind.PLAIN_TEXT:
            pending += ev.text
    if pending or saw_think:
        turns.append((pending, GeneratorStop.NATURAL_END))
    return turns


class TranscriptGenerator(ScriptedGenerator):
    """Replays the generator side of a fully rendered session transcript."""

    def __init__(self, transcript: str, chunk_size: int = 0):
        super().__init__(transcript_turns(transcript), chunk_size=chunk_size)


def _await_forever(broker: Broker, job_id: str, slice_s: float) -> VerifierVerdict:
    # Conservation guarantees every accepted job resolves (broker shutdown
    # included), so waiting in slices cannot spin forever in practice.
    while True:
        try:
            return broker.await_result(job_id, deadline=slice_s).verdict
        except DeadlineExceeded:
            continue


def _feedback_payload(verdict: VerifierVerdict, timeout_feedback: str, crash_feedback: str) -> str:
    if verdict.status is VerdictStatus.TIMEOUT:
        return timeout_feedback
    if verdict.status is VerdictStatus.CRASH and not verdict.raw:
        return crash_feedback
    return verdict.raw


def run_rollout(
    prompt: str,
    generator: Generator,
    broker: Broker,
    limits: RolloutLimits | None = None,
    *,
    prompt_id: str = "",
    token_counter: Callable[[str], int] = whitespace_tokens,
    timeout_feedback: str = TIMEOUT_FEEDBACK,
    crash_feedback: str = CRASH_FEEDBACK,
    trace: RolloutTrace | None = None,
) -> Trajectory:
    """Run one tool-integrated rollout and return its scored trajectory.

    The interaction count is unbounded unless ``limits.max_interactions``
    caps it. Budget exhaustion before the think-end marker scores 0 with
    stop reason ``length_limit``; generator failures and a broker that
    stops accepting work score 0 as ``aborted``. ``token_counter`` stands
    in for the generator's tokenizer and is applied to every rendered
    span, injected feedback included.
    """
    limits = limits or RolloutLimits()
    parser = StreamParser()
    events: list[ParseEvent] = []
    feedbacks: list[str] = []
    context = prompt
    used = 0
    sketches_seen = 0
    interactions = 0
    stop_reason: StopReason | None = None
    aborted = False

    while True:
        if used >= limits.max_total_tokens:
            stop_reason = StopReason.LENGTH_LIMIT
            break
        budget = limits.max_total_tokens - used
        try:
            chunks, stop = generator.next(context, budget)
        except GeneratorError:
            aborted = True
            break
        try:
            for chunk in chunks:
                events.extend(parser.feed(chunk))
                context += chunk
                used += token_counter(chunk)
        except MalformedNesting:
            aborted = True
            break

        if stop is GeneratorStop.SKETCH_END:
            new_sketches = [e for e in events if e.kind is EventKind.SKETCH_COMPLETE]
            if len(new_sketches) <= sketches_seen:
                # The generator claimed a sketch boundary it never emitted.
                aborted = True
                break
            sketches_seen = len(new_sketches)
            if limits.max_interactions is not None and interactions >= limits.max_interactions:
                aborted = True
                break
            interactions += 1
            code = new_sketches[-1].text
            try:
                job_id = broker.submit_code(code, timeout=limits.sketch_timeout, prompt_id=prompt_id)
            except (BrokerDown, QueueFull):
                aborted = True
                break
            verdict = _await_forever(broker, job_id, limits.sketch_timeout + broker.grace)
            if trace is not None:
                trace.sketch_verdicts.append(verdict.status)
            payload = _feedback_payload(verdict, timeout_feedback, crash_feedback)
            injected = render_feedback(payload)
            context += injected
            used += token_counter(injected)
            feedbacks.append(payload)
        elif stop is GeneratorStop.THINK_END:
            continue
        elif stop is GeneratorStop.BUDGET_EXHAUSTED:
            stop_reason = StopReason.LENGTH_LIMIT
            break
        elif stop is GeneratorStop.NATURAL_END:
            break

    events.extend(parser.close())

    final_reward = 0
    if aborted:
        stop_reason = StopReason.ABORTED
    elif parser.saw_think_end:
        stop_reason = StopReason.FINAL_ANSWER
        # Rebuild the answer from parser events: injected feedback never
        # passes through the parser, so it cannot contaminate extraction.
        answer_raw = "".join(e.text for e in events if e.kind is EventKind.PLAIN_TEXT)
        answer = extract_final_answer(THINK_END + answer_raw)
        if answer.strip():
            try:
                job_id = broker.submit_code(answer, timeout=limits.sketch_timeout, prompt_id=prompt_id)
            except (BrokerDown, QueueFull):
                # unverifiable answer scores 0; the trajectory itself survives
                job_id = None
            if job_id is not None:
                verdict = _await_forever(broker, job_id, limits.sketch_timeout + broker.grace)
                if trace is not None:
                    trace.final_verdict = verdict
                final_reward = verdict_reward(verdict)
    elif stop_reason is None:
        stop_reason = StopReason.GENERATOR_EXHAUSTED

    try:
        return assemble(
            events,
            feedbacks,
            prompt_id=prompt_id,
            stop_reason=stop_reason,
            reward=final_reward,
            token_counter=token_counter,
        )
    except Exception:
        # Protocol violations can leave events beyond repair; the rollout
        # still scores 0 rather than vanishing from its group.
        return Trajectory(
            prompt_id=prompt_id,
            segments=[Segment(SegmentKind.REASONING, "")],
            stop_reason=StopReason.ABORTED,
            reward=0,
        )


def run_group(
    prompt: str,
    generator_factory: Callable[[int], Generator],
    broker: Broker,
    limits: RolloutLimits | None = None,
    group_size: int = 8,
    *,
    prompt_id: str = "",
    concurrency: int = 1,
    token_counter: Callable[[str], int] = whitespace_tokens,
) -> GroupRewards:
    """Run ``group_size`` independent rollouts of one prompt.

    Results are order-stable (index i holds sample i regardless of
    completion order). A rollout that fails outright scores 0 and stays in
    the group; it never shrinks G.
    """
    if group_size < 1:
        raise ValueError("group_size must be at least 1")
    if group_size == 1:
        logger.warning("group_size=1 leaves downstream advantages degenerate (all zero)")

    trajectories: list[Trajectory | None] = [None] * group_size
    traces = [RolloutTrace() for _ in range(group_size)]

    def one(i: int) -> Trajectory:
        try:
            return run_rollout(
                prompt,
                generator_factory(i),
                broker,
                limits,
                prompt_id=prompt_id,
                token_counter=token_counter,
                trace=traces[i],
            )
        except Exception:
            logger.exception("rollout %d of prompt %s failed", i, prompt_id)
            return Trajectory(
                prompt_id=prompt_id,
                segments=[Segment(SegmentKind.REASONING, "")],
                stop_reason=StopReason.ABORTED,
                reward=0,
            )

    if concurrency <= 1:
        for i in range(group_size):
            trajectories[i] = one(i)
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            futures = {pool.submit(one, i): i for i in range(group_size)}
            for fut, i in futures.items():
                trajectories[i] = fut.result()

    done = [t for t in trajectories if t is not None]
    assert len(done) == group_size
    return GroupRewards(
        prompt_id=prompt_id,
        rewards=[t.reward or 0 for t in done],
        trajectories=done,
        traces=traces,
    )
