"""Delimiter protocol for hybrid proving rollouts.

A rollout interleaves free-form reasoning, code sketches the generator
wants checked, verifier feedback injected by the harness, and a final
answer. On the wire this is plain text with four ASCII delimiters:

    <sketch> ... </sketch>   generator-emitted code to verify
    <REPL> ... </REPL>       harness-injected verifier feedback
    </think>                 end of reasoning; final answer follows

This module owns the grammar: a chunk-boundary-safe streaming parser for
generator output, the feedback injection format, final-answer extraction,
trajectory assembly/flattening, per-token loss masks, and the JSONL
serialization of trajectories. It never tokenizes text itself; token
counts are supplied by the caller.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

SKETCH_OPEN = "<sketch>"
SKETCH_CLOSE = "</sketch>"
REPL_OPEN = "<REPL>"
REPL_CLOSE = "</REPL>"
THINK_END = "</think>"

# Longest delimiter the streaming parser may see split across chunks.
_MAX_DELIM_LEN = max(len(d) for d in (SKETCH_OPEN, SKETCH_CLOSE, THINK_END))


class ProtocolError(Exception):
    """Base class for delimiter-protocol violations."""


class MalformedNesting(ProtocolError):
    """A ``<sketch>`` opened while a previous sketch was still unclosed."""


class NoFinalAnswer(ProtocolError):
    """The text contains no ``</think>`` marker, so no answer was submitted."""


class ArityMismatch(ProtocolError):
    """Feedback count is inconsistent with the sketch events being assembled."""


class SegmentKind(Enum):
    REASONING = "reasoning"
    SKETCH = "sketch"
    REPL_FEEDBACK = "repl_feedback"
    FINAL_ANSWER = "final_answer"


class StopReason(Enum):
    FINAL_ANSWER = "final_answer"
    LENGTH_LIMIT = "length_limit"
    GENERATOR_EXHAUSTED = "generator_exhausted"
    ABORTED = "aborted"


@dataclass
class Segment:
    """One typed span of a trajectory.

    ``text`` excludes the span's wrapping delimiters; the rendered form
    (see :func:`render_segment`) adds them back. ``token_len`` counts the
    rendered span in whatever unit the caller's tokenizer uses.
    """

    kind: SegmentKind
    text: str
    token_len: int = 0


@dataclass
class Trajectory:
    prompt_id: str
    segments: list[Segment]
    stop_reason: StopReason
    reward: int | None = None

    def repl_rounds(self) -> int:
        return sum(1 for s in self.segments if s.kind is SegmentKind.REPL_FEEDBACK)

    def total_tokens(self) -> int:
        return sum(s.token_len for s in self.segments)

    def validate(self) -> None:
        """Raise ProtocolError if the segment sequence breaks an ordering rule."""
        segs = self.segments
        if not segs or segs[0].kind is not SegmentKind.REASONING:
            raise ProtocolError("trajectory must start with a reasoning segment")
        finals = [i for i, s in enumerate(segs) if s.kind is SegmentKind.FINAL_ANSWER]
        if len(finals) > 1:
            raise ProtocolError("more than one final-answer segment")
        if finals:
            if finals[0] != len(segs) - 1:
                raise ProtocolError("final answer must be the last segment")
            if self.stop_reason is not StopReason.FINAL_ANSWER:
                raise ProtocolError("final answer present but stop_reason disagrees")
        answered = 0
        for i, seg in enumerate(segs):
            if seg.kind is SegmentKind.SKETCH:
                followed = i + 1 < len(segs) and segs[i + 1].kind is SegmentKind.REPL_FEEDBACK
                trailing_ok = i == len(segs) - 1 and self.stop_reason is not StopReason.FINAL_ANSWER
                if not followed and not trailing_ok:
                    raise ProtocolError(f"sketch at index {i} has no feedback segment")
                if followed:
                    answered += 1
            elif seg.kind is SegmentKind.REPL_FEEDBACK:
                if i == 0 or segs[i - 1].kind is not SegmentKind.SKETCH:
                    raise ProtocolError(f"feedback at index {i} does not follow a sketch")
        if answered != self.repl_rounds():
            raise ProtocolError("feedback count does not match answered sketches")


@dataclass
class LossMask:
    """Per-token training-loss inclusion flags for a flattened trajectory."""

    included: list[bool]

    def __len__(self) -> int:
        return len(self.included)


class EventKind(Enum):
    REASONING_TEXT = "reasoning_text"
    SKETCH_COMPLETE = "sketch_complete"
    THINK_END = "think_end"
    PLAIN_TEXT = "plain_text"


@dataclass(frozen=True)
class ParseEvent:
    kind: EventKind
    text: str = ""


def reasoning_text(text: str) -> ParseEvent:
    return ParseEvent(EventKind.REASONING_TEXT, text)


def sketch_complete(code: str) -> ParseEvent:
    return ParseEvent(EventKind.SKETCH_COMPLETE, code)


def think_end() -> ParseEvent:
    return ParseEvent(EventKind.THINK_END)


def plain_text(text: str) -> ParseEvent:
    return ParseEvent(EventKind.PLAIN_TEXT, text)


class StreamParser:
    """Incremental parser over a generator's output stream.

    Chunks may split a delimiter at any byte boundary; replaying the same
    text with different chunking yields the same event list. Text events
    are emitted only when a structural boundary is reached (a delimiter,
    or :meth:`close`), so no partial-text events leak out.

    The parser only understands generator-side delimiters. Injected
    ``<REPL>`` feedback never passes through it in live rollouts; when a
    full rendered transcript must be re-read, use :func:`parse_transcript`.
    """

    def __init__(self) -> None:
        self._buf = ""
        self._in_sketch = False
        self._post_think = False

    def feed(self, chunk: str) -> list[ParseEvent]:
        self._buf += chunk
        events: list[ParseEvent] = []
        while True:
            if self._post_think:
                # Everything after the first </think> is answer text; defer
                # the single PLAIN_TEXT event until close().
                break
            if self._in_sketch:
                close_at = self._buf.find(SKETCH_CLOSE)
                open_at = self._buf.find(SKETCH_OPEN)
                if open_at != -1 and (close_at == -1 or open_at < close_at):
                    raise MalformedNesting("<sketch> opened inside an unclosed sketch")
                if close_at == -1:
                    break
                events.append(sketch_complete(self._buf[:close_at]))
                self._buf = self._buf[close_at + len(SKETCH_CLOSE):]
                self._in_sketch = False
                continue
            open_at = self._buf.find(SKETCH_OPEN)
            think_at = self._buf.find(THINK_END)
            if open_at == -1 and think_at == -1:
                break
            if think_at == -1 or (open_at != -1 and open_at < think_at):
                if open_at > 0:
                    events.append(reasoning_text(self._buf[:open_at]))
                self._buf = self._buf[open_at + len(SKETCH_OPEN):]
                self._in_sketch = True
            else:
                if think_at > 0:
                    events.append(reasoning_text(self._buf[:think_at]))
                self._buf = self._buf[think_at + len(THINK_END):]
                self._post_think = True
                events.append(think_end())
        return events

    def close(self) -> list[ParseEvent]:
        """Flush any buffered text at end of stream.

        An unterminated sketch is returned as reasoning text with its
        consumed ``<sketch>`` prefix restored, so flattening stays
        byte-faithful for truncated rollouts.
        """
        events: list[ParseEvent] = []
        if self._post_think:
            events.append(plain_text(self._buf))
        elif self._in_sketch:
            events.append(reasoning_text(SKETCH_OPEN + self._buf))
        elif self._buf:
            events.append(reasoning_text(self._buf))
        self._buf = ""
        self._in_sketch = False
        return events

    @property
    def in_sketch(self) -> bool:
        return self._in_sketch

    @property
    def saw_think_end(self) -> bool:
        return self._post_think


def inject_feedback(payload: str) -> str:
    """Wrap raw verifier output for appending to the generator's context."""
    return REPL_OPEN + "\n" + payload + "\n" + REPL_CLOSE + "\n"


# Rendered feedback spans carry a leading newline so the injection starts on
# its own line after a ``</sketch>``; the separator is part of the injected
# (non-generated, loss-masked) span.
FEEDBACK_PREFIX = "\n" + REPL_OPEN + "\n"
FEEDBACK_SUFFIX = "\n" + REPL_CLOSE + "\n"


def render_feedback(payload: str) -> str:
    return "\n" + inject_feedback(payload)


def extract_final_answer(full_text: str) -> str:
    """Return the candidate answer: text after the first ``</think>``.

    Leading/trailing blank lines are stripped, and one wrapping pair of
    code-fence lines is removed if both are present. Raises
    :class:`NoFinalAnswer` when the marker is absent (callers score such
    rollouts 0 without verification).
    """
    marker = full_text.find(THINK_END)
    if marker == -1:
        raise NoFinalAnswer("no </think> marker in rollout text")
    answer = full_text[marker + len(THINK_END):]
    lines = answer.split("\n")
    while lines and not lines[0].strip():
        lines.pop(0)
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) >= 2 and lines[0].lstrip().startswith("```") and lines[-1].strip().startswith("```"):
        lines = lines[1:-1]
        while lines and not lines[0].strip():
            lines.pop(0)
        while lines and not lines[-1].strip():
            lines.pop()
    return "\n".join(lines)


def render_segment(seg: Segment) -> str:
    """The exact byte span a segment contributes to the flattened rollout."""
    if seg.kind is SegmentKind.SKETCH:
        return SKETCH_OPEN + seg.text + SKETCH_CLOSE
    if seg.kind is SegmentKind.REPL_FEEDBACK:
        return render_feedback(seg.text)
    if seg.kind is SegmentKind.FINAL_ANSWER:
        return THINK_END + seg.text
    return seg.text


def flatten(trajectory: Trajectory) -> str:
    return "".join(render_segment(s) for s in trajectory.segments)


def build_loss_mask(trajectory: Trajectory) -> LossMask:
    """True for generated tokens, false for injected feedback tokens.

    Feedback spans are masked in full, wrapping delimiters included: the
    harness injected them, so they carry no learnable signal.
    """
    included: list[bool] = []
    for seg in trajectory.segments:
        included.extend([seg.kind is not SegmentKind.REPL_FEEDBACK] * seg.token_len)
    return LossMask(included)


TokenCounter = Callable[[str], int]


def whitespace_tokens(text: str) -> int:
    """Whitespace token count; a stand-in unit for callers without a tokenizer."""
    return len(text.split())


def assemble(
    events: Sequence[ParseEvent],
    feedbacks: Sequence[str],
    *,
    prompt_id: str = "",
    stop_reason: StopReason | None = None,
    reward: int | None = None,
    token_counter: TokenCounter | None = None,
) -> Trajectory:
    """Fold parse events and the injected feedback payloads into a trajectory.

    ``feedbacks`` holds one payload per answered sketch, in order; a final
    unanswered sketch is allowed only when the rollout did not finish.
    ``stop_reason`` is inferred from the trailing event when not given.
    Token lengths are produced by ``token_counter`` over each segment's
    rendered span; without a counter they stay 0 (this module never
    tokenizes on its own).
    """
    segments: list[Segment] = [Segment(SegmentKind.REASONING, "")]
    saw_think = False
    answer_text = ""
    fb = list(feedbacks)
    fb_used = 0
    for ev in events:
        if ev.kind is EventKind.REASONING_TEXT:
            if segments[-1].kind is SegmentKind.REASONING:
                segments[-1].text += ev.text
            else:
                segments.append(Segment(SegmentKind.REASONING, ev.text))
        elif ev.kind is EventKind.SKETCH_COMPLETE:
            segments.append(Segment(SegmentKind.SKETCH, ev.text))
            if fb_used < len(fb):
                segments.append(Segment(SegmentKind.REPL_FEEDBACK, fb[fb_used]))
                fb_used += 1
        elif ev.kind is EventKind.THINK_END:
            saw_think = True
        elif ev.kind is EventKind.PLAIN_TEXT:
            if not saw_think:
                raise ProtocolError("plain text event before think end")
            answer_text += ev.text

    if fb_used != len(fb):
        raise ArityMismatch(f"{len(fb) - fb_used} feedback payloads left unconsumed")

    if stop_reason is None:
        if saw_think:
            stop_reason = StopReason.FINAL_ANSWER
        elif segments[-1].kind is SegmentKind.SKETCH:
            stop_reason = StopReason.ABORTED
        else:
            stop_reason = StopReason.GENERATOR_EXHAUSTED

    if saw_think:
        if stop_reason is not StopReason.FINAL_ANSWER:
            raise ArityMismatch("think end seen but stop_reason is not final_answer")
        segments.append(Segment(SegmentKind.FINAL_ANSWER, answer_text))
    elif stop_reason is StopReason.FINAL_ANSWER:
        raise ArityMismatch("stop_reason final_answer without a think-end event")

    if saw_think and segments[-2].kind is SegmentKind.SKETCH:
        raise ArityMismatch("finished rollout left a sketch without feedback")

    if token_counter is not None:
        for seg in segments:
            seg.token_len = token_counter(render_segment(seg))

    traj = Trajectory(prompt_id=prompt_id, segments=segments, stop_reason=stop_reason, reward=reward)
    try:
        traj.validate()
    except ArityMismatch:
        raise
    except ProtocolError as exc:
        # Any structural failure assemble can produce is a feedback-pairing one.
        raise ArityMismatch(str(exc)) from None
    return traj


def parse_transcript(text: str) -> tuple[list[ParseEvent], list[str]]:
    """Split a fully rendered transcript back into events and feedback payloads.

    The inverse of :func:`flatten` for well-formed transcripts: generator
    spans become parse events, and each ``\\n<REPL>...</REPL>\\n`` block
    directly after a sketch is returned as a raw payload instead of being
    parsed as text.
    """
    events: list[ParseEvent] = []
    feedbacks: list[str] = []
    parser = StreamParser()
    pos = 0
    while pos < len(text):
        open_at = text.find(SKETCH_OPEN, pos)
        think_at = text.find(THINK_END, pos)
        if open_at == -1 and think_at == -1:
            events.extend(parser.feed(text[pos:]))
            break
        if think_at == -1 or (open_at != -1 and open_at < think_at):
            close_at = text.find(SKETCH_CLOSE, open_at)
            if close_at == -1:
                events.extend(parser.feed(text[pos:]))
                break
            end = close_at + len(SKETCH_CLOSE)
            events.extend(parser.feed(text[pos:end]))
            pos = end
            if text.startswith(FEEDBACK_PREFIX, pos):
                fb_end = text.find(FEEDBACK_SUFFIX, pos + len(FEEDBACK_PREFIX))
                if fb_end == -1:
                    raise ProtocolError("unterminated feedback block in transcript")
                feedbacks.append(text[pos + len(FEEDBACK_PREFIX):fb_end])
                pos = fb_end + len(FEEDBACK_SUFFIX)
        else:
            events.extend(parser.feed(text[pos:]))
            break
    events.extend(parser.close())
    return events, feedbacks


def to_jsonl_line(trajectory: Trajectory) -> str:
    """One-line JSON record; text fields round-trip byte-exactly."""
    record = {
        "prompt_id": trajectory.prompt_id,
        "stop_reason": trajectory.stop_reason.value,
        "reward": trajectory.reward,
        "segments": [
            {"kind": s.kind.value, "text": s.text, "token_len": s.token_len}
            for s in trajectory.segments
        ],
    }
    return json.dumps(record, ensure_ascii=False)


def from_jsonl_line(line: str) -> Trajectory:
    record = json.loads(line)
    return Trajectory(
        prompt_id=record["prompt_id"],
        segments=[
            Segment(SegmentKind(s["kind"]), s["text"], s["token_len"])
            for s in record["segments"]
        ],
        stop_reason=StopReason(record["stop_reason"]),
        reward=record["reward"],
    )


def write_jsonl(trajectories: Iterable[Trajectory], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(to_jsonl_line(traj) + "\n")


def read_jsonl(path: str) -> list[Trajectory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(from_jsonl_line(line))
    return out
