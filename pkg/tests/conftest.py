from __future__ import annotations

import random
import string

import pytest

from proofloop.fixtures import load_golden_prompt, load_golden_session
from proofloop.protocol import (
    Segment,
    SegmentKind,
    StopReason,
    Trajectory,
    render_segment,
    whitespace_tokens,
)

# Text alphabet for generated fixtures: never contains '<', so generated
# spans can never collide with a protocol delimiter.
_ALPHABET = string.ascii_letters + string.digits + "      \n\n.,:;!?()[]{}+-*/="


def random_text(rng: random.Random, max_len: int = 60) -> str:
    return "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(0, max_len)))


def random_trajectory(
    rng: random.Random, prompt_id: str = "p", clean_boundaries: bool = False
) -> Trajectory:
    """A structurally valid trajectory with random spans and token counts.

    With ``clean_boundaries`` every segment edge falls on whitespace, so
    whitespace tokenization of the flattened text aligns with the
    per-segment token counts (as in real rendered transcripts).
    """
    segments = [Segment(SegmentKind.REASONING, random_text(rng))]
    for _ in range(rng.randint(0, 4)):
        segments.append(Segment(SegmentKind.SKETCH, random_text(rng)))
        segments.append(Segment(SegmentKind.REPL_FEEDBACK, random_text(rng)))
        segments.append(Segment(SegmentKind.REASONING, random_text(rng)))
    finish = rng.random()
    if finish < 0.6:
        segments.append(Segment(SegmentKind.FINAL_ANSWER, random_text(rng)))
        stop = StopReason.FINAL_ANSWER
        reward = rng.choice([0, 1])
    elif finish < 0.8:
        segments.append(Segment(SegmentKind.SKETCH, random_text(rng)))
        stop = rng.choice([StopReason.ABORTED, StopReason.LENGTH_LIMIT])
        reward = 0
    else:
        stop = rng.choice([StopReason.GENERATOR_EXHAUSTED, StopReason.LENGTH_LIMIT])
        reward = 0
    if clean_boundaries:
        for seg, nxt in zip(segments, segments[1:]):
            needs_break = nxt.kind in (SegmentKind.SKETCH, SegmentKind.FINAL_ANSWER)
            if seg.kind is SegmentKind.REASONING and needs_break and seg.text and not seg.text[-1].isspace():
                seg.text += "\n"
    for seg in segments:
        seg.token_len = whitespace_tokens(render_segment(seg))
    traj = Trajectory(prompt_id=prompt_id, segments=segments, stop_reason=stop, reward=reward)
    traj.validate()
    return traj


@pytest.fixture(scope="session")
def golden_session() -> str:
    return load_golden_session()


@pytest.fixture(scope="session")
def golden_prompt() -> str:
    return load_golden_prompt()
