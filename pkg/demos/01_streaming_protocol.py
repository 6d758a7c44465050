#!/usr/bin/env python3
"""Walk through the delimiter protocol: streaming parse, assembly, loss mask.

The generator's output stream interleaves reasoning with <sketch> blocks
and ends its thinking with </think>. Chunk boundaries are arbitrary; the
parser emits the same events no matter how the text is sliced.
"""

from proofloop import (
    SegmentKind,
    StreamParser,
    assemble,
    build_loss_mask,
    flatten,
    inject_feedback,
    whitespace_tokens,
)

STREAM = (
    "Let me try the obvious tactic first.\n"
    "<sketch>\nexample : 2 + 2 = 4 := by rfl\n</sketch>"
)
FOLLOW_UP = "\nThat verified cleanly, so I can finish.\n</think>\nexample : 2 + 2 = 4 := by rfl\n"


def main() -> None:
    parser = StreamParser()
    events = []
    print("feeding the stream in 7-byte chunks:")
    for i in range(0, len(STREAM), 7):
        events += parser.feed(STREAM[i:i + 7])
    for event in events:
        print(f"  {event.kind.value:16s} {event.text[:40]!r}")

    # the harness verifies the sketch and injects feedback into the context
    feedback = "{}"
    print("\ninjected feedback block:")
    print(inject_feedback(feedback))

    events += parser.feed(FOLLOW_UP)
    events += parser.close()

    traj = assemble(
        events, [feedback], prompt_id="demo", token_counter=whitespace_tokens
    )
    print("assembled trajectory:")
    for seg in traj.segments:
        print(f"  {seg.kind.value:14s} tokens={seg.token_len:3d} {seg.text[:38]!r}")
    print(f"stop reason: {traj.stop_reason.value}")

    mask = build_loss_mask(traj)
    feedback_tokens = sum(
        s.token_len for s in traj.segments if s.kind is SegmentKind.REPL_FEEDBACK
    )
    print(f"\nloss mask: {len(mask)} positions, {mask.included.count(False)} masked "
          f"(= {feedback_tokens} injected feedback tokens)")

    assert flatten(traj) == STREAM + "\n" + inject_feedback(feedback) + FOLLOW_UP
    print("flatten() reproduces the generator's context byte-for-byte")


if __name__ == "__main__":
    main()
