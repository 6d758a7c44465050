#!/usr/bin/env python3
"""Classify real checker payloads from the bundled golden session.

Classification precedence: Timeout > Crash > Failed > Incomplete >
Success. Errors beat sorries (a sorried proof with errors is just
broken), warnings never fail a proof, and only Success earns reward 1.
"""

from proofloop import classify_raw, reward
from proofloop.fixtures import golden_feedback_payloads


def main() -> None:
    payloads = golden_feedback_payloads()
    print(f"the golden session produced {len(payloads)} checker replies:\n")
    for i, payload in enumerate(payloads, 1):
        verdict = classify_raw(payload, elapsed=1.0)
        errors = len(verdict.error_messages())
        print(
            f"  round {i}: {verdict.status.value:10s} "
            f"errors={errors} sorries={len(verdict.sorries)} reward={reward(verdict)}"
        )
        if verdict.sorries:
            goal = verdict.sorries[0].goal.splitlines()[-1]
            print(f"           open goal: {goal[:60]}")

    print("\nedge inputs:")
    for label, raw, timed_out in [
        ("clean success", "{}", False),
        ('warnings only', '{"messages": [{"severity": "warning", "data": "unused variable"}]}', False),
        ("garbage output", "}{boom", False),
        ("timed out", "", True),
    ]:
        verdict = classify_raw(raw, elapsed=2.0, timed_out=timed_out)
        print(f"  {label:16s} -> {verdict.status.value:8s} reward={reward(verdict)}")


if __name__ == "__main__":
    main()
