#!/usr/bin/env python3
"""Group-normalized advantages and the clipped surrogate objective.

Eight rollouts of one prompt earn binary rewards; standardizing within
the group turns them into advantages (zero-sum, unit variance). The
clipped objective then bounds how far the new policy's probability ratio
can push each sample's term. Degenerate groups contribute nothing.
"""

import math
import random

from proofloop import Broker, MockBackend, ScriptedGenerator, advantages, objective, run_group
from proofloop.rollout import GeneratorStop


def scripted_group_rewards() -> list[int]:
    """Run a real 8-sample group where odd samples submit a broken answer."""
    def factory(i: int) -> ScriptedGenerator:
        answer = "exact rfl" if i % 2 == 0 else "MOCK_FAIL"
        return ScriptedGenerator([(f"attempt {i}\n</think>\n{answer}", GeneratorStop.NATURAL_END)])

    with Broker(MockBackend, worker_count=4) as broker:
        group = run_group("prompt: ", factory, broker, group_size=8, prompt_id="demo")
    return group.rewards


def main() -> None:
    rewards = scripted_group_rewards()
    print(f"group rewards: {rewards}")

    adv = advantages(rewards)
    print(f"mean={adv.mean:.4f} std={adv.std:.4f}")
    print("advantages:", [f"{a:+.4f}" for a in adv.advantages])
    print(f"zero-sum check: {sum(adv.advantages):+.2e}")

    rng = random.Random(0)
    ratios = [math.exp(rng.uniform(-0.4, 0.4)) for _ in rewards]
    print("\nratios:", [f"{r:.3f}" for r in ratios])
    for eps in (0.1, 0.2, 0.4):
        value = objective([(ratios, adv)], epsilon=eps)
        print(f"clipped objective (eps={eps}): {value:+.6f}")

    flat = advantages([1] * 8)
    print("\nall-success group advantages:", list(flat.advantages))
    print("degenerate objective:", objective([(ratios, flat)], epsilon=0.2))


if __name__ == "__main__":
    main()
