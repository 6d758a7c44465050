from __future__ import annotations

import math
import random

import pytest

from proofloop.grpo import (
    EmptyGroup,
    ShapeMismatch,
    advantages,
    clipped_term,
    clipped_term_logratio_grad,
    objective,
    objective_logratio_grad,
)


# -- independent oracles (plain-python transcriptions) ------------------------


def oracle_advantages(rewards: list[float]) -> list[float]:
    mean = sum(rewards) / len(rewards)
    var = sum((r - mean) ** 2 for r in rewards) / len(rewards)
    std = math.sqrt(var)
    if std == 0.0:
        return [0.0] * len(rewards)
    return [(r - mean) / std for r in rewards]


def oracle_clipped_term(ratio: float, advantage: float, epsilon: float) -> float:
    clipped = ratio
    if clipped < 1 - epsilon:
        clipped = 1 - epsilon
    if clipped > 1 + epsilon:
        clipped = 1 + epsilon
    a = ratio * advantage
    b = clipped * advantage
    return a if a < b else b


def oracle_objective(groups, epsilon: float) -> float:
    acc = 0.0
    for ratios, advs in groups:
        acc += sum(oracle_clipped_term(r, a, epsilon) for r, a in zip(ratios, advs)) / len(ratios)
    return acc / len(groups)


# -- advantages ----------------------------------------------------------------


def test_advantages_two_successes_of_eight() -> None:
    result = advantages([1, 1, 0, 0, 0, 0, 0, 0])
    assert result.mean == pytest.approx(0.25)
    assert result.std == pytest.approx(0.4330127, abs=1e-7)
    assert result.advantages[0] == pytest.approx(1.7320508, abs=1e-7)
    assert result.advantages[1] == pytest.approx(1.7320508, abs=1e-7)
    for a in result.advantages[2:]:
        assert a == pytest.approx(-0.5773503, abs=1e-7)


def test_advantages_degenerate_groups_all_zero() -> None:
    assert advantages([0] * 8).advantages == (0.0,) * 8
    assert advantages([1] * 8).advantages == (0.0,) * 8
    assert advantages([1]).advantages == (0.0,)


def test_advantages_pair() -> None:
    result = advantages([1, 0])
    assert result.advantages == pytest.approx((1.0, -1.0))
    assert result.mean == pytest.approx(0.5)
    assert result.std == pytest.approx(0.5)


def test_advantages_empty_group_raises() -> None:
    with pytest.raises(EmptyGroup):
        advantages([])


def test_advantages_zero_sum_unit_std_property() -> None:
    rng = random.Random(11)
    for _ in range(500):
        g = rng.randint(2, 16)
        rewards = [rng.randint(0, 1) for _ in range(g)]
        result = advantages(rewards)
        if result.std > 0:
            assert sum(result.advantages) == pytest.approx(0.0, abs=1e-9)
            pop_std = math.sqrt(sum(a * a for a in result.advantages) / g)
            assert pop_std == pytest.approx(1.0, abs=1e-9)
        else:
            assert all(a == 0.0 for a in result.advantages)


def test_advantages_permutation_equivariance() -> None:
    rng = random.Random(12)
    for _ in range(100):
        g = rng.randint(2, 12)
        rewards = [rng.randint(0, 1) for _ in range(g)]
        perm = list(range(g))
        rng.shuffle(perm)
        base = advantages(rewards).advantages
        permuted = advantages([rewards[i] for i in perm]).advantages
        assert permuted == pytest.approx([base[i] for i in perm], abs=1e-12)


# -- clipped term ----------------------------------------------------------------


def test_clipped_term_examples() -> None:
    assert clipped_term(1.5, 1.0, 0.2) == pytest.approx(1.2)
    assert clipped_term(1.0, 3.25, 0.2) == pytest.approx(3.25)
    assert clipped_term(1.0, -0.7, 0.05) == pytest.approx(-0.7)
    assert clipped_term(0.5, -1.0, 0.2) == pytest.approx(-0.8)


def test_clipped_term_validates_inputs() -> None:
    with pytest.raises(ValueError):
        clipped_term(0.0, 1.0, 0.2)
    with pytest.raises(ValueError):
        clipped_term(-1.0, 1.0, 0.2)
    with pytest.raises(ValueError):
        clipped_term(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        clipped_term(1.0, 1.0, 1.0)


def test_clipped_term_min_dominance_property() -> None:
    rng = random.Random(13)
    for _ in range(2000):
        ratio = math.exp(rng.uniform(-2, 2))
        advantage = rng.uniform(-3, 3)
        epsilon = rng.uniform(0.01, 0.5)
        term = clipped_term(ratio, advantage, epsilon)
        clipped = min(max(ratio, 1 - epsilon), 1 + epsilon)
        assert term <= ratio * advantage + 1e-12
        assert term <= clipped * advantage + 1e-12
        assert term == pytest.approx(oracle_clipped_term(ratio, advantage, epsilon), abs=1e-12)


# -- objective --------------------------------------------------------------------


def test_objective_identity_ratios_zero_for_nondegenerate_group() -> None:
    adv = advantages([1, 0, 1, 0])
    assert objective([([1.0] * 4, adv)], epsilon=0.2) == pytest.approx(0.0, abs=1e-12)


def test_objective_hand_composed_pair() -> None:
    adv = advantages([1, 0])
    value = objective([([1.5, 0.5], adv)], epsilon=0.2)
    assert value == pytest.approx(0.5 * (1.2 + (-0.8)))


def test_objective_degenerate_group_contributes_zero() -> None:
    adv = advantages([1, 1, 1])
    assert objective([([3.0, 0.1, 1.0], adv)], epsilon=0.2) == 0.0


def test_objective_shape_mismatch() -> None:
    adv = advantages([1, 0])
    with pytest.raises(ShapeMismatch):
        objective([([1.0], adv)], epsilon=0.2)


def test_objective_empty_cases() -> None:
    with pytest.raises(EmptyGroup):
        objective([], epsilon=0.2)


def test_objective_matches_oracle_randomized() -> None:
    rng = random.Random(14)
    for _ in range(500):
        n_groups = rng.randint(1, 4)
        groups = []
        oracle_groups = []
        for _ in range(n_groups):
            g = rng.randint(2, 16)
            rewards = [rng.randint(0, 1) for _ in range(g)]
            ratios = [math.exp(rng.uniform(-1.5, 1.5)) for _ in range(g)]
            adv = advantages(rewards)
            groups.append((ratios, adv))
            oracle_groups.append((ratios, oracle_advantages(rewards)))
        epsilon = rng.uniform(0.05, 0.5)
        assert objective(groups, epsilon) == pytest.approx(
            oracle_objective(oracle_groups, epsilon), abs=1e-9
        )


# -- gradient check -----------------------------------------------------------------


def _fd_gradient(log_ratios, log_old, rewards_per_group, epsilon, h=1e-6):
    """Central finite differences of the objective w.r.t. each log-prob."""

    def value(lr):
        groups = []
        idx = 0
        for g_rewards in rewards_per_group:
            g = len(g_rewards)
            ratios = [math.exp(lr[idx + j] - log_old[idx + j]) for j in range(g)]
            groups.append((ratios, advantages(g_rewards)))
            idx += g
        return objective(groups, epsilon)

    grads = []
    for i in range(len(log_ratios)):
        up = list(log_ratios)
        down = list(log_ratios)
        up[i] += h
        down[i] -= h
        grads.append((value(up) - value(down)) / (2 * h))
    return grads


def test_gradient_matches_finite_differences_away_from_kinks() -> None:
    rng = random.Random(15)
    checked = 0
    while checked < 40:
        epsilon = rng.uniform(0.1, 0.3)
        rewards_per_group = []
        log_old = []
        log_new = []
        for _ in range(rng.randint(1, 3)):
            g = rng.randint(2, 6)
            rewards_per_group.append([rng.randint(0, 1) for _ in range(g)])
            for _ in range(g):
                log_old.append(rng.uniform(-1, 1))
                log_new.append(rng.uniform(-1, 1))

        ratios_flat = [math.exp(n - o) for n, o in zip(log_new, log_old)]
        # keep a safety margin from both the clip corners and the min kink
        margin = 1e-3
        if any(
            abs(r - (1 - epsilon)) < margin or abs(r - (1 + epsilon)) < margin
            for r in ratios_flat
        ):
            continue

        groups = []
        idx = 0
        for g_rewards in rewards_per_group:
            g = len(g_rewards)
            groups.append((ratios_flat[idx:idx + g], advantages(g_rewards)))
            idx += g

        analytic = [g for group in objective_logratio_grad(groups, epsilon) for g in group]
        numeric = _fd_gradient(log_new, log_old, rewards_per_group, epsilon)
        for a, n in zip(analytic, numeric):
            assert a == pytest.approx(n, abs=1e-5)
        checked += 1


def test_single_term_gradient_branches() -> None:
    # inside the clip window the slope is rho*A on either side of sign
    assert clipped_term_logratio_grad(1.0, 2.0, 0.2) == pytest.approx(2.0)
    # positive advantage, ratio above the window: clip saturates, flat
    assert clipped_term_logratio_grad(1.5, 1.0, 0.2) == 0.0
    # negative advantage, ratio below the window: clip saturates, flat
    assert clipped_term_logratio_grad(0.5, -1.0, 0.2) == 0.0
    # negative advantage, ratio above the window: unclipped branch is the min
    assert clipped_term_logratio_grad(1.5, -1.0, 0.2) == pytest.approx(-1.5)
