"""Group-normalized advantages and the clipped surrogate objective.

Given one prompt's group of binary rewards r_1..r_G, each sample's
advantage is its reward standardized within the group:

    A_i = (r_i - mean(r)) / std(r)        (population std)

A group with identical rewards carries no learning signal and yields
all-zero advantages; no epsilon is smuggled into the denominator. The
surrogate objective for an external trainer is the clipped form

    J = mean over groups of (1/G) * sum_i min(rho_i * A_i,
                                              clip(rho_i, 1-eps, 1+eps) * A_i)

with rho_i the sequence-level new/old policy probability ratio and no KL
term anywhere. This module computes values (and the scalar log-ratio
subgradient for checking); gradients through a real model belong to the
trainer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EmptyGroup(ValueError):
    """A reward group must contain at least one sample."""


class ShapeMismatch(ValueError):
    """Ratios and advantages must align index-wise within each group."""


@dataclass(frozen=True)
class AdvantageSet:
    advantages: tuple[float, ...]
    mean: float
    std: float


def advantages(rewards: Sequence[float]) -> AdvantageSet:
    """Standardize one group's rewards into advantages.

    Degenerate groups (zero population std) map to all-zero advantages.
    """
    if len(rewards) == 0:
        raise EmptyGroup("cannot normalize an empty reward group")
    r = np.asarray(rewards, dtype=np.float64)
    mean = float(r.mean())
    std = float(np.sqrt(((r - mean) ** 2).mean()))
    if std == 0.0:
        adv = np.zeros_like(r)
    else:
        adv = (r - mean) / std
    return AdvantageSet(advantages=tuple(float(a) for a in adv), mean=mean, std=std)


def _check_ratio_inputs(ratio: float, epsilon: float) -> None:
    if ratio <= 0.0:
        raise ValueError(f"probability ratio must be positive, got {ratio}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"clip epsilon must lie in (0, 1), got {epsilon}")


def clipped_term(ratio: float, advantage: float, epsilon: float) -> float:
    """One sample's clipped surrogate term: min(rho*A, clip(rho)*A)."""
    _check_ratio_inputs(ratio, epsilon)
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def objective(groups: Sequence[tuple[Sequence[float], AdvantageSet]], epsilon: float) -> float:
    """Mean over groups of the per-group average clipped term. No KL term."""
    if len(groups) == 0:
        raise EmptyGroup("objective needs at least one group")
    total = 0.0
    for ratios, adv_set in groups:
        if len(ratios) != len(adv_set.advantages):
            raise ShapeMismatch(
                f"group has {len(ratios)} ratios but {len(adv_set.advantages)} advantages"
            )
        if len(ratios) == 0:
            raise EmptyGroup("objective group is empty")
        g = len(ratios)
        total += sum(
            clipped_term(rh, a, epsilon) for rh, a in zip(ratios, adv_set.advantages)
        ) / g
    return total / len(groups)


def clipped_term_logratio_grad(ratio: float, advantage: float, epsilon: float) -> float:
    """Subgradient of one clipped term w.r.t. the log-ratio l (rho = e^l).

    d(rho*A)/dl = rho*A on the unclipped branch; the clipped branch is
    flat wherever the clip saturates. At the min kink the unclipped branch
    is chosen.
    """
    _check_ratio_inputs(ratio, epsilon)
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    unclipped_value = ratio * advantage
    clipped_value = clipped * advantage
    if unclipped_value <= clipped_value:
        return unclipped_value
    # min picked the clipped branch strictly, which only happens when the
    # clip saturates; a saturated clip is flat in l.
    return 0.0


def objective_logratio_grad(
    groups: Sequence[tuple[Sequence[float], AdvantageSet]], epsilon: float
) -> list[list[float]]:
    """Per-sample subgradients of :func:`objective` w.r.t. each log-ratio."""
    if len(groups) == 0:
        raise EmptyGroup("objective needs at least one group")
    n = len(groups)
    out: list[list[float]] = []
    for ratios, adv_set in groups:
        if len(ratios) != len(adv_set.advantages):
            raise ShapeMismatch(
                f"group has {len(ratios)} ratios but {len(adv_set.advantages)} advantages"
            )
        g = len(ratios)
        out.append(
            [
                clipped_term_logratio_grad(rh, a, epsilon) / (g * n)
                for rh, a in zip(ratios, adv_set.advantages)
            ]
        )
    return out
