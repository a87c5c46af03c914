"""Incentive mechanism: contribution scores in, monotone monetary rewards out.

A mechanism is a reward set ``R`` with a value function over rewards, a
contribution function ``c`` scoring participants, and a reward function
``r`` that must be monotone: a higher score never earns a less valuable
reward. Rewards here are plain non-negative amounts of money, so the value
of a reward is the amount itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from fedcontrib.contribution import ContributionScore


def monetary_value(reward: float) -> float:
    """Value of a monetary reward (the default reward value function)."""
    return float(reward)


@dataclass(frozen=True)
class RewardAllocation:
    rewards: dict
    scheme: str
    budget: float
    rounds: tuple = ()

    def __post_init__(self):
        if any(r < 0 for r in self.rewards.values()):
            raise ValueError("rewards must be non-negative")

    @property
    def total(self) -> float:
        return math.fsum(self.rewards.values())


def allocate_rewards(scores: ContributionScore, budget: float,
                     all_zero: str = "split", rounds: tuple = ()) -> RewardAllocation:
    """Share ``budget`` in proportion to the non-negative part of each score.

    Negative scores are clamped to zero. When every clamped score is zero the
    budget is split equally (``all_zero="split"``) or kept back
    (``all_zero="withhold"``).
    """
    if budget < 0 or not math.isfinite(budget):
        raise ValueError("budget must be a finite non-negative number")
    if not scores.scores:
        raise ValueError("no participants were scored")
    if all_zero not in ("split", "withhold"):
        raise ValueError(f"unknown all_zero policy {all_zero!r}")

    ids = sorted(scores.scores)
    clamped = {pid: max(float(scores.scores[pid]), 0.0) for pid in ids}
    total = math.fsum(clamped.values())
    if total > 0:
        # score / total first: division then multiplication are both monotone
        rewards = {pid: budget * (clamped[pid] / total) for pid in ids}
    elif all_zero == "split":
        rewards = {pid: budget / len(ids) for pid in ids}
    else:
        rewards = {pid: 0.0 for pid in ids}
    return RewardAllocation(rewards, scores.scheme, float(budget), tuple(rounds))


def verify_monotone(alloc: RewardAllocation, scores: ContributionScore,
                    value: Callable[[float], float] = monetary_value) -> bool:
    """True iff ``score_i > score_j`` implies ``value(reward_i) >= value(reward_j)`` for every pair."""
    if set(alloc.rewards) != set(scores.scores):
        raise ValueError("allocation and scores cover different participants")
    ranked = sorted(scores.scores, key=lambda pid: scores.scores[pid])
    # Sweep in increasing score; each strictly higher score group must earn
    # at least the best reward seen among all strictly lower scores.
    best_below = -math.inf
    group_best = -math.inf
    prev_score = None
    for pid in ranked:
        s = scores.scores[pid]
        v = value(alloc.rewards[pid])
        if prev_score is not None and s > prev_score:
            best_below = max(best_below, group_best)
            group_best = -math.inf
        if v < best_below:
            return False
        group_best = max(group_best, v)
        prev_score = s
    return True


@dataclass
class IncentiveMechanism:
    """Binds a contribution function to the proportional reward function.

    ``contribution`` maps a list of round records to a ContributionScore.
    """

    contribution: Callable[..., ContributionScore]
    budget: float
    all_zero: str = "split"
    value: Callable[[float], float] = field(default=monetary_value)

    def run(self, records) -> RewardAllocation:
        scores = self.contribution(records)
        rounds = tuple(r.round for r in records)
        alloc = allocate_rewards(scores, self.budget, self.all_zero, rounds=rounds)
        if not verify_monotone(alloc, scores, self.value):
            raise AssertionError("reward function is not monotone")  # unreachable by construction
        return alloc
