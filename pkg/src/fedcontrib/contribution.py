"""Contribution measurement: Influence, Reputation, Shapley and self-reporting.

All marginal-loss schemes are built on one coalition value: the test accuracy
of the model aggregated from a subset of a round's updates. The empty
coalition is worth the accuracy of the global model the round started from,
so a marginal contribution is an improvement over the incoming model.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from fedcontrib.core_ml import Dataset, evaluate
from fedcontrib.protocol import RoundRecord, Update, aggregate

SCHEMES = ("influence", "reputation", "shapley_exact", "shapley_sampled", "self_reported")

# Subsets are enumerated in full, so cost grows as 2^n.
SHAPLEY_EXACT_MAX_PLAYERS = 12

CoalitionValue = Callable[[frozenset], float]


class UndefinedContributionError(ValueError):
    """A score cannot be computed for this round (e.g. leave-one-out of a lone participant)."""


class RoundGame:
    """Coalition value of one round, memoized by id bitmask.

    ``game(S)`` is the accuracy on ``test`` of the aggregate of the updates
    submitted by the ids in ``S``; ``game(frozenset())`` is the accuracy of
    the round's incoming global model.
    """

    def __init__(self, record: RoundRecord, test: Dataset, weighting: str = "data_size"):
        self.record = record
        self.test = test
        self.weighting = weighting
        self.updates: dict[int, Update] = {u.participant_id: u for u in record.updates}
        self.ids = tuple(sorted(self.updates))
        self._bits = {pid: 1 << pos for pos, pid in enumerate(self.ids)}
        self._cache: dict[int, float] = {}
        self.evaluations = 0

    def mask(self, subset: Iterable[int]) -> int:
        m = 0
        for pid in subset:
            try:
                m |= self._bits[pid]
            except KeyError:
                raise KeyError(
                    f"participant {pid} has no update in round {self.record.round}") from None
        return m

    def value_of_mask(self, m: int) -> float:
        cached = self._cache.get(m)
        if cached is not None:
            return cached
        if m == 0:
            params = self.record.global_before
        else:
            members = [self.updates[pid] for pid in self.ids if m & self._bits[pid]]
            params = aggregate(members, self.weighting)
        value = evaluate(params, self.test)
        self.evaluations += 1
        self._cache[m] = value
        return value

    def __call__(self, subset: Iterable[int]) -> float:
        return self.value_of_mask(self.mask(subset))


def coalition_value(record: RoundRecord, subset: Iterable[int], test: Dataset,
                    weighting: str = "data_size") -> float:
    return RoundGame(record, test, weighting)(subset)


def influence(record: RoundRecord, participant_id: int, test: Dataset,
              weighting: str = "data_size", game: RoundGame | None = None) -> float:
    """Leave-one-out accuracy difference: v(all) - v(all without participant)."""
    game = game or RoundGame(record, test, weighting)
    if participant_id not in game.updates:
        raise KeyError(f"participant {participant_id} has no update in round {record.round}")
    if len(game.ids) < 2:
        raise UndefinedContributionError(
            f"round {record.round} has a single participant; the leave-one-out model is undefined")
    everyone = game.ids
    rest = [pid for pid in everyone if pid != participant_id]
    return game(everyone) - game(rest)


def heaviside(x: float) -> float:
    # H(0) = 0: a tie is not evidence of improvement
    return 1.0 if x > 0 else 0.0


def reputation(influences, ts: int) -> float:
    """Share of the last ``ts`` slots in which the participant's influence was positive."""
    influences = list(influences)
    if ts < 1:
        raise ValueError("ts must be >= 1")
    if len(influences) < ts:
        raise ValueError(f"reputation over {ts} slots needs {ts} influence values, "
                         f"got {len(influences)}")
    return sum(heaviside(x) for x in influences[-ts:]) / ts


def _check_ids(ids) -> list:
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate ids in {ids}")
    return ids


def shapley_exact(value: CoalitionValue, ids) -> dict:
    """Shapley value by full subset enumeration.

    Each of the ``2^n`` coalitions is evaluated exactly once.
    """
    ids = _check_ids(ids)
    n = len(ids)
    if n > SHAPLEY_EXACT_MAX_PLAYERS:
        raise ValueError(f"exact Shapley is capped at {SHAPLEY_EXACT_MAX_PLAYERS} players, got {n}")
    if n == 0:
        return {}
    values = [value(frozenset(ids[j] for j in range(n) if m >> j & 1)) for m in range(1 << n)]
    weights = [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
               for s in range(n)]
    scores = {}
    for i, pid in enumerate(ids):
        bit = 1 << i
        total = 0.0
        for m in range(1 << n):
            if m & bit:
                continue
            total += weights[m.bit_count()] * (values[m | bit] - values[m])
        scores[pid] = total
    return scores


def shapley_sampled(value: CoalitionValue, ids, num_permutations: int | None = None,
                    seed: int = 0, exhaustive: bool = False) -> dict:
    """Monte-Carlo Shapley: mean marginal contribution over random join orders.

    With ``exhaustive=True`` every one of the ``n!`` orders is visited once
    instead, which reproduces the exact value.
    """
    ids = _check_ids(ids)
    n = len(ids)
    if n == 0:
        return {}
    if exhaustive:
        orders: Iterable = itertools.permutations(range(n))
        count = math.factorial(n)
        if num_permutations is not None and num_permutations != count:
            raise ValueError(f"exhaustive mode visits {count} orders, not {num_permutations}")
    else:
        if num_permutations is None or num_permutations < 1:
            raise ValueError("num_permutations must be >= 1")
        rng = np.random.default_rng(seed)
        orders = (rng.permutation(n) for _ in range(num_permutations))
        count = num_permutations

    memo: dict[int, float] = {}

    def v(m):
        if m not in memo:
            memo[m] = value(frozenset(ids[j] for j in range(n) if m >> j & 1))
        return memo[m]

    totals = [0.0] * n
    for order in orders:
        m = 0
        prev = v(0)
        for j in order:
            m |= 1 << int(j)
            cur = v(m)
            totals[j] += cur - prev
            prev = cur
    return {pid: totals[j] / count for j, pid in enumerate(ids)}


def self_reported_score(update: Update) -> float:
    return float(update.reported_data_size)


@dataclass
class ContributionScore:
    """Per-participant scores from one scheme.

    ``scores`` holds the reported value (the mean over the rounds a
    participant was selected in, or the reputation); ``per_round`` keeps the
    raw per-round values keyed by participant then round.
    """

    scheme: str
    scores: dict
    per_round: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "reputation":
            for pid, s in self.scores.items():
                if not 0.0 <= s <= 1.0:
                    raise ValueError(f"reputation of {pid} outside [0, 1]: {s}")

    def __getitem__(self, pid):
        return self.scores[pid]

    @property
    def ids(self):
        return sorted(self.scores)


def per_round_scores(record: RoundRecord, scheme: str, test: Dataset,
                     weighting: str = "data_size", num_permutations: int = 1000,
                     seed: int = 0) -> dict:
    """Raw scores of every participant in one round. Reputation uses influence here."""
    if scheme == "self_reported":
        return {u.participant_id: self_reported_score(u) for u in record.updates}
    game = RoundGame(record, test, weighting)
    if scheme in ("influence", "reputation"):
        return {pid: influence(record, pid, test, weighting, game=game) for pid in game.ids}
    if scheme == "shapley_exact":
        return shapley_exact(game, game.ids)
    if scheme == "shapley_sampled":
        return shapley_sampled(game, game.ids, num_permutations, seed=seed)
    raise ValueError(f"unknown scheme {scheme!r}")


def measure(records, scheme: str, test: Dataset, weighting: str = "data_size",
            ts: int = 5, num_permutations: int = 1000, seed: int = 0) -> ContributionScore:
    """Score every participant over a run of rounds.

    Influence, Shapley and self-reported scores are averaged over the rounds
    each participant was selected in. Reputation is the Heaviside average of
    the participant's last ``ts`` influence values.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    per_round: dict[int, dict[int, float]] = {}
    for rec in records:
        round_seed = seed * 1_000_003 + rec.round
        for pid, s in per_round_scores(rec, scheme, test, weighting,
                                       num_permutations, round_seed).items():
            per_round.setdefault(pid, {})[rec.round] = s

    scores = {}
    for pid in sorted(per_round):
        series = [per_round[pid][r] for r in sorted(per_round[pid])]
        if scheme == "reputation":
            scores[pid] = reputation(series, ts)
        else:
            scores[pid] = math.fsum(series) / len(series)
    if scheme == "reputation":
        per_round = {pid: {r: heaviside(x) for r, x in rs.items()} for pid, rs in per_round.items()}
    return ContributionScore(scheme, scores, per_round)
