"""The federated round engine.

One round is: select participants, let each produce an update from the
current global model, average the updates, and score the new global model on
the federator's test set. Rewards are handled separately in
:mod:`fedcontrib.incentive`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from fedcontrib import attacks
from fedcontrib.core_ml import (
    Dataset,
    DimensionError,
    ModelParams,
    TrainConfig,
    derive_seed,
    evaluate,
    train_local,
)

WEIGHTINGS = ("uniform", "data_size")
INIT_SCALE = 0.01


@dataclass(frozen=True)
class Honest:
    pass


@dataclass(frozen=True)
class LabelFlipper:
    p: float
    seed: int = 0
    # The shard is flipped once and reused every round unless this is set.
    reflip_each_round: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"flip probability must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class FreeRider:
    strategy: attacks.FreeRiderStrategy
    # None means "claim the size of the shard we hold", i.e. lie about training.
    reported_size: int | None = None


@dataclass(frozen=True)
class UntargetedPoisoner:
    strategy: attacks.PoisonStrategy


Behavior = Union[Honest, LabelFlipper, FreeRider, UntargetedPoisoner]


@dataclass(frozen=True, eq=False)
class ParticipantSpec:
    id: int
    data: Dataset
    behavior: Behavior = field(default_factory=Honest)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)

    @property
    def is_malicious(self) -> bool:
        return not isinstance(self.behavior, Honest)


@dataclass(frozen=True, eq=False)
class Update:
    participant_id: int
    round: int
    params: ModelParams
    reported_data_size: int

    def __post_init__(self):
        if self.round < 1:
            raise ValueError("round numbers start at 1")
        if self.reported_data_size < 0:
            raise ValueError("reported_data_size must be >= 0")

    def equals(self, other: Update) -> bool:
        return (self.participant_id == other.participant_id
                and self.round == other.round
                and self.reported_data_size == other.reported_data_size
                and self.params.equals(other.params))


@dataclass(frozen=True, eq=False)
class RoundRecord:
    round: int
    selected_ids: tuple[int, ...]
    updates: tuple[Update, ...]
    global_before: ModelParams
    global_after: ModelParams
    global_accuracy: float

    def update_for(self, participant_id: int) -> Update:
        for upd in self.updates:
            if upd.participant_id == participant_id:
                return upd
        raise KeyError(f"participant {participant_id} did not submit in round {self.round}")

    def equals(self, other: RoundRecord) -> bool:
        return (self.round == other.round
                and self.selected_ids == other.selected_ids
                and len(self.updates) == len(other.updates)
                and all(a.equals(b) for a, b in zip(self.updates, other.updates))
                and self.global_before.equals(other.global_before)
                and self.global_after.equals(other.global_after)
                and self.global_accuracy == other.global_accuracy)


@dataclass(frozen=True)
class Selection:
    """``all`` selects everyone; ``uniform_random`` draws ``k`` ids per round."""

    policy: str = "all"
    k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.policy not in ("all", "uniform_random"):
            raise ValueError(f"unknown selection policy {self.policy!r}")
        if self.policy == "uniform_random" and (self.k is None or self.k < 1):
            raise ValueError("uniform_random selection needs k >= 1")

    @classmethod
    def uniform_random(cls, k: int, seed: int = 0) -> Selection:
        return cls("uniform_random", k, seed)


@dataclass(frozen=True, eq=False)
class FederationConfig:
    participants: tuple[ParticipantSpec, ...]
    test_set: Dataset
    rounds: int = 10
    selection: Selection = field(default_factory=Selection)
    aggregation_weighting: str = "data_size"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "participants", tuple(self.participants))
        ids = [p.id for p in self.participants]
        if not ids:
            raise ValueError("a federation needs at least one participant")
        if len(set(ids)) != len(ids):
            raise ValueError(f"participant ids must be unique, got {ids}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.aggregation_weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.aggregation_weighting!r}")
        if self.selection.policy == "uniform_random" and self.selection.k > len(ids):
            raise ValueError(f"cannot select {self.selection.k} of {len(ids)} participants")
        task = (self.test_set.num_classes, self.test_set.dim)
        for p in self.participants:
            if (p.data.num_classes, p.data.dim) != task:
                raise DimensionError(f"participant {p.id} data does not match the test task")

    @property
    def ids(self) -> list[int]:
        return sorted(p.id for p in self.participants)

    def participant(self, participant_id: int) -> ParticipantSpec:
        for p in self.participants:
            if p.id == participant_id:
                return p
        raise KeyError(participant_id)


def initialize(cfg: FederationConfig) -> ModelParams:
    """Small uniform initial weights in [-0.01, 0.01], seeded by ``cfg.seed``."""
    k, d = cfg.test_set.num_classes, cfg.test_set.dim
    rng = np.random.default_rng([cfg.seed, 0x1417])
    weights = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(k, d))
    biases = rng.uniform(-INIT_SCALE, INIT_SCALE, size=k)
    return ModelParams(weights, biases)


def select_participants(cfg: FederationConfig, round: int) -> list[int]:
    if round < 1:
        raise ValueError("round numbers start at 1")
    ids = cfg.ids
    sel = cfg.selection
    if sel.policy == "all":
        return ids
    if sel.k > len(ids):
        raise ValueError(f"cannot select {sel.k} of {len(ids)} participants")
    rng = np.random.default_rng([sel.seed, round])
    picked = rng.choice(len(ids), size=sel.k, replace=False)
    return sorted(ids[i] for i in picked)


def produce_update(spec: ParticipantSpec, global_params: ModelParams, round: int,
                   backend: str | None = None) -> Update:
    """What participant ``spec`` submits in ``round`` given the incoming global model."""
    behavior = spec.behavior
    cfg = replace(spec.train_cfg, seed=derive_seed(spec.train_cfg.seed, round))
    true_size = len(spec.data)

    if isinstance(behavior, Honest):
        params = train_local(spec.data, global_params, cfg, backend=backend)
        return Update(spec.id, round, params, true_size)

    if isinstance(behavior, LabelFlipper):
        flip_seed = derive_seed(behavior.seed, round) if behavior.reflip_each_round else behavior.seed
        data = attacks.flip_labels(spec.data, attacks.FlipSpec(behavior.p, flip_seed))
        params = train_local(data, global_params, cfg, backend=backend)
        return Update(spec.id, round, params, true_size)

    if isinstance(behavior, FreeRider):
        params = attacks.free_rider_update(behavior.strategy, global_params, round)
        size = true_size if behavior.reported_size is None else behavior.reported_size
        return Update(spec.id, round, params, size)

    if isinstance(behavior, UntargetedPoisoner):
        honest = train_local(spec.data, global_params, cfg, backend=backend)
        params = attacks.poison_update(behavior.strategy, honest, round=round)
        return Update(spec.id, round, params, true_size)

    raise TypeError(f"unknown behavior {behavior!r}")


def aggregate(updates, weighting: str = "data_size") -> ModelParams:
    """Weighted average of update parameters.

    Summation always runs in ascending participant id so the result does not
    depend on the order of ``updates``. Each entry is clipped to the range
    spanned by the inputs, which only ever removes rounding overshoot.
    """
    updates = sorted(updates, key=lambda u: u.participant_id)
    if not updates:
        raise ValueError("cannot aggregate an empty list of updates")
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}")
    shape = updates[0].params.shape
    for u in updates:
        if u.params.shape != shape:
            raise DimensionError("updates disagree on model dimensions")

    if weighting == "uniform":
        coefs = [1.0 / len(updates)] * len(updates)
    else:
        total = sum(u.reported_data_size for u in updates)
        if total == 0:
            raise ValueError("every reported data size is zero; data_size weighting undefined")
        coefs = [u.reported_data_size / total for u in updates]

    stacked = np.stack([u.params.flat() for u in updates])
    mean = np.zeros(stacked.shape[1])
    for c, row in zip(coefs, stacked):
        mean += c * row
    np.clip(mean, stacked.min(axis=0), stacked.max(axis=0), out=mean)
    return ModelParams.from_flat(mean, *shape)


def run_round(cfg: FederationConfig, global_params: ModelParams, round: int,
              workers: int = 1, backend: str | None = None) -> RoundRecord:
    selected = select_participants(cfg, round)
    specs = [cfg.participant(i) for i in selected]
    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            updates = list(pool.map(
                lambda s: produce_update(s, global_params, round, backend), specs))
    else:
        updates = [produce_update(s, global_params, round, backend) for s in specs]
    updates.sort(key=lambda u: u.participant_id)
    new_global = aggregate(updates, cfg.aggregation_weighting)
    return RoundRecord(
        round=round,
        selected_ids=tuple(selected),
        updates=tuple(updates),
        global_before=global_params,
        global_after=new_global,
        global_accuracy=evaluate(new_global, cfg.test_set),
    )


def run_federation(cfg: FederationConfig, workers: int = 1,
                   backend: str | None = None) -> list[RoundRecord]:
    """Run rounds ``1..cfg.rounds`` and return one record per round.

    ``workers > 1`` trains the selected participants of a round on threads;
    results are merged in id order so the output matches a sequential run.
    """
    global_params = initialize(cfg)
    records = []
    for rnd in range(1, cfg.rounds + 1):
        record = run_round(cfg, global_params, rnd, workers=workers, backend=backend)
        records.append(record)
        global_params = record.global_after
    return records
