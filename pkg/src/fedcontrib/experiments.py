"""Experiment grid: users x attackers x flip rates x schemes x seeds.

Every (cell, seed) pair builds a federation, runs it once, and then scores
the same round records with each requested scheme. Attackers always take the
lowest participant ids. Rows come back in grid order regardless of how many
worker processes ran the cells.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from fedcontrib.contribution import SCHEMES, measure
from fedcontrib.core_ml import TrainConfig, derive_seed, make_synthetic_task, split_dataset
from fedcontrib.protocol import (
    WEIGHTINGS,
    FederationConfig,
    Honest,
    LabelFlipper,
    ParticipantSpec,
    run_federation,
)

logger = logging.getLogger(__name__)

SCHEME_ALIASES = {"shapley": "shapley_exact"}

# Width of the range each scheme's score can take, for comparing separations.
SCORE_RANGES = {
    "influence": 2.0,
    "reputation": 1.0,
    "shapley": 2.0,
    "shapley_exact": 2.0,
    "shapley_sampled": 2.0,
}


class ConfigError(ValueError):
    """The experiment grid is invalid."""


class GridCellError(RuntimeError):
    def __init__(self, attacker_count, flip_prob, seed, cause):
        self.attacker_count = attacker_count
        self.flip_prob = flip_prob
        self.seed = seed
        super().__init__(
            f"cell (attacker_count={attacker_count}, flip_prob={flip_prob}, seed={seed}) "
            f"failed: {cause!r}")


@dataclass(frozen=True)
class ExperimentGrid:
    num_users: int = 4
    attacker_counts: tuple = (0, 1, 2, 3)
    flip_probs: tuple = (0.1, 0.3, 0.5, 1.0)
    schemes: tuple = ("influence", "reputation", "shapley")
    seeds: tuple = (1, 2, 3, 4, 5)
    rounds: int = 10
    ts: int = 5
    num_classes: int = 4
    dim: int = 8
    samples_per_user: int = 500
    test_samples: int = 1000
    learning_rate: float = 1.0
    local_epochs: int = 5
    batch_size: int = 32
    weighting: str = "data_size"
    shapley_permutations: int = 1000

    def __post_init__(self):
        for name in ("attacker_counts", "flip_probs", "schemes", "seeds"):
            value = getattr(self, name)
            if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
                raise ConfigError(f"{name} must be a list")
            object.__setattr__(self, name, tuple(value))
        self._validate()

    def _validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        ints = ("num_users", "rounds", "ts", "num_classes", "dim", "samples_per_user",
                "test_samples", "local_epochs", "batch_size", "shapley_permutations")
        for name in ints:
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool) and v >= 1,
                 f"{name} must be a positive integer, got {v!r}")
        need(isinstance(self.learning_rate, (int, float)) and self.learning_rate > 0,
             "learning_rate must be > 0")
        need(self.attacker_counts, "attacker_counts must not be empty")
        for a in self.attacker_counts:
            need(isinstance(a, int) and not isinstance(a, bool) and a >= 0,
                 f"attacker count {a!r} must be a non-negative integer")
            need(a == 0 or a < self.num_users,
                 f"attacker count {a} leaves no honest user among {self.num_users}")
        need(self.flip_probs or all(a == 0 for a in self.attacker_counts),
             "flip_probs must not be empty when attackers are configured")
        for p in self.flip_probs:
            need(isinstance(p, (int, float)) and not isinstance(p, bool) and 0.0 <= p <= 1.0,
                 f"flip probability {p!r} outside [0, 1]")
        need(self.schemes, "schemes must not be empty")
        for s in self.schemes:
            need(SCHEME_ALIASES.get(s, s) in SCHEMES, f"unknown scheme {s!r}")
        need(self.seeds, "seeds must not be empty")
        for s in self.seeds:
            need(isinstance(s, int) and not isinstance(s, bool) and s >= 0,
                 f"seed {s!r} must be a non-negative integer")
        need(self.ts <= self.rounds, f"ts={self.ts} exceeds rounds={self.rounds}")
        need(self.weighting in WEIGHTINGS, f"unknown weighting {self.weighting!r}")
        need(self.batch_size <= self.samples_per_user, "batch_size exceeds samples_per_user")

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentGrid:
        if not isinstance(raw, dict):
            raise ConfigError("grid config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> ExperimentGrid:
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in dataclasses.asdict(self).items()}

    def cells(self) -> list[tuple[int, float]]:
        """(attacker_count, flip_prob) pairs; an attacker-free cell has no flip sweep."""
        out = []
        for a in self.attacker_counts:
            if a == 0:
                out.append((0, 0.0))
            else:
                out.extend((a, float(p)) for p in self.flip_probs)
        return out

    def expected_rows(self) -> int:
        return len(self.cells()) * len(self.seeds) * len(self.schemes) * self.num_users


@dataclass(frozen=True)
class ResultRow:
    seed: int
    scheme: str
    attacker_count: int
    flip_prob: float
    participant_id: int
    is_attacker: bool
    mean_score: float
    final_global_accuracy: float
    wall_time_ms: float = 0.0


ROW_FIELDS = [f.name for f in dataclasses.fields(ResultRow)]


def build_federation(grid: ExperimentGrid, attacker_count: int, flip_prob: float,
                     seed: int) -> FederationConfig:
    """Federation for one cell. Data and honest training depend on ``seed`` only."""
    total = grid.num_users * grid.samples_per_user + grid.test_samples
    per_class = -(-total // grid.num_classes)
    pool = make_synthetic_task(grid.num_classes, grid.dim, per_class, seed)
    shards = split_dataset(pool, [grid.test_samples] + [grid.samples_per_user] * grid.num_users,
                           seed=derive_seed(seed, 2))
    participants = []
    for pid in range(grid.num_users):
        if pid < attacker_count:
            behavior = LabelFlipper(flip_prob, seed=derive_seed(seed, 3, pid))
        else:
            behavior = Honest()
        cfg = TrainConfig(grid.learning_rate, grid.local_epochs, grid.batch_size,
                          seed=derive_seed(seed, 4, pid))
        participants.append(ParticipantSpec(pid, shards[pid + 1], behavior, cfg))
    return FederationConfig(tuple(participants), shards[0], rounds=grid.rounds,
                            aggregation_weighting=grid.weighting, seed=seed)


def run_cell(grid: ExperimentGrid, attacker_count: int, flip_prob: float, seed: int,
             timing: bool = False) -> list[ResultRow]:
    try:
        fed = build_federation(grid, attacker_count, flip_prob, seed)
        records = run_federation(fed)
        final_acc = records[-1].global_accuracy
        rows = []
        for scheme in grid.schemes:
            start = time.perf_counter()
            score = measure(records, SCHEME_ALIASES.get(scheme, scheme), fed.test_set,
                            weighting=grid.weighting, ts=grid.ts,
                            num_permutations=grid.shapley_permutations, seed=seed)
            elapsed = (time.perf_counter() - start) * 1000.0 if timing else 0.0
            for pid in range(grid.num_users):
                rows.append(ResultRow(seed, scheme, attacker_count, flip_prob, pid,
                                      pid < attacker_count, float(score[pid]), final_acc,
                                      elapsed))
        return rows
    except Exception as exc:
        raise GridCellError(attacker_count, flip_prob, seed, exc) from exc


def _run_job(args):
    return run_cell(*args)


def run_grid(grid: ExperimentGrid, parallel: int = 1, timing: bool = False) -> list[ResultRow]:
    """Run every cell and seed of ``grid``.

    Output is identical for any ``parallel``. ``timing`` fills
    ``wall_time_ms``; leave it off when byte-identical output matters.
    """
    jobs = [(grid, a, p, s, timing) for a, p in grid.cells() for s in grid.seeds]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            chunks = list(pool.map(_run_job, jobs))
    else:
        chunks = []
        for job in jobs:
            logger.info("cell attackers=%d p=%.2f seed=%d", job[1], job[2], job[3])
            chunks.append(_run_job(job))
    return [row for chunk in chunks for row in chunk]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.9g}"
    return str(value)


def _write_table(fh, header, rows):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(getattr(row, name)) for name in header])


def write_rows_csv(rows, fh) -> None:
    _write_table(fh, ROW_FIELDS, rows)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    write_rows_csv(rows, buf)
    return buf.getvalue()


def write_rows_jsonl(rows, fh) -> None:
    for row in rows:
        record = {name: getattr(row, name) for name in ROW_FIELDS}
        for k, v in record.items():
            if isinstance(v, float):
                record[k] = None if math.isnan(v) else float(f"{v:.9g}")
        fh.write(json.dumps(record, sort_keys=False) + "\n")


def read_rows_csv(fh) -> list[ResultRow]:
    reader = csv.DictReader(fh)
    if reader.fieldnames != ROW_FIELDS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}; expected {ROW_FIELDS}")
    rows = []
    for rec in reader:
        rows.append(ResultRow(
            seed=int(rec["seed"]),
            scheme=rec["scheme"],
            attacker_count=int(rec["attacker_count"]),
            flip_prob=float(rec["flip_prob"]),
            participant_id=int(rec["participant_id"]),
            is_attacker=rec["is_attacker"].strip().lower() == "true",
            mean_score=float(rec["mean_score"]),
            final_global_accuracy=float(rec["final_global_accuracy"]),
            wall_time_ms=float(rec["wall_time_ms"]),
        ))
    return rows


@dataclass(frozen=True)
class SummaryRow:
    scheme: str
    attacker_count: int
    flip_prob: float
    honest_mean: float
    attacker_mean: float
    separation: float
    final_accuracy_mean: float
    num_seeds: int = 0


SUMMARY_FIELDS = [f.name for f in dataclasses.fields(SummaryRow)]


def summarize(rows) -> list[SummaryRow]:
    """Mean honest and attacker score per (scheme, attacker_count, flip_prob).

    ``attacker_mean`` and ``separation`` are NaN for cells without attackers.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to summarize")
    groups: dict[tuple, list[ResultRow]] = {}
    for row in rows:
        groups.setdefault((row.scheme, row.attacker_count, row.flip_prob), []).append(row)
    out = []
    for (scheme, ac, p), members in groups.items():
        honest = [r.mean_score for r in members if not r.is_attacker]
        bad = [r.mean_score for r in members if r.is_attacker]
        accs = {r.seed: r.final_global_accuracy for r in members}
        h = math.fsum(honest) / len(honest) if honest else math.nan
        a = math.fsum(bad) / len(bad) if bad else math.nan
        out.append(SummaryRow(scheme, ac, p, h, a, h - a,
                              math.fsum(accs.values()) / len(accs), len(accs)))
    return out


def write_summary_csv(summary, fh) -> None:
    _write_table(fh, SUMMARY_FIELDS, summary)


@dataclass
class SeedSeparation:
    """Honest-minus-attacker mean score for each seed of one cell."""

    scheme: str
    attacker_count: int
    flip_prob: float
    honest: dict = field(default_factory=dict)
    attacker: dict = field(default_factory=dict)

    @property
    def separation(self) -> dict:
        return {s: self.honest[s] - self.attacker[s] for s in sorted(self.honest)}

    def wins(self) -> int:
        return sum(1 for v in self.separation.values() if v > 0)


def seed_separations(rows, scheme: str, attacker_count: int, flip_prob: float) -> SeedSeparation:
    sel = [r for r in rows if r.scheme == scheme and r.attacker_count == attacker_count
           and math.isclose(r.flip_prob, flip_prob)]
    if not sel:
        raise LookupError(f"no rows for {scheme} at ({attacker_count}, {flip_prob})")
    out = SeedSeparation(scheme, attacker_count, flip_prob)
    for seed in sorted({r.seed for r in sel}):
        mine = [r for r in sel if r.seed == seed]
        out.honest[seed] = float(np.mean([r.mean_score for r in mine if not r.is_attacker]))
        bad = [r.mean_score for r in mine if r.is_attacker]
        out.attacker[seed] = float(np.mean(bad)) if bad else math.nan
    return out
