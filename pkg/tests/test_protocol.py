import dataclasses

import numpy as np
import pytest
from conftest import random_params, small_federation
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcontrib.attacks import FreeRiderStrategy, PoisonStrategy
from fedcontrib.core_ml import (
    ModelParams,
    TrainConfig,
    derive_seed,
    evaluate,
    make_synthetic_task,
    train_local,
)
from fedcontrib.experiments import ExperimentGrid, build_federation
from fedcontrib.protocol import (
    FederationConfig,
    FreeRider,
    Honest,
    LabelFlipper,
    ParticipantSpec,
    Selection,
    Update,
    UntargetedPoisoner,
    aggregate,
    initialize,
    produce_update,
    run_federation,
    select_participants,
)


def updates_from(param_list, sizes=None):
    sizes = sizes or [100] * len(param_list)
    return [Update(i, 1, p, s) for i, (p, s) in enumerate(zip(param_list, sizes))]


class TestInitialize:
    def test_same_seed_same_params(self):
        cfg = small_federation(seed=3)
        assert initialize(cfg).equals(initialize(cfg))

    def test_seed_matters(self):
        a = initialize(small_federation(seed=0))
        b = initialize(dataclasses.replace(small_federation(seed=0), seed=1))
        assert not a.equals(b)

    def test_small_magnitude(self):
        p = initialize(small_federation())
        assert np.abs(p.flat()).max() <= 0.01

    def test_chance_level_accuracy(self):
        accs = []
        for seed in range(10):
            test = make_synthetic_task(4, 8, 250, seed)
            cfg = FederationConfig((ParticipantSpec(0, test),), test, seed=seed)
            accs.append(evaluate(initialize(cfg), test))
        assert abs(np.mean(accs) - 0.25) <= 0.07


class TestSelection:
    def test_all(self):
        assert select_participants(small_federation(), 1) == [0, 1, 2, 3]

    def test_k_equals_n(self):
        cfg = dataclasses.replace(small_federation(), selection=Selection.uniform_random(4, 5))
        assert sorted(select_participants(cfg, 3)) == [0, 1, 2, 3]

    def test_uniform_frequencies(self):
        cfg = dataclasses.replace(small_federation(), selection=Selection.uniform_random(2, 8))
        counts = np.zeros(4, int)
        for rnd in range(1, 1001):
            picked = select_participants(cfg, rnd)
            assert len(set(picked)) == 2
            counts[picked] += 1
        # Binomial(1000, 1/2): 3 sigma is about 47
        assert np.all(np.abs(counts - 500) <= 60)

    def test_deterministic(self):
        cfg = dataclasses.replace(small_federation(), selection=Selection.uniform_random(2, 8))
        assert select_participants(cfg, 7) == select_participants(cfg, 7)

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            dataclasses.replace(small_federation(), selection=Selection.uniform_random(5))

    def test_round_zero(self):
        with pytest.raises(ValueError):
            select_participants(small_federation(), 0)


class TestProduceUpdate:
    def test_honest_is_deterministic(self):
        cfg = small_federation()
        spec, g = cfg.participants[0], initialize(cfg)
        assert produce_update(spec, g, 2).equals(produce_update(spec, g, 2))

    def test_honest_reports_true_size(self):
        cfg = small_federation()
        upd = produce_update(cfg.participants[1], initialize(cfg), 1)
        assert upd.reported_data_size == len(cfg.participants[1].data)

    def test_flipper_with_zero_probability_is_honest(self):
        cfg = small_federation()
        honest = cfg.participants[0]
        flipper = dataclasses.replace(honest, behavior=LabelFlipper(0.0, seed=4))
        g = initialize(cfg)
        assert produce_update(flipper, g, 3).equals(produce_update(honest, g, 3))

    def test_honest_fits_own_data(self):
        cfg = small_federation(seed=2)
        spec = cfg.participants[0]
        upd = produce_update(spec, initialize(cfg), 1)
        assert evaluate(upd.params, spec.data) >= 0.9

    def test_free_rider_lies_about_size(self):
        cfg = small_federation()
        spec = dataclasses.replace(cfg.participants[0],
                                   behavior=FreeRider(FreeRiderStrategy.random_params()))
        upd = produce_update(spec, initialize(cfg), 1)
        assert upd.reported_data_size == len(spec.data)

    def test_free_rider_explicit_report(self):
        cfg = small_federation()
        spec = dataclasses.replace(cfg.participants[0],
                                   behavior=FreeRider(FreeRiderStrategy.echo_global(), 6000))
        g = initialize(cfg)
        upd = produce_update(spec, g, 1)
        assert upd.reported_data_size == 6000 and upd.params.equals(g)

    def test_sign_flip_poisoner_negates_honest_training(self):
        cfg = small_federation()
        honest = cfg.participants[0]
        bad = dataclasses.replace(honest, behavior=UntargetedPoisoner(PoisonStrategy.sign_flip()))
        g = initialize(cfg)
        a, b = produce_update(honest, g, 1), produce_update(bad, g, 1)
        assert np.array_equal(a.params.flat(), -b.params.flat())


class TestAggregate:
    def test_single_update(self, rng):
        p = random_params(rng, 3, 4)
        assert aggregate(updates_from([p])).equals(p)

    def test_symmetric_pair_cancels(self, rng):
        p = random_params(rng, 3, 4)
        neg = ModelParams(-p.weights, -p.biases)
        out = aggregate(updates_from([p, neg]), "uniform")
        assert not out.flat().any()

    def test_data_size_weighting(self, rng):
        a, b = random_params(rng, 3, 4), random_params(rng, 3, 4)
        out = aggregate(updates_from([a, b], [3000, 1000]), "data_size")
        np.testing.assert_allclose(out.flat(), 0.75 * a.flat() + 0.25 * b.flat(), rtol=0, atol=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_all_sizes_zero(self, rng):
        with pytest.raises(ValueError):
            aggregate(updates_from([random_params(rng, 2, 2)] * 2, [0, 0]), "data_size")

    def test_identical_updates_give_same_params(self, rng):
        p = random_params(rng, 3, 5)
        out = aggregate(updates_from([p, p, p]), "uniform")
        assert out.equals(p)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6),
           weighting=st.sampled_from(["uniform", "data_size"]))
    def test_permutation_invariance_and_convexity(self, seed, n, weighting):
        rng = np.random.default_rng(seed)
        ups = updates_from([random_params(rng, 3, 4) for _ in range(n)],
                           [int(s) for s in rng.integers(1, 5000, n)])
        ref = aggregate(ups, weighting)
        shuffled = [ups[i] for i in rng.permutation(n)]
        assert aggregate(shuffled, weighting).equals(ref)
        stacked = np.stack([u.params.flat() for u in ups])
        assert np.all(ref.flat() >= stacked.min(axis=0))
        assert np.all(ref.flat() <= stacked.max(axis=0))


class TestRunFederation:
    def test_single_honest_round_equals_local_training(self):
        cfg = small_federation(rounds=1)
        cfg = dataclasses.replace(cfg, participants=cfg.participants[:1])
        spec = cfg.participants[0]
        rec = run_federation(cfg)[0]
        local_cfg = dataclasses.replace(spec.train_cfg, seed=derive_seed(spec.train_cfg.seed, 1))
        expected = train_local(spec.data, initialize(cfg), local_cfg)
        assert rec.global_after.equals(expected)

    def test_records_are_consistent(self):
        cfg = small_federation(rounds=3)
        records = run_federation(cfg)
        assert [r.round for r in records] == [1, 2, 3]
        for prev, rec in zip(records, records[1:]):
            assert rec.global_before.equals(prev.global_after)
        for rec in records:
            assert [u.participant_id for u in rec.updates] == list(rec.selected_ids)
            assert rec.global_accuracy == evaluate(rec.global_after, cfg.test_set)

    def test_deterministic(self):
        cfg = small_federation(rounds=3)
        a, b = run_federation(cfg), run_federation(cfg)
        assert all(x.equals(y) for x, y in zip(a, b))

    def test_threads_match_sequential(self):
        cfg = small_federation(rounds=2)
        a, b = run_federation(cfg), run_federation(cfg, workers=4)
        assert all(x.equals(y) for x, y in zip(a, b))

    def test_random_selection_records(self):
        cfg = dataclasses.replace(small_federation(rounds=4), selection=Selection.uniform_random(2, 3))
        for rec in run_federation(cfg):
            assert len(rec.updates) == 2

    def test_honest_baseline_accuracy(self):
        rec = run_federation(build_federation(ExperimentGrid(), 0, 0.0, seed=1))
        assert rec[-1].global_accuracy >= 0.85

    def test_honest_accuracy_does_not_drop_over_rounds(self):
        # Light local training; heavy training reaches the plateau in round 1
        # and later rounds only add SGD noise.
        grid = ExperimentGrid(learning_rate=0.01, local_epochs=1)
        first, last = [], []
        for seed in range(1, 6):
            records = run_federation(build_federation(grid, 0, 0.0, seed))
            first.append(records[0].global_accuracy)
            last.append(records[-1].global_accuracy)
        assert np.mean(last) >= np.mean(first)


def test_duplicate_ids_rejected():
    cfg = small_federation()
    with pytest.raises(ValueError):
        dataclasses.replace(cfg, participants=(cfg.participants[0], cfg.participants[0]))


def test_flip_probability_validated():
    with pytest.raises(ValueError):
        LabelFlipper(1.5)


def test_honest_default_behavior():
    spec = ParticipantSpec(0, make_synthetic_task(2, 2, 10, 0))
    assert isinstance(spec.behavior, Honest) and not spec.is_malicious
    assert spec.train_cfg == TrainConfig()
