import numpy as np
import pytest

from careselect import datagen
from careselect.catalog import LOS_KEY
from careselect.feature_select import (
    DesignData,
    EnsembleSpec,
    build_ensemble,
    next_group_count,
    prune_group,
    screen_predictors,
    shuffle_into_groups,
)
from careselect.glm import fit_weighted_logistic


@pytest.fixture(scope="module")
def design(small_truth, small_cohort):
    names = small_truth.characteristic_names()
    return DesignData(small_cohort, small_truth.catalog(), names)


@pytest.fixture(scope="module")
def unit_weights(small_cohort):
    return np.ones(len(small_cohort))


class TestGroupCountRecurrence:
    def test_initial_group_count(self):
        n, f = next_group_count(5449, 50.0, 109, 0, target=15)
        assert n == 109  # p=0 keeps both quantities fixed
        assert f == 50.0

    def test_documented_step(self):
        n, f = next_group_count(4800, 50.0, 100, 200, target=15)
        assert f == 52.0
        assert n == 93

    def test_floor_at_target(self):
        n, _ = next_group_count(30, 50.0, 5, 10, target=15)
        assert n == 15

    def test_zero_remaining(self):
        n, _ = next_group_count(0, 50.0, 5, 10, target=3)
        assert n == 3


class TestShuffle:
    def test_near_equal_sizes(self):
        groups = shuffle_into_groups(range(10), 3, seed=1, forced=())
        assert sorted(len(g) for g in groups) == [3, 3, 4]

    def test_forced_in_every_group(self):
        groups = shuffle_into_groups(range(10), 3, seed=1)
        assert all(LOS_KEY in g for g in groups)

    def test_partition_law(self):
        groups = shuffle_into_groups(range(17), 4, seed=9)
        loose = [k for g in groups for k in g if k != LOS_KEY]
        assert sorted(loose) == list(range(17))

    def test_seeded(self):
        a = shuffle_into_groups(range(20), 4, seed=5)
        b = shuffle_into_groups(range(20), 4, seed=5)
        assert a == b


class TestScreening:
    def test_constant_column_discarded(self, design, unit_weights):
        kept = screen_predictors(design, unit_weights)
        for pid in kept:
            col = design.column(design.universe[pid])
            assert col.std() > 0

    def test_strong_true_predictors_retained(self):
        spec = datagen.CohortSpec(
            n_patients=5000, n_services=10, n_characteristics=8, plan_size_mean=4,
            bias_strength=0.5, seed=23,
        )
        truth = datagen.generate_ground_truth(spec)
        cohort = datagen.sample_cohort(truth)
        data = DesignData(cohort, truth.catalog(), truth.characteristic_names())
        kept = set(screen_predictors(data, np.ones(len(cohort))))
        # power threshold: univariate effect (|coef| x column sd) of 0.3 is
        # comfortably detectable at this cohort size
        strong = [
            pid
            for pid, coef in truth.outcome_coefs.items()
            if abs(coef) * data.column(data.universe[pid]).std() > 0.3
        ]
        assert strong, "construction should contain detectable predictors"
        retained = sum(1 for pid in strong if pid in kept)
        assert retained >= 0.9 * len(strong)

    def test_null_retention_near_alpha(self):
        # no true effects at all: every candidate is null
        spec = datagen.CohortSpec(
            n_patients=4000, n_services=15, n_characteristics=25, plan_size_mean=6,
            bias_strength=0.0, ss_density=0.0, sc_density=0.0, los_coef=0.0, seed=17,
        )
        truth = datagen.generate_ground_truth(spec)
        cohort = datagen.sample_cohort(truth)
        data = DesignData(cohort, truth.catalog(), truth.characteristic_names())
        kept = screen_predictors(data, np.ones(len(cohort)), alpha=0.05)
        testable = sum(1 for p in data.universe if data.column(p).std() > 0)
        rate = len(kept) / testable
        assert 0.03 <= rate <= 0.07


class TestPruneGroup:
    def test_strong_predictor_survives(self, small_truth, design, unit_weights):
        strong = max(
            (pid for pid in small_truth.outcome_coefs
             if design.column(design.universe[pid]).std() > 0),
            key=lambda pid: abs(small_truth.outcome_coefs[pid])
            * design.column(design.universe[pid]).std(),
        )
        survivors, model, diag = prune_group([strong], design, unit_weights)
        assert strong in survivors
        assert model is not None

    def test_noise_survivors_near_alpha(self):
        spec = datagen.CohortSpec(
            n_patients=3000, n_services=12, n_characteristics=20, plan_size_mean=5,
            bias_strength=0.0, ss_density=0.0, sc_density=0.0, los_coef=0.0, seed=19,
        )
        truth = datagen.generate_ground_truth(spec)
        cohort = datagen.sample_cohort(truth)
        data = DesignData(cohort, truth.catalog(), truth.characteristic_names())
        w = np.ones(len(cohort))
        null_ids = [p.id for p in data.universe if data.column(p).std() > 0]
        groups = shuffle_into_groups(null_ids, 10, seed=1)
        total = survived = 0
        for g in groups:
            loose = [k for k in g if k != LOS_KEY]
            out, _, _ = prune_group(g, data, w, alpha=0.05)
            total += len(loose)
            survived += len(out)
        assert 0.01 <= survived / total <= 0.12

    def test_duplicated_predictor_collapses(self, design, unit_weights, small_truth):
        # a column and its exact copy cannot both stay significant
        strong = max(
            (pid for pid in small_truth.outcome_coefs
             if design.column(design.universe[pid]).std() > 0),
            key=lambda pid: abs(small_truth.outcome_coefs[pid])
            * design.column(design.universe[pid]).std(),
        )

        class Doubled(DesignData):
            def column_for_key(self, key):
                if key == "copy":
                    return design.column_for_key(strong)
                return design.column_for_key(key)

        doubled = Doubled.__new__(Doubled)
        doubled.__dict__.update(design.__dict__)
        survivors, _, _ = prune_group([strong, "copy"], doubled, unit_weights)
        assert len(survivors) <= 1

    def test_forced_never_removed(self, design, unit_weights):
        survivors, model, _ = prune_group([], design, unit_weights)
        assert survivors == []
        assert LOS_KEY in model.coefficients


class TestBuildEnsemble:
    def test_single_model_pipeline(self, small_truth, small_cohort):
        spec = EnsembleSpec(target_models=1, features_per_group=30, seed=4)
        names = small_truth.characteristic_names()
        w = np.ones(len(small_cohort))
        ensemble = build_ensemble(spec, small_cohort, w, small_truth.catalog(), names)
        assert len(ensemble.members) == 1
        data = DesignData(small_cohort, small_truth.catalog(), names)
        # every surviving predictor is significant in the member's final fit
        member = ensemble.members[0]
        keys = [k for k in member.coefficients if k != LOS_KEY]
        uids = [_universe_id(ensemble.predictors[k], data) for k in keys]
        if uids:
            _, diag = fit_weighted_logistic(
                data.matrix(uids + [LOS_KEY]), data.y, w, keys=uids + [LOS_KEY]
            )
            assert all(diag.p_values[u] < spec.alpha for u in uids)

    def test_trace_group_counts_weakly_decreasing(self, small_truth, small_cohort):
        spec = EnsembleSpec(target_models=2, features_per_group=5, seed=4)
        names = small_truth.characteristic_names()
        w = np.ones(len(small_cohort))
        ensemble = build_ensemble(spec, small_cohort, w, small_truth.catalog(), names)
        counts = [row["groups"] for row in ensemble.metadata["trace"]]
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert len(ensemble.members) <= max(counts)

    def test_seeded_determinism(self, small_truth, small_cohort):
        spec = EnsembleSpec(target_models=2, features_per_group=8, seed=9)
        names = small_truth.characteristic_names()
        w = np.ones(len(small_cohort))
        a = build_ensemble(spec, small_cohort, w, small_truth.catalog(), names)
        b = build_ensemble(spec, small_cohort, w, small_truth.catalog(), names)
        assert a == b

    def test_member_counts_reported(self, small_truth, small_cohort):
        spec = EnsembleSpec(target_models=2, features_per_group=8, seed=9)
        names = small_truth.characteristic_names()
        ensemble = build_ensemble(spec, small_cohort, np.ones(len(small_cohort)),
                                  small_truth.catalog(), names)
        counts = ensemble.metadata["member_predictor_counts"]
        assert len(counts) == len(ensemble.members)


def _universe_id(predictor, data):
    for p in data.universe:
        if (p.kind, p.left, p.right) == (predictor.kind, predictor.left, predictor.right):
            return p.id
    raise AssertionError("predictor not in universe")
