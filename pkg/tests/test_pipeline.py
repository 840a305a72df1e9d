import warnings

import numpy as np
import pytest

from conftest import TINY_TRAIN, make_tiny_settings
from tcnfault.core import SignalSet, Stages, TrainingDivergedError, UsageError
from tcnfault.functions.clustering import cluster_inertia
from tcnfault.functions.model_file import dumps
from tcnfault.functions.pipeline import train_tcn
from tcnfault.functions.autoencoder import encode_set


def test_one_cluster_per_condition(tiny_trained):
    model = tiny_trained.model
    assert model.k == 3
    assert model.clusters.assignments.size == 3 * TINY_TRAIN
    assert np.all(model.clusters.member_counts >= 1)
    assert 0.0 <= tiny_trained.purity <= 1.0


def test_summary(tiny_trained):
    summary = tiny_trained.model.summary
    assert summary["step1_best_loss"] <= summary["step1_initial_loss"]
    assert summary["step3_best_ci"] <= summary["step3_initial_ci"]
    assert summary["purity"] == tiny_trained.purity
    assert summary["kmeans_j"] == tiny_trained.step2.inertia


def test_refinement_keeps_kmeans_assignments(tiny_trained):
    np.testing.assert_array_equal(tiny_trained.step3.clusters.assignments, tiny_trained.step2.model.assignments)


def test_stored_ci_matches_stored_model(tiny_trained, tiny_split):
    train_sets, _ = tiny_split
    model = tiny_trained.model
    features = encode_set(model.encoder, SignalSet.concatenate(train_sets))
    ci = cluster_inertia(features, model.clusters)
    assert ci == pytest.approx(model.summary["step3_best_ci"], rel=1e-4)


def test_training_is_deterministic(tiny_trained, tiny_split):
    train_sets, _ = tiny_split
    again = train_tcn(train_sets, None, make_tiny_settings())
    assert dumps(again.model) == dumps(tiny_trained.model)


def test_signal_settings_are_recorded(tiny_trained):
    signal = tiny_trained.model.signal
    assert (signal.window_len, signal.hop, signal.normalize, signal.sample_rate) == (64, 64, "none", 256.0)


def test_single_input_has_no_purity(tiny_split):
    train_sets, _ = tiny_split
    settings = make_tiny_settings()
    settings["step1"]["epochs"] = 1
    settings["step3"]["epochs"] = 0
    result = train_tcn([SignalSet.concatenate(train_sets)], 2, settings)
    assert result.purity is None
    assert result.model.k == 2


def test_k_above_signal_count(tiny_split):
    train_sets, _ = tiny_split
    with pytest.raises(UsageError):
        train_tcn(train_sets, 3 * TINY_TRAIN + 1, make_tiny_settings())


def test_no_training_data():
    with pytest.raises(UsageError):
        train_tcn([], None, make_tiny_settings())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_the_stage(tiny_split):
    train_sets, _ = tiny_split
    huge = [SignalSet(s.data * 1e30, s.sample_rate) for s in train_sets]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(TrainingDivergedError) as info:
            train_tcn(huge, None, make_tiny_settings())
    assert info.value.stage == Stages.STEP1
