import copy

import numpy as np
import pytest

from tcnfault.config import load_settings
from tcnfault.functions.autoencoder import ArchConfig, LayerSpec
from tcnfault.functions.pipeline import train_tcn
from tcnfault.functions.signal_io import SynthSpec, synth_dataset, split_signal_set, save_signals

TINY_WINDOW = 64
TINY_RATE = 256.0
TINY_PER_CONDITION = 24
TINY_TRAIN = 20

TINY_SYNTHETIC = {
    "seed": 11,
    "per_condition": TINY_PER_CONDITION,
    "train_per_condition": TINY_TRAIN,
    "window_len": TINY_WINDOW,
    "sample_rate": TINY_RATE,
    "conditions": [
        {"base_freq": 8.0, "harmonic_amps": [1.0, 0.4], "noise_std": 0.05},
        {"base_freq": 20.0, "harmonic_amps": [2.0, 0.5], "noise_std": 0.05},
        {"base_freq": 36.0, "harmonic_amps": [3.0, 0.3, 0.5], "noise_std": 0.05},
    ],
    "fault": {"impulse_freq": 16.0, "impulse_amp": 50.0, "decay_rate": 20.0},
}


def make_tiny_settings() -> dict:
    settings = load_settings()
    settings["seed"] = 3
    settings["signal"].update({"window_len": TINY_WINDOW, "hop": TINY_WINDOW, "sample_rate": TINY_RATE})
    settings["architecture"] = {
        "leaky_slope": 0.01,
        "layers": [{"out_channels": 4, "kernel_size": 5, "stride": 1, "pool_window": 2}],
    }
    settings["step1"].update({"epochs": 4, "batch_size": 8, "lr": 0.01})
    settings["kmeans"].update({"restarts": 3})
    settings["step3"].update({"epochs": 3})
    settings["synthetic"] = copy.deepcopy(TINY_SYNTHETIC)
    return settings


@pytest.fixture
def tiny_settings():
    return make_tiny_settings()


@pytest.fixture
def tiny_arch():
    return ArchConfig(TINY_WINDOW, (LayerSpec(4, 5, 1, 2),))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_synth():
    return synth_dataset(SynthSpec.from_dict(TINY_SYNTHETIC))


@pytest.fixture(scope="session")
def tiny_split(tiny_synth):
    """(training sets per condition, held-out sets per condition)"""
    splits = [split_signal_set(s, TINY_TRAIN) for s in tiny_synth.conditions]
    return [train for train, _ in splits], [validation for _, validation in splits]


@pytest.fixture(scope="session")
def tiny_trained(tiny_split):
    train_sets, _ = tiny_split
    return train_tcn(train_sets, None, make_tiny_settings())


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory, tiny_synth):
    """The tiny case study on disk: train/condition<c>.csv plus validation/{pristine,fault}/."""
    root = tmp_path_factory.mktemp("synthetic")
    for sub in ("train", "validation/pristine", "validation/fault"):
        (root / sub).mkdir(parents=True)
    for c, condition_set in enumerate(tiny_synth.conditions):
        train, validation = split_signal_set(condition_set, TINY_TRAIN)
        save_signals(train, root / "train" / f"condition{c}.csv", "csv")
        save_signals(validation, root / "validation" / "pristine" / f"condition{c}.csv", "csv")
        save_signals(tiny_synth.faults[c].subset(range(validation.count)),
                     root / "validation" / "fault" / f"condition{c}.csv", "csv")
    return root
