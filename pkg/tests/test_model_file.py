import struct

import numpy as np
import pytest

from tcnfault.core import DataError, ModelFormatError
from tcnfault.functions.model_file import MAGIC, FORMAT_VERSION, dumps, loads, save_model, load_model
from tcnfault.functions.scoring import classify_set


@pytest.fixture(scope="module")
def model_bytes(tiny_trained):
    return dumps(tiny_trained.model)


def test_starts_with_magic_and_version(model_bytes):
    assert model_bytes[:4] == MAGIC
    assert struct.unpack("<I", model_bytes[4:8])[0] == FORMAT_VERSION


def test_reserialization_is_bit_exact(model_bytes):
    assert dumps(loads(model_bytes)) == model_bytes


def test_loaded_model_equals_trained(tiny_trained, model_bytes):
    original, loaded = tiny_trained.model, loads(model_bytes)
    assert loaded.k == original.k
    assert loaded.seed == original.seed
    assert loaded.signal == original.signal
    assert loaded.scoring == original.scoring
    assert loaded.summary == original.summary
    for (name, a), (_, b) in zip(original.encoder.named_parameters().items(),
                                    loaded.encoder.named_parameters().items()):
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes(), name
    np.testing.assert_array_equal(loaded.clusters.centroids, original.clusters.centroids)
    np.testing.assert_array_equal(loaded.clusters.assignments, original.clusters.assignments)
    for field in ("bandwidth", "threshold", "failure", "member_counts"):
        np.testing.assert_array_equal(getattr(loaded.stats, field), getattr(original.stats, field))


def test_loaded_model_gives_identical_verdicts(tiny_trained, tiny_split, tiny_synth, model_bytes):
    original, loaded = tiny_trained.model, loads(model_bytes)
    _, validation_sets = tiny_split
    for signal_set in validation_sets + [tiny_synth.faults[0]]:
        for a, b in zip(classify_set(original.encoder, original.clusters, original.stats, signal_set),
                        classify_set(loaded.encoder, loaded.clusters, loaded.stats, signal_set)):
            assert a.probs.tobytes() == b.probs.tobytes()
            assert a.outcome is b.outcome and a.cluster == b.cluster


def test_save_and_load(tmp_path, tiny_trained, model_bytes):
    path = tmp_path / "model.tcn"
    save_model(tiny_trained.model, path)
    assert path.read_bytes() == model_bytes
    assert dumps(load_model(path)) == model_bytes


def test_missing_file(tmp_path):
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "absent.tcn")


@pytest.mark.parametrize("corrupt", [
    lambda b: b"",
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", FORMAT_VERSION + 1) + b[8:],
    lambda b: b[:-1],
    lambda b: b[:len(b) // 2],
    lambda b: b + b"\x00",
], ids=["empty", "magic", "version", "truncated-tail", "truncated-half", "trailing"])
def test_corrupt_files_are_rejected(model_bytes, corrupt):
    with pytest.raises(ModelFormatError):
        loads(corrupt(model_bytes))


def test_format_error_is_a_data_error(model_bytes):
    with pytest.raises(DataError):
        loads(model_bytes[:10])
