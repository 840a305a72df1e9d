from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np


# ----------------------------------------------------------------------
# Errors
# ----------------------------------------------------------------------
class TcnError(Exception):
    pass


class UsageError(TcnError, ValueError):
    pass


class DataError(TcnError, ValueError):
    pass


class SignalFormatError(DataError):
    pass


class ModelFormatError(DataError):
    pass


class ConfigError(DataError):
    pass


class TrainingDivergedError(TcnError):
    def __init__(self, message, stage=None, epoch=None):
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch


class NonFiniteGradientError(TrainingDivergedError):
    def __init__(self, parameter_name):
        super().__init__(f"Non-finite gradient for parameter '{parameter_name}'")
        self.parameter_name = parameter_name


class StageError(TcnError):
    """Failure of one pipeline stage, keeps the original exception as `cause`."""

    def __init__(self, stage, cause):
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


# ----------------------------------------------------------------------
# Files
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class FileType:
    name: str
    extensions: List[str]

    def matches(self, path) -> bool:
        return str(path).lower().endswith(tuple(self.extensions))


class FileTypeConfig:
    CSV = FileType("csv", [".csv", ".txt"])
    RAW_F32 = FileType("raw_f32", [".f32", ".bin", ".raw"])

    @classmethod
    def for_format(cls, signal_format: str) -> FileType:
        for file_type in (cls.CSV, cls.RAW_F32):
            if file_type.name == signal_format:
                return file_type
        raise UsageError(f"Unsupported signal format: {signal_format}")


class Stages:
    LOAD = "load"
    STEP1 = "step1_autoencoder"
    STEP2 = "step2_kmeans"
    STEP3 = "step3_refinement"
    CALIBRATE = "calibrate"
    SAVE = "save"


# ----------------------------------------------------------------------
# Signals
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate: float
    source_tag: Optional[str] = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise DataError("A signal needs a 1D array with at least one sample")
        if not np.all(np.isfinite(samples)):
            raise DataError(f"Signal contains non-finite sample at index {int(np.argmin(np.isfinite(samples)))}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class SignalSet:
    """
    Ordered windows that share one length L and one sample rate.

    The windows are stored as one (I, L) array; iterating yields Signal objects.
    """
    data: np.ndarray
    sample_rate: float
    source_tags: Sequence[Optional[str]] = field(default_factory=tuple)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DataError(f"A signal set needs at least one window, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[0]
            raise DataError(f"Non-finite sample in window {bad[0]} at index {bad[1]}")
        tags = tuple(self.source_tags) if self.source_tags else (None,) * data.shape[0]
        if len(tags) != data.shape[0]:
            raise DataError(f"Got {len(tags)} source tags for {data.shape[0]} windows")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "source_tags", tags)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def window_len(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.count

    def __getitem__(self, index) -> Signal:
        return Signal(self.data[index], self.sample_rate, self.source_tags[index])

    def __iter__(self) -> Iterator[Signal]:
        for i in range(self.count):
            yield self[i]

    @classmethod
    def from_signals(cls, signals: Sequence[Signal]) -> "SignalSet":
        if not signals:
            raise DataError("Cannot build a signal set from zero signals")
        lengths = {len(s) for s in signals}
        rates = {s.sample_rate for s in signals}
        if len(lengths) != 1 or len(rates) != 1:
            raise DataError("All signals of a set must share one length and one sample rate")
        return cls(np.stack([s.samples for s in signals]), signals[0].sample_rate,
                   tuple(s.source_tag for s in signals))

    @classmethod
    def concatenate(cls, sets: Sequence["SignalSet"]) -> "SignalSet":
        if not sets:
            raise DataError("Cannot concatenate zero signal sets")
        if len({s.window_len for s in sets}) != 1 or len({s.sample_rate for s in sets}) != 1:
            raise DataError("Signal sets differ in window length or sample rate")
        tags = tuple(tag for s in sets for tag in s.source_tags)
        return cls(np.concatenate([s.data for s in sets]), sets[0].sample_rate, tags)

    def subset(self, indices) -> "SignalSet":
        indices = np.asarray(indices, dtype=int)
        return SignalSet(self.data[indices], self.sample_rate, tuple(self.source_tags[i] for i in indices))
