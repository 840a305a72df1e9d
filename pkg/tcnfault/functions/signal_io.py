import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from tcnfault.config import SignalFormats, NormalizePolicies
from tcnfault.core import Signal, SignalSet, SignalFormatError, DataError, UsageError, FileTypeConfig

log = logging.getLogger("tcnfault")

MIN_WINDOW_LEN = 16
NAN_TOKENS = {"nan", "+nan", "-nan"}


@dataclass(frozen=True)
class ConditionSpec:
    base_freq: float
    harmonic_amps: Sequence[float]
    noise_std: float


@dataclass(frozen=True)
class FaultSpec:
    impulse_freq: float
    impulse_amp: float
    decay_rate: float


@dataclass(frozen=True)
class SynthSpec:
    conditions: Sequence[ConditionSpec]
    per_condition: int
    window_len: int
    sample_rate: float
    fault: Optional[FaultSpec] = None
    seed: int = 0

    def validate(self):
        if not self.conditions:
            raise UsageError("Synthetic spec needs at least one condition")
        if self.per_condition < 1:
            raise UsageError(f"per_condition must be >= 1, got {self.per_condition}")
        if self.window_len < MIN_WINDOW_LEN:
            raise UsageError(f"window_len must be >= {MIN_WINDOW_LEN}, got {self.window_len}")
        if self.sample_rate <= 0:
            raise UsageError(f"sample_rate must be positive, got {self.sample_rate}")

        nyquist = self.sample_rate / 2
        for idx, cond in enumerate(self.conditions):
            if not cond.harmonic_amps:
                raise UsageError(f"Condition {idx} has no harmonic amplitudes")
            if cond.noise_std < 0:
                raise UsageError(f"Condition {idx} has negative noise_std")
            top_freq = cond.base_freq * len(cond.harmonic_amps)
            if cond.base_freq <= 0 or top_freq >= nyquist:
                raise UsageError(f"Condition {idx}: harmonic frequencies up to {top_freq} Hz "
                                 f"must lie in (0, {nyquist}) Hz")
        if self.fault is not None:
            if not 0 < self.fault.impulse_freq < nyquist:
                raise UsageError(f"impulse_freq must lie in (0, {nyquist}) Hz")
            if self.fault.decay_rate < 0:
                raise UsageError("decay_rate must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        fault = data.get("fault")
        return cls(
            conditions=tuple(ConditionSpec(float(c["base_freq"]), tuple(float(a) for a in c["harmonic_amps"]),
                                           float(c["noise_std"])) for c in data["conditions"]),
            per_condition=int(data["per_condition"]),
            window_len=int(data["window_len"]),
            sample_rate=float(data["sample_rate"]),
            fault=FaultSpec(float(fault["impulse_freq"]), float(fault["impulse_amp"]),
                            float(fault["decay_rate"])) if fault else None,
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class SynthResult:
    conditions: List[SignalSet]
    faults: Optional[List[SignalSet]] = None
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


# ----------------------------------------------------------------------
# Reading
# ----------------------------------------------------------------------
def _parse_csv_tokens(text: str, path) -> np.ndarray:
    tokens = [t.strip() for t in text.replace(",", "\n").splitlines()]
    tokens = [t for t in tokens if t]
    if not tokens:
        return np.zeros(0, dtype=np.float64)

    # round_trip parsing gives back exactly the doubles written with %.17g
    nan_tokens = sorted({t for t in tokens if t.lower() in NAN_TOKENS})
    column = pd.read_csv(io.StringIO("\n".join(tokens)), header=None, float_precision="round_trip",
                         keep_default_na=False, na_values=nan_tokens).iloc[:, 0]
    if pd.api.types.is_numeric_dtype(column) and not pd.api.types.is_bool_dtype(column):
        return column.to_numpy(dtype=np.float64)

    coerced = pd.to_numeric(pd.Series(tokens, dtype=object), errors="coerce").to_numpy(dtype=np.float64)
    bad = [i for i in np.flatnonzero(~np.isfinite(coerced)) if tokens[i].lower() not in NAN_TOKENS]
    idx = int(bad[0]) if bad else 0
    raise SignalFormatError(f"{path}: non-numeric token '{tokens[idx]}' at index {idx}")


def read_samples(path, signal_format: str) -> np.ndarray:
    """
    Read the complete sample stream of one file. An empty file yields zero samples.

    csv:     UTF-8, one value per line or comma separated values.
    raw_f32: little-endian 32-bit floats without header.
    """
    sample_file = Path(path)
    if not sample_file.is_file():
        raise SignalFormatError(f"Signal file does not exist: {sample_file}")

    try:
        if signal_format == SignalFormats.CSV:
            samples = _parse_csv_tokens(sample_file.read_text(encoding="utf-8"), sample_file)
        elif signal_format == SignalFormats.RAW_F32:
            if sample_file.stat().st_size % 4 != 0:
                raise SignalFormatError(f"{sample_file}: size is not a multiple of 4 bytes")
            samples = np.fromfile(sample_file, dtype="<f4").astype(np.float64)
        else:
            raise UsageError(f"Unsupported signal format: {signal_format}")
    except (OSError, UnicodeDecodeError) as e:
        raise SignalFormatError(f"Cannot read {sample_file}: {e}") from e

    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        raise SignalFormatError(f"{sample_file}: NaN/Inf sample at index {bad[0]}")
    return samples


def window_samples(samples: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    """Start indices 0, hop, 2*hop, ... as long as a complete window fits."""
    if window_len < 1:
        raise UsageError(f"window_len must be >= 1, got {window_len}")
    if not 1 <= hop <= window_len:
        raise UsageError(f"hop must lie in [1, {window_len}], got {hop}")
    if samples.size < window_len:
        raise DataError(f"insufficient samples: {samples.size} < window length {window_len}")

    windows = np.lib.stride_tricks.sliding_window_view(samples, window_len)[::hop]
    return np.array(windows, dtype=np.float64)


def load_signals(path, signal_format: str, window_len: int, hop: int, sample_rate: float = 1.0) -> SignalSet:
    """
    Cut a signal file into all complete windows x[j*hop : j*hop + window_len].

    The trailing partial window is discarded and window order follows file order.
    """
    return window_signal(read_samples(path, signal_format), os.path.basename(str(path)), window_len, hop,
                         sample_rate)


def window_signal(samples: np.ndarray, name: str, window_len: int, hop: int, sample_rate: float) -> SignalSet:
    if window_len < MIN_WINDOW_LEN:
        raise UsageError(f"window_len must be >= {MIN_WINDOW_LEN}, got {window_len}")
    windows = window_samples(samples, window_len, hop)
    tags = tuple(f"{name}:{j * hop}" for j in range(windows.shape[0]))
    log.debug(f"Cut {windows.shape[0]} windows of length {window_len} from {name}")
    return SignalSet(windows, sample_rate, tags)


def list_signal_files(path, signal_format: str) -> List[Path]:
    source = Path(path)
    if source.is_file():
        return [source]
    if not source.is_dir():
        raise SignalFormatError(f"Signal path does not exist: {source}")
    file_type = FileTypeConfig.for_format(signal_format)
    return sorted(p for p in source.iterdir() if p.is_file() and file_type.matches(p))


def load_signal_dir(path, signal_format: str, window_len: int, hop: int, sample_rate: float = 1.0) -> SignalSet:
    """Load a single file or every matching file of a directory (sorted by name) into one set."""
    files = list_signal_files(path, signal_format)
    if not files:
        raise DataError(f"No {signal_format} signal files found in {path}")
    return SignalSet.concatenate([load_signals(f, signal_format, window_len, hop, sample_rate) for f in files])


def save_signals(signal_set: SignalSet, path, signal_format: str):
    """Write the windows of a set back to back into one file."""
    stream = signal_set.data.reshape(-1)
    target = Path(path)
    if signal_format == SignalFormats.CSV:
        np.savetxt(target, stream, fmt="%.17g", encoding="utf-8")
    elif signal_format == SignalFormats.RAW_F32:
        stream.astype("<f4").tofile(target)
    else:
        raise UsageError(f"Unsupported signal format: {signal_format}")
    log.debug(f"Wrote {signal_set.count} windows to {target}")


def split_signal_set(signal_set: SignalSet, n_first: int):
    if not 1 <= n_first < signal_set.count:
        raise UsageError(f"Cannot split {signal_set.count} windows after {n_first}")
    return signal_set.subset(range(n_first)), signal_set.subset(range(n_first, signal_set.count))


# ----------------------------------------------------------------------
# Normalization
# ----------------------------------------------------------------------
def normalize(signal_set: SignalSet, policy: str) -> SignalSet:
    if policy == NormalizePolicies.NONE:
        return signal_set
    if policy != NormalizePolicies.ZSCORE:
        raise UsageError(f"Unknown normalization policy: {policy}")

    data = signal_set.data
    mean = data.mean(axis=1, keepdims=True)
    std = data.std(axis=1, keepdims=True)
    # constant windows map to zeros; their std is rounding noise, not zero
    constant = np.all(data == data[:, :1], axis=1, keepdims=True)
    scaled = (data - mean) / np.where(constant, 1.0, std)
    return SignalSet(np.where(constant, 0.0, scaled), signal_set.sample_rate, signal_set.source_tags)


# ----------------------------------------------------------------------
# Synthetic case study
# ----------------------------------------------------------------------
def _condition_window(rng, cond: ConditionSpec, t: np.ndarray) -> np.ndarray:
    phases = rng.uniform(0.0, 2 * np.pi, size=len(cond.harmonic_amps))
    window = np.zeros_like(t)
    for h, (amp, phase) in enumerate(zip(cond.harmonic_amps, phases)):
        window += amp * np.sin(2 * np.pi * (h + 1) * cond.base_freq * t + phase)
    return window + rng.normal(0.0, cond.noise_std, size=t.size)


def _impulse_train(rng, fault: FaultSpec, t: np.ndarray, sample_rate: float) -> np.ndarray:
    period = 1.0 / fault.impulse_freq
    ring_freq = sample_rate / 8
    offset = rng.uniform(0.0, period)
    # include the burst that started just before the window
    starts = np.arange(offset - period, t[-1] + period, period)
    bursts = np.zeros_like(t)
    for start in starts:
        t_rel = t - start
        active = t_rel >= 0
        bursts[active] += fault.impulse_amp * np.exp(-fault.decay_rate * t_rel[active]) \
            * np.sin(2 * np.pi * ring_freq * t_rel[active])
    return bursts


def synth_dataset(spec: SynthSpec) -> SynthResult:
    """
    Generate `per_condition` windows for every operating condition and, if a fault is configured,
    the same number of faulty windows per condition. Deterministic for a given seed (PCG64).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.window_len) / spec.sample_rate

    condition_sets = []
    labels = []
    for c, cond in enumerate(spec.conditions):
        windows = np.stack([_condition_window(rng, cond, t) for _ in range(spec.per_condition)])
        tags = tuple(f"synth:condition{c}:{j}" for j in range(spec.per_condition))
        condition_sets.append(SignalSet(windows, spec.sample_rate, tags))
        labels.extend([c] * spec.per_condition)

    fault_sets = None
    if spec.fault is not None:
        fault_sets = []
        for c, cond in enumerate(spec.conditions):
            windows = np.stack([_condition_window(rng, cond, t) + _impulse_train(rng, spec.fault, t, spec.sample_rate)
                                for _ in range(spec.per_condition)])
            tags = tuple(f"synth:fault{c}:{j}" for j in range(spec.per_condition))
            fault_sets.append(SignalSet(windows, spec.sample_rate, tags))

    log.info(f"Synthesized {len(spec.conditions)} conditions x {spec.per_condition} windows"
             f"{' plus faults' if fault_sets else ''} (seed {spec.seed})")
    return SynthResult(condition_sets, fault_sets, np.asarray(labels, dtype=int))
