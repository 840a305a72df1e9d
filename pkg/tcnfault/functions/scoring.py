import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Iterable, List, Optional

import numpy as np

from tcnfault.core import Signal, SignalSet, DataError, UsageError
from tcnfault.functions.autoencoder import EncoderModel, encode, encode_set
from tcnfault.functions.clustering import ClusterModel

log = logging.getLogger("tcnfault")

MIN_BANDWIDTH = 1e-12
# smallest reported probability, keeps p strictly positive after exp underflow
MIN_PROBABILITY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class ScoringConfig:
    threshold_quantile: float = 0.10
    failure_ratio: float = 0.60

    def __post_init__(self):
        if not 0 < self.threshold_quantile < 1:
            raise UsageError(f"threshold_quantile must lie in (0, 1), got {self.threshold_quantile}")
        if not 0 < self.failure_ratio <= 1:
            raise UsageError(f"failure_ratio must lie in (0, 1], got {self.failure_ratio}")

    @classmethod
    def from_dict(cls, data: dict) -> "ScoringConfig":
        return cls(float(data["threshold_quantile"]), float(data["failure_ratio"]))

    def to_dict(self) -> dict:
        return {"threshold_quantile": self.threshold_quantile, "failure_ratio": self.failure_ratio}


@dataclass(frozen=True)
class ClusterStats:
    bandwidth: np.ndarray  # sigma_k
    threshold: np.ndarray  # tau_k
    failure: np.ndarray  # phi_k = failure_ratio * tau_k
    member_counts: np.ndarray

    @property
    def k(self) -> int:
        return self.bandwidth.size


class Outcome(Enum):
    MEMBER = "member"
    FAULT = "fault"


@dataclass(frozen=True)
class Verdict:
    probs: np.ndarray
    outcome: Outcome
    cluster: Optional[int] = None  # set for members only

    @property
    def is_fault(self) -> bool:
        return self.outcome is Outcome.FAULT


@dataclass(frozen=True)
class AlarmEvent:
    index: int
    fault_count: int
    fraction: float


# ----------------------------------------------------------------------
# Probabilities
# ----------------------------------------------------------------------
def membership_probability(f, centroid, bandwidth: float) -> float:
    """p = exp(-||f - mu||^2 / (2 sigma^2)); not normalized across clusters."""
    if not bandwidth > 0:
        raise UsageError(f"Bandwidth must be positive, got {bandwidth}")
    diff = np.asarray(f, dtype=np.float64) - np.asarray(centroid, dtype=np.float64)
    return float(max(np.exp(-np.dot(diff, diff) / (2.0 * bandwidth ** 2)), MIN_PROBABILITY))


def membership_matrix(features: np.ndarray, centroids: np.ndarray, bandwidth: np.ndarray) -> np.ndarray:
    """(I, K) probabilities for a feature matrix."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    centroids = np.asarray(centroids, dtype=np.float64)
    # contiguous last-axis sum keeps each row bit-identical whatever the batch size
    dist_sq = np.square(features[:, None, :] - centroids[None, :, :]).sum(axis=-1)
    return np.maximum(np.exp(-dist_sq / (2.0 * np.asarray(bandwidth) ** 2)), MIN_PROBABILITY)


def calibrate(model: EncoderModel, clusters: ClusterModel, training: SignalSet,
              cfg: ScoringConfig = ScoringConfig()) -> ClusterStats:
    """
    Per cluster: sigma_k is the RMS member distance to the centroid, tau_k the ascending-sorted
    member probability at index floor(q * It_k), phi_k = failure_ratio * tau_k.
    """
    return calibrate_features(encode_set(model, training), clusters, cfg)


def calibrate_features(features: np.ndarray, clusters: ClusterModel, cfg: ScoringConfig) -> ClusterStats:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != clusters.assignments.size:
        raise DataError(f"{features.shape[0]} training features but {clusters.assignments.size} assignments")

    counts = clusters.member_counts
    bandwidth = np.zeros(clusters.k)
    threshold = np.zeros(clusters.k)
    for k in range(clusters.k):
        if counts[k] == 0:
            raise DataError(f"Cluster {k} has no training members")
        members = features[clusters.assignments == k]
        diff = members - np.asarray(clusters.centroids[k], dtype=np.float64)
        sigma = float(np.sqrt(np.mean(np.einsum("id,id->i", diff, diff))))
        if sigma < MIN_BANDWIDTH:
            log.warning(f"Cluster {k}: bandwidth {sigma:.3g} clamped to {MIN_BANDWIDTH}")
            sigma = MIN_BANDWIDTH
        bandwidth[k] = sigma

        bandwidth_k = np.ones(clusters.k)
        bandwidth_k[k] = sigma
        probs = np.sort(membership_matrix(members, clusters.centroids, bandwidth_k)[:, k])
        threshold[k] = probs[int(np.floor(cfg.threshold_quantile * counts[k]))]

    failure = cfg.failure_ratio * threshold
    for k in range(clusters.k):
        log.info(f"Cluster {k}: members {counts[k]}, sigma {bandwidth[k]:.6g}, "
                 f"threshold {threshold[k]:.6g}, failure {failure[k]:.6g}")
    return ClusterStats(bandwidth, threshold, failure, counts.copy())


# ----------------------------------------------------------------------
# Classification
# ----------------------------------------------------------------------
def decide(probs: np.ndarray, stats: ClusterStats) -> Verdict:
    """Fault iff every p_k < phi_k; otherwise member of argmax p (lowest index on ties)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size != stats.k:
        raise DataError(f"Got {probs.size} probabilities for {stats.k} clusters")
    if np.all(probs < stats.failure):
        return Verdict(probs, Outcome.FAULT)
    return Verdict(probs, Outcome.MEMBER, int(np.argmax(probs)))


def classify(model: EncoderModel, clusters: ClusterModel, stats: ClusterStats, signal: Signal) -> Verdict:
    features, _ = encode(model, signal)
    probs = membership_matrix(features, clusters.centroids, stats.bandwidth)[0]
    return decide(probs, stats)


def classify_set(model: EncoderModel, clusters: ClusterModel, stats: ClusterStats,
                 signal_set: SignalSet) -> List[Verdict]:
    probs = membership_matrix(encode_set(model, signal_set), clusters.centroids, stats.bandwidth)
    return [decide(row, stats) for row in probs]


# ----------------------------------------------------------------------
# Alarms
# ----------------------------------------------------------------------
class FaultAlarm:
    """Sliding window over the last `window_n` verdicts with re-arming once the fraction drops."""

    def __init__(self, window_n: int = 10, fault_fraction: float = 0.5):
        if window_n < 1:
            raise UsageError("window_n must be >= 1")
        if not 0 < fault_fraction <= 1:
            raise UsageError("fault_fraction must lie in (0, 1]")

        self.window_n = int(window_n)
        self.fault_fraction = float(fault_fraction)
        self._window: Deque[bool] = deque(maxlen=self.window_n)
        self._armed = True
        self._index = -1

    @property
    def fraction(self) -> float:
        return sum(self._window) / self.window_n

    def update(self, verdict: Verdict) -> Optional[AlarmEvent]:
        self._index += 1
        self._window.append(verdict.is_fault)
        fraction = self.fraction

        if fraction >= self.fault_fraction:
            if self._armed:
                self._armed = False
                log.warning(f"Fault alarm at verdict {self._index}: {sum(self._window)} faults "
                            f"in the last {self.window_n}")
                return AlarmEvent(self._index, sum(self._window), fraction)
        else:
            self._armed = True
        return None


def alarm(verdicts: Iterable[Verdict], window_n: int = 10, fault_fraction: float = 0.5) -> List[AlarmEvent]:
    monitor = FaultAlarm(window_n, fault_fraction)
    events = []
    for verdict in verdicts:
        event = monitor.update(verdict)
        if event is not None:
            events.append(event)
    return events
