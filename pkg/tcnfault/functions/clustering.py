import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence

import numpy as np

from tcnfault.core import SignalSet, DataError, UsageError, TcnError, TrainingDivergedError, Stages
from tcnfault.functions import autograd as ag
from tcnfault.functions.autograd import OptimizerState
from tcnfault.functions.autoencoder import EncoderModel, TRAIN_DTYPE, encode_graph, as_input

log = logging.getLogger("tcnfault")

CENTROIDS_PARAM = "centroids"


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray  # (K, feature_dim)
    assignments: np.ndarray  # (I,) cluster index per training signal

    def __post_init__(self):
        assignments = np.asarray(self.assignments, dtype=np.int32)
        if assignments.size and (assignments.min() < 0 or assignments.max() >= self.k):
            raise DataError(f"Assignments must lie in [0, {self.k})")
        object.__setattr__(self, "assignments", assignments)
        if self.centroids.shape[0] != self.k:
            raise DataError(f"Expected {self.k} centroids, got {self.centroids.shape[0]}")

    @property
    def member_counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


@dataclass(frozen=True)
class KMeansResult:
    model: ClusterModel
    inertia: float  # J of the best restart
    history: List[float]  # J per Lloyd iteration of the best restart
    restart: int


def _squared_distances(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = features[:, None, :] - centroids[None, :, :]
    return np.einsum("ikd,ikd->ik", diff, diff)


def _objective(features: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = features - centroids[labels]
    return float(np.einsum("id,id->", diff, diff))


def _plusplus_init(features: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = features.shape[0]
    chosen = [int(rng.integers(0, n))]
    for _ in range(1, k):
        dist_sq = _squared_distances(features, features[chosen]).min(axis=1)
        total = dist_sq.sum()
        if total > 0:
            chosen.append(int(rng.choice(n, p=dist_sq / total)))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            chosen.append(int(rng.choice(remaining)))
    return features[chosen].copy()


def _repair_empty(features: np.ndarray, centroids: np.ndarray, labels: np.ndarray, k: int):
    """Move the point farthest from its centroid into every empty cluster."""
    for cluster in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[cluster] > 0:
            continue
        dist = np.einsum("id,id->i", features - centroids[labels], features - centroids[labels])
        # never take the last member of another cluster
        dist[counts[labels] < 2] = -np.inf
        farthest = int(np.argmax(dist))
        log.warning(f"k-means: cluster {cluster} is empty, reseeding it at signal {farthest}")
        labels[farthest] = cluster
        centroids[cluster] = features[farthest]


def _lloyd(features: np.ndarray, centroids: np.ndarray, k: int, max_iter: int, tol: float):
    labels = None
    history = []
    for _ in range(max_iter):
        new_labels = np.argmin(_squared_distances(features, centroids), axis=1)
        _repair_empty(features, centroids, new_labels, k)
        new_centroids = np.stack([features[new_labels == c].mean(axis=0) for c in range(k)])
        j = _objective(features, new_centroids, new_labels)
        # J is non-increasing per Lloyd iteration up to rounding
        if history and j > history[-1] * (1 + 1e-12) + 1e-12:
            raise TcnError(f"k-means: J increased from {history[-1]:.6g} to {j:.6g} in iteration {len(history)}")
        history.append(j)

        shift = float(np.max(np.abs(new_centroids - centroids)))
        centroids = new_centroids
        if labels is not None and np.array_equal(labels, new_labels):
            labels = new_labels
            break
        labels = new_labels
        if shift <= tol:
            break
    return centroids, labels, history


def kmeans(features: np.ndarray, k: int, seed: int = 0, max_iter: int = 300, tol: float = 0.0,
           restarts: int = 10) -> KMeansResult:
    """
    Lloyd iterations from k-means++ seeds; the restart with the lowest J wins (first on ties).

    J = sum_i ||f_i - mu_{w_i}||^2 with squared Euclidean distances.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise DataError("k-means needs a non-empty (I, D) feature matrix")
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    if k > features.shape[0]:
        raise UsageError(f"k={k} exceeds the number of signals {features.shape[0]}")
    if restarts < 1 or max_iter < 1:
        raise UsageError("restarts and max_iter must be >= 1")

    rng = np.random.default_rng(seed)
    best = None
    for restart in range(restarts):
        centroids, labels, history = _lloyd(features, _plusplus_init(features, k, rng), k, max_iter, tol)
        j = history[-1]
        log.debug(f"k-means restart {restart}: J={j:.6g} after {len(history)} iterations")
        if best is None or j < best.inertia:
            best = KMeansResult(ClusterModel(k, centroids, labels), j, history, restart)

    log.info(f"Step 2: k-means K={k}, J={best.inertia:.6g}, members {best.model.member_counts.tolist()}")
    return best


def cluster_inertia(features: np.ndarray, model: ClusterModel) -> float:
    """CI = sum_k sum_{i in k} ||f_i - mu_k||^2, unnormalized."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != model.assignments.size:
        raise DataError(f"{features.shape[0]} features but {model.assignments.size} assignments")
    return _objective(features, np.asarray(model.centroids, dtype=np.float64), model.assignments)


def cluster_purity(assignments: Sequence[int], labels: Sequence[int]) -> float:
    """Share of signals whose cluster's majority label equals their own label."""
    assignments = np.asarray(assignments, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if assignments.shape != labels.shape or assignments.size == 0:
        raise DataError("Purity needs one label per assigned signal")
    matched = 0
    for cluster in np.unique(assignments):
        matched += np.bincount(labels[assignments == cluster]).max()
    return matched / assignments.size


# ----------------------------------------------------------------------
# Step 3
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Step3Config:
    epochs: int = 50
    lr_encoder: float = 1e-4
    lr_centroids: float = 1e-3
    tol: float = 0.0
    log_every: int = 10

    @classmethod
    def from_dict(cls, data: dict) -> "Step3Config":
        return cls(int(data["epochs"]), float(data["lr_encoder"]), float(data["lr_centroids"]),
                   float(data.get("tol", 0.0)), int(data.get("log_every", 10)))


@dataclass(frozen=True)
class Step3Result:
    model: EncoderModel
    clusters: ClusterModel
    history: List[float]
    initial_inertia: float
    best_inertia: float
    best_epoch: int


def _inertia_graph(model: EncoderModel, params: Dict[str, ag.Tensor], data: SignalSet,
                   assignments: np.ndarray) -> ag.Tensor:
    centroids = params[CENTROIDS_PARAM]
    terms = []
    for window, cluster in zip(data.data, assignments):
        features, _ = encode_graph(model, params, as_input(model, window, TRAIN_DTYPE))
        terms.append(ag.tensor_sum(ag.square(ag.sub(features, ag.take_row(centroids, int(cluster))))))
    return ag.add_n(terms)


def train_step3(model: EncoderModel, data: SignalSet, clusters: ClusterModel,
                config: Step3Config) -> Step3Result:
    """
    Full-batch Adam on CI over the encoder weights and the centroid coordinates with the
    assignments frozen. The decoder is not touched; the lowest-CI parameters are returned.
    """
    if clusters.assignments.size != data.count:
        raise DataError(f"{data.count} signals but {clusters.assignments.size} assignments")
    if config.epochs < 0:
        raise UsageError(f"epochs must be >= 0, got {config.epochs}")

    assignments = clusters.assignments
    encoder_names = [name for name in model.named_parameters() if name.startswith("encoder.")]
    params = {name: model.named_parameters()[name] for name in encoder_names}
    params[CENTROIDS_PARAM] = np.asarray(clusters.centroids, dtype=TRAIN_DTYPE)
    encoder_state = OptimizerState(lr=config.lr_encoder) if config.lr_encoder > 0 else None
    centroid_state = OptimizerState(lr=config.lr_centroids) if config.lr_centroids > 0 else None

    def forward(values):
        tensors = {name: ag.parameter(value, name=name) for name, value in values.items()}
        return tensors, _inertia_graph(model, tensors, data, assignments)

    tensors, ci = forward(params)
    initial_inertia = float(ci.data)
    log.info(f"Step 3: initial CI {initial_inertia:.6g}")
    best_inertia, best_epoch, best_params = initial_inertia, 0, params
    history = []
    previous = initial_inertia

    for epoch in range(1, config.epochs + 1):
        ag.backward(ci)
        try:
            if encoder_state is not None:
                updated, encoder_state = ag.optimizer_step({n: params[n] for n in encoder_names},
                                                           {n: tensors[n].grad for n in encoder_names},
                                                           encoder_state)
                params = {**params, **updated}
            if centroid_state is not None:
                updated, centroid_state = ag.optimizer_step({CENTROIDS_PARAM: params[CENTROIDS_PARAM]},
                                                            {CENTROIDS_PARAM: tensors[CENTROIDS_PARAM].grad},
                                                            centroid_state)
                params = {**params, **updated}
        except TrainingDivergedError as e:
            raise TrainingDivergedError(f"{e} in epoch {epoch}", stage=Stages.STEP3, epoch=epoch) from e

        tensors, ci = forward(params)
        inertia = float(ci.data)
        if not np.isfinite(inertia):
            raise TrainingDivergedError(f"Step 3 CI became non-finite in epoch {epoch}",
                                        stage=Stages.STEP3, epoch=epoch)
        history.append(inertia)
        if inertia < best_inertia:
            best_inertia, best_epoch, best_params = inertia, epoch, params

        if epoch % config.log_every == 0 or epoch == config.epochs:
            log.info(f"Step 3 epoch {epoch}/{config.epochs}: CI {inertia:.6g} (best {best_inertia:.6g})")
        else:
            log.debug(f"Step 3 epoch {epoch}/{config.epochs}: CI {inertia:.6g}")

        if config.tol > 0 and abs(previous - inertia) <= config.tol * max(abs(previous), 1e-30):
            log.info(f"Step 3 converged after {epoch} epochs")
            break
        previous = inertia

    if best_epoch == 0:
        return Step3Result(model, clusters, history, initial_inertia, best_inertia, 0)

    merged = {**model.named_parameters(), **{n: best_params[n] for n in encoder_names}}
    refined_model = model.with_parameters(merged, step3_epochs=len(history), step3_ci=float(best_inertia))
    refined_clusters = replace(clusters, centroids=best_params[CENTROIDS_PARAM])
    log.info(f"Step 3 finished: best CI {best_inertia:.6g} at epoch {best_epoch}")
    return Step3Result(refined_model, refined_clusters, history, initial_inertia, best_inertia, best_epoch)
