import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tcnfault.config import stage_seed, SEED_OFFSET_STEP1, SEED_OFFSET_KMEANS
from tcnfault.core import SignalSet, Stages, StageError, TcnError, UsageError
from tcnfault.functions.autoencoder import ArchConfig, Step1Config, Step1Result, train_step1, encode_set
from tcnfault.functions.clustering import Step3Config, Step3Result, KMeansResult, kmeans, train_step3, \
    cluster_purity
from tcnfault.functions.model_file import TcnModel, SignalConfig
from tcnfault.functions.scoring import ScoringConfig, calibrate_features

log = logging.getLogger("tcnfault")


@dataclass(frozen=True)
class TrainResult:
    model: TcnModel
    step1: Step1Result
    step2: KMeansResult
    step3: Step3Result
    purity: Optional[float] = None


def _run_stage(stage: str, fn, *args, **kwargs):
    log.info(f"--- {stage} ---")
    try:
        return fn(*args, **kwargs)
    except TcnError as e:
        if getattr(e, "stage", None) is None and not isinstance(e, StageError):
            raise StageError(stage, e) from e
        raise
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
        raise StageError(stage, e) from e


def train_tcn(condition_sets: Sequence[SignalSet], k: Optional[int], settings: dict) -> TrainResult:
    """
    Step 1 -> Step 2 -> Step 3 -> calibration on unlabeled pristine signals.

    The grouping of `condition_sets` is only used to pick K (one cluster per condition) and for
    the post-hoc purity figure; the training stages see one pooled, unlabeled set.
    """
    if not condition_sets:
        raise UsageError("Training needs at least one set of pristine signals")
    data = SignalSet.concatenate(list(condition_sets))
    labels = np.concatenate([np.full(s.count, c) for c, s in enumerate(condition_sets)])

    k = len(condition_sets) if k is None else int(k)
    if k != len(condition_sets):
        log.warning(f"K={k} differs from the number of operating-condition inputs ({len(condition_sets)})")
    if k < 1 or k > data.count:
        raise UsageError(f"K={k} must lie in [1, {data.count}] (number of training signals)")

    seed = int(settings["seed"])
    signal_cfg = settings["signal"]
    arch = ArchConfig.from_dict(data.window_len, settings["architecture"])
    if arch.feature_dim < k:
        raise UsageError(f"feature_dim {arch.feature_dim} is smaller than K={k}")
    step1_cfg = Step1Config.from_dict(settings["step1"], stage_seed(seed, SEED_OFFSET_STEP1))
    kmeans_cfg = settings["kmeans"]
    step3_cfg = Step3Config.from_dict(settings["step3"])
    scoring_cfg = ScoringConfig.from_dict(settings["scoring"])

    log.info(f"Training on {data.count} unlabeled signals of length {data.window_len}, K={k}, seed {seed}")

    step1 = _run_stage(Stages.STEP1, train_step1, arch, step1_cfg, data)
    features = _run_stage(Stages.STEP2, encode_set, step1.model, data)
    step2 = _run_stage(Stages.STEP2, kmeans, features, k, seed=stage_seed(seed, SEED_OFFSET_KMEANS),
                       max_iter=int(kmeans_cfg["max_iter"]), tol=float(kmeans_cfg["tol"]),
                       restarts=int(kmeans_cfg["restarts"]))
    step3 = _run_stage(Stages.STEP3, train_step3, step1.model, data, step2.model, step3_cfg)
    refined_features = _run_stage(Stages.CALIBRATE, encode_set, step3.model, data)
    stats = _run_stage(Stages.CALIBRATE, calibrate_features, refined_features, step3.clusters, scoring_cfg)

    purity = None
    if len(condition_sets) > 1:
        purity = float(cluster_purity(step3.clusters.assignments, labels))
        log.info(f"Cluster purity against input grouping (not used for training): {purity:.4f}")

    summary = {
        "step1_initial_loss": float(step1.initial_loss),
        "step1_best_loss": float(step1.best_loss),
        "step1_best_epoch": int(step1.best_epoch),
        "kmeans_j": float(step2.inertia),
        "step3_initial_ci": float(step3.initial_inertia),
        "step3_best_ci": float(step3.best_inertia),
        "step3_best_epoch": int(step3.best_epoch),
        "purity": purity,
    }
    model = TcnModel(step3.model, step3.clusters, stats, scoring_cfg,
                     SignalConfig(data.window_len, int(signal_cfg["hop"]), str(signal_cfg["normalize"]),
                                  float(data.sample_rate)),
                     seed, summary)
    return TrainResult(model, step1, step2, step3, purity)
