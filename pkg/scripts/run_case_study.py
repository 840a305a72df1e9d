#!/usr/bin/env python3
"""
Synthetic analogue of the three-speed bearing study: train on 100 pristine windows per condition,
validate on 20 held-out pristine windows per condition and on the same number of faulty ones,
then check the acceptance numbers. Exits with 1 if any check fails.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from tcnfault.config import load_settings
from tcnfault.core import SignalSet
from tcnfault.functions.autoencoder import encode_set
from tcnfault.functions.model_file import save_model, dumps
from tcnfault.functions.pipeline import train_tcn
from tcnfault.functions.scoring import membership_matrix, classify_set
from tcnfault.functions.signal_io import SynthSpec, synth_dataset, split_signal_set, normalize
from tcnfault.log import level_for, setup_logging

log = setup_logging("tcnfault")


def run(settings: dict, model_path=None, check_determinism=False) -> pd.DataFrame:
    synthetic = settings["synthetic"]
    n_train = int(synthetic["train_per_condition"])
    result = synth_dataset(SynthSpec.from_dict(synthetic))
    policy = settings["signal"]["normalize"]

    splits = [split_signal_set(normalize(s, policy), n_train) for s in result.conditions]
    train_sets = [train for train, _ in splits]
    pristine = SignalSet.concatenate([validation for _, validation in splits])
    faults = SignalSet.concatenate([normalize(f, policy).subset(range(v.count))
                                    for f, (_, v) in zip(result.faults, splits)])

    trained = train_tcn(train_sets, None, settings)
    model = trained.model
    if model_path is not None:
        save_model(model, model_path)

    checks = []

    def check(name, value, target, passed):
        checks.append({"check": name, "value": value, "target": target, "passed": bool(passed)})

    step1 = trained.step1
    ratio = step1.best_loss / step1.initial_loss
    check("step1 loss ratio", round(ratio, 4), "<= 0.2", ratio <= 0.2)
    check("training purity", round(trained.purity, 4), ">= 0.99", trained.purity >= 0.99)

    step3 = trained.step3
    best_so_far = np.minimum.accumulate([step3.initial_inertia] + step3.history)
    check("step3 best CI", f"{step3.best_inertia:.6g} / {step3.initial_inertia:.6g}", "<= initial",
          step3.best_inertia <= step3.initial_inertia and np.all(np.diff(best_so_far) <= 0))
    check("step3 assignments frozen", "", "unchanged",
          np.array_equal(step3.clusters.assignments, trained.step2.model.assignments))

    training = SignalSet.concatenate(train_sets)
    probs = membership_matrix(encode_set(model.encoder, training), model.clusters.centroids, model.stats.bandwidth)
    calibrated = True
    for k in range(model.k):
        members = probs[model.clusters.assignments == k, k]
        calibrated &= np.sum(members >= model.stats.threshold[k]) >= math.ceil(0.9 * members.size)
    check("calibration coverage", "", ">= 90% of members above threshold", calibrated)
    check("failure = 0.6 * threshold", "", "exact",
          np.array_equal(model.stats.failure, model.scoring.failure_ratio * model.stats.threshold))

    pristine_verdicts = classify_set(model.encoder, model.clusters, model.stats, pristine)
    accepted = sum(not v.is_fault for v in pristine_verdicts)
    check("validation acceptance", f"{accepted}/{pristine.count}", ">= 80%", accepted >= 0.8 * pristine.count)

    fault_verdicts = classify_set(model.encoder, model.clusters, model.stats, faults)
    detected = sum(v.is_fault for v in fault_verdicts)
    below = all(np.all(v.probs < model.stats.failure.min()) for v in fault_verdicts)
    check("fault detection", f"{detected}/{faults.count}", "100%", detected == faults.count)
    check("fault probabilities below every failure level", "", "all", below)

    if check_determinism:
        again = train_tcn(train_sets, None, settings).model
        check("retrain byte-identical", "", "identical", dumps(again) == dumps(model))

    return pd.DataFrame(checks)


def main():
    parser = argparse.ArgumentParser(
        description="Run the synthetic case study and check the acceptance numbers"
    )
    parser.add_argument("--config", type=Path, default=None, help="YAML settings overriding the defaults")
    parser.add_argument("--model", type=Path, default=None, help="Also write the trained model here")
    parser.add_argument("--determinism", action="store_true", help="Train twice and compare the model bytes")
    parser.add_argument("--report", type=Path, default=None, help="Write the check table as YAML")
    parser.add_argument("-v", "--verbose", action="store_true")

    args = parser.parse_args()
    log.setLevel(level_for(args.verbose))

    table = run(load_settings(args.config), args.model, args.determinism)
    print(table.to_string(index=False))
    if args.report is not None:
        with args.report.open("w", encoding="utf-8") as f:
            yaml.safe_dump(table.to_dict(orient="records"), f, sort_keys=False)

    sys.exit(0 if table["passed"].all() else 1)


if __name__ == "__main__":
    main()
