import logging
import sys
from typing import Optional, Sequence

import yaml

from tcnfault.apps.base import BaseTcnApp, write_text
from tcnfault.core import SignalSet, Stages, StageError, UsageError
from tcnfault.functions.model_file import TcnModel, save_model
from tcnfault.functions.pipeline import train_tcn
from tcnfault.functions.signal_io import load_signal_dir, normalize

log = logging.getLogger("tcnfault")


def load_condition_sets(data_paths: Sequence, signal_cfg: dict) -> Sequence[SignalSet]:
    """One pristine set per --data path (file or directory), windowed and normalized."""
    sets = []
    for path in data_paths:
        signal_set = load_signal_dir(path, signal_cfg["format"], int(signal_cfg["window_len"]),
                                     int(signal_cfg["hop"]), float(signal_cfg["sample_rate"]))
        log.info(f"{path}: {signal_set.count} windows")
        sets.append(normalize(signal_set, signal_cfg["normalize"]))
    return sets


def cmd_train(data_paths: Sequence, model_path, settings: dict, k: Optional[int] = None) -> TcnModel:
    """
    Train on one unlabeled pristine input per operating condition and write the model file.

    Args:
        data_paths: One file or directory per operating condition. The grouping only picks the
                    default K and feeds the purity report.
        model_path: Target model file.
        settings: Merged settings, command-line overrides already applied.
        k: Number of clusters, defaults to len(data_paths).
    """
    if not data_paths:
        raise UsageError("At least one --data path is required")
    try:
        condition_sets = load_condition_sets(data_paths, settings["signal"])
    except UsageError:
        raise
    except ValueError as e:
        raise StageError(Stages.LOAD, e) from e

    result = train_tcn(condition_sets, k, settings)
    try:
        save_model(result.model, model_path)
    except OSError as e:
        raise StageError(Stages.SAVE, e) from e
    return result.model


class TrainApp(BaseTcnApp):
    PROG = "tcn-train"
    DESCRIPTION = "Unsupervised training on pristine signals: autoencoder, k-means, refinement, calibration."

    def init_args(self):
        self.init_args_signal()
        self.init_args_model("Model file to write")
        self.parser.add_argument("--data", action="append", required=True,
                                 help="Pristine signals of one operating condition (file or directory), repeatable")
        self.parser.add_argument("--k", type=int, default=None, help="Clusters, defaults to the number of --data")

        group = self.parser.add_argument_group("training")
        group.add_argument("--epochs1", type=int, default=None, help="Autoencoder epochs")
        group.add_argument("--epochs3", type=int, default=None, help="Refinement epochs")
        group.add_argument("--lr", type=float, default=None, help="Autoencoder learning rate")
        group.add_argument("--seed", type=int, default=None, help="Master seed")
        group.add_argument("--threshold-quantile", type=float, default=None)
        group.add_argument("--failure-ratio", type=float, default=None)

    def update_settings(self, settings: dict) -> dict:
        args = self.args
        settings["signal"] = self.signal_settings(settings["signal"])
        overrides = (
            ("step1", "epochs", args.epochs1),
            ("step1", "lr", args.lr),
            ("step3", "epochs", args.epochs3),
            ("scoring", "threshold_quantile", args.threshold_quantile),
            ("scoring", "failure_ratio", args.failure_ratio),
        )
        for section, key, value in overrides:
            if value is not None:
                settings[section][key] = value
        if args.seed is not None:
            settings["seed"] = args.seed
        return settings

    def execute(self) -> int:
        model = cmd_train(self.args.data, self.args.model, self.settings, self.args.k)
        write_text(yaml.safe_dump({"model": str(self.args.model), "k": model.k, **model.summary},
                                  sort_keys=False))
        return 0


def main():
    sys.exit(TrainApp().run())


if __name__ == "__main__":
    main()
