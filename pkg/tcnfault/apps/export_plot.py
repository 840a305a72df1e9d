import logging
import sys
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from tcnfault.apps.base import BaseTcnApp, expand_inputs, load_prepared, model_signal_settings, write_text
from tcnfault.core import SignalSet, UsageError
from tcnfault.functions.autoencoder import encode_set, reconstruct
from tcnfault.functions.model_file import TcnModel, load_model
from tcnfault.functions.scoring import membership_matrix

log = logging.getLogger("tcnfault")

PLOT_COLUMNS = ["signal", "source", "cluster", "probability", "threshold", "failure"]
RECONSTRUCTION_COLUMNS = ["signal", "source", "sample", "original", "reconstruction"]


def load_inputs(model: TcnModel, inputs: Sequence, signal_cfg: dict) -> Optional[SignalSet]:
    sets = [s for s in (load_prepared(f, model, signal_cfg) for f in expand_inputs(inputs, signal_cfg["format"]))
            if s is not None]
    return SignalSet.concatenate(sets) if sets else None


def cmd_export_plot(model: TcnModel, signal_set: SignalSet) -> pd.DataFrame:
    """
    Long table with one row per signal and cluster: the membership probability next to the
    cluster's threshold and failure levels, ready for a scatter plot per cluster.
    """
    probs = membership_matrix(encode_set(model.encoder, signal_set), model.clusters.centroids, model.stats.bandwidth)
    n_signals, k = probs.shape
    frame = pd.DataFrame({
        "signal": np.repeat(np.arange(n_signals), k),
        "source": np.repeat(np.asarray(signal_set.source_tags, dtype=object), k),
        "cluster": np.tile(np.arange(k), n_signals),
        "probability": probs.reshape(-1),
        "threshold": np.tile(model.stats.threshold, n_signals),
        "failure": np.tile(model.stats.failure, n_signals),
    }, columns=PLOT_COLUMNS)
    log.info(f"Exported {n_signals} signals x {k} clusters")
    return frame


def cmd_export_reconstructions(model: TcnModel, signal_set: SignalSet, count: int) -> pd.DataFrame:
    """Original and reconstructed samples of the first `count` signals."""
    if count < 1:
        raise UsageError(f"Reconstruction count must be >= 1, got {count}")
    head = signal_set.subset(range(min(count, signal_set.count)))
    rebuilt = reconstruct(model.encoder, head)
    length = head.window_len
    return pd.DataFrame({
        "signal": np.repeat(np.arange(head.count), length),
        "source": np.repeat(np.asarray(head.source_tags, dtype=object), length),
        "sample": np.tile(np.arange(length), head.count),
        "original": head.data.reshape(-1),
        "reconstruction": rebuilt.data.reshape(-1),
    }, columns=RECONSTRUCTION_COLUMNS)


class ExportPlotApp(BaseTcnApp):
    PROG = "tcn-export-plot"
    DESCRIPTION = "Export per-cluster membership probabilities with threshold and failure levels as CSV."

    def init_args(self):
        self.init_args_signal()
        self.init_args_model()
        self.parser.add_argument("inputs", nargs="+", help="Signal files or directories")
        self.parser.add_argument("--output", default=None, help="CSV file, stdout when omitted")
        self.parser.add_argument("--reconstructions", default=None,
                                 help="Also write original vs. reconstruction samples to this CSV")
        self.parser.add_argument("--reconstruction-count", type=int, default=3,
                                 help="Signals included in the reconstruction table")

    def execute(self) -> int:
        model = load_model(self.args.model)
        signal_set = load_inputs(model, self.args.inputs, model_signal_settings(self, model))
        if signal_set is None:
            log.warning("No windows in the given inputs")
            write_text(pd.DataFrame(columns=PLOT_COLUMNS).to_csv(index=False), self.args.output)
            return 0

        write_text(cmd_export_plot(model, signal_set).to_csv(index=False), self.args.output)
        if self.args.reconstructions is not None:
            frame = cmd_export_reconstructions(model, signal_set, self.args.reconstruction_count)
            frame.to_csv(self.args.reconstructions, index=False)
            log.info(f"Wrote {self.args.reconstructions}")
        return 0


def main():
    sys.exit(ExportPlotApp().run())


if __name__ == "__main__":
    main()
