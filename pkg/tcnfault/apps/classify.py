import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence

import numpy as np
import pandas as pd

from tcnfault.apps.base import BaseTcnApp, expand_inputs, load_prepared, model_signal_settings, write_text
from tcnfault.config import RecordFormats
from tcnfault.core import UsageError
from tcnfault.functions.model_file import TcnModel, load_model
from tcnfault.functions.scoring import FaultAlarm, Verdict, classify_set

log = logging.getLogger("tcnfault")


def record_columns(k: int) -> List[str]:
    """Fixed verdict record schema."""
    return ["index", "source"] + [f"p_{c}" for c in range(k)] + ["outcome", "cluster", "alarm"]


def _classify_file(model: TcnModel, path, signal_cfg: dict):
    signal_set = load_prepared(path, model, signal_cfg)
    if signal_set is None:
        return [], []
    verdicts = classify_set(model.encoder, model.clusters, model.stats, signal_set)
    return list(signal_set.source_tags), verdicts


def cmd_classify(model: TcnModel, inputs: Sequence, signal_cfg: dict, alarm_cfg: dict, jobs: int = 1) -> pd.DataFrame:
    """
    One verdict record per window over all inputs in the given order.

    Files are scored in parallel when `jobs` > 1; the records and the alarm still follow input order.
    """
    if jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {jobs}")
    files = expand_inputs(inputs, signal_cfg["format"])

    if jobs == 1:
        scored = [_classify_file(model, f, signal_cfg) for f in files]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            scored = list(executor.map(lambda f: _classify_file(model, f, signal_cfg), files))

    monitor = FaultAlarm(int(alarm_cfg["window_n"]), float(alarm_cfg["fault_fraction"]))
    rows = []
    for tags, verdicts in scored:
        for tag, verdict in zip(tags, verdicts):
            rows.append(_record(len(rows), tag, verdict, monitor.update(verdict) is not None))

    faults = sum(row["outcome"] == "fault" for row in rows)
    log.info(f"Classified {len(rows)} windows from {len(files)} files: {faults} faults")
    frame = pd.DataFrame(rows, columns=record_columns(model.k))
    frame["cluster"] = frame["cluster"].astype("Int64")
    return frame


def _record(index: int, tag, verdict: Verdict, alarm: bool) -> dict:
    row = {"index": index, "source": tag}
    row.update({f"p_{c}": float(p) for c, p in enumerate(verdict.probs)})
    row.update({"outcome": verdict.outcome.value, "cluster": verdict.cluster, "alarm": alarm})
    return row


def format_records(frame: pd.DataFrame, record_format: str) -> str:
    if record_format == RecordFormats.CSV:
        return frame.to_csv(index=False)
    if record_format == RecordFormats.JSONL:
        lines = []
        for row in frame.to_dict(orient="records"):
            row = {key: _plain(value) for key, value in row.items()}
            lines.append(json.dumps(row))
        return "".join(line + "\n" for line in lines)
    raise UsageError(f"Unknown record format: {record_format}")


def _plain(value):
    if value is pd.NA:
        return None
    if isinstance(value, np.generic):
        return value.item()
    return value


class ClassifyApp(BaseTcnApp):
    PROG = "tcn-classify"
    DESCRIPTION = "Score signal windows against a trained model and flag faults."

    def init_args(self):
        self.init_args_signal()
        self.init_args_model()
        self.init_args_alarm()
        self.init_args_records()
        self.parser.add_argument("inputs", nargs="+", help="Signal files or directories, scored in this order")
        self.parser.add_argument("--jobs", type=int, default=1, help="Files scored in parallel")

    def execute(self) -> int:
        model = load_model(self.args.model)
        frame = cmd_classify(model, self.args.inputs, model_signal_settings(self, model), self.alarm_settings(),
                             self.args.jobs)
        write_text(format_records(frame, self.args.records), self.args.output)
        return 0


def main():
    sys.exit(ClassifyApp().run())


if __name__ == "__main__":
    main()
