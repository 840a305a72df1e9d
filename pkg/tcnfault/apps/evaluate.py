import logging
import sys
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import pandas as pd

from tcnfault.apps.base import BaseTcnApp, model_signal_settings, write_text
from tcnfault.core import DataError, UsageError
from tcnfault.functions.model_file import TcnModel, load_model
from tcnfault.functions.scoring import classify_set
from tcnfault.functions.signal_io import load_signal_dir

log = logging.getLogger("tcnfault")


@dataclass(frozen=True)
class DirCounts:
    path: str
    total: int
    flagged: int  # signals classified as Fault
    cluster_counts: List[int] = field(default_factory=list)  # members per cluster

    @property
    def passed(self) -> int:
        return self.total - self.flagged


@dataclass(frozen=True)
class EvalReport:
    """
    Pristine signals count as accepted unless classified as Fault, fault signals count as
    detected iff classified as Fault.
    """
    pristine: List[DirCounts]
    fault: List[DirCounts]

    @property
    def pristine_total(self) -> int:
        return sum(d.total for d in self.pristine)

    @property
    def pristine_accepted(self) -> int:
        return sum(d.passed for d in self.pristine)

    @property
    def pristine_rejected(self) -> int:
        return sum(d.flagged for d in self.pristine)

    @property
    def fault_total(self) -> int:
        return sum(d.total for d in self.fault)

    @property
    def fault_detected(self) -> int:
        return sum(d.flagged for d in self.fault)

    @property
    def fault_missed(self) -> int:
        return sum(d.passed for d in self.fault)

    @property
    def misclassified(self) -> int:
        return self.pristine_rejected + self.fault_missed

    def confusion(self) -> pd.DataFrame:
        return pd.DataFrame([[self.pristine_accepted, self.pristine_rejected],
                             [self.fault_missed, self.fault_detected]],
                            index=pd.Index(["pristine", "fault"], name="actual"),
                            columns=pd.Index(["member", "fault"], name="predicted"))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for kind, dirs in (("pristine", self.pristine), ("fault", self.fault)):
            for d in dirs:
                row = {"kind": kind, "path": d.path, "total": d.total,
                       "accepted": d.passed if kind == "pristine" else 0,
                       "rejected": d.flagged if kind == "pristine" else 0,
                       "detected": d.flagged if kind == "fault" else 0,
                       "missed": d.passed if kind == "fault" else 0}
                row.update({f"cluster_{c}": n for c, n in enumerate(d.cluster_counts)})
                rows.append(row)
        return pd.DataFrame(rows)

    def to_text(self) -> str:
        lines = [self.to_frame().to_string(index=False), "", self.confusion().to_string(), ""]
        if self.pristine_total:
            lines.append(f"pristine accepted: {self.pristine_accepted}/{self.pristine_total}")
        if self.fault_total:
            lines.append(f"faults detected:   {self.fault_detected}/{self.fault_total}")
        lines.append(f"misclassified:     {self.misclassified}/{self.pristine_total + self.fault_total}")
        return "\n".join(lines) + "\n"


def _score_dir(model: TcnModel, path, signal_cfg: dict) -> DirCounts:
    signal_set = load_signal_dir(path, signal_cfg["format"], int(signal_cfg["window_len"]), int(signal_cfg["hop"]),
                                 float(signal_cfg["sample_rate"]))
    verdicts = classify_set(model.encoder, model.clusters, model.stats, model.prepare(signal_set))
    members = [v.cluster for v in verdicts if not v.is_fault]
    cluster_counts = np.bincount(np.asarray(members, dtype=int), minlength=model.k).tolist()
    counts = DirCounts(str(path), len(verdicts), sum(v.is_fault for v in verdicts), cluster_counts)
    log.info(f"{path}: {counts.total} signals, {counts.flagged} classified as fault, clusters {cluster_counts}")
    return counts


def cmd_evaluate(model: TcnModel, pristine_dirs: Sequence, fault_dirs: Sequence, signal_cfg: dict) -> EvalReport:
    """Score labeled validation directories; labels only enter the report, never the model."""
    if not pristine_dirs and not fault_dirs:
        raise UsageError("Give at least one --pristine or --fault directory")
    report = EvalReport([_score_dir(model, p, signal_cfg) for p in pristine_dirs],
                        [_score_dir(model, p, signal_cfg) for p in fault_dirs])
    for d in report.pristine + report.fault:
        if d.total == 0:
            raise DataError(f"No signals in {d.path}")
    log.info(f"Evaluation: {report.misclassified} of {report.pristine_total + report.fault_total} misclassified")
    return report


class EvaluateApp(BaseTcnApp):
    PROG = "tcn-evaluate"
    DESCRIPTION = "Accept/reject accounting of a trained model on labeled validation directories."

    def init_args(self):
        self.init_args_signal()
        self.init_args_model()
        self.parser.add_argument("--pristine", action="append", default=[],
                                 help="Directory of pristine validation signals, repeatable")
        self.parser.add_argument("--fault", action="append", default=[],
                                 help="Directory of fault signals, repeatable")
        self.parser.add_argument("--output", default=None, help="Also write the per-directory table as CSV")

    def execute(self) -> int:
        model = load_model(self.args.model)
        report = cmd_evaluate(model, self.args.pristine, self.args.fault, model_signal_settings(self, model))
        write_text(report.to_text())
        if self.args.output is not None:
            report.to_frame().to_csv(self.args.output, index=False)
            log.info(f"Wrote {self.args.output}")
        return 0


def main():
    sys.exit(EvaluateApp().run())


if __name__ == "__main__":
    main()
