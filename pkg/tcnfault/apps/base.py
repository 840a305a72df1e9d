import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

from tcnfault.config import ExitCodes, SignalFormats, NormalizePolicies, RecordFormats, load_settings
from tcnfault.core import TcnError, UsageError, DataError, TrainingDivergedError, StageError, SignalSet
from tcnfault.functions.signal_io import list_signal_files, window_signal, normalize, read_samples
from tcnfault.log import level_for, setup_logging, setup_add_logger

log = logging.getLogger("tcnfault")


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, StageError):
        return exit_code_for(error.cause)
    if isinstance(error, TrainingDivergedError):
        return ExitCodes.DIVERGENCE
    if isinstance(error, UsageError):
        return ExitCodes.USAGE
    if isinstance(error, (DataError, OSError, TcnError)):
        return ExitCodes.DATA
    return ExitCodes.USAGE if isinstance(error, ValueError) else ExitCodes.DATA


class BaseTcnApp:
    """
    Shared command-line plumbing for the tcn-* commands.

    Subclasses add their own arguments in `init_args` and do the work in `execute`, which
    returns an exit code. Library errors are turned into exit codes here and nowhere else.
    """

    # -------- override in subclasses --------
    PROG = "tcn"
    DESCRIPTION = ""

    # ---------------------------------------

    def __init__(self):
        self.parser = argparse.ArgumentParser(prog=self.PROG, description=self.DESCRIPTION)
        self.args = None
        self.settings = None

        self.init_args_common()
        self.init_args()

    # ------------------------------------------------------------------
    # Arguments
    # ------------------------------------------------------------------
    def init_args(self):
        pass

    def init_args_common(self):
        self.parser.add_argument("--config", default=None, help="YAML file overriding resources/defaults.yaml")
        verbosity = self.parser.add_mutually_exclusive_group()
        verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug messages")
        verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only")

    def init_args_signal(self):
        group = self.parser.add_argument_group("signals")
        group.add_argument("--format", choices=SignalFormats.all(), default=None, help="Signal file format")
        group.add_argument("--window", type=int, default=None, help="Window length L in samples")
        group.add_argument("--hop", type=int, default=None, help="Hop between window starts in samples")
        group.add_argument("--normalize", choices=NormalizePolicies.all(), default=None,
                           help="Per-window normalization")
        group.add_argument("--sample-rate", type=float, default=None, help="Sample rate in Hz (metadata)")

    def init_args_model(self, help_text="Model file"):
        self.parser.add_argument("--model", required=True, help=help_text)

    def init_args_alarm(self):
        group = self.parser.add_argument_group("alarm")
        group.add_argument("--alarm-window", type=int, default=None, help="Verdicts in the sliding alarm window")
        group.add_argument("--alarm-fraction", type=float, default=None,
                           help="Fault fraction of the window that raises an alarm")

    def init_args_records(self):
        self.parser.add_argument("--records", choices=[RecordFormats.CSV, RecordFormats.JSONL],
                                 default=RecordFormats.CSV, help="Verdict record format")
        self.parser.add_argument("--output", default=None, help="Write records to this file instead of stdout")

    # ------------------------------------------------------------------
    # Settings
    # ------------------------------------------------------------------
    def signal_settings(self, fallback: dict) -> dict:
        """Signal flags given on the command line win over `fallback`."""
        resolved = dict(fallback)
        for key, flag in (("format", "format"), ("window_len", "window"), ("hop", "hop"),
                          ("normalize", "normalize"), ("sample_rate", "sample_rate")):
            value = getattr(self.args, flag, None)
            if value is not None:
                resolved[key] = value
        if "hop" not in resolved or resolved["hop"] is None:
            resolved["hop"] = resolved["window_len"]
        return resolved

    def alarm_settings(self) -> dict:
        resolved = dict(self.settings["alarm"])
        if self.args.alarm_window is not None:
            resolved["window_n"] = self.args.alarm_window
        if self.args.alarm_fraction is not None:
            resolved["fault_fraction"] = self.args.alarm_fraction
        return resolved

    def update_settings(self, settings: dict) -> dict:
        return settings

    # ------------------------------------------------------------------
    # Execution
    # ------------------------------------------------------------------
    def execute(self) -> int:
        raise NotImplementedError

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        try:
            self.args = self.parser.parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)

        setup_logging("tcnfault", level_for(self.args.verbose, self.args.quiet))
        logging.captureWarnings(True)
        setup_add_logger(log, "py.warnings")

        try:
            self.settings = self.update_settings(load_settings(self.args.config))
            code = self.execute()
        except TcnError as e:
            log.error(f"{e}")
            return exit_code_for(e)
        except (ValueError, OSError) as e:
            log.error(f"{type(e).__name__}: {e}")
            return exit_code_for(e)
        return ExitCodes.SUCCESS if code is None else code


# ----------------------------------------------------------------------
# Helpers shared by the model based commands
# ----------------------------------------------------------------------
def expand_inputs(paths: Sequence, signal_format: str) -> List:
    files = []
    for path in paths:
        files.extend(list_signal_files(path, signal_format))
    return files


def load_prepared(path, model, signal_cfg: dict) -> Optional[SignalSet]:
    """
    Window one file the way `model` expects; an empty file gives None.
    """
    samples = read_samples(path, signal_cfg["format"])
    if samples.size == 0:
        log.warning(f"{path} is empty, no windows")
        return None
    signal_set = window_signal(samples, os.path.basename(str(path)), int(signal_cfg["window_len"]),
                               int(signal_cfg["hop"]), float(signal_cfg["sample_rate"]))
    return normalize(signal_set, model.signal.normalize)


def model_signal_settings(app: BaseTcnApp, model) -> dict:
    """Window and normalization come from the model; format, hop and rate may be overridden."""
    fallback = {"format": app.settings["signal"]["format"], **model.signal.to_dict()}
    for flag, key in (("window", "window_len"), ("normalize", "normalize")):
        value = getattr(app.args, flag, None)
        if value is not None and value != fallback[key]:
            raise UsageError(f"--{flag} {value} does not match the model (trained with {fallback[key]})")
    return app.signal_settings(fallback)


def write_text(text: str, output=None):
    if output is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(output, "w", encoding="utf-8") as f:
            f.write(text)
        log.info(f"Wrote {output}")
