#!/usr/bin/env python3

import argparse
from pathlib import Path

from tcnfault.config import load_settings, SignalFormats
from tcnfault.functions.signal_io import SynthSpec, synth_dataset, save_signals, split_signal_set
from tcnfault.log import setup_logging

log = setup_logging("tcnfault")


def write_dataset(output: Path, settings: dict, signal_format: str):
    """
    Layout:
        train/condition<c>.<ext>                 pristine training windows
        validation/pristine/condition<c>.<ext>   held-out pristine windows
        validation/fault/condition<c>.<ext>      faulty windows, as many as held out per condition
    """
    synthetic = settings["synthetic"]
    spec = SynthSpec.from_dict(synthetic)
    n_train = int(synthetic["train_per_condition"])
    result = synth_dataset(spec)
    extension = ".csv" if signal_format == SignalFormats.CSV else ".f32"

    for sub in ("train", "validation/pristine", "validation/fault"):
        (output / sub).mkdir(parents=True, exist_ok=True)

    for c, condition_set in enumerate(result.conditions):
        train, validation = split_signal_set(condition_set, n_train)
        save_signals(train, output / "train" / f"condition{c}{extension}", signal_format)
        save_signals(validation, output / "validation" / "pristine" / f"condition{c}{extension}", signal_format)
        if result.faults is not None:
            faults = result.faults[c].subset(range(validation.count))
            save_signals(faults, output / "validation" / "fault" / f"condition{c}{extension}", signal_format)
        log.info(f"Condition {c}: {train.count} training, {validation.count} validation windows")

    log.info(f"Synthetic dataset written to {output} (window length {spec.window_len}, "
             f"sample rate {spec.sample_rate} Hz)")


def main():
    parser = argparse.ArgumentParser(
        description="Write the synthetic multi-condition case study to disk"
    )
    parser.add_argument(
        "-o",
        "--output",
        type=Path,
        default=Path("synthetic"),
        help="Output directory (default: synthetic)",
    )
    parser.add_argument("--config", type=Path, default=None, help="YAML file overriding the synthetic section")
    parser.add_argument("--format", choices=SignalFormats.all(), default=SignalFormats.CSV)

    args = parser.parse_args()
    write_dataset(args.output, load_settings(args.config), args.format)


if __name__ == "__main__":
    main()
