import copy
import os
import sys
import logging
from dataclasses import dataclass
from pathlib import Path

import yaml

import tcnfault
from tcnfault.core import ConfigError

log = logging.getLogger("tcnfault")
package_path = os.path.dirname(os.path.dirname(tcnfault.__file__))

PATH_RESOURCES = os.path.join(package_path, "resources")
if not os.path.isdir(PATH_RESOURCES):
    # non-editable install, see data-files in pyproject.toml
    PATH_RESOURCES = os.path.join(sys.prefix, "share", "tcnfault", "resources")
PATH_DEFAULTS = os.path.join(PATH_RESOURCES, "defaults.yaml")

# Offsets added to the master seed for every randomized stage
SEED_OFFSET_STEP1 = 0
SEED_OFFSET_KMEANS = 1

SETTINGS_SECTIONS = ("signal", "architecture", "step1", "kmeans", "step3", "scoring", "alarm", "seed",
                     "synthetic")


@dataclass(frozen=True)
class SignalFormats:
    CSV = "csv"
    RAW_F32 = "raw_f32"

    @staticmethod
    def all():
        return [SignalFormats.CSV, SignalFormats.RAW_F32]


@dataclass(frozen=True)
class NormalizePolicies:
    NONE = "none"
    ZSCORE = "zscore_per_window"

    @staticmethod
    def all():
        return [NormalizePolicies.NONE, NormalizePolicies.ZSCORE]


@dataclass(frozen=True)
class RecordFormats:
    CSV = "csv"
    JSONL = "jsonl"


@dataclass(frozen=True)
class ExitCodes:
    SUCCESS = 0
    USAGE = 2
    DATA = 3
    DIVERGENCE = 4


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_yaml(path) -> dict:
    yaml_file = Path(path)

    if not yaml_file.exists():
        raise ConfigError(f"Settings file does not exist: {yaml_file}")

    with yaml_file.open("r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {yaml_file}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"Settings file must contain a mapping: {yaml_file}")
    return data


def load_settings(path=None) -> dict:
    """
    Load the default settings and merge an optional user YAML file on top.

    Args:
        path: Optional path to a YAML file with overrides. Only the keys present are replaced,
              nested sections are merged key by key.

    Returns:
        Nested settings dictionary with the sections listed in SETTINGS_SECTIONS.
    """
    settings = _read_yaml(PATH_DEFAULTS)

    if path is not None:
        user_settings = _read_yaml(path)
        unknown = set(user_settings) - set(SETTINGS_SECTIONS)
        if unknown:
            raise ConfigError(f"Unknown settings sections: {', '.join(sorted(unknown))}")
        log.debug(f"Merging user settings from {path}")
        settings = _deep_merge(settings, user_settings)

    return settings


def stage_seed(master_seed: int, offset: int) -> int:
    return int(master_seed) + offset
