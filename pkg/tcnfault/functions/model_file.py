"""
Binary model file.

Layout (all integers little-endian):
    b"TCN1" | uint32 version | uint32 header length | YAML header (UTF-8) | blocks

Every block is length-prefixed:
    uint16 name length | name | uint8 dtype code | uint8 ndim | uint32 * ndim shape | uint64 byte length | raw data

Floats are stored as raw little-endian arrays and never pass through decimal text.
"""
import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import yaml

from tcnfault.core import ModelFormatError, SignalSet
from tcnfault.functions.autoencoder import ArchConfig, EncoderModel, ConvLayerParams
from tcnfault.functions.clustering import ClusterModel
from tcnfault.functions.scoring import ClusterStats, ScoringConfig
from tcnfault.functions.signal_io import normalize

log = logging.getLogger("tcnfault")

MAGIC = b"TCN1"
FORMAT_VERSION = 1

DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i4")}
CODES_BY_DTYPE = {dtype: code for code, dtype in DTYPE_CODES.items()}


@dataclass(frozen=True)
class SignalConfig:
    window_len: int
    hop: int
    normalize: str
    sample_rate: float

    def to_dict(self) -> dict:
        return {"window_len": self.window_len, "hop": self.hop, "normalize": self.normalize,
                "sample_rate": self.sample_rate}

    @classmethod
    def from_dict(cls, data: dict) -> "SignalConfig":
        return cls(int(data["window_len"]), int(data["hop"]), str(data["normalize"]), float(data["sample_rate"]))


@dataclass(frozen=True)
class TcnModel:
    encoder: EncoderModel
    clusters: ClusterModel
    stats: ClusterStats
    scoring: ScoringConfig
    signal: SignalConfig
    seed: int
    summary: Dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.clusters.k

    def prepare(self, signal_set: SignalSet) -> SignalSet:
        """Apply the normalization the model was trained with."""
        return normalize(signal_set, self.signal.normalize)


# ----------------------------------------------------------------------
# Writing
# ----------------------------------------------------------------------
def _blocks(model: TcnModel) -> Dict[str, np.ndarray]:
    blocks = dict(model.encoder.named_parameters())
    blocks["centroids"] = model.clusters.centroids
    blocks["assignments"] = model.clusters.assignments
    blocks["bandwidth"] = model.stats.bandwidth
    blocks["threshold"] = model.stats.threshold
    blocks["failure"] = model.stats.failure
    return blocks


def _header(model: TcnModel, block_names) -> dict:
    return {
        "arch": model.encoder.arch.to_dict(),
        "k": model.k,
        "scoring": model.scoring.to_dict(),
        "signal": model.signal.to_dict(),
        "seed": model.seed,
        "train_meta": dict(model.encoder.train_meta),
        "summary": dict(model.summary),
        "blocks": list(block_names),
    }


def _write_block(stream, name: str, array: np.ndarray):
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("<")
    if dtype not in CODES_BY_DTYPE:
        raise ModelFormatError(f"Unsupported dtype {array.dtype} for block '{name}'")
    raw = np.ascontiguousarray(array, dtype=dtype).tobytes()
    encoded = name.encode("utf-8")
    stream.write(struct.pack("<H", len(encoded)))
    stream.write(encoded)
    stream.write(struct.pack("<BB", CODES_BY_DTYPE[dtype], array.ndim))
    stream.write(struct.pack(f"<{array.ndim}I", *array.shape))
    stream.write(struct.pack("<Q", len(raw)))
    stream.write(raw)


def dumps(model: TcnModel) -> bytes:
    blocks = _blocks(model)
    header = yaml.safe_dump(_header(model, blocks.keys()), sort_keys=True).encode("utf-8")
    stream = io.BytesIO()
    stream.write(MAGIC)
    stream.write(struct.pack("<II", FORMAT_VERSION, len(header)))
    stream.write(header)
    for name, array in blocks.items():
        _write_block(stream, name, array)
    return stream.getvalue()


def save_model(model: TcnModel, path):
    target = Path(path)
    target.write_bytes(dumps(model))
    log.info(f"Model written to {target}")


# ----------------------------------------------------------------------
# Reading
# ----------------------------------------------------------------------
def _read(stream, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise ModelFormatError(f"Truncated model file while reading {what}")
    return data


def _read_block(stream) -> Tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read(stream, 2, "block name length"))
    name = _read(stream, name_len, "block name").decode("utf-8")
    code, ndim = struct.unpack("<BB", _read(stream, 2, f"block '{name}' type"))
    if code not in DTYPE_CODES:
        raise ModelFormatError(f"Unknown dtype code {code} in block '{name}'")
    shape = struct.unpack(f"<{ndim}I", _read(stream, 4 * ndim, f"block '{name}' shape"))
    (byte_len,) = struct.unpack("<Q", _read(stream, 8, f"block '{name}' length"))
    dtype = DTYPE_CODES[code]
    if byte_len != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
        raise ModelFormatError(f"Block '{name}' length {byte_len} does not match shape {shape}")
    array = np.frombuffer(_read(stream, byte_len, f"block '{name}' data"), dtype=dtype).reshape(shape)
    return name, array.astype(dtype.newbyteorder("="))


def loads(data: bytes) -> TcnModel:
    stream = io.BytesIO(data)
    if _read(stream, 4, "magic") != MAGIC:
        raise ModelFormatError("Not a TCN model file (bad magic)")
    version, header_len = struct.unpack("<II", _read(stream, 8, "version"))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"Unsupported model format version {version}, expected {FORMAT_VERSION}")
    try:
        header = yaml.safe_load(_read(stream, header_len, "header").decode("utf-8"))
    except yaml.YAMLError as e:
        raise ModelFormatError(f"Corrupt model header: {e}") from e

    blocks = {}
    for _ in header["blocks"]:
        name, array = _read_block(stream)
        blocks[name] = array
    if stream.read(1):
        raise ModelFormatError("Trailing bytes after the last block")

    try:
        arch_dict = header["arch"]
        arch = ArchConfig.from_dict(arch_dict["input_len"], arch_dict)
        strides = [layer.stride for layer in arch.layers]
        n_layers = len(arch.layers)
        encoder = EncoderModel(
            arch,
            tuple(ConvLayerParams(blocks[f"encoder.{i}.weight"], blocks[f"encoder.{i}.bias"], strides[i])
                  for i in range(n_layers)),
            tuple(ConvLayerParams(blocks[f"decoder.{i}.weight"], blocks[f"decoder.{i}.bias"],
                                  strides[n_layers - 1 - i]) for i in range(n_layers)),
            dict(header["train_meta"]),
        )
        clusters = ClusterModel(int(header["k"]), blocks["centroids"], blocks["assignments"])
        stats = ClusterStats(blocks["bandwidth"], blocks["threshold"], blocks["failure"], clusters.member_counts)
        return TcnModel(encoder, clusters, stats, ScoringConfig.from_dict(header["scoring"]),
                        SignalConfig.from_dict(header["signal"]), int(header["seed"]), dict(header["summary"]))
    except KeyError as e:
        raise ModelFormatError(f"Model file misses entry {e}") from e


def load_model(path) -> TcnModel:
    source = Path(path)
    if not source.is_file():
        raise ModelFormatError(f"Model file does not exist: {source}")
    model = loads(source.read_bytes())
    log.debug(f"Loaded model with K={model.k} from {source}")
    return model
