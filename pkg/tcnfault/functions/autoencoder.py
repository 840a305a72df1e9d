import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from tcnfault.core import Signal, SignalSet, DataError, UsageError, TrainingDivergedError, Stages
from tcnfault.functions import autograd as ag
from tcnfault.functions.autograd import Tensor, PoolIndices, OptimizerState

log = logging.getLogger("tcnfault")

FeatureVector = np.ndarray

TRAIN_DTYPE = np.float32


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    kernel_size: int
    stride: int = 1
    pool_window: int = 2  # 1 disables pooling for this layer

    @classmethod
    def from_dict(cls, data: dict) -> "LayerSpec":
        return cls(int(data["out_channels"]), int(data["kernel_size"]), int(data.get("stride", 1)),
                   int(data.get("pool_window", 2)))

    def to_dict(self) -> dict:
        return {"out_channels": self.out_channels, "kernel_size": self.kernel_size, "stride": self.stride,
                "pool_window": self.pool_window}


@dataclass(frozen=True)
class LayerShape:
    in_channels: int
    in_len: int
    conv_len: int
    out_len: int


@dataclass(frozen=True)
class ArchConfig:
    input_len: int
    layers: Tuple[LayerSpec, ...]
    leaky_slope: float = 0.01
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise UsageError("The encoder needs at least one layer")
        if not 0 <= self.leaky_slope < 1:
            raise UsageError(f"leaky_slope must lie in [0, 1), got {self.leaky_slope}")
        self.layer_shapes()

    def layer_shapes(self) -> List[LayerShape]:
        shapes = []
        channels, length = self.in_channels, self.input_len
        for idx, layer in enumerate(self.layers):
            if layer.out_channels < 1 or layer.kernel_size < 1 or layer.stride < 1 or layer.pool_window < 1:
                raise UsageError(f"Layer {idx} has a non-positive size: {layer}")
            if length < layer.kernel_size:
                raise UsageError(f"Layer {idx}: input length {length} is shorter than kernel {layer.kernel_size}")
            conv_len = ag.conv1d_output_len(length, layer.kernel_size, layer.stride)
            if layer.pool_window > conv_len:
                raise UsageError(f"Layer {idx}: pool window {layer.pool_window} exceeds length {conv_len}")
            out_len = conv_len // layer.pool_window
            shapes.append(LayerShape(channels, length, conv_len, out_len))
            channels, length = layer.out_channels, out_len
        return shapes

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].out_channels * self.layer_shapes()[-1].out_len

    @classmethod
    def from_dict(cls, input_len: int, data: dict) -> "ArchConfig":
        return cls(int(input_len), tuple(LayerSpec.from_dict(layer) for layer in data["layers"]),
                   float(data.get("leaky_slope", 0.01)))

    def to_dict(self) -> dict:
        return {"input_len": self.input_len, "in_channels": self.in_channels, "leaky_slope": self.leaky_slope,
                "layers": [layer.to_dict() for layer in self.layers]}


@dataclass(frozen=True)
class ConvLayerParams:
    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1


@dataclass(frozen=True)
class EncoderModel:
    """
    Encoder layers in forward order and decoder layers in execution order, so decoder_params[j]
    mirrors encoder layer n-1-j.
    """
    arch: ArchConfig
    encoder_params: Tuple[ConvLayerParams, ...]
    decoder_params: Tuple[ConvLayerParams, ...]
    train_meta: Dict = field(default_factory=dict)

    def named_parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        for idx, p in enumerate(self.encoder_params):
            params[f"encoder.{idx}.weight"] = p.weight
            params[f"encoder.{idx}.bias"] = p.bias
        for idx, p in enumerate(self.decoder_params):
            params[f"decoder.{idx}.weight"] = p.weight
            params[f"decoder.{idx}.bias"] = p.bias
        return params

    def with_parameters(self, params: Dict[str, np.ndarray], **meta) -> "EncoderModel":
        encoder = tuple(ConvLayerParams(params[f"encoder.{i}.weight"], params[f"encoder.{i}.bias"], p.stride)
                        for i, p in enumerate(self.encoder_params))
        decoder = tuple(ConvLayerParams(params[f"decoder.{i}.weight"], params[f"decoder.{i}.bias"], p.stride)
                        for i, p in enumerate(self.decoder_params))
        return replace(self, encoder_params=encoder, decoder_params=decoder, train_meta={**self.train_meta, **meta})


@dataclass(frozen=True)
class PoolTrace:
    pools: Tuple[Optional[PoolIndices], ...]
    conv_lens: Tuple[int, ...]
    in_lens: Tuple[int, ...]


def init_model(arch: ArchConfig, seed: int) -> EncoderModel:
    rng = np.random.default_rng(seed)
    encoder, decoder = [], []
    for layer, shape in zip(arch.layers, arch.layer_shapes()):
        fan_in = shape.in_channels * layer.kernel_size
        fan_out = layer.out_channels * layer.kernel_size
        weight = ag.glorot_uniform(rng, (layer.out_channels, shape.in_channels, layer.kernel_size), fan_in, fan_out)
        encoder.append(ConvLayerParams(weight, np.zeros(layer.out_channels, dtype=TRAIN_DTYPE), layer.stride))
    for layer, shape in reversed(list(zip(arch.layers, arch.layer_shapes()))):
        fan_in = layer.out_channels * layer.kernel_size
        fan_out = shape.in_channels * layer.kernel_size
        weight = ag.glorot_uniform(rng, (layer.out_channels, shape.in_channels, layer.kernel_size), fan_in, fan_out)
        decoder.append(ConvLayerParams(weight, np.zeros(shape.in_channels, dtype=TRAIN_DTYPE), layer.stride))
    return EncoderModel(arch, tuple(encoder), tuple(decoder), {"seed": int(seed), "epochs": 0})


# ----------------------------------------------------------------------
# Graph construction
# ----------------------------------------------------------------------
def _param_tensors(model: EncoderModel, trainable: bool) -> Dict[str, Tensor]:
    make = ag.parameter if trainable else ag.constant
    tensors = {}
    for name, value in model.named_parameters().items():
        tensors[name] = make(value, name=name) if trainable else make(value)
    return tensors


def as_input(model: EncoderModel, samples: np.ndarray, dtype) -> Tensor:
    samples = np.asarray(samples)
    if samples.shape[-1] != model.arch.input_len:
        raise DataError(f"Signal length {samples.shape[-1]} does not match model input length "
                        f"{model.arch.input_len}")
    return ag.constant(samples.reshape(model.arch.in_channels, -1).astype(dtype))


def encode_graph(model: EncoderModel, params: Dict[str, Tensor], x: Tensor) -> Tuple[Tensor, PoolTrace]:
    arch = model.arch
    pools, conv_lens, in_lens = [], [], []
    h = x
    for idx, layer in enumerate(arch.layers):
        in_lens.append(h.length)
        h = ag.conv1d(h, params[f"encoder.{idx}.weight"], params[f"encoder.{idx}.bias"], layer.stride)
        h = ag.leaky_relu(h, arch.leaky_slope)
        conv_lens.append(h.length)
        if layer.pool_window > 1:
            h, pool = ag.maxpool1d(h, layer.pool_window)
        else:
            pool = None
        pools.append(pool)
    return ag.flatten(h), PoolTrace(tuple(pools), tuple(conv_lens), tuple(in_lens))


def decode_graph(model: EncoderModel, params: Dict[str, Tensor], features: Tensor, trace: PoolTrace) -> Tensor:
    arch = model.arch
    n_layers = len(arch.layers)
    if features.data.size != arch.feature_dim:
        raise DataError(f"Feature length {features.data.size} does not match feature_dim {arch.feature_dim}")
    if len(trace.pools) != n_layers:
        raise DataError("Pool trace does not match the model depth")

    last = arch.layers[-1]
    h = ag.reshape(features, (last.out_channels, arch.feature_dim // last.out_channels))
    for j in range(n_layers):
        idx = n_layers - 1 - j
        layer = arch.layers[idx]
        pool = trace.pools[idx]
        if pool is not None:
            h = ag.maxunpool1d(h, pool, trace.conv_lens[idx])
        h = ag.transposed_conv1d(h, params[f"decoder.{j}.weight"], params[f"decoder.{j}.bias"], layer.stride)
        # a stride that does not divide (L - K) leaves a short tail
        h = ag.pad_right(h, trace.in_lens[idx])
        if j < n_layers - 1:
            h = ag.leaky_relu(h, arch.leaky_slope)
    return h


# ----------------------------------------------------------------------
# Public operations
# ----------------------------------------------------------------------
def encode(model: EncoderModel, x: Signal) -> Tuple[FeatureVector, PoolTrace]:
    samples = x.samples if isinstance(x, Signal) else np.asarray(x)
    features, trace = encode_graph(model, _param_tensors(model, False), as_input(model, samples, TRAIN_DTYPE))
    return features.data, trace


def decode(model: EncoderModel, f: FeatureVector, trace: PoolTrace) -> np.ndarray:
    reconstruction = decode_graph(model, _param_tensors(model, False), ag.constant(np.asarray(f)), trace)
    return reconstruction.data.reshape(-1)


def encode_set(model: EncoderModel, signal_set: SignalSet) -> np.ndarray:
    """Feature matrix (I, feature_dim) in float64."""
    params = _param_tensors(model, False)
    rows = [encode_graph(model, params, as_input(model, w, TRAIN_DTYPE))[0].data for w in signal_set.data]
    return np.stack(rows).astype(np.float64)


def reconstruct(model: EncoderModel, signal_set: SignalSet) -> SignalSet:
    params = _param_tensors(model, False)
    rows = []
    for window in signal_set.data:
        features, trace = encode_graph(model, params, as_input(model, window, TRAIN_DTYPE))
        rows.append(decode_graph(model, params, features, trace).data.reshape(-1))
    return SignalSet(np.stack(rows), signal_set.sample_rate, signal_set.source_tags)


def mse_loss(originals: SignalSet, reconstructions: SignalSet, per_sample: bool = False) -> float:
    """
    (1/I) * sum_i ||x_i - x_hat_i||^2, or divided by I*L when `per_sample` is set.
    """
    x = originals.data if isinstance(originals, SignalSet) else np.asarray(originals, dtype=np.float64)
    x_hat = reconstructions.data if isinstance(reconstructions, SignalSet) \
        else np.asarray(reconstructions, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DataError(f"Cannot compare {x.shape} originals with {x_hat.shape} reconstructions")
    total = float(np.sum((x - x_hat) ** 2)) / x.shape[0]
    return total / x.shape[1] if per_sample else total


# ----------------------------------------------------------------------
# Step 1 training
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Step1Config:
    epochs: int = 150
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    log_every: int = 10

    @classmethod
    def from_dict(cls, data: dict, seed: int) -> "Step1Config":
        return cls(int(data["epochs"]), int(data["batch_size"]), float(data["lr"]), int(seed),
                   int(data.get("log_every", 10)))


@dataclass(frozen=True)
class Step1Result:
    model: EncoderModel
    history: List[float]
    initial_loss: float
    best_loss: float
    best_epoch: int  # 0 means the initial parameters were never beaten


def _sample_loss(model: EncoderModel, params: Dict[str, Tensor], window: np.ndarray) -> Tensor:
    x = as_input(model, window, TRAIN_DTYPE)
    features, trace = encode_graph(model, params, x)
    reconstruction = decode_graph(model, params, features, trace)
    return ag.mean(ag.square(ag.sub(reconstruction, x)))


def evaluate_loss(model: EncoderModel, signal_set: SignalSet) -> float:
    """Per-sample-normalized reconstruction MSE over the whole set."""
    return mse_loss(signal_set, reconstruct(model, signal_set), per_sample=True)


def train_step1(arch: ArchConfig, config: Step1Config, data: SignalSet) -> Step1Result:
    """
    Minibatch Adam on the per-sample-normalized reconstruction loss; keeps the best epoch.
    """
    if data.count < 1:
        raise DataError("Step 1 needs at least one training signal")
    if data.window_len != arch.input_len:
        raise DataError(f"Training windows have length {data.window_len}, architecture expects {arch.input_len}")
    if config.batch_size < 1 or config.epochs < 0:
        raise UsageError(f"Invalid Step 1 schedule: {config}")

    rng = np.random.default_rng(config.seed)
    model = init_model(arch, int(rng.integers(0, 2 ** 31 - 1)))
    params = model.named_parameters()
    state = OptimizerState(lr=config.lr)

    initial_loss = evaluate_loss(model, data)
    log.info(f"Step 1: {data.count} signals, feature_dim {arch.feature_dim}, initial loss {initial_loss:.6g}")
    best_loss, best_epoch, best_params = initial_loss, 0, params
    history = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(data.count)
        for start in range(0, data.count, config.batch_size):
            batch = order[start:start + config.batch_size]
            tensors = {name: ag.parameter(value, name=name) for name, value in params.items()}
            losses = [_sample_loss(model, tensors, data.data[i]) for i in batch]
            loss = ag.scale(ag.add_n(losses), 1.0 / len(batch))
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(f"Step 1 loss became non-finite in epoch {epoch}",
                                            stage=Stages.STEP1, epoch=epoch)
            ag.backward(loss)
            grads = {name: t.grad for name, t in tensors.items()}
            try:
                params, state = ag.optimizer_step(params, grads, state)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(f"{e} in epoch {epoch}", stage=Stages.STEP1, epoch=epoch) from e

        model = model.with_parameters(params)
        epoch_loss = evaluate_loss(model, data)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(f"Step 1 loss became non-finite in epoch {epoch}",
                                        stage=Stages.STEP1, epoch=epoch)
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss, best_epoch, best_params = epoch_loss, epoch, params

        if epoch % config.log_every == 0 or epoch == config.epochs:
            log.info(f"Step 1 epoch {epoch}/{config.epochs}: loss {epoch_loss:.6g} (best {best_loss:.6g})")
        else:
            log.debug(f"Step 1 epoch {epoch}/{config.epochs}: loss {epoch_loss:.6g}")

    best_model = model.with_parameters(best_params, seed=config.seed, epochs=config.epochs,
                                       final_mse=float(best_loss))
    log.info(f"Step 1 finished: best loss {best_loss:.6g} at epoch {best_epoch}")
    return Step1Result(best_model, history, initial_loss, best_loss, best_epoch)
