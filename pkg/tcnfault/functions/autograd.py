"""
Minimal reverse-mode differentiation over (channels, length) arrays.

Every op builds a new Tensor that remembers its parents and a closure mapping the output
gradient to one gradient per parent. `backward` walks the graph in reverse topological order.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from tcnfault.core import NonFiniteGradientError

log = logging.getLogger("tcnfault")

sliding_window_view = np.lib.stride_tricks.sliding_window_view


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 parents: Sequence["Tensor"] = (), backward_fn: Optional[Callable] = None):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[-1]

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, factor: float):
        return scale(self, factor)

    __rmul__ = __mul__

    def backward(self):
        backward(self)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    requires_grad = any(p.requires_grad for p in parents)
    if not requires_grad:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)


# ----------------------------------------------------------------------
# Elementwise and reduction ops
# ----------------------------------------------------------------------
def add(a: Tensor, b: Tensor) -> Tensor:
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a: Tensor, factor: float) -> Tensor:
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2 * a.data * g,))


def tensor_sum(a: Tensor) -> Tensor:
    return _make(a.data.sum(), (a,), lambda g: (np.full_like(a.data, g),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(a.data.sum() / n, (a,), lambda g: (np.full_like(a.data, g / n),))


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    data = tensors[0].data.copy()
    for t in tensors[1:]:
        data = data + t.data
    return _make(data, tuple(tensors), lambda g: tuple(g for _ in tensors))


def reshape(a: Tensor, shape) -> Tensor:
    original = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (-1,))


def take_row(a: Tensor, row: int) -> Tensor:
    """Row `row` of a 2D tensor, e.g. one centroid out of a (K, D) matrix."""
    def backward_fn(g):
        grad = np.zeros_like(a.data)
        grad[row] = g
        return (grad,)

    return _make(a.data[row].copy(), (a,), backward_fn)


def pad_right(a: Tensor, length: int) -> Tensor:
    """Zero-pad the last axis up to `length` samples."""
    current = a.data.shape[-1]
    if length < current:
        raise ValueError(f"Cannot pad length {current} down to {length}")
    if length == current:
        return a
    out = np.zeros(a.data.shape[:-1] + (length,), dtype=a.data.dtype)
    out[..., :current] = a.data
    return _make(out, (a,), lambda g: (g[..., :current],))


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    if not 0 <= slope <= 1:
        raise ValueError(f"Leaky slope must lie in [0, 1], got {slope}")
    # x >= 0 takes the identity branch, so the kink at 0 has derivative 1
    mask = x.data >= 0
    out = np.where(mask, x.data, slope * x.data).astype(x.data.dtype, copy=False)
    return _make(out, (x,), lambda g: (np.where(mask, g, slope * g),))


# ----------------------------------------------------------------------
# Convolutions
# ----------------------------------------------------------------------
def conv1d_output_len(length: int, kernel_size: int, stride: int) -> int:
    return (length - kernel_size) // stride + 1


def transposed_conv1d_output_len(length: int, kernel_size: int, stride: int) -> int:
    return (length - 1) * stride + kernel_size


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """
    Valid (unpadded) convolution.

    x: (C_in, L), weight: (C_out, C_in, K), bias: (C_out,)
    out[c, t] = bias[c] + sum_{i,k} w[c, i, k] * x[i, t*stride + k]
    """
    c_out, c_in, kernel = weight.data.shape
    if x.data.ndim != 2 or x.data.shape[0] != c_in:
        raise ValueError(f"conv1d expects {c_in} input channels, got shape {x.data.shape}")
    if x.data.shape[1] < kernel:
        raise ValueError(f"conv1d input length {x.data.shape[1]} is shorter than kernel {kernel}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")

    length = x.data.shape[1]
    out_len = conv1d_output_len(length, kernel, stride)
    windows = sliding_window_view(x.data, kernel, axis=1)[:, ::stride, :]  # (C_in, out_len, K)
    out = np.tensordot(weight.data, windows, axes=([1, 2], [0, 2])) + bias.data[:, None]

    def backward_fn(g):
        grad_w = np.tensordot(g, windows, axes=([1], [1]))  # (C_out, C_in, K)
        grad_b = g.sum(axis=1)
        grad_x = np.zeros_like(x.data)
        span = stride * (out_len - 1) + 1
        for k in range(kernel):
            grad_x[:, k:k + span:stride] += weight.data[:, :, k].T @ g
        return grad_x, grad_w, grad_b

    return _make(out.astype(x.data.dtype, copy=False), (x, weight, bias), backward_fn)


def transposed_conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """
    Adjoint of conv1d: scatter-add x[c, t] * w[c, i, k] into out[i, t*stride + k].

    x: (C_x, L), weight: (C_x, C_out, K), bias: (C_out,)
    """
    c_x, c_out, kernel = weight.data.shape
    if x.data.ndim != 2 or x.data.shape[0] != c_x:
        raise ValueError(f"transposed_conv1d expects {c_x} input channels, got shape {x.data.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")

    length = x.data.shape[1]
    out_len = transposed_conv1d_output_len(length, kernel, stride)
    span = stride * (length - 1) + 1
    out = np.zeros((c_out, out_len), dtype=x.data.dtype)
    for k in range(kernel):
        out[:, k:k + span:stride] += weight.data[:, :, k].T @ x.data
    out += bias.data[:, None]

    def backward_fn(g):
        windows = sliding_window_view(g, kernel, axis=1)[:, ::stride, :]  # (C_out, L, K)
        grad_x = np.tensordot(weight.data, windows, axes=([1, 2], [0, 2]))
        grad_w = np.tensordot(x.data, windows, axes=([1], [1]))  # (C_x, C_out, K)
        grad_b = g.sum(axis=1)
        return grad_x, grad_w, grad_b

    return _make(out, (x, weight, bias), backward_fn)


# ----------------------------------------------------------------------
# Pooling
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class PoolIndices:
    indices: np.ndarray  # (C, L // window) absolute argmax positions
    input_len: int
    dropped: int  # tail samples that did not fill a block


def maxpool1d(x: Tensor, window: int) -> Tuple[Tensor, PoolIndices]:
    """Non-overlapping max pooling, first occurrence wins on ties; a short tail is dropped."""
    channels, length = x.data.shape
    if window < 2:
        raise ValueError(f"Pooling window must be >= 2, got {window}")
    if window > length:
        raise ValueError(f"Pooling window {window} exceeds input length {length}")

    n_blocks = length // window
    blocks = x.data[:, :n_blocks * window].reshape(channels, n_blocks, window)
    local = blocks.argmax(axis=2)
    indices = local + np.arange(n_blocks) * window
    out = np.take_along_axis(x.data, indices, axis=1)

    def backward_fn(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, indices, g, axis=1)
        return (grad,)

    return _make(out, (x,), backward_fn), PoolIndices(indices, length, length - n_blocks * window)


def maxunpool1d(y: Tensor, pool: PoolIndices, out_len: Optional[int] = None) -> Tensor:
    """Scatter pooled values back to their recorded positions, zeros elsewhere."""
    out_len = pool.input_len if out_len is None else out_len
    indices = pool.indices
    if y.data.shape != indices.shape:
        raise ValueError(f"Unpool values {y.data.shape} do not match indices {indices.shape}")
    if indices.size and indices.max() >= out_len:
        raise ValueError(f"Unpool index {indices.max()} out of range for length {out_len}")

    out = np.zeros((y.data.shape[0], out_len), dtype=y.data.dtype)
    np.put_along_axis(out, indices, y.data, axis=1)
    return _make(out, (y,), lambda g: (np.take_along_axis(g, indices, axis=1),))


# ----------------------------------------------------------------------
# Backward pass
# ----------------------------------------------------------------------
def _topological_order(root: Tensor) -> List[Tensor]:
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """
    Reverse accumulation from a scalar loss. Gradients of this call replace the `grad`
    of every tensor in the graph that requires one.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        if node._backward_fn is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward_fn(g)):
            if not parent.requires_grad or parent_grad is None:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad


# ----------------------------------------------------------------------
# Initialization and optimizer
# ----------------------------------------------------------------------
def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
                   state: OptimizerState) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """
    One Adam update with bias correction. Inputs are left untouched; new arrays are returned.

    A non-finite gradient rejects the whole step before anything is updated.
    """
    if state.lr <= 0:
        raise ValueError(f"Learning rate must be positive, got {state.lr}")
    for name in params:
        if name not in grads:
            raise ValueError(f"Missing gradient for parameter '{name}'")
        if grads[name].shape != params[name].shape:
            raise ValueError(f"Gradient shape {grads[name].shape} does not match parameter '{name}' "
                             f"{params[name].shape}")
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(name)

    step = state.step + 1
    new_params, first, second = {}, {}, {}
    for name, value in params.items():
        g = grads[name].astype(value.dtype, copy=False)
        m = state.first_moment.get(name, np.zeros_like(value))
        v = state.second_moment.get(name, np.zeros_like(value))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** step)
        v_hat = v / (1 - state.beta2 ** step)
        new_params[name] = (value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(value.dtype, copy=False)
        first[name] = m
        second[name] = v

    new_state = OptimizerState(lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps, step=step,
                               first_moment=first, second_moment=second)
    return new_params, new_state


# ----------------------------------------------------------------------
# Finite-difference oracle
# ----------------------------------------------------------------------
def gradcheck(fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[np.ndarray],
              eps: float = 1e-5, tol: float = 1e-4) -> float:
    """
    Compare reverse-mode gradients of the scalar `fn(tensors)` with central differences.

    Returns the largest relative error ||analytic - numeric|| / (||analytic|| + ||numeric||)
    over all inputs and raises AssertionError when it exceeds `tol`.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    tensors = [parameter(a) for a in arrays]
    loss = fn(tensors)
    backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    worst = 0.0
    for idx, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + eps
            plus = float(fn([constant(a) for a in arrays]).data)
            flat[j] = original - eps
            minus = float(fn([constant(a) for a in arrays]).data)
            flat[j] = original
            numeric.reshape(-1)[j] = (plus - minus) / (2 * eps)

        denom = np.linalg.norm(analytic[idx]) + np.linalg.norm(numeric)
        error = 0.0 if denom == 0 else float(np.linalg.norm(analytic[idx] - numeric) / denom)
        worst = max(worst, error)

    if worst > tol:
        raise AssertionError(f"Gradient check failed: relative error {worst:.3e} > {tol:.1e}")
    return worst
