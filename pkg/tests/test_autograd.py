import numpy as np
import pytest

from tcnfault.core import NonFiniteGradientError
from tcnfault.functions import autograd as ag
from tcnfault.functions.autoencoder import ArchConfig, LayerSpec, init_model, encode_graph, decode_graph

SEEDS = [0, 1, 2, 3]


def squared_error(out: ag.Tensor, target: np.ndarray) -> ag.Tensor:
    return ag.tensor_sum(ag.square(ag.sub(out, ag.constant(target))))


def away_from_zero(rng, shape, low=0.1):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, 1.0, size=shape)


# ----------------------------------------------------------------------
# Forward values
# ----------------------------------------------------------------------
def conv(x, w, b=None, stride=1):
    w = np.asarray(w, dtype=np.float64)
    b = np.zeros(w.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    return ag.conv1d(ag.constant(np.asarray(x, dtype=np.float64)), ag.constant(w), ag.constant(b), stride).data


def tconv(x, w, b=None, stride=1):
    w = np.asarray(w, dtype=np.float64)
    b = np.zeros(w.shape[1]) if b is None else np.asarray(b, dtype=np.float64)
    return ag.transposed_conv1d(ag.constant(np.asarray(x, dtype=np.float64)), ag.constant(w), ag.constant(b),
                                stride).data


def test_conv1d_hand_computed():
    np.testing.assert_array_equal(conv([[1, 2, 3, 4]], [[[1, 0, -1]]]), [[-2, -2]])


def test_conv1d_identity_kernel():
    x = np.random.default_rng(0).normal(size=(1, 9))
    np.testing.assert_array_equal(conv(x, [[[1.0]]]), x)


def test_conv1d_zero_input():
    assert not np.any(conv(np.zeros((2, 8)), np.ones((3, 2, 3))))


def test_conv1d_bias_and_stride():
    out = conv([[1, 2, 3, 4, 5]], [[[1, 1]]], b=[0.5], stride=2)
    np.testing.assert_array_equal(out, [[3.5, 7.5]])


def test_conv1d_errors():
    with pytest.raises(ValueError):
        conv(np.ones((2, 8)), np.ones((1, 3, 3)))
    with pytest.raises(ValueError):
        conv(np.ones((1, 2)), np.ones((1, 1, 3)))


def test_transposed_conv1d_single_scatter():
    np.testing.assert_array_equal(tconv([[1]], [[[1, 2, 3]]]), [[1, 2, 3]])


def test_transposed_conv1d_stride_gaps():
    np.testing.assert_array_equal(tconv([[1, 1]], [[[1]]], stride=2), [[1, 0, 1]])


def test_conv_then_transposed_restores_length():
    x = np.random.default_rng(1).normal(size=(1, 20))
    w = np.random.default_rng(2).normal(size=(3, 1, 5))
    assert tconv(conv(x, w), w).shape == (1, 20)


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_transposed_adjointness(stride):
    rng = np.random.default_rng(stride)
    x = rng.normal(size=(2, 23))
    w = rng.normal(size=(3, 2, 4))
    y = rng.normal(size=conv(x, w, stride=stride).shape)
    lhs = np.sum(conv(x, w, stride=stride) * y)
    back = tconv(y, w, stride=stride)
    rhs = np.sum(x[:, :back.shape[1]] * back)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_leaky_relu_values():
    out = ag.leaky_relu(ag.constant(np.array([[-2.0, 0.0, 3.0]])), 0.01).data
    np.testing.assert_allclose(out, [[-0.02, 0.0, 3.0]])


def test_leaky_relu_identity_cases():
    x = np.random.default_rng(3).normal(size=(2, 6))
    np.testing.assert_array_equal(ag.leaky_relu(ag.constant(np.abs(x)), 0.0).data, np.abs(x))
    np.testing.assert_array_equal(ag.leaky_relu(ag.constant(x), 1.0).data, x)


def test_maxpool_values_and_indices():
    out, pool = ag.maxpool1d(ag.constant(np.array([[1.0, 3.0, 2.0, 5.0]])), 2)
    np.testing.assert_array_equal(out.data, [[3, 5]])
    np.testing.assert_array_equal(pool.indices, [[1, 3]])


def test_maxpool_first_tie_wins():
    out, pool = ag.maxpool1d(ag.constant(np.full((1, 4), 4.0)), 2)
    np.testing.assert_array_equal(out.data, [[4, 4]])
    np.testing.assert_array_equal(pool.indices, [[0, 2]])


def test_maxpool_whole_signal():
    x = np.array([[0.5, -1.0, 7.0, 2.0, 3.0]])
    out, pool = ag.maxpool1d(ag.constant(x), 5)
    assert out.data.tolist() == [[7.0]] and pool.indices.tolist() == [[2]]


def test_maxpool_drops_tail():
    out, pool = ag.maxpool1d(ag.constant(np.arange(7.0)[None, :]), 2)
    assert out.data.shape == (1, 3)
    assert (pool.input_len, pool.dropped) == (7, 1)


def test_maxpool_window_too_large():
    with pytest.raises(ValueError):
        ag.maxpool1d(ag.constant(np.ones((1, 3))), 4)


def test_maxunpool_scatter():
    pool = ag.PoolIndices(np.array([[1, 3]]), 4, 0)
    out = ag.maxunpool1d(ag.constant(np.array([[3.0, 5.0]])), pool, 4)
    np.testing.assert_array_equal(out.data, [[0, 3, 0, 5]])


def test_maxunpool_rejects_index_out_of_range():
    pool = ag.PoolIndices(np.array([[1, 3]]), 4, 0)
    with pytest.raises(ValueError):
        ag.maxunpool1d(ag.constant(np.array([[3.0, 5.0]])), pool, 3)


def test_unpool_of_pool_keeps_maxima_positions():
    x = np.array([[1.0, 4.0, 9.0, 2.0, -3.0, 0.0]])
    pooled, pool = ag.maxpool1d(ag.constant(x), 3)
    restored = ag.maxunpool1d(pooled, pool).data
    np.testing.assert_array_equal(restored, [[0, 0, 9, 2, 0, 0]])


def test_shape_algebra_random():
    rng = np.random.default_rng(4)
    for _ in range(50):
        length = int(rng.integers(8, 60))
        kernel = int(rng.integers(1, 8))
        stride = int(rng.integers(1, 4))
        window = int(rng.integers(2, 4))
        x = ag.constant(rng.normal(size=(2, length)))
        w = ag.constant(rng.normal(size=(3, 2, kernel)))
        h = ag.conv1d(x, w, ag.constant(np.zeros(3)), stride)
        assert h.length == (length - kernel) // stride + 1
        if h.length < window:
            continue
        pooled, pool = ag.maxpool1d(h, window)
        assert pooled.length == h.length // window
        assert ag.maxunpool1d(pooled, pool).length == h.length
        back = ag.transposed_conv1d(h, w, ag.constant(np.zeros(2)), stride)
        assert back.length == (h.length - 1) * stride + kernel <= length


# ----------------------------------------------------------------------
# Backward
# ----------------------------------------------------------------------
def test_sum_gradient_is_ones():
    x = ag.parameter(np.random.default_rng(5).normal(size=(2, 5)))
    ag.backward(ag.tensor_sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 5)))


def test_mean_squared_gradient_closed_form():
    rng = np.random.default_rng(6)
    x_data, c = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
    x = ag.parameter(x_data)
    ag.backward(ag.mean(ag.square(ag.sub(x, ag.constant(c)))))
    np.testing.assert_allclose(x.grad, 2 * (x_data - c) / 8, rtol=1e-12)


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError):
        ag.backward(ag.square(ag.parameter(np.ones((1, 3)))))


def test_shared_node_accumulates():
    x = ag.parameter(np.array([[1.0, 2.0]]))
    ag.backward(ag.tensor_sum(ag.add(x, x)))
    np.testing.assert_array_equal(x.grad, [[2.0, 2.0]])


def test_operator_sugar_matches_functions():
    a, b = ag.parameter(np.array([[1.0, 2.0]])), ag.parameter(np.array([[0.5, 0.5]]))
    out = 2.0 * (a - b) + b
    np.testing.assert_array_equal(out.data, [[1.5, 3.5]])
    out_sum = ag.tensor_sum(out)
    out_sum.backward()
    np.testing.assert_array_equal(b.grad, [[-1.0, -1.0]])


def test_deep_chain_does_not_recurse():
    x = ag.parameter(np.ones((1, 2)))
    h = x
    for _ in range(5000):
        h = ag.scale(h, 1.0)
    ag.backward(ag.tensor_sum(h))
    np.testing.assert_array_equal(x.grad, [[1.0, 1.0]])


# ----------------------------------------------------------------------
# Finite-difference oracle
# ----------------------------------------------------------------------
CONV_SHAPES = [
    # c_in, c_out, length, kernel, stride
    (1, 1, 8, 3, 1),
    (1, 3, 12, 4, 1),
    (2, 2, 11, 3, 2),
    (3, 1, 15, 5, 3),
    (2, 4, 9, 1, 1),
    (1, 2, 10, 10, 1),
]


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("c_in, c_out, length, kernel, stride", CONV_SHAPES)
def test_gradcheck_conv1d(c_in, c_out, length, kernel, stride, seed):
    rng = np.random.default_rng(seed)
    inputs = [rng.normal(size=(c_in, length)), rng.normal(size=(c_out, c_in, kernel)), rng.normal(size=c_out)]
    target = rng.normal(size=(c_out, (length - kernel) // stride + 1))
    ag.gradcheck(lambda t: squared_error(ag.conv1d(t[0], t[1], t[2], stride), target), inputs)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("c_x, c_out, length, kernel, stride", CONV_SHAPES)
def test_gradcheck_transposed_conv1d(c_x, c_out, length, kernel, stride, seed):
    rng = np.random.default_rng(100 + seed)
    length = max(1, length // 2)
    inputs = [rng.normal(size=(c_x, length)), rng.normal(size=(c_x, c_out, kernel)), rng.normal(size=c_out)]
    target = rng.normal(size=(c_out, (length - 1) * stride + kernel))
    ag.gradcheck(lambda t: squared_error(ag.transposed_conv1d(t[0], t[1], t[2], stride), target), inputs)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("slope", [0.0, 0.01, 0.3])
def test_gradcheck_leaky_relu(slope, seed):
    rng = np.random.default_rng(200 + seed)
    x = away_from_zero(rng, (2, 7))
    target = rng.normal(size=(2, 7))
    ag.gradcheck(lambda t: squared_error(ag.leaky_relu(t[0], slope), target), [x])


def distinct_values(rng, shape):
    return rng.permutation(int(np.prod(shape))).reshape(shape) * 0.1 + rng.uniform(0, 0.01, size=shape)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("window, length", [(2, 8), (3, 10), (4, 17)])
def test_gradcheck_maxpool1d(window, length, seed):
    rng = np.random.default_rng(300 + seed)
    x = distinct_values(rng, (2, length))
    target = rng.normal(size=(2, length // window))
    ag.gradcheck(lambda t: squared_error(ag.maxpool1d(t[0], window)[0], target), [x])


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("window, length", [(2, 8), (3, 10), (4, 17)])
def test_gradcheck_maxunpool1d(window, length, seed):
    rng = np.random.default_rng(400 + seed)
    _, pool = ag.maxpool1d(ag.constant(distinct_values(rng, (2, length))), window)
    y = rng.normal(size=(2, length // window))
    target = rng.normal(size=(2, length))
    ag.gradcheck(lambda t: squared_error(ag.maxunpool1d(t[0], pool, length), target), [y])


SMALL_OPS = {
    "mean": lambda t: ag.mean(ag.square(t[0])),
    "scale": lambda t: ag.tensor_sum(ag.square(ag.scale(t[0], -1.7))),
    "sub": lambda t: ag.tensor_sum(ag.square(ag.sub(t[0], t[1]))),
    "add": lambda t: ag.tensor_sum(ag.square(ag.add(t[0], t[1]))),
    "add_n": lambda t: ag.tensor_sum(ag.square(ag.add_n([t[0], t[1], t[0]]))),
    "reshape": lambda t: ag.tensor_sum(ag.square(ag.sub(ag.reshape(t[0], (4, 3)), ag.constant(np.ones((4, 3)))))),
    "flatten": lambda t: ag.tensor_sum(ag.square(ag.sub(ag.flatten(t[0]), ag.flatten(t[1])))),
    "take_row": lambda t: ag.tensor_sum(ag.square(ag.take_row(ag.reshape(t[0], (3, 4)), 1))),
    "pad_right": lambda t: ag.tensor_sum(ag.square(ag.add(ag.pad_right(t[0], 9), ag.constant(np.ones((2, 9)))))),
}


@pytest.mark.parametrize("seed", [0, 1])
@pytest.mark.parametrize("op", sorted(SMALL_OPS))
def test_gradcheck_small_ops(op, seed):
    rng = np.random.default_rng(500 + seed)
    shape = (2, 6)
    ag.gradcheck(SMALL_OPS[op], [rng.normal(size=shape), rng.normal(size=shape)])


STACKS = [
    (24, [LayerSpec(3, 3, 1, 2)]),
    (30, [LayerSpec(2, 4, 2, 2)]),
    (33, [LayerSpec(3, 3, 1, 2), LayerSpec(2, 3, 1, 2)]),
    (20, [LayerSpec(2, 4, 3, 1)]),
]


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("input_len, layers", STACKS)
def test_gradcheck_autoencoder_stack(input_len, layers, seed):
    arch = ArchConfig(input_len, tuple(layers), leaky_slope=0.1)
    model = init_model(arch, seed)
    names = list(model.named_parameters())
    rng = np.random.default_rng(600 + seed)
    x = rng.normal(size=(1, input_len))
    # zero biases put decoder activations exactly on the leaky kink after unpooling
    values = [rng.normal(scale=0.5, size=v.shape) if n.endswith(".bias") else v
              for n, v in model.named_parameters().items()]

    def loss(tensors):
        params = dict(zip(names, tensors[1:]))
        features, trace = encode_graph(model, params, tensors[0])
        reconstruction = decode_graph(model, params, features, trace)
        return ag.mean(ag.square(ag.sub(reconstruction, ag.constant(x))))

    ag.gradcheck(loss, [x] + values)


def test_gradcheck_reports_wrong_gradient():
    def broken(t):
        out = ag.tensor_sum(ag.square(t[0]))
        return ag._make(out.data, (t[0],), lambda g: (np.zeros_like(t[0].data),))

    with pytest.raises(AssertionError):
        ag.gradcheck(broken, [np.ones((1, 3))])


# ----------------------------------------------------------------------
# Initialization and optimizer
# ----------------------------------------------------------------------
def test_glorot_bounds():
    weights = ag.glorot_uniform(np.random.default_rng(7), (8, 4, 5), 20, 40)
    assert weights.dtype == np.float32
    assert np.all(np.abs(weights) <= np.sqrt(6.0 / 60) + 1e-7)


def test_adam_first_step_moves_by_lr():
    params, state = ag.optimizer_step({"theta": np.zeros(1)}, {"theta": np.ones(1)}, ag.OptimizerState(lr=0.1))
    np.testing.assert_allclose(params["theta"], [-0.1], rtol=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_keeps_parameters():
    theta = np.array([0.3, -2.0])
    params, _ = ag.optimizer_step({"theta": theta}, {"theta": np.zeros(2)}, ag.OptimizerState())
    np.testing.assert_array_equal(params["theta"], theta)


def test_adam_is_deterministic_and_pure():
    theta = np.array([0.3, -2.0])
    grads = {"theta": np.array([0.1, 0.2])}
    state = ag.OptimizerState()
    first = ag.optimizer_step({"theta": theta}, grads, state)
    second = ag.optimizer_step({"theta": theta}, grads, state)
    np.testing.assert_array_equal(first[0]["theta"], second[0]["theta"])
    assert state.step == 0
    np.testing.assert_array_equal(theta, [0.3, -2.0])


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(NonFiniteGradientError) as info:
        ag.optimizer_step({"a": np.zeros(1), "b": np.zeros(1)}, {"a": np.ones(1), "b": np.array([np.nan])},
                          ag.OptimizerState())
    assert info.value.parameter_name == "b"


def test_adam_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        ag.optimizer_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, ag.OptimizerState())
