import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import adam_reference, fd_check
from tcomm import nn
from tcomm.errors import (
    CorruptHeaderError,
    DomainError,
    FormatError,
    NumericError,
    ShapeError,
    StateError,
    TruncatedFileError,
    VersionError,
)
from tcomm.nn import Dense, Dropout, GaussianNoise, Network, PowerNorm
from tcomm.rng import RngStreams, make_rng


def net_of(layers, seed=0):
    return Network(layers).init_params(make_rng(seed, "init"))


def linear_functional(shape, seed):
    R = np.random.default_rng(seed).standard_normal(shape)
    return (lambda out: float(np.sum(out * R))), (lambda out: R)


# ---------------------------------------------------------------- scalar examples


def test_dense_scalar_chain_rule():
    net = Network([Dense(1, 1)], params=np.array([2.0, 0.0]))
    out, cache = nn.forward(net, np.array([[3.0]]))
    assert out[0, 0] == 6.0
    grads, gx = nn.backward(net, cache, np.array([[1.0]]))
    assert grads.tolist() == [3.0, 1.0]
    assert gx[0, 0] == 2.0


def test_gaussian_noise_input_grad_is_identity():
    net = Network([GaussianNoise(5.0)])
    x = np.random.default_rng(0).standard_normal((4, 6))
    _, cache = nn.forward(net, x, "eval", make_rng(0, "channel"))
    gy = np.random.default_rng(1).standard_normal((4, 6))
    _, gx = nn.backward(net, cache, gy)
    assert np.array_equal(gx, gy)


def test_backward_rejects_foreign_cache():
    a = net_of([Dense(3, 2)])
    b = net_of([Dense(3, 2)])
    _, cache = nn.forward(a, np.ones((1, 3)))
    with pytest.raises(StateError):
        nn.backward(b, cache, np.ones((1, 2)))


def test_forward_shape_and_mode_errors():
    net = net_of([Dense(3, 2)])
    with pytest.raises(ShapeError):
        nn.forward(net, np.ones((2, 4)))
    with pytest.raises(ValueError):
        nn.forward(net, np.ones((2, 3)), mode="test")
    with pytest.raises(ShapeError):
        Network([Dense(3, 4), Dense(5, 2)])
    with pytest.raises(ShapeError):
        Network([Dense(3, 4, "softmax"), Dense(4, 2)])


def test_nonfinite_output_names_layer():
    net = Network([Dense(1, 1), Dense(1, 1, "relu")], params=np.array([1e308, 0.0, 1.0, 0.0]))
    with pytest.raises(NumericError) as info:
        nn.forward(net, np.array([[10.0]]))
    assert info.value.layer == 0


# ---------------------------------------------------------------- gradient oracle

LAYER_CASES = {
    "dense_linear": [Dense(5, 4, "linear")],
    "dense_relu": [Dense(5, 4, "relu")],
    "dense_tanh": [Dense(5, 4, "tanh")],
    "dense_softmax": [Dense(5, 4, "softmax")],
    "dropout": [Dense(5, 6, "tanh"), Dropout(0.3), Dense(6, 3)],
    "powernorm": [Dense(5, 6), PowerNorm()],
    "gaussian_noise": [Dense(5, 4, "tanh"), GaussianNoise(3.0), Dense(4, 3)],
}


@pytest.mark.parametrize("case", sorted(LAYER_CASES))
@pytest.mark.parametrize("point", range(10))
def test_layer_gradients_match_finite_differences(case, point):
    net = net_of(LAYER_CASES[case], seed=point)
    rng = np.random.default_rng(100 + point)
    x = rng.standard_normal((3, 5))
    f, fg = linear_functional((3, net.out_dim), point)
    ep, ex = fd_check([net], x, f, fg, rng)
    assert ep < 1e-5 and ex < 1e-5, (ep, ex)


def test_powernorm_jacobian_is_exact():
    net = Network([PowerNorm()])
    x = np.random.default_rng(3).standard_normal((2, 4))
    f, fg = linear_functional((2, 4), 7)
    ep, ex = fd_check([net], x, f, fg, np.random.default_rng(0))
    assert ex < 1e-8


# ---------------------------------------------------------------- invariants


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(2, 6), st.floats(-50, 50), st.integers(0, 2**31))
def test_softmax_rows_are_distributions(n, k, shift, seed):
    z = np.random.default_rng(seed).standard_normal((n, k)) * 5 + shift
    p = nn.kernels.softmax_rows(z)
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12)
    assert np.all(p > 0) and np.all(p < 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 64), st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_powernorm_unit_mean_square(n, d, scale, seed):
    x = np.random.default_rng(seed).standard_normal((n, d)) * scale
    y, _ = nn.forward(Network([PowerNorm()]), x)
    assert np.all(np.abs(np.mean(y**2, axis=1) - 1) <= 1e-12)


def test_inverted_dropout():
    net = Network([Dropout(0.25)])
    x = np.ones((200, 50))
    y_eval, _ = nn.forward(net, x, "eval")
    assert np.array_equal(y_eval, x)
    y_train, cache = nn.forward(net, x, "train", RngStreams(0))
    survivors = np.unique(y_train)
    assert set(survivors.tolist()) <= {0.0, 1 / 0.75}
    assert abs(np.mean(y_train == 0) - 0.25) < 0.01
    assert abs(np.mean(y_train) - 1.0) < 0.02


def test_forward_is_deterministic_per_stream():
    net = net_of([Dense(4, 8, "relu"), Dropout(0.2), Dense(8, 2), PowerNorm(), GaussianNoise(0.0)])
    x = np.random.default_rng(0).standard_normal((5, 4))
    a, _ = nn.forward(net, x, "train", RngStreams(9))
    b, _ = nn.forward(net, x, "train", RngStreams(9))
    c, _ = nn.forward(net, x, "train", RngStreams(10))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_noise_layer_variance():
    layer = GaussianNoise(3.0)
    assert math.isclose(layer.sigma**2, 10 ** (-0.3), rel_tol=1e-12)


@given(st.lists(st.sampled_from([4, 7, 16, 33]), min_size=2, max_size=5))
def test_param_count_matches_storage(widths):
    layers = []
    for a, b in zip(widths[:-1], widths[1:]):
        layers += [Dense(a, b, "relu"), Dropout(0.1)]
    net = Network(layers)
    brute = sum(W.size + b.size for W, b in net.weights.values())
    assert nn.param_count(net) == brute == net.params.size


# ---------------------------------------------------------------- loss


def test_ce_examples():
    v, _ = nn.loss("ce", np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]))
    assert abs(v - math.log(2)) < 1e-12
    v, _ = nn.loss("ce", np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))
    assert 0 <= v <= 1e-11
    v, _ = nn.loss("ce", np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]))
    assert abs(v - (-math.log(1e-12))) < 1e-9


def test_ce_rejects_non_probabilities():
    with pytest.raises(DomainError):
        nn.loss("ce", np.array([[1.5, -0.5]]), np.array([[1.0, 0.0]]))


def test_mse_value_and_gradient():
    p = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert nn.loss("mse", p, p)[0] == 0.0
    t = np.zeros_like(p)
    v, g = nn.loss("mse", p, t)
    assert v == 7.5
    h = 1e-6
    num = np.zeros_like(p)
    for j in np.ndindex(p.shape):
        e = np.zeros_like(p)
        e[j] = h
        num[j] = (nn.loss("mse", p + e, t)[0] - nn.loss("mse", p - e, t)[0]) / (2 * h)
    assert np.allclose(g, num, rtol=1e-7)


def test_ce_gradient_matches_fd():
    rng = np.random.default_rng(0)
    p = rng.dirichlet([2, 2, 2], size=4)
    t = np.eye(3)[[0, 2, 1, 1]]
    _, g = nn.loss("ce", p, t)
    h = 1e-7
    for j in np.ndindex(p.shape):
        e = np.zeros_like(p)
        e[j] = h
        num = (nn.loss("ce", p + e, t)[0] - nn.loss("ce", p - e, t)[0]) / (2 * h)
        assert abs(num - g[j]) < 1e-6


# ---------------------------------------------------------------- Adam


def test_adam_first_step():
    p = np.array([1.0])
    st_ = nn.AdamState.for_params(p)
    nn.adam_step(st_, p, np.array([0.5]))
    assert st_.step == 1
    expected = adam_reference(1.0, [0.5])
    assert abs(p[0] - expected) < 1e-15
    assert abs((p[0] - 1.0) - (-0.001 * 0.5 / (0.5 + 1e-8))) < 1e-15


def test_adam_matches_reference_over_many_steps():
    grads = np.random.default_rng(2).standard_normal(50)
    p = np.array([0.3])
    st_ = nn.AdamState.for_params(p, lr=0.01)
    for g in grads:
        nn.adam_step(st_, p, np.array([g]))
    assert abs(p[0] - adam_reference(0.3, grads, lr=0.01)) < 1e-13


def test_adam_zero_grad_and_monotone():
    p = np.array([2.0, 2.0])
    st_ = nn.AdamState.for_params(p)
    nn.adam_step(st_, p, np.array([0.0, 1.0]))
    first = p[1]
    nn.adam_step(st_, p, np.array([0.0, 1.0]))
    assert p[0] == 2.0
    assert 2.0 > first > p[1]


def test_adam_rejects_nonfinite():
    p = np.zeros(2)
    with pytest.raises(NumericError):
        nn.adam_step(nn.AdamState.for_params(p), p, np.array([np.nan, 0.0]))


# ---------------------------------------------------------------- weight files


def trained_like_net():
    return Network(
        [Dense(6, 5, "relu"), Dropout(0.2), Dense(5, 3, "tanh"), PowerNorm(), GaussianNoise(4.0), Dense(3, 2, "softmax")],
        seed=42,
    ).init_params(make_rng(1, "init"))


def test_weights_round_trip_bit_exact(tmp_path):
    net = trained_like_net()
    path = tmp_path / "w.tcnn"
    nn.save_weights(net, path)
    back = nn.load_weights(path)
    assert back.layers == net.layers and back.seed == 42
    assert back.params.tobytes() == net.params.tobytes()
    x = np.random.default_rng(0).standard_normal((4, 6))
    a, _ = nn.forward(net, x, "eval", make_rng(0, "channel"))
    b, _ = nn.forward(back, x, "eval", make_rng(0, "channel"))
    assert a.tobytes() == b.tobytes()
    assert path.read_bytes()[:4] == b"TCNN"


def test_weights_load_errors(tmp_path):
    net = trained_like_net()
    path = tmp_path / "w.tcnn"
    nn.save_weights(net, path)
    data = path.read_bytes()

    (tmp_path / "trunc").write_bytes(data[:-9])
    with pytest.raises(TruncatedFileError):
        nn.load_weights(tmp_path / "trunc")

    (tmp_path / "ver").write_bytes(data[:4] + (7).to_bytes(2, "little") + data[6:])
    with pytest.raises(VersionError):
        nn.load_weights(tmp_path / "ver")

    (tmp_path / "magic").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        nn.load_weights(tmp_path / "magic")

    # first layer declared 6x4 instead of 6x5: payload length no longer matches
    head = 4 + 14 + 1
    bad = bytearray(data)
    bad[head + 4:head + 8] = (4).to_bytes(4, "little")
    (tmp_path / "shape").write_bytes(bytes(bad))
    with pytest.raises(ShapeError):
        nn.load_weights(tmp_path / "shape")

    bad = bytearray(data)
    bad[head + 8] = 99
    (tmp_path / "act").write_bytes(bytes(bad))
    with pytest.raises(CorruptHeaderError):
        nn.load_weights(tmp_path / "act")
