import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reconboost.errors import FormatError, InvalidInputError, InvalidStateError, NumericalFailureError
from reconboost.netcore import (
    GradientSet,
    MlpNet,
    backward,
    encoder_forward,
    fd_gradient,
    flatten_params,
    forward,
    head_affine,
    init_mlp,
    load_snapshot,
    param_digest,
    save_snapshot,
    sgd_step,
)
from reconboost.numkit import RandomStream
from reconboost.objective import ce_grad_logits, ce_loss, one_hot


def _net(dims=(5, 7, 4, 3), seed=0, bias_scale=0.3):
    net = init_mlp(dims, RandomStream(seed))
    rs = np.random.default_rng(seed + 100)
    for b in net.biases:
        b[:] = bias_scale * rs.standard_normal(b.shape)
    return net


def _batch(n=6, d=5, seed=1):
    return np.random.default_rng(seed).standard_normal((n, d))


@pytest.mark.parametrize(
    "dims, count",
    [
        ([4, 8, 3], 67),
        ([16, 64, 64, 6], 16 * 64 + 64 + 64 * 64 + 64 + 64 * 6 + 6),
        ([2, 2], 6),
    ],
)
def test_param_count(dims, count):
    assert init_mlp(dims, RandomStream(0)).num_params() == count


def test_init_deterministic():
    a = init_mlp([4, 8, 3], RandomStream(42))
    b = init_mlp([4, 8, 3], RandomStream(42))
    assert flatten_params(a).tobytes() == flatten_params(b).tobytes()


def test_init_he_scale():
    net = init_mlp([100, 200, 10], RandomStream(7))
    std = net.weights[0].std()
    assert abs(std - np.sqrt(2 / 100)) <= 0.1 * np.sqrt(2 / 100)
    assert all(np.all(b == 0) for b in net.biases)


@pytest.mark.parametrize("dims", [[4], [4, 0, 3], [-1, 3]])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(InvalidInputError):
        init_mlp(dims, RandomStream(0))


def test_forward_zero_net():
    net = init_mlp([3, 4, 2], RandomStream(0))
    for p in net.params():
        p[...] = 0.0
    z, _ = forward(net, _batch(5, 3))
    assert np.all(z == 0)


def test_forward_identity_layer():
    net = MlpNet((3, 3), [np.eye(3)], [np.zeros(3)])
    x = _batch(4, 3)
    np.testing.assert_array_equal(forward(net, x)[0], x)


@pytest.mark.parametrize("n", [1, 2, 17])
def test_forward_shape(n):
    z, _ = forward(_net(), _batch(n))
    assert z.shape == (n, 3)


def test_forward_shape_mismatch():
    with pytest.raises(InvalidInputError):
        forward(_net(), _batch(3, 4))


def test_encoder_head_split():
    net, x = _net(), _batch()
    np.testing.assert_array_equal(forward(net, x)[0], head_affine(net, encoder_forward(net, x)))


def test_backward_zero_dlogits():
    net = _net()
    _, cache = forward(net, _batch())
    g = backward(net, cache, np.zeros((6, 3)))
    assert np.all(g.flat() == 0)


@pytest.mark.parametrize("c", [-2.0, 0.5, 3.0])
def test_backward_linear(c):
    net = _net()
    _, cache = forward(net, _batch())
    d = np.random.default_rng(3).standard_normal((6, 3))
    np.testing.assert_allclose(backward(net, cache, c * d).flat(), c * backward(net, cache, d).flat(), atol=1e-12, rtol=0)


def test_backward_stale_cache():
    net = _net()
    z, cache = forward(net, _batch())
    sgd_step(net, backward(net, cache, np.ones_like(z)), 0.1)
    with pytest.raises(InvalidStateError):
        backward(net, cache, np.ones_like(z))


def test_backward_other_net_cache():
    a, b = _net(seed=0), _net(seed=0)
    z, cache = forward(a, _batch())
    with pytest.raises(InvalidStateError):
        backward(b, cache, np.ones_like(z))


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_fd_on_ce(seed):
    net = _net(seed=seed)
    x = _batch(seed=seed + 10)
    y = one_hot(np.random.default_rng(seed).integers(0, 3, 6), 3)
    z, cache = forward(net, x)
    g = backward(net, cache, ce_grad_logits(z, y))
    fd = fd_gradient(lambda n: ce_loss(forward(n, x)[0], y), net)
    err = np.abs(g.flat() - fd.flat()) / np.maximum(1.0, np.abs(g.flat()))
    assert err.max() <= 1e-6


def test_sgd_arithmetic():
    net = MlpNet((1, 1), [np.array([[1.0]])], [np.array([1.0])])
    sgd_step(net, GradientSet([np.array([[0.5]])], [np.array([0.5])]), 0.1)
    assert net.weights[0][0, 0] == pytest.approx(0.95, abs=1e-15)
    assert net.biases[0][0] == pytest.approx(0.95, abs=1e-15)


def test_sgd_zero_lr_bitwise():
    net = _net()
    before = flatten_params(net).tobytes()
    z, cache = forward(net, _batch())
    sgd_step(net, backward(net, cache, np.ones_like(z)), 0.0)
    assert flatten_params(net).tobytes() == before


def test_sgd_clip():
    # |g| = 10 (6-8-0-0), clipped to 5 -> step of g * 0.5
    net = MlpNet((2, 1), [np.zeros((2, 1))], [np.zeros(1)])
    g = GradientSet([np.array([[6.0], [8.0]])], [np.array([0.0])])
    sgd_step(net, g, 1.0, clip_norm=5.0)
    np.testing.assert_allclose(net.weights[0].ravel(), [-3.0, -4.0], atol=1e-15)


def test_sgd_no_clip_below_threshold():
    net = MlpNet((2, 1), [np.zeros((2, 1))], [np.zeros(1)])
    sgd_step(net, GradientSet([np.array([[0.3], [0.4]])], [np.array([0.0])]), 1.0, clip_norm=5.0)
    np.testing.assert_allclose(net.weights[0].ravel(), [-0.3, -0.4])


def test_sgd_changes_something():
    net = _net()
    before = param_digest(net)
    z, cache = forward(net, _batch())
    sgd_step(net, backward(net, cache, np.ones_like(z)), 0.1)
    assert param_digest(net) != before


def test_sgd_shape_mismatch():
    with pytest.raises(InvalidInputError):
        sgd_step(_net(), GradientSet([np.zeros((2, 2))], [np.zeros(2)]), 0.1)


def test_sgd_negative_lr():
    net = _net()
    with pytest.raises(InvalidInputError):
        sgd_step(net, GradientSet([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases]), -0.1)


def test_fd_square():
    net = MlpNet((1, 1), [np.array([[3.0]])], [np.array([0.0])])
    g = fd_gradient(lambda n: float(n.weights[0][0, 0] ** 2), net, 1e-5)
    assert g.weights[0][0, 0] == pytest.approx(6.0, abs=1e-9)


@given(st.floats(1e-4, 1.0))
@settings(max_examples=20, deadline=None)
def test_fd_exact_on_quadratic(eps):
    net = MlpNet((1, 1), [np.array([[1.5]])], [np.array([-0.5])])
    g = fd_gradient(lambda n: float(2 * n.weights[0][0, 0] ** 2 + 3 * n.biases[0][0]), net, eps)
    assert g.weights[0][0, 0] == pytest.approx(6.0, abs=1e-9)
    assert g.biases[0][0] == pytest.approx(3.0, abs=1e-9)


def test_fd_restores_params():
    net = _net()
    before = flatten_params(net).tobytes()
    fd_gradient(lambda n: float(np.sum(forward(n, _batch())[0])), net)
    assert flatten_params(net).tobytes() == before


def test_fd_nonfinite():
    net = MlpNet((1, 1), [np.array([[0.0]])], [np.array([0.0])])
    with pytest.raises(NumericalFailureError):
        # finite on the + side only
        fd_gradient(lambda n: 1.0 if n.weights[0][0, 0] > 0 else float("inf"), net)


def test_snapshot_roundtrip(tmp_path):
    net = _net(seed=4)
    save_snapshot(net, tmp_path / "n.bin")
    back = load_snapshot(tmp_path / "n.bin")
    assert back.layer_dims == net.layer_dims
    assert flatten_params(back).tobytes() == flatten_params(net).tobytes()


@pytest.mark.parametrize("content", [b"", b"not json\n", b'{"layer_dims": [2, 1]}\n' + b"\x00" * 7])
def test_snapshot_corrupt(tmp_path, content):
    p = tmp_path / "bad.bin"
    p.write_bytes(content)
    with pytest.raises(FormatError):
        load_snapshot(p)
