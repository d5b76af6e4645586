"""Feedforward nets: evaluation, derivatives, activation regions, and
serialization, cross-checked against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sncbf import nn


def relu_step_net():
    """B(x) = max(x1, 0) - 0.5 on R^2."""
    w1 = np.array([[1.0, 0.0]])
    r1 = np.array([0.0])
    w2 = np.array([[1.0]])
    b2 = np.array([-0.5])
    return nn.Mlp([w1, w2], [r1, b2], "relu")


def random_net(seed, hidden=5, activation="softplus", n_x=2):
    return nn.init_mlp([n_x, hidden, 1], activation, seed)


def test_forward_hand_example():
    net = relu_step_net()
    assert nn.forward(net, [1.0, 0.3]) == pytest.approx(0.5)
    assert nn.forward(net, [0.0, -1.0]) == pytest.approx(-0.5)


def test_forward_batch_matches_forward():
    net = random_net(0)
    pts = np.random.default_rng(1).uniform(-2, 2, size=(40, 2))
    vals = nn.forward_batch(net, pts)
    assert vals.shape == (40,)
    for x, v in zip(pts, vals):
        assert nn.forward(net, x) == pytest.approx(v)


@pytest.mark.parametrize("activation", ["softplus", "tanh", "relu"])
def test_jacobian_matches_finite_differences(activation):
    net = random_net(2, activation=activation)
    rng = np.random.default_rng(3)
    h = 1e-6
    for x in rng.uniform(-1.5, 1.5, size=(15, 2)):
        J = nn.jacobian(net, x)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (nn.forward(net, x + e) - nn.forward(net, x - e)) / (2 * h)
            assert J[i] == pytest.approx(fd, abs=5e-5)


def test_jacobian_hand_example():
    net = relu_step_net()
    assert nn.jacobian(net, [1.0, 0.7]) == pytest.approx([1.0, 0.0])
    assert nn.jacobian(net, [-1.0, 0.7]) == pytest.approx([0.0, 0.0])


def test_relu_jacobian_nonsmooth_point_raises():
    net = relu_step_net()
    with pytest.raises(nn.NonsmoothPoint):
        nn.jacobian(net, [0.0, 0.3])


def test_relu_hessian_raises():
    with pytest.raises(nn.NnError):
        nn.hessian(relu_step_net(), [1.0, 0.0])


@pytest.mark.parametrize("activation", ["softplus", "tanh"])
def test_hessian_matches_finite_differences(activation):
    net = random_net(4, activation=activation)
    rng = np.random.default_rng(5)
    h = 1e-4
    for x in rng.uniform(-1.0, 1.0, size=(5, 2)):
        H = nn.hessian(net, x)
        assert H == pytest.approx(H.T)
        for i in range(2):
            for j in range(2):
                ei = np.zeros(2); ei[i] = h
                ej = np.zeros(2); ej[j] = h
                fd = (
                    nn.forward(net, x + ei + ej)
                    - nn.forward(net, x + ei - ej)
                    - nn.forward(net, x - ei + ej)
                    + nn.forward(net, x - ei - ej)
                ) / (4 * h * h)
                assert H[i, j] == pytest.approx(fd, abs=1e-4)


def test_deep_hessian_matches_single_hidden_formula():
    """Two-hidden-layer Hessian (forward-over-reverse) agrees with finite
    differences too."""
    net = nn.init_mlp([2, 4, 3, 1], "tanh", 7)
    x = np.array([0.3, -0.4])
    H = nn.hessian(net, x)
    h = 1e-4
    for i in range(2):
        ei = np.zeros(2); ei[i] = h
        fd = (nn.forward(net, x + ei) - 2 * nn.forward(net, x) + nn.forward(net, x - ei)) / h**2
        assert H[i, i] == pytest.approx(fd, abs=1e-3)


def test_hessian_trace_term_matches_direct_trace():
    net = random_net(8)
    V = np.array([[0.1, 0.02], [0.0, 0.2]])
    x = np.array([0.4, -0.9])
    H = nn.hessian(net, x)
    direct = 0.5 * np.trace(V.T @ H @ V)
    assert nn.hessian_trace_term(net, x, V) == pytest.approx(direct)


def test_activation_set_hand_example():
    net = relu_step_net()
    assert nn.activation_set(net, [2.0, 0.0]) == (1,)
    assert nn.activation_set(net, [-1.0, 0.0]) == (0,)
    assert nn.activation_set(net, [0.0, 0.0]) == (0,)  # strict positivity


def test_activation_sets_batch_consistent():
    net = random_net(9, activation="relu", hidden=4)
    pts = np.random.default_rng(0).uniform(-2, 2, size=(30, 2))
    batch = nn.activation_sets_batch(net, pts)
    assert len(batch) == 30
    for x, S in zip(pts, batch):
        assert nn.activation_set(net, x) == S


def test_region_linear_form_hand_example():
    net = relu_step_net()
    on = nn.region_linear_form(net, (1,))
    off = nn.region_linear_form(net, (0,))
    assert on.w == pytest.approx([1.0, 0.0])
    assert on.r == pytest.approx(-0.5)
    assert off.w == pytest.approx([0.0, 0.0])
    assert off.r == pytest.approx(-0.5)


def test_region_linear_form_matches_forward_inside_region():
    net = random_net(6, activation="relu", hidden=4)
    rng = np.random.default_rng(11)
    for x in rng.uniform(-2, 2, size=(25, 2)):
        S = nn.activation_set(net, x)
        form = nn.region_linear_form(net, S)
        assert float(form.w @ x + form.r) == pytest.approx(nn.forward(net, x))


def test_init_mlp_shapes_and_determinism():
    a = nn.init_mlp([3, 7, 1], "relu", 42)
    b = nn.init_mlp([3, 7, 1], "relu", 42)
    c = nn.init_mlp([3, 7, 1], "relu", 43)
    assert a.layer_sizes == [3, 7, 1]
    assert a.n_x == 3
    assert np.array_equal(a.weights[0], b.weights[0])
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_output_dim_must_be_one():
    with pytest.raises(nn.NnError):
        nn.Mlp(
            [np.zeros((3, 2)), np.zeros((2, 3))],
            [np.zeros(3), np.zeros(2)],
            "relu",
        )


def test_save_load_round_trip(tmp_path):
    net = random_net(13, activation="tanh")
    path = tmp_path / "model.json"
    nn.save(net, str(path))
    back = nn.load(str(path))
    assert back.activation == net.activation
    pts = np.random.default_rng(1).uniform(-2, 2, size=(20, 2))
    assert nn.forward_batch(back, pts) == pytest.approx(nn.forward_batch(net, pts))


def test_from_dict_rejects_bad_layout():
    net = random_net(0)
    d = nn.to_dict(net)
    d["layer_sizes"] = [2, 99, 1]
    with pytest.raises(nn.NnError):
        nn.from_dict(d)


def test_copy_is_independent():
    net = random_net(1)
    dup = net.copy()
    dup.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != dup.weights[0][0, 0]


def test_softplus_large_preactivation_no_overflow():
    w1 = np.array([[100.0, 0.0]])
    net = nn.Mlp([w1, np.array([[1.0]])], [np.array([0.0]), np.array([0.0])], "softplus")
    v = nn.forward(net, [10.0, 0.0])
    assert np.isfinite(v)
    assert v == pytest.approx(1000.0, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_relu_piecewise_linearity(seed):
    """Within one activation region the net is exactly affine."""
    rng = np.random.default_rng(seed)
    net = nn.init_mlp([2, 3, 1], "relu", seed)
    x = rng.uniform(-2, 2, 2)
    S = nn.activation_set(net, x)
    form = nn.region_linear_form(net, S)
    assert nn.forward(net, x) == pytest.approx(float(form.w @ x + form.r), abs=1e-9)
