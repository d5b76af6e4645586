"""Semidefinite Lipschitz certificates: activation slope bounds, certificate
matrix assembly, effective weights, and the log-det barrier loss."""

import numpy as np
import pytest

from sncbf import lmi, nn


def test_sigma_prime_bounds_softplus():
    assert lmi.sigma_prime_bounds("softplus", 1) == pytest.approx((0.0, 1.0))
    assert lmi.sigma_prime_bounds("softplus", 2) == pytest.approx((0.0, 0.25))
    lo, hi = lmi.sigma_prime_bounds("softplus", 3)
    assert hi == pytest.approx(1.0 / (6.0 * np.sqrt(3.0)))
    assert lo == pytest.approx(-hi)


def test_sigma_prime_bounds_tanh():
    assert lmi.sigma_prime_bounds("tanh", 1) == pytest.approx((0.0, 1.0))
    lo2, hi2 = lmi.sigma_prime_bounds("tanh", 2)
    assert hi2 == pytest.approx(4.0 / (3.0 * np.sqrt(3.0)))
    assert lo2 == pytest.approx(-hi2)
    lo3, hi3 = lmi.sigma_prime_bounds("tanh", 3)
    assert (lo3, hi3) == pytest.approx((-2.0, 2.0 / 3.0))


@pytest.mark.parametrize("activation", ["softplus", "tanh"])
@pytest.mark.parametrize("order", [1, 2, 3])
def test_sigma_prime_bounds_contain_sampled_derivatives(activation, order):
    """The reported intervals really enclose the corresponding activation
    derivative, evaluated analytically on a dense grid."""
    z = np.linspace(-20.0, 20.0, 20_001)
    if activation == "softplus":
        s = 1.0 / (1.0 + np.exp(-z))
        vals = {1: s, 2: s * (1 - s), 3: s * (1 - s) * (1 - 2 * s)}[order]
    else:
        t = np.tanh(z)
        vals = {
            1: 1 - t**2,
            2: -2 * t * (1 - t**2),
            3: -2 * (1 - t**2) * (1 - 3 * t**2),
        }[order]
    lo, hi = lmi.sigma_prime_bounds(activation, order)
    assert vals.min() >= lo - 1e-9
    assert vals.max() <= hi + 1e-9
    # And the interval is tight: the extremes are approached on the grid.
    assert vals.max() >= hi - 1e-3
    assert vals.min() <= lo + 1e-3


def test_build_m_matrix_zero_weights_block_diagonal():
    M = 3
    W1 = np.zeros((M, 2))
    W2 = np.zeros((1, M))
    Mx = lmi.build_m_matrix(W1, W2, np.ones(M), 1.0, 0.0, 1.0)
    assert Mx.shape == (2 + M + 1, 2 + M + 1)
    assert Mx == pytest.approx(Mx.T)
    eigs = np.linalg.eigvalsh(Mx)
    assert sorted(set(np.round(eigs, 9))) == pytest.approx([1.0, 2.0])
    assert lmi.is_psd(Mx)


def test_is_psd_tolerance():
    assert lmi.is_psd(np.eye(2))
    assert lmi.is_psd(np.diag([1.0, -1e-10]))  # numerical noise tolerated
    assert not lmi.is_psd(np.diag([1.0, -1e-3]))


def test_effective_weights_hand_example():
    W1 = np.array([[1.0, 2.0], [3.0, 4.0]])
    W2 = np.array([5.0, 6.0])
    eff = lmi.effective_weights(W1, W2, np.eye(2))
    assert eff.W2_hat == pytest.approx(np.array([[5.0, 18.0], [10.0, 24.0]]))
    assert eff.W2_bar == pytest.approx(np.array([25.0, 150.0]))


def test_effective_weights_scales_with_diffusion():
    W1 = np.array([[1.0, 2.0]])
    W2 = np.array([1.0])
    eff = lmi.effective_weights(W1, W2, np.diag([0.1, 0.2]))
    assert eff.W2_bar == pytest.approx([1.0 * (1.0 * 0.01 + 4.0 * 0.04)])


def test_effective_weights_rejects_non_diagonal():
    with pytest.raises(Exception):
        lmi.effective_weights(np.ones((2, 2)), np.ones(2), np.array([[0.1, 0.05], [0.0, 0.1]]))


def test_effective_weights_jacobian_identity():
    """W2_hat sigma'(z) must reproduce the network gradient."""
    net = nn.init_mlp([2, 5, 1], "softplus", 3)
    W1, W2 = net.weights[0], net.weights[1].ravel()
    eff = lmi.effective_weights(W1, W2, np.eye(2))
    rng = np.random.default_rng(0)
    for x in rng.uniform(-2, 2, size=(20, 2)):
        z = W1 @ x + net.biases[0]
        sig1 = 1.0 / (1.0 + np.exp(-z))
        assert eff.W2_hat @ sig1 == pytest.approx(nn.jacobian(net, x))


def test_certificate_soundness_against_sampled_quotients():
    """If the sampled Lipschitz quotient of x -> W2 sigma(W1 x) exceeds L,
    no multiplier choice may make the certificate matrix PSD."""
    rng = np.random.default_rng(4)
    W1 = rng.normal(size=(4, 2))
    W2 = rng.normal(size=(1, 4))
    pts = rng.uniform(-3, 3, size=(200, 2))

    def g(x):
        return W2 @ np.logaddexp(0.0, W1 @ x)

    quotients = []
    for i in range(0, 200, 2):
        x, y = pts[i], pts[i + 1]
        quotients.append(
            float(np.abs(g(x) - g(y))) / max(np.linalg.norm(x - y), 1e-12)
        )
    q = max(quotients)
    L_bad = 0.5 * q
    for s in (1e-3, 1e-1, 1.0, 10.0, 1e3):
        Mx = lmi.build_m_matrix(W1, W2, s * np.ones(4), L_bad, 0.0, 1.0)
        assert not lmi.is_psd(Mx)


def test_certificate_accepts_generous_bound():
    """With L = sigma_hi ||W2||_2 ||W1||_2 (a true Lipschitz bound) some
    multiplier certifies, and the sampled quotients respect it."""
    rng = np.random.default_rng(6)
    W1 = 0.5 * rng.normal(size=(3, 2))
    W2 = 0.5 * rng.normal(size=(1, 3))
    L = 1.05 * float(np.linalg.norm(W2, 2) * np.linalg.norm(W1, 2))
    ok = False
    for s in 10.0 ** np.arange(-3.0, 3.0, 0.1):
        if lmi.is_psd(lmi.build_m_matrix(W1, W2, s * np.ones(3), L, 0.0, 1.0)):
            ok = True
            break
    assert ok
    pts = rng.uniform(-3, 3, size=(100, 2))
    for i in range(0, 100, 2):
        x, y = pts[i], pts[i + 1]
        gx = W2 @ np.logaddexp(0.0, W1 @ x)
        gy = W2 @ np.logaddexp(0.0, W1 @ y)
        assert float(np.abs(gx - gy)) <= L * np.linalg.norm(x - y) + 1e-9


def test_logdet_barrier_loss_hand_value():
    loss = lmi.logdet_barrier_loss([2.0 * np.eye(2)], [1.0])
    assert loss == pytest.approx(-2.0 * np.log(2.0))


def test_logdet_barrier_loss_penalizes_indefinite():
    loss = lmi.logdet_barrier_loss([np.diag([1.0, -0.1])], [1.0])
    assert loss > 1e4


def test_logdet_barrier_loss_sums_weighted_terms():
    a = lmi.logdet_barrier_loss([np.eye(2), 2.0 * np.eye(2)], [1.0, 3.0])
    assert a == pytest.approx(0.0 + 3.0 * (-2.0 * np.log(2.0)))
