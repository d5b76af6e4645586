"""Lipschitz certificates for the barrier, its gradient, and the
diffusion-weighted Hessian trace, via block-matrix semidefinite conditions,
plus the log-det barrier losses used during training.

The gradient and Hessian-trace terms of a single-hidden-layer net are
themselves single-hidden-layer nets with activation sigma' (resp. sigma'')
and rewired output weights; certifying them reuses the same block matrix
with the derivative-activation slope bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PENALTY = 1e4
PSD_TOL = 1e-9

_SQRT3 = np.sqrt(3.0)

# Analytic ranges of activation derivatives, by activation and order:
# order 1 bounds the slope of the net itself, order 2 the slope of the
# sigma'-net, order 3 the slope of the sigma''-net.
_SIGMA_BOUNDS = {
    ("softplus", 1): (0.0, 1.0),
    ("softplus", 2): (0.0, 0.25),
    ("softplus", 3): (-1.0 / (6.0 * _SQRT3), 1.0 / (6.0 * _SQRT3)),
    ("tanh", 1): (0.0, 1.0),
    ("tanh", 2): (-4.0 / (3.0 * _SQRT3), 4.0 / (3.0 * _SQRT3)),
    ("tanh", 3): (-2.0, 2.0 / 3.0),
}


class LmiError(Exception):
    pass


def sigma_prime_bounds(activation: str, order: int = 1) -> tuple:
    try:
        return _SIGMA_BOUNDS[(activation, order)]
    except KeyError:
        raise LmiError(f"no slope bounds for {activation!r} order {order}") from None


@dataclass
class LipschitzCertificate:
    L: float
    omega: np.ndarray  # diagonal entries, >= 0
    sigma_bounds: tuple

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if self.L <= 0.0:
            raise LmiError("Lipschitz target must be positive")


@dataclass
class EffectiveWeights:
    """Output weights of the gradient net and Hessian-trace net."""

    W2_hat: np.ndarray  # n_x x p
    W2_bar: np.ndarray  # length p


def build_m_matrix(W1, W2, omega, L, sigma_lo, sigma_hi) -> np.ndarray:
    """Symmetric block matrix whose positive semidefiniteness certifies
    L-Lipschitz continuity of a one-hidden-layer net with slope bounds
    (sigma_lo, sigma_hi) and multiplier matrix Omega = diag(omega)."""
    W1 = np.asarray(W1, dtype=float)
    W2 = np.atleast_2d(np.asarray(W2, dtype=float))
    omega = np.asarray(omega, dtype=float)
    p, n = W1.shape
    q = W2.shape[0]
    if W2.shape[1] != p or omega.shape != (p,):
        raise LmiError("inconsistent shapes for M matrix")
    Om = np.diag(omega)
    M = np.zeros((n + p + q, n + p + q))
    M[:n, :n] = L**2 * np.eye(n) + 2.0 * sigma_lo * sigma_hi * W1.T @ Om @ W1
    M[:n, n : n + p] = -(sigma_lo + sigma_hi) * W1.T @ Om
    M[n : n + p, :n] = M[:n, n : n + p].T
    M[n : n + p, n : n + p] = 2.0 * Om
    M[n : n + p, n + p :] = -W2.T
    M[n + p :, n : n + p] = -W2
    M[n + p :, n + p :] = np.eye(q)
    return M


def is_psd(M: np.ndarray, tol: float = PSD_TOL) -> bool:
    return bool(np.linalg.eigvalsh(M)[0] >= -tol)


def effective_weights(W1, W2, V) -> EffectiveWeights:
    """Output weights making the gradient and Hessian-trace expressible as
    one-hidden-layer nets sharing W1:

      (dB/dx)^T       = W2_hat  sigma'(W1 x + r1)
      tr(V^T H V)     = W2_bar . sigma''(W1 x + r1)
    """
    W1 = np.asarray(W1, dtype=float)
    W2 = np.asarray(W2, dtype=float).ravel()
    V = np.asarray(V, dtype=float)
    if V.shape[0] != V.shape[1] or not np.allclose(V, np.diag(np.diag(V))):
        raise LmiError("requires diagonal diffusion")
    W2_hat = W1.T @ np.diag(W2)  # n_x x p
    v2 = np.diag(V) ** 2
    W2_bar = W2 * (W1**2 @ v2)  # per hidden neuron
    return EffectiveWeights(W2_hat, W2_bar)


def neg_logdet(M: np.ndarray, coeff: float) -> float:
    """-coeff * log det(M) via Cholesky; finite penalty outside the PD cone."""
    try:
        C = np.linalg.cholesky(M)
        return -coeff * 2.0 * float(np.sum(np.log(np.diag(C))))
    except np.linalg.LinAlgError:
        lam_min = float(np.linalg.eigvalsh(M)[0])
        return coeff * (PENALTY + abs(lam_min) * PENALTY)


def logdet_barrier_loss(M_list, coeffs) -> float:
    """Sum of -c_i log det(M_i); penalized smoothly when an M_i is not PD."""
    if len(M_list) != len(coeffs):
        raise LmiError("one coefficient per matrix")
    if any(c <= 0.0 for c in coeffs):
        raise LmiError("barrier coefficients must be positive")
    return sum(neg_logdet(M, c) for M, c in zip(M_list, coeffs))
