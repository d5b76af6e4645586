"""Infinitesimal-generator terms for smooth and ReLU barriers.

Smooth nets use the classical drift-gradient plus half diffusion-weighted
Hessian-trace generator.  ReLU nets go through the lower bound
Bt(x) = B(x) - 0.5 sum_j W2j |z_j| - 0.5 sum_j (|W2j|/R_j) z_j^2, whose
generator is computed by Ito's lemma; inside any open activation region
max(z,0) - 0.5|z| = 0.5 z, so Bt is a single quadratic in x and its drift is

  A Bt = sum_j (0.5 W2j - (|W2j|/R_j) z_j) W1j.(f+gu)
         - 0.5 sum_j (|W2j|/R_j) ||W1j^T V||^2.

The diffusion term carries coefficient 1/2 per quadratic variation of z_j;
this is validated empirically against one-step Monte Carlo estimates.

Sign convention throughout: admissible controls satisfy lambda.u + xi >= 0
with xi absorbing the linear class-kappa gain term k*B (or k*Bt).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .enumeration import region_polytope
from .expr import Expr, affine_expr
from .simplex import lp_maximize, lp_minimize
from .system import Box, StochasticAffineSystem

R_INFLATION = 1.01
R_FLOOR = 1e-6


class GeneratorError(Exception):
    pass


@dataclass
class GeneratorTerms:
    """Affine control constraint lambda.u + xi >= 0."""

    lam: np.ndarray  # length n_u
    xi: float


@dataclass
class NeuronBounds:
    """Certified per-neuron bounds |z_j| <= R_j over the super-level set."""

    R: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        if np.any(self.R <= 0.0):
            raise GeneratorError("neuron bounds must be strictly positive")


# -- smooth path ------------------------------------------------------------


def smooth_generator(net: nn.Mlp, sys: StochasticAffineSystem, x, u) -> float:
    """A B(x, u) = dB/dx (f + g u) + 0.5 tr(V^T d2B/dx2 V)."""
    x = np.asarray(x, dtype=float)
    J = nn.jacobian(net, x)
    vec = sys.drift(x)
    if sys.n_u:
        vec = vec + sys.input_matrix(x) @ np.asarray(u, dtype=float)
    return float(J @ vec) + nn.hessian_trace_term(net, x, sys.V)


def lambda_xi_smooth(net: nn.Mlp, sys: StochasticAffineSystem, k: float, x) -> GeneratorTerms:
    """Decompose A B(x,u) + k B(x) = lambda.u + xi."""
    x = np.asarray(x, dtype=float)
    J = nn.jacobian(net, x)
    lam = J @ sys.input_matrix(x) if sys.n_u else np.zeros(0)
    xi = float(J @ sys.drift(x)) + nn.hessian_trace_term(net, x, sys.V) + k * nn.forward(net, x)
    return GeneratorTerms(np.atleast_1d(lam), xi)


# -- ReLU lower-bound path --------------------------------------------------


def _relu_parts(net: nn.Mlp):
    if net.activation != "relu" or not net.single_hidden:
        raise GeneratorError("ReLU path requires a single-hidden-layer relu net")
    w1 = net.weights[0]
    r1 = net.biases[0]
    w2 = net.weights[1].ravel()
    r2 = float(net.biases[1][0])
    return w1, r1, w2, r2


def tilde_b(net: nn.Mlp, R: NeuronBounds, x) -> float:
    """Lower bound Bt(x) = B(x) - 0.5 sum W2j|z_j| - 0.5 sum (|W2j|/Rj) z_j^2."""
    w1, r1, w2, _ = _relu_parts(net)
    z = w1 @ np.asarray(x, dtype=float) + r1
    return (
        nn.forward(net, x)
        - 0.5 * float(w2 @ np.abs(z))
        - 0.5 * float((np.abs(w2) / R.R) @ z**2)
    )


def tilde_b_batch(net: nn.Mlp, R: NeuronBounds, xs: np.ndarray) -> np.ndarray:
    w1, r1, w2, _ = _relu_parts(net)
    z = np.asarray(xs, dtype=float) @ w1.T + r1
    return (
        nn.forward_batch(net, xs)
        - 0.5 * (np.abs(z) @ w2)
        - 0.5 * (z**2 @ (np.abs(w2) / R.R))
    )


def compute_neuron_bounds(net: nn.Mlp, X: Box, Q: list) -> NeuronBounds:
    """R_j = 1.01 * max over regions S in Q of LP-max |z_j| on the polytope
    X(S) with B >= 0, floored at 1e-6."""
    w1, r1, _, _ = _relu_parts(net)
    M = w1.shape[0]
    R = np.zeros(M)
    for S in Q:
        form = nn.region_linear_form(net, S)
        p = region_polytope(net, S, X).with_rows(np.array([-form.w]), np.array([form.r]))
        for j in range(M):
            hi = lp_maximize(w1[j], p.A, p.b)
            lo = lp_minimize(w1[j], p.A, p.b)
            if hi.status == "infeasible" or lo.status == "infeasible":
                continue
            if hi.status == "unbounded" or lo.status == "unbounded":
                raise GeneratorError("neuron-bound LP unbounded inside state box")
            R[j] = max(R[j], abs(hi.value + r1[j]), abs(lo.value + r1[j]))
    return NeuronBounds(np.maximum(R * R_INFLATION, R_FLOOR))


def relu_generator(net: nn.Mlp, R: NeuronBounds, sys: StochasticAffineSystem, x, u) -> float:
    """Drift of Bt along the SDE at a point off region boundaries.

    Indicator and sgn are evaluated from the activation pattern with the
    inactive-tie rule (sgn(0) = 0, 1(z>0) at 0 = 0).
    """
    w1, r1, w2, _ = _relu_parts(net)
    x = np.asarray(x, dtype=float)
    z = w1 @ x + r1
    vec = sys.drift(x)
    if sys.n_u:
        vec = vec + sys.input_matrix(x) @ np.asarray(u, dtype=float)
    ind = (z > 0.0).astype(float)
    sgn = np.sign(z)
    coef = w2 * (ind - 0.5 * sgn) - (np.abs(w2) / R.R) * z
    drift = float(coef @ (w1 @ vec))
    vnorm2 = np.sum((w1 @ sys.V) ** 2, axis=1)  # ||W1j^T V||^2 per neuron
    return drift - 0.5 * float((np.abs(w2) / R.R) @ vnorm2)


def lambda_xi_relu_point(
    net: nn.Mlp, R: NeuronBounds, sys: StochasticAffineSystem, k: float, x
) -> GeneratorTerms:
    """Pointwise A Bt(x,u) + k Bt(x) = lambda.u + xi (off boundaries)."""
    w1, r1, w2, _ = _relu_parts(net)
    x = np.asarray(x, dtype=float)
    z = w1 @ x + r1
    ind = (z > 0.0).astype(float)
    coef = w2 * (ind - 0.5 * np.sign(z)) - (np.abs(w2) / R.R) * z
    f = sys.drift(x)
    lam = (coef @ w1) @ sys.input_matrix(x) if sys.n_u else np.zeros(0)
    vnorm2 = np.sum((w1 @ sys.V) ** 2, axis=1)
    xi = (
        float(coef @ (w1 @ f))
        - 0.5 * float((np.abs(w2) / R.R) @ vnorm2)
        + k * tilde_b(net, R, x)
    )
    return GeneratorTerms(np.atleast_1d(lam), xi)


def tilde_b_expr(net: nn.Mlp, R: NeuronBounds) -> Expr:
    """Bt as an expression (globally quadratic: max(z,0) - 0.5|z| = 0.5 z)."""
    w1, r1, w2, r2 = _relu_parts(net)
    e = Expr.const(r2)
    for j in range(w1.shape[0]):
        zj = affine_expr(w1[j], r1[j])
        e = e + Expr.const(0.5 * w2[j]) * zj
        e = e - Expr.const(0.5 * abs(w2[j]) / R.R[j]) * zj**2
    return e


def lambda_xi_relu_region(
    net: nn.Mlp, R: NeuronBounds, sys: StochasticAffineSystem, k: float, S: tuple
) -> tuple:
    """Symbolic (lambda^S, xi^S) for region S, suitable for interval bounds.

    With the tie rule, 1(z>0) - 0.5 sgn(z) = 1/2 on both sides of every
    hyperplane, so the region forms share one quadratic expression; the
    region only enters through the polytope the verifier intersects with.
    """
    w1, r1, w2, _ = _relu_parts(net)
    M, n_x = w1.shape
    # coefficient c_j(x) = 0.5 W2j - (|W2j|/Rj) z_j(x)
    coefs = [
        Expr.const(0.5 * w2[j]) - Expr.const(abs(w2[j]) / R.R[j]) * affine_expr(w1[j], r1[j])
        for j in range(M)
    ]
    lam_exprs = []
    for i in range(sys.n_u):
        e = Expr.const(0.0)
        for j in range(M):
            # W1j . g_col_i(x)
            dot = Expr.const(0.0)
            for m in range(n_x):
                if w1[j, m] != 0.0:
                    dot = dot + Expr.const(w1[j, m]) * sys.g[m][i]
            e = e + coefs[j] * dot
        lam_exprs.append(e)
    vnorm2 = np.sum((w1 @ sys.V) ** 2, axis=1)
    xi = Expr.const(-0.5 * float((np.abs(w2) / R.R) @ vnorm2))
    for j in range(M):
        dot = Expr.const(0.0)
        for m in range(n_x):
            if w1[j, m] != 0.0:
                dot = dot + Expr.const(w1[j, m]) * sys.f[m]
        xi = xi + coefs[j] * dot
    xi = xi + Expr.const(k) * tilde_b_expr(net, R)
    return lam_exprs, xi
