"""Barrier synthesis: the verification-free scenario-optimization trainer
with Lipschitz certificates, and the verification-in-the-loop trainer with
counterexample dataset augmentation.

Sampled-loss gradients for the smooth trainer are computed analytically and
vectorized over the dataset; the certificate barrier loss and the
verification-in-the-loop losses use central finite differences (the nets
have well under 500 parameters).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import generator, lmi, nn
from .enumeration import EnumerationError, enumerate_activation_sets
from .system import Benchmark, RegionSpec, StochasticAffineSystem
from .verify import BnbConfig, InputSet, VerificationOutcome, verify

GRID_CAP = 10_000_000


class TrainError(Exception):
    pass


# -- datasets ---------------------------------------------------------------


@dataclass
class Datasets:
    """Grid datasets: D_pts covers the state box within radius eps_bar;
    S_pts / U_pts are masked views into it."""

    D_pts: np.ndarray
    s_mask: np.ndarray
    u_mask: np.ndarray
    eps_bar: float

    @property
    def S_pts(self) -> np.ndarray:
        return self.D_pts[self.s_mask]

    @property
    def U_pts(self) -> np.ndarray:
        return self.D_pts[self.u_mask]


def sample_datasets(regions: RegionSpec, eps_bar: float, seed: int = 0) -> Datasets:
    """Regular grid with spacing <= 2 eps_bar / sqrt(n_x), so every state is
    within eps_bar of a grid point; split by region membership."""
    if eps_bar <= 0.0:
        raise TrainError("eps_bar must be positive")
    X = regions.X
    n = X.dim
    spacing = 2.0 * eps_bar / np.sqrt(n)
    counts = [int(np.ceil((X.hi[i] - X.lo[i]) / spacing)) + 1 for i in range(n)]
    total = int(np.prod([float(c) for c in counts]))
    if total > GRID_CAP:
        raise TrainError(
            f"eps_bar too small for desk scale: grid would need {total} points"
        )
    axes = [np.linspace(X.lo[i], X.hi[i], counts[i]) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    D = np.stack([m.ravel() for m in mesh], axis=1)
    s_mask = np.all((D >= regions.X_I.lo) & (D <= regions.X_I.hi), axis=1)
    u_mask = np.array([regions.in_unsafe(x) for x in D])
    return Datasets(D, s_mask, u_mask, eps_bar)


# -- smooth trainer ---------------------------------------------------------


@dataclass
class SmoothTrainConfig:
    eps_bar: float
    L_h: float
    L_dh: float
    L_d2h: float
    L_x: float
    delta_unsafe: float
    k: float = 1.0
    barrier_coeffs: tuple = (1e-3, 1e-3, 1e-3)
    lr: float = 1e-2
    max_epochs: int = 2000
    seed: int = 0
    hidden: int = 20
    activation: str = "softplus"
    fd_step: float = 1e-5
    init: str = "geometric"
    ridge_sharp: float = 3.0
    ridge_frac: float = 0.46
    shear: float = 0.1
    init_scale: float = 1.0
    aux_scale: float = 0.05

    @property
    def L_max(self) -> float:
        return max(self.L_h, self.L_h + self.L_dh * self.L_x + self.L_d2h)

    @staticmethod
    def from_benchmark(bench: Benchmark, **overrides) -> "SmoothTrainConfig":
        h = bench.hyper
        kw = dict(
            eps_bar=h["eps_bar"], L_h=h["L_h"], L_dh=h["L_dh"], L_d2h=h["L_d2h"],
            L_x=h["L_x"], delta_unsafe=h["delta_unsafe"], k=h["k_alpha"],
            lr=h["lr"], max_epochs=h["max_epochs"], hidden=h["hidden"],
            activation=h["activation"],
        )
        kw.update(overrides)
        return SmoothTrainConfig(**kw)


class _SmoothBatch:
    """Vectorized forward/derivative quantities of a one-hidden-layer smooth
    net on a fixed dataset, with cached drift/input-matrix values."""

    def __init__(self, sys: StochasticAffineSystem, X: np.ndarray):
        self.X = np.asarray(X, dtype=float)
        self.f_vals = np.array([sys.drift(x) for x in self.X])
        if sys.n_u:
            self.g_vals = np.array([sys.input_matrix(x) for x in self.X])
        else:
            self.g_vals = np.zeros((len(self.X), sys.n_x, 0))
        self.V = sys.V
        self.VVT = sys.V @ sys.V.T

    def refresh(self, net: nn.Mlp):
        if not (net.single_hidden and net.activation in nn.SMOOTH_ACTIVATIONS):
            raise TrainError("smooth trainer requires a single-hidden-layer smooth net")
        acts = nn.activation_fns(net.activation)
        self.w1, self.r1 = net.weights[0], net.biases[0]
        self.w2, self.r2 = net.weights[1].ravel(), float(net.biases[1][0])
        self.z = self.X @ self.w1.T + self.r1
        self.sig = acts["f"](self.z)
        self.sig1 = acts["d1"](self.z)
        self.sig2 = acts["d2"](self.z)
        self.sig3 = acts["d3"](self.z)
        self.B = self.sig @ self.w2 + self.r2
        # J[n] = sum_j w2_j sig1_j W1_j  -> (N, n_x)
        self.J = (self.sig1 * self.w2) @ self.w1
        self.a = np.sum((self.w1 @ self.V) ** 2, axis=1)  # per neuron
        self.trace = 0.5 * (self.sig2 @ (self.w2 * self.a))
        self.lam = np.einsum("nd,ndm->nm", self.J, self.g_vals)
        self.Jf = np.einsum("nd,nd->n", self.J, self.f_vals)

    def qp_controls(self, k: float, psi: float) -> np.ndarray:
        """Closed-form minimum-norm controls for lam.u + xi + psi >= 0."""
        xi = self.Jf + self.trace + k * self.B
        lam2 = np.einsum("nm,nm->n", self.lam, self.lam)
        scale = np.where(
            lam2 > 1e-16, np.maximum(0.0, -(xi + psi)) / np.maximum(lam2, 1e-16), 0.0
        )
        return scale[:, None] * self.lam

    def grads(self, wB: np.ndarray, wG: np.ndarray, vec: np.ndarray, wT: np.ndarray):
        """Dataset-weighted parameter gradients of
        sum_n wB_n B(x_n) + wG_n (dB/dx . vec_n) + wT_n trace_n."""
        t = vec @ self.w1.T  # (N, M): W1_j . vec_n
        gw2 = (
            wB @ self.sig
            + wG @ (self.sig1 * t)
            + 0.5 * (wT @ self.sig2) * self.a
        )
        gr2 = float(wB.sum())
        gr1 = (
            wB @ (self.sig1 * self.w2)
            + wG @ (self.sig2 * t * self.w2)
            + 0.5 * (wT @ self.sig3) * (self.w2 * self.a)
        )
        A1 = (
            wB[:, None] * (self.sig1 * self.w2)
            + wG[:, None] * (self.sig2 * t * self.w2)
            + 0.5 * wT[:, None] * (self.sig3 * (self.w2 * self.a))
        )
        gW1 = A1.T @ self.X
        gW1 += np.einsum("nm,nd->md", wG[:, None] * (self.sig1 * self.w2), vec)
        c = (wT @ self.sig2) * self.w2
        gW1 += c[:, None] * (self.w1 @ self.VVT)
        return gW1, gr1, gw2, gr2


def q_values(
    net: nn.Mlp,
    sys: StochasticAffineSystem,
    regions: RegionSpec,
    k: float,
    delta: float,
    x,
    psi: float = 0.0,
) -> tuple:
    """(q1, q2, q3) at one state: initial-set, unsafe-margin and generator
    constraint values, all required <= psi for validity.  The control in q3
    is the minimum-norm filter output for the psi-tightened constraint."""
    x = np.asarray(x, dtype=float)
    B = nn.forward(net, x)
    q1 = -B if regions.X_I.contains(x) else 0.0
    q2 = (B + delta) if regions.in_unsafe(x) else 0.0
    terms = generator.lambda_xi_smooth(net, sys, k, x)
    lam2 = float(terms.lam @ terms.lam)
    if lam2 > 1e-16:
        u = max(0.0, -(terms.xi + psi)) / lam2 * terms.lam
    else:
        u = np.zeros(sys.n_u)
    q3 = -(float(terms.lam @ u) + terms.xi)
    return q1, q2, q3


def _q_arrays(batch: _SmoothBatch, ds: Datasets, k: float, delta: float, psi: float):
    u = batch.qp_controls(k, psi)
    xi = batch.Jf + batch.trace + k * batch.B
    q3 = -(np.einsum("nm,nm->n", batch.lam, u) + xi)
    q1 = -batch.B[ds.s_mask]
    q2 = batch.B[ds.u_mask] + delta
    return q1, q2, q3, u


def compute_psi_star(
    net: nn.Mlp,
    sys: StochasticAffineSystem,
    regions: RegionSpec,
    k: float,
    delta: float,
    ds: Datasets,
    psi: float = 0.0,
) -> float:
    """Scenario optimum: the largest constraint value over the datasets."""
    batch = _SmoothBatch(sys, ds.D_pts)
    batch.refresh(net)
    q1, q2, q3, _ = _q_arrays(batch, ds, k, delta, psi)
    vals = [q3.max()]
    if len(q1):
        vals.append(q1.max())
    if len(q2):
        vals.append(q2.max())
    return float(max(vals))


def check_validity(L_max: float, eps_bar: float, psi_star: float) -> bool:
    return L_max * eps_bar + psi_star <= 0.0


def loss_validity(L_max: float, eps_bar: float, psi: float) -> float:
    return max(0.0, L_max * eps_bar + psi)


def loss_smooth(
    net: nn.Mlp,
    sys: StochasticAffineSystem,
    regions: RegionSpec,
    k: float,
    delta: float,
    ds: Datasets,
    psi: float,
) -> float:
    """Sum over the three datasets of the mean hinge max(0, q - psi)."""
    batch = _SmoothBatch(sys, ds.D_pts)
    batch.refresh(net)
    q1, q2, q3, _ = _q_arrays(batch, ds, k, delta, psi)
    loss = float(np.maximum(0.0, q3 - psi).mean())
    if len(q1):
        loss += float(np.maximum(0.0, q1 - psi).mean())
    if len(q2):
        loss += float(np.maximum(0.0, q2 - psi).mean())
    return loss


def certificate_matrices(net: nn.Mlp, V: np.ndarray, cfg: SmoothTrainConfig, omegas):
    """M matrices for (B, gradient, Hessian-trace) certificates."""
    w1 = net.weights[0]
    w2 = net.weights[1].ravel()
    eff = lmi.effective_weights(w1, w2, V)
    triples = [
        (net.weights[1], cfg.L_h, lmi.sigma_prime_bounds(net.activation, 1)),
        (eff.W2_hat, cfg.L_dh, lmi.sigma_prime_bounds(net.activation, 2)),
        (0.5 * eff.W2_bar[None, :], cfg.L_d2h, lmi.sigma_prime_bounds(net.activation, 3)),
    ]
    return [
        lmi.build_m_matrix(w1, W2_row, om, L, lo, hi)
        for (W2_row, L, (lo, hi)), om in zip(triples, omegas)
    ]


def lipschitz_loss(net: nn.Mlp, V: np.ndarray, cfg: SmoothTrainConfig, omegas) -> float:
    Ms = certificate_matrices(net, V, cfg, omegas)
    return lmi.logdet_barrier_loss(Ms, list(cfg.barrier_coeffs))


def _fd_lipschitz_step(net: nn.Mlp, V, cfg: SmoothTrainConfig, omegas):
    """One central-finite-difference descent step on the certificate loss
    over (W1, W2, omegas); omegas are clipped positive."""
    h = cfg.fd_step
    arrays = [net.weights[0], net.weights[1]] + list(omegas)

    def loss():
        return lipschitz_loss(net, V, cfg, omegas)

    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            dn = loss()
            arr[idx] = old
            g[idx] = (up - dn) / (2.0 * h)
        grads.append(g)
    for i, g in enumerate(grads):
        norm = float(np.linalg.norm(g))
        if norm > 10.0:  # near-singular barrier gradients are untrustworthy
            grads[i] = g * (10.0 / norm)
    # Backtracking: the barrier blows up approaching the cone boundary, so
    # halve the step until the loss actually decreases.
    before = loss()
    saved = [arr.copy() for arr in arrays]
    scale = 1.0
    for _ in range(8):
        for arr, old, g in zip(arrays, saved, grads):
            arr[...] = old - cfg.lr * scale * g
        for om in omegas:
            np.clip(om, 1e-6, None, out=om)
        after = loss()
        if after <= before:
            return after
        scale /= 2.0
    for arr, old in zip(arrays, saved):
        arr[...] = old
    return before


def _scan_omegas(net: nn.Mlp, V, cfg: SmoothTrainConfig):
    """Per-certificate scalar multiplier scan; keeps the best-conditioned
    starting point for the finite-difference barrier descent."""
    M = net.weights[0].shape[0]
    # Neurons with zero output weight contribute nothing to the bounded
    # quantity; their multipliers are best driven to (near) zero.
    live = np.abs(net.weights[1].ravel()) > 0.0
    omegas = []
    for order in range(3):
        best, best_eig = None, -np.inf
        for s in 10.0 ** np.arange(-4.0, 3.0, 0.05):
            om = np.where(live, s, min(s, 1e-2))
            trial = [om] * 3
            Mx = certificate_matrices(net, V, cfg, trial)[order]
            eig = float(np.linalg.eigvalsh(Mx)[0])
            if eig > best_eig:
                best, best_eig = om, eig
        omegas.append(best.copy())
    return omegas


def geometric_init(
    net: nn.Mlp,
    sys: StochasticAffineSystem,
    regions: RegionSpec,
    cfg: SmoothTrainConfig,
    ds: Datasets,
) -> bool:
    """Seed the net with softplus ridges along the safe-box faces.

    Each face of the safe box contributes one ridge neuron whose
    pre-activation vanishes at ``ridge_frac`` of the face offset; faces of
    unactuated coordinates are sheared slightly along the next coordinate
    so that the zero set of dB/dx.g crosses the barrier boundary where the
    drift still pushes B upward.  The output bias is centered between the
    initial-set and unsafe-set requirements implied by the configured
    Lipschitz budget.  Returns False (leaving the net untouched) when the
    geometry does not apply.
    """
    if regions.safe.kind != "safe_box" or not net.single_hidden:
        return False
    n = sys.n_x
    lo, hi = np.asarray(regions.safe.box.lo), np.asarray(regions.safe.box.hi)
    center, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    if 2 * n > net.weights[0].shape[0]:
        return False
    ksh, beta = cfg.ridge_sharp, cfg.init_scale
    actuated = np.array(
        [np.any(np.abs(sys.input_matrix(center)[i]) > 0.0) for i in range(n)]
        if sys.n_u
        else [False] * n
    )
    w1, r1 = net.weights[0], net.biases[0]
    w1 *= cfg.aux_scale
    r1 *= cfg.aux_scale
    row = 0
    for i in range(n):
        d = np.zeros(n)
        d[i] = 1.0
        if not actuated[i]:
            d[(i + 1) % n] = cfg.shear
        for sign in (1.0, -1.0):
            w1[row] = ksh * sign * d
            r1[row] = -ksh * (sign * np.dot(d, center) + cfg.ridge_frac * half[i])
            row += 1
    net.weights[1][:] = 0.0
    net.weights[1][0, :row] = -beta / ksh
    net.biases[1][:] = 0.0
    B0 = nn.forward_batch(net, ds.D_pts).ravel()
    thr = cfg.L_max * cfg.eps_bar
    c_lo = thr - B0[ds.s_mask].min() if ds.s_mask.any() else thr
    c_hi = -cfg.delta_unsafe - thr - B0[ds.u_mask].max() if ds.u_mask.any() else c_lo
    net.biases[1][0] = c_lo if c_hi < c_lo else (c_lo + c_hi) / 2.0
    return True


@dataclass
class SmoothTrainResult:
    net: nn.Mlp
    psi_star: float
    valid: bool
    history: list
    psi: float = 0.0
    omegas: list = field(default_factory=list)
    certified: bool = False


def train_verifiable_smooth(cfg: SmoothTrainConfig, bench: Benchmark) -> SmoothTrainResult:
    """Alternate descent on the sampled constraint loss, the Lipschitz
    certificate loss, and the validity hinge until all three are satisfied;
    validity is then re-checked from the scenario optimum."""
    sys, regions = bench.system, bench.regions
    ds = sample_datasets(regions, cfg.eps_bar, cfg.seed)
    net = nn.init_mlp([sys.n_x, cfg.hidden, 1], cfg.activation, cfg.seed)
    M = cfg.hidden
    if cfg.init == "geometric" and geometric_init(net, sys, regions, cfg, ds):
        omegas = _scan_omegas(net, sys.V, cfg)
        # Start psi just inside the validity region; the hinge L_v is
        # already zero and the constraint loss reports any real violation.
        # Pushing much deeper gains nothing and collides with the floor
        # set by grid points where dB/dx.g vanishes and xi must carry the
        # constraint alone.
        psi = -(cfg.L_max * cfg.eps_bar + 5e-4)
    else:
        omegas = [np.ones(M), np.ones(M), np.ones(M)]
        psi = 0.0
    batch = _SmoothBatch(sys, ds.D_pts)
    history = []
    n1 = max(1, int(ds.s_mask.sum()))
    n2 = max(1, int(ds.u_mask.sum()))
    n3 = len(ds.D_pts)
    for epoch in range(cfg.max_epochs):
        # Certificate descent first: the convergence check below then
        # reflects the exact parameters that are returned.
        L_M = _fd_lipschitz_step(net, sys.V, cfg, omegas)
        batch.refresh(net)
        q1, q2, q3, u = _q_arrays(batch, ds, cfg.k, cfg.delta_unsafe, psi)
        L_theta = float(np.maximum(0.0, q3 - psi).mean())
        if len(q1):
            L_theta += float(np.maximum(0.0, q1 - psi).mean())
        if len(q2):
            L_theta += float(np.maximum(0.0, q2 - psi).mean())
        # Hinge-active sample weights for each term.
        wB = np.zeros(n3)
        act1 = np.zeros(n3, dtype=bool)
        act1[np.flatnonzero(ds.s_mask)[q1 - psi > 1e-12]] = True
        wB[act1] -= 1.0 / n1
        act2 = np.zeros(n3, dtype=bool)
        act2[np.flatnonzero(ds.u_mask)[q2 - psi > 1e-12]] = True
        wB[act2] += 1.0 / n2
        act3 = q3 - psi > 1e-12
        wB[act3] -= cfg.k / n3
        wG = np.where(act3, -1.0 / n3, 0.0)
        wT = wG.copy()
        vec = batch.f_vals + np.einsum("ndm,nm->nd", batch.g_vals, u)
        gW1, gr1, gw2, gr2 = batch.grads(wB, wG, vec, wT)
        net.weights[0] -= cfg.lr * gW1
        net.biases[0] -= cfg.lr * gr1
        net.weights[1] -= cfg.lr * gw2[None, :]
        net.biases[1] -= cfg.lr * gr2
        L_v = loss_validity(cfg.L_max, cfg.eps_bar, psi)
        if L_v > 0.0:
            psi -= cfg.lr
        certified = all(
            lmi.is_psd(Mx) for Mx in certificate_matrices(net, sys.V, cfg, omegas)
        )
        history.append(
            {"epoch": epoch, "L_theta": L_theta, "L_M": L_M, "L_v": L_v, "psi": psi}
        )
        if L_theta <= 1e-12 and certified and L_v == 0.0:
            break
    psi_star = compute_psi_star(net, sys, regions, cfg.k, cfg.delta_unsafe, ds, psi)
    certified = all(
        lmi.is_psd(Mx) for Mx in certificate_matrices(net, sys.V, cfg, omegas)
    )
    valid = certified and check_validity(cfg.L_max, cfg.eps_bar, psi_star)
    return SmoothTrainResult(net, psi_star, valid, history, psi, omegas, certified)


# -- verification-in-the-loop trainer ---------------------------------------


@dataclass
class VitlConfig:
    lambda_f: float
    lambda_c: float
    eps_margin: float = 0.05
    penalty: float = 10.0
    lr: float = 1e-4
    inner_epochs: int = 25
    max_rounds: int = 20
    seed: int = 0
    hidden: int = 16
    n_safe: int = 500
    n_unsafe: int = 500
    n_feas: int = 500
    safe_margin: float = 0.0
    feas_margin: float = 0.05
    jitter_sigma: float = 0.05
    jitter_copies: int = 10
    fd_step: float = 1e-4
    k: float = 1.0
    init: str = "random"
    init_cuts: int = 3
    init_samples: int = 4000
    init_draws: int = 8000
    init_refines: int = 12000
    cov_target: float = 0.315

    def __post_init__(self):
        if self.lambda_f < 0.0 or self.lambda_c < 0.0:
            raise TrainError("loss weights must be nonnegative")

    @staticmethod
    def from_benchmark(bench: Benchmark, **overrides) -> "VitlConfig":
        h = bench.hyper
        kw = dict(
            lambda_f=h["lambda_f"], lambda_c=h["lambda_c"], lr=h["lr"],
            eps_margin=h["eps_margin"], hidden=h["hidden"], k=h["k_alpha"],
            init=h.get("init", "random"),
        )
        kw.update(overrides)
        return VitlConfig(**kw)


def loss_correct(vals_safe: np.ndarray, vals_unsafe: np.ndarray, eps: float) -> float:
    """Mean hinge pushing the barrier above eps on safe samples and below
    -eps on unsafe samples (ReLU mode passes lower-bound values)."""
    loss = 0.0
    if len(vals_safe):
        loss += float(np.maximum(0.0, eps - vals_safe).mean())
    if len(vals_unsafe):
        loss += float(np.maximum(0.0, eps + vals_unsafe).mean())
    return loss


def loss_feasible(lam: np.ndarray, xi: np.ndarray, u_ref: np.ndarray, penalty: float) -> float:
    """Mean optimum of the relaxed filter QP
    min ||u - u_ref||^2 + penalty r  s.t.  lam.u + xi + r >= 0, r >= 0,
    in closed form for the single constraint."""
    lam = np.atleast_2d(lam)
    n = len(xi)
    if n == 0:
        return 0.0
    s = np.einsum("nm,nm->n", lam, np.broadcast_to(u_ref, lam.shape)) + xi
    lam2 = np.einsum("nm,nm->n", lam, lam)
    # Violation -s > 0 is split between moving u (cost d^2/lam2 per unit^2)
    # and the relaxation r (linear cost): move u until the marginal cost
    # 2 d / lam2 reaches penalty, relax the rest.
    d = np.maximum(0.0, -s)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_u = np.where(lam2 > 1e-12, np.minimum(d, 0.5 * penalty * lam2), 0.0)
        obj = np.where(lam2 > 1e-12, d_u**2 / np.where(lam2 > 1e-12, lam2, 1.0), 0.0)
    obj = obj + penalty * (d - d_u)
    return float(obj.mean())


class _FeasCache:
    """Cached drift/input values for the feasibility dataset."""

    def __init__(self, sys: StochasticAffineSystem, X: np.ndarray):
        self.sys = sys
        self.X = np.asarray(X, dtype=float).reshape(-1, sys.n_x)
        self.f_vals = np.array([sys.drift(x) for x in self.X]).reshape(-1, sys.n_x)
        if sys.n_u:
            self.g_vals = np.array([sys.input_matrix(x) for x in self.X])
        else:
            self.g_vals = np.zeros((len(self.X), sys.n_x, 0))

    def extend(self, X_new: np.ndarray):
        other = _FeasCache(self.sys, X_new)
        self.X = np.vstack([self.X, other.X])
        self.f_vals = np.vstack([self.f_vals, other.f_vals])
        self.g_vals = np.concatenate([self.g_vals, other.g_vals], axis=0)


def _relu_lam_xi_batch(net: nn.Mlp, R: generator.NeuronBounds, cache: _FeasCache, k: float):
    """Vectorized (lam, xi, Bt) of the ReLU lower bound on cached points."""
    w1, r1 = net.weights[0], net.biases[0]
    w2 = net.weights[1].ravel()
    z = cache.X @ w1.T + r1
    coef = w2 * ((z > 0.0) - 0.5 * np.sign(z)) - (np.abs(w2) / R.R) * z
    bt = generator.tilde_b_batch(net, R, cache.X)
    vnorm2 = np.sum((w1 @ cache.sys.V) ** 2, axis=1)
    xi = (
        np.einsum("nm,nm->n", coef, cache.f_vals @ w1.T)
        - 0.5 * float((np.abs(w2) / R.R) @ vnorm2)
        + k * bt
    )
    lam = np.einsum("nm,nmd->nd", coef, np.einsum("md,nde->nme", w1, cache.g_vals))
    return lam, xi, bt


def _smooth_lam_xi_batch(net: nn.Mlp, cache: _FeasCache, k: float):
    b = _SmoothBatch.__new__(_SmoothBatch)
    b.X, b.f_vals, b.g_vals = cache.X, cache.f_vals, cache.g_vals
    b.V, b.VVT = cache.sys.V, cache.sys.V @ cache.sys.V.T
    b.refresh(net)
    xi = b.Jf + b.trace + k * b.B
    return b.lam, xi, b.B


def _safe_neuron_bounds(net: nn.Mlp, regions: RegionSpec, enum_seed: int):
    """Neuron bounds from enumeration when the super-level set is nonempty,
    otherwise a sound fallback from the state box."""
    try:
        Q = enumerate_activation_sets(net, None, regions.X, regions.X_I, seed=enum_seed)
        if Q:
            return generator.compute_neuron_bounds(net, regions.X, Q)
    except EnumerationError:
        pass
    w1, r1 = net.weights[0], net.biases[0]
    mid = 0.5 * (regions.X.lo + regions.X.hi)
    half = 0.5 * (regions.X.hi - regions.X.lo)
    R = np.abs(w1 @ mid + r1) + np.abs(w1) @ half
    return generator.NeuronBounds(np.maximum(R * generator.R_INFLATION, generator.R_FLOOR))


class _CutScorer:
    """Grid scoring for piecewise-linear cut barriers B = b + sum relu(w.x+r)
    with b < 0.

    Folding unit output weights into the first layer leaves each hidden unit
    as a single half-space contribution, so candidate barriers are scored
    directly from the rows: correctness margin of B on unsafe samples,
    safe-set coverage, barrier level on the initial set, and the worst
    generator value of the quadratic lower bound.  Keeping the output weights
    nonnegative makes the quadratic lower bound dominated by B everywhere, so
    nets seeded this way stay inside the family the relu trainer preserves.
    The feasibility term is evaluated on the slightly enlarged band
    {Bt >= -BAND} because the verifier's binding deficits sit on the Bt = 0
    boundary, which interior grid samples almost never hit exactly.
    """

    BAND = 0.15

    def __init__(self, sys: StochasticAffineSystem, regions: RegionSpec,
                 cfg: VitlConfig, rng):
        X = regions.X
        pts = [X.sample(rng, cfg.init_samples), regions.X_I.sample(rng, 400)]
        # The generator deficit of a cut barrier typically peaks on the state
        # box boundary, which uniform samples almost never hit: pin points to
        # each face explicitly.
        n = sys.n_x
        n_face = max(50, cfg.init_samples // (8 * n))
        for i in range(n):
            for val in (X.lo[i], X.hi[i]):
                face = X.sample(rng, n_face)
                face[:, i] = val
                pts.append(face)
        self.pts = np.vstack(pts)
        self.f_vals = np.array([sys.drift(x) for x in self.pts])
        self.safe_m = np.array([regions.safe.value(p) >= 0.0 for p in self.pts])
        self.unsafe_m = ~self.safe_m
        self.xi_m = np.zeros(len(self.pts), dtype=bool)
        self.xi_m[cfg.init_samples:cfg.init_samples + 400] = True
        self.n_safe = max(1, int(self.safe_m.sum()))
        self.V = sys.V
        self.k, self.eps = cfg.k, cfg.eps_margin
        self.feas_margin, self.cov_target = cfg.feas_margin, cfg.cov_target

    def score(self, W: np.ndarray, r: np.ndarray, b: float) -> float:
        if b >= -0.01:
            return -np.inf
        Z = self.pts @ W.T + r
        B = b + np.maximum(Z, 0.0).sum(axis=1)
        mask = B >= 0.0
        if not mask.any():
            return -np.inf
        R = np.maximum(1.01 * np.abs(Z[mask]).max(axis=0), 1e-6)
        Bt = b + (Z / 2.0 - Z**2 / (2.0 * R)).sum(axis=1)
        mt = Bt >= -self.BAND * abs(b)
        if not mt.any():
            return -np.inf
        coef = ((Z[mt] > 0.0) - 0.5 * np.sign(Z[mt])) - Z[mt] / R
        vnorm2 = np.sum((W @ self.V) ** 2, axis=1)
        xi = (
            np.einsum("nm,nm->n", coef, self.f_vals[mt] @ W.T)
            - 0.5 * float((vnorm2 / R).sum())
            + self.k * Bt[mt]
        )
        s = min(float(xi.min()) - self.feas_margin, 1.0)
        corr = float(B[self.unsafe_m].max()) if self.unsafe_m.any() else -np.inf
        s -= 8.0 * max(0.0, corr + self.eps)
        cov = float((mask & self.safe_m).sum()) / self.n_safe
        s -= 8.0 * max(0.0, self.cov_target - cov)
        init_lvl = float(B[self.xi_m].min())
        s -= 4.0 * max(0.0, self.eps - init_lvl)
        return s


def cut_init(
    sys: StochasticAffineSystem,
    regions: RegionSpec,
    cfg: VitlConfig,
) -> Optional[nn.Mlp]:
    """Seed a ReLU net with a few half-space cuts found by direct search.

    Candidate barriers B(x) = -1 + sum_j relu(w_j.x + r_j) are scored by
    ``_CutScorer`` and grown greedily one cut at a time: random draws around
    the incumbent, then a local Gaussian refinement with decaying step.  The
    output level is gauge-fixed at -1: the generator sign is invariant under
    a positive rescale of the whole barrier, so the fixed gauge removes the
    degenerate move of shrinking the barrier until its deficits disappear
    into the score's tolerance.  The winner is embedded into the configured
    hidden width with unit output weights on the active rows and the spare
    units zeroed out (their bias is set to -1 so the inactive side is empty
    and region enumeration never branches on them).
    """
    if cfg.hidden < cfg.init_cuts or sys.n_x < 1:
        return None
    rng = np.random.default_rng(cfg.seed)
    scorer = _CutScorer(sys, regions, cfg, rng)
    n = sys.n_x
    span = float(np.max(regions.X.hi - regions.X.lo))

    def draw_row():
        a = rng.standard_normal(n)
        a /= max(np.linalg.norm(a), 1e-12)
        gam = np.exp(rng.uniform(np.log(0.02), np.log(4.0)))
        v0 = rng.uniform(-span, span)
        return gam * a, -gam * v0

    best_W, best_r, best_b, best_s = None, None, None, -np.inf
    for m in range(1, cfg.init_cuts + 1):
        cand_W, cand_r, cand_b, cand_s = None, None, None, -np.inf
        for _ in range(cfg.init_draws):
            if m == 1:
                W = np.zeros((1, n))
                W[0], r0 = draw_row()
                r = np.array([r0])
            else:
                W = best_W + 0.05 * rng.standard_normal(best_W.shape)
                r = best_r + 0.1 * rng.standard_normal(m - 1)
                row, r0 = draw_row()
                W = np.vstack([W, row[None]])
                r = np.append(r, r0)
            b = -1.0
            s = scorer.score(W, r, b)
            if s > cand_s:
                cand_W, cand_r, cand_b, cand_s = W, r, b, s
        if cand_W is None:
            continue
        step = 0.15
        for it in range(cfg.init_refines):
            W = cand_W + step * rng.standard_normal(cand_W.shape)
            r = cand_r + step * rng.standard_normal(m)
            b = -1.0
            s = scorer.score(W, r, b)
            if s > cand_s:
                cand_W, cand_r, cand_b, cand_s = W, r, b, s
            if (it + 1) % max(1, cfg.init_refines // 8) == 0:
                step *= 0.7
        if cand_s > best_s:
            best_W, best_r, best_b, best_s = cand_W, cand_r, cand_b, cand_s
    if best_W is None:
        return None
    m = best_W.shape[0]
    w1 = np.zeros((cfg.hidden, n))
    r1 = np.full(cfg.hidden, -1.0)
    w2 = np.zeros((1, cfg.hidden))
    w1[:m] = best_W
    r1[:m] = best_r
    w2[0, :m] = 1.0
    return nn.Mlp([w1, w2], [r1, np.array([float(best_b)])], "relu")


@dataclass
class VitlResult:
    net: nn.Mlp
    outcome: VerificationOutcome
    history: list
    ce_log: list = field(default_factory=list)
    epochs: int = 0


def _sample_split(regions: RegionSpec, cfg: VitlConfig, rng) -> tuple:
    safe = []
    draws = 0
    while len(safe) < cfg.n_safe and draws < 200:
        draws += 1
        pts = regions.X.sample(rng, 4 * cfg.n_safe)
        for p in pts:
            if regions.safe.value(p) >= cfg.safe_margin and len(safe) < cfg.n_safe:
                safe.append(p)
    if not safe:
        raise TrainError("could not sample any safe points; safe_margin too large")
    unsafe = []
    draws = 0
    while len(unsafe) < cfg.n_unsafe and draws < 200:
        draws += 1
        pts = regions.X.sample(rng, 4 * cfg.n_unsafe)
        for p in pts:
            if regions.in_unsafe(p) and len(unsafe) < cfg.n_unsafe:
                unsafe.append(p)
    feas = regions.X.sample(rng, cfg.n_feas)
    return np.array(safe), np.array(unsafe), feas


def train_vitl(
    cfg: VitlConfig,
    bench: Benchmark,
    mode: str,
    bnb: Optional[BnbConfig] = None,
    input_set: Optional[InputSet] = None,
) -> VitlResult:
    """Alternate sampled-loss training and formal verification, augmenting
    the dataset with each counterexample (plus jittered copies) until the
    verifier accepts or the round budget runs out."""
    if mode not in ("smooth", "relu"):
        raise TrainError(f"unknown mode {mode!r}")
    sys, regions = bench.system, bench.regions
    rng = np.random.default_rng(cfg.seed)
    activation = "relu" if mode == "relu" else bench.hyper.get("activation", "softplus")
    net = None
    if cfg.init == "cuts" and mode == "relu":
        net = cut_init(sys, regions, cfg)
    if net is None:
        net = nn.init_mlp([sys.n_x, cfg.hidden, 1], activation, cfg.seed)
    safe_pts, unsafe_pts, feas_pts = _sample_split(regions, cfg, rng)
    feas_cache = _FeasCache(sys, feas_pts)
    bnb = bnb or BnbConfig()
    history = []
    ce_log = []
    epochs = 0
    outcome = VerificationOutcome("unknown")
    params = [net.weights[0], net.biases[0], net.weights[1], net.biases[1]]

    def total_loss(R):
        if mode == "relu":
            vs = generator.tilde_b_batch(net, R, safe_pts) if len(safe_pts) else np.zeros(0)
            vu = generator.tilde_b_batch(net, R, unsafe_pts) if len(unsafe_pts) else np.zeros(0)
            lam, xi, bt = _relu_lam_xi_batch(net, R, feas_cache, cfg.k)
        else:
            vs = nn.forward_batch(net, safe_pts) if len(safe_pts) else np.zeros(0)
            vu = nn.forward_batch(net, unsafe_pts) if len(unsafe_pts) else np.zeros(0)
            lam, xi, bt = _smooth_lam_xi_batch(net, feas_cache, cfg.k)
        lc = loss_correct(vs, vu, cfg.eps_margin)
        # The constraint only needs to hold on the level set; in relu mode
        # train on a slightly enlarged band because verification deficits
        # concentrate on the quadratic-bound boundary Bt = 0.
        gate = bt >= (-0.1 if mode == "relu" else 0.0)
        lf = loss_feasible(
            lam[gate], xi[gate] - cfg.feas_margin, np.zeros(sys.n_u), cfg.penalty
        )
        return cfg.lambda_f * lf + cfg.lambda_c * lc

    for round_idx in range(cfg.max_rounds):
        R = _safe_neuron_bounds(net, regions, cfg.seed) if mode == "relu" else None
        for _ in range(cfg.inner_epochs):
            base = total_loss(R)
            if base == 0.0:
                break
            epochs += 1
            h = cfg.fd_step
            for arr in params:
                g = np.zeros_like(arr)
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    old = arr[idx]
                    arr[idx] = old + h
                    up = total_loss(R)
                    arr[idx] = old - h
                    dn = total_loss(R)
                    arr[idx] = old
                    g[idx] = (up - dn) / (2.0 * h)
                arr -= cfg.lr * g
            if mode == "relu":
                # Projection keeping the output weights nonnegative, so the
                # quadratic lower bound stays dominated by the network.
                np.maximum(net.weights[1], 0.0, out=net.weights[1])
        final_loss = total_loss(R)
        outcome = verify(net, sys, regions, cfg.k, mode, bnb, input_set, cfg.seed)
        history.append(
            {"round": round_idx, "loss": final_loss, "status": outcome.status,
             "epochs": epochs}
        )
        if outcome.status == "valid":
            break
        if outcome.status == "counterexample":
            ce = np.asarray(outcome.counterexample)
            ce_log.append({"round": round_idx, "kind": outcome.kind, "x": ce.copy()})
            jitter = ce + cfg.jitter_sigma * rng.standard_normal(
                (cfg.jitter_copies, len(ce))
            )
            pts = np.clip(np.vstack([ce[None], jitter]), regions.X.lo, regions.X.hi)
            if outcome.kind == "correctness":
                unsafe_pts = np.vstack([unsafe_pts, pts]) if len(unsafe_pts) else pts
            else:
                feas_cache.extend(pts)
    return VitlResult(net, outcome, history, ce_log, epochs)
