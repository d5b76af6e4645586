"""Closed-loop simulation under the barrier-constrained safety filter:
Euler-Maruyama integration of the controlled SDE, Monte Carlo estimation of
the probability of remaining in the certified region, the worst-case
analytic bound (B(x0)/c) e^{-cT}, and the safe-region coverage metric."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import generator, nn
from .enumeration import enumerate_feasible_regions, region_polytope, super_lp
from .expr import Expr
from .system import RegionSpec, StochasticAffineSystem
from .verify import BnbConfig, ExprFn, interval_maximize

WILSON_Z = 1.959963984540054  # 95%


class SimError(Exception):
    pass


@dataclass
class SimConfig:
    dt: float = 1e-3
    horizon: float = 1.0
    trials: int = 1000
    seed: int = 0
    u_ref_policy: str = "zero"
    input_lo: Optional[np.ndarray] = None
    input_hi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dt <= 0.0 or self.horizon < self.dt:
            raise SimError("need dt > 0 and horizon >= dt")

    @property
    def bounds(self):
        if self.input_lo is None and self.input_hi is None:
            return None
        return (
            np.asarray(self.input_lo, dtype=float),
            np.asarray(self.input_hi, dtype=float),
        )


@dataclass
class Trace:
    times: np.ndarray
    states: np.ndarray  # (steps+1, n_x)
    controls: np.ndarray  # (steps, n_u)
    barrier: np.ndarray  # B along the trace
    barrier_lb: Optional[np.ndarray] = None  # Bt along the trace (ReLU mode)
    exited: bool = False
    first_exit_time: Optional[float] = None
    infeasible_steps: int = 0
    aborted: bool = False


@dataclass
class SafetyBound:
    bound: float  # lower bound on P[stay in the certified region over [0,T]]
    c: float  # level constant sup over the region of the barrier
    b0: float  # barrier value at x0
    certified_c: bool = False  # False when c is a sampled (inflated) estimate

    @property
    def eta(self) -> float:
        return 1.0 - self.bound


@dataclass
class QpControl:
    u: np.ndarray
    infeasible: bool = False


def sncbf_qp_control(
    terms: generator.GeneratorTerms, u_ref, bounds=None
) -> QpControl:
    """Minimum-deviation control subject to lam.u + xi >= 0 and optional box
    bounds.  The boxed case walks the piecewise-linear dual exactly: the
    optimum has the form clip(u_ref + nu lam) with the smallest nu >= 0
    restoring feasibility."""
    lam = np.atleast_1d(np.asarray(terms.lam, dtype=float))
    u_ref = np.atleast_1d(np.asarray(u_ref, dtype=float)) if np.ndim(u_ref) else np.full(
        len(lam), float(u_ref)
    )
    if len(lam) == 0:
        return QpControl(np.zeros(0), infeasible=terms.xi < 0.0)
    if bounds is None:
        s = float(lam @ u_ref) + terms.xi
        if s >= 0.0:
            return QpControl(u_ref.copy())
        lam2 = float(lam @ lam)
        if lam2 <= 0.0:
            return QpControl(u_ref.copy(), infeasible=True)
        return QpControl(u_ref + (-s / lam2) * lam)
    lo, hi = bounds
    u0 = np.clip(u_ref, lo, hi)
    if float(lam @ u0) + terms.xi >= 0.0:
        return QpControl(u0)
    # Breakpoints where coordinates saturate as nu grows.
    with np.errstate(divide="ignore"):
        caps = np.where(lam > 0.0, (hi - u0) / np.where(lam != 0.0, lam, 1.0),
                        np.where(lam < 0.0, (lo - u0) / np.where(lam != 0.0, lam, 1.0),
                                 np.inf))
    caps = np.where(lam == 0.0, np.inf, caps)
    order = np.argsort(caps, kind="stable")
    nu = 0.0
    g = float(lam @ u0) + terms.xi
    active = lam != 0.0
    slope = float((lam[active] ** 2).sum())
    for idx in order:
        cap = caps[idx]
        if not np.isfinite(cap):
            break
        seg = cap - nu
        if slope > 0.0 and g + slope * seg >= 0.0:
            nu += -g / slope
            g = 0.0
            break
        g += slope * seg
        nu = cap
        slope -= float(lam[idx] ** 2)
    else:
        pass
    if g < 0.0 and slope > 0.0:
        nu += -g / slope
        g = 0.0
    u = np.clip(u_ref + nu * lam, lo, hi)
    infeasible = float(lam @ u) + terms.xi < -1e-9
    return QpControl(u, infeasible)


def _terms(mode, net, R, sys, k, x):
    if mode == "relu":
        return generator.lambda_xi_relu_point(net, R, sys, k, x)
    return generator.lambda_xi_smooth(net, sys, k, x)


def simulate(
    mode: str,
    net: nn.Mlp,
    R: Optional[generator.NeuronBounds],
    sys: StochasticAffineSystem,
    regions: RegionSpec,
    k: float,
    cfg: SimConfig,
    x0=None,
    rng: Optional[np.random.Generator] = None,
) -> Trace:
    """Euler-Maruyama rollout under the filtered control."""
    if mode not in ("smooth", "relu"):
        raise SimError(f"unknown mode {mode!r}")
    if mode == "relu" and R is None:
        raise SimError("relu mode needs neuron bounds")
    rng = rng or np.random.default_rng(cfg.seed)
    if x0 is None:
        x0 = 0.5 * (regions.X_I.lo + regions.X_I.hi)
    x = np.asarray(x0, dtype=float).copy()
    steps = int(round(cfg.horizon / cfg.dt))
    n_x, n_u = sys.n_x, sys.n_u
    states = np.empty((steps + 1, n_x))
    controls = np.empty((steps, n_u))
    b_vals = np.empty(steps + 1)
    bt_vals = np.empty(steps + 1) if mode == "relu" else None
    states[0] = x
    b_vals[0] = nn.forward(net, x)
    if mode == "relu":
        bt_vals[0] = generator.tilde_b(net, R, x)
    exited = False
    first_exit = None
    infeasible = 0
    sqrt_dt = np.sqrt(cfg.dt)
    u_ref = np.zeros(n_u)
    aborted = False
    used = steps
    for i in range(steps):
        t = _terms(mode, net, R, sys, k, x)
        qp = sncbf_qp_control(t, u_ref, cfg.bounds)
        if qp.infeasible:
            infeasible += 1
        u = qp.u
        drift = sys.drift(x)
        if n_u:
            drift = drift + sys.input_matrix(x) @ u
        noise = sys.V @ rng.standard_normal(sys.n_v)
        x = x + drift * cfg.dt + sqrt_dt * noise
        if not np.all(np.isfinite(x)):
            aborted = True
            used = i
            break
        controls[i] = u
        states[i + 1] = x
        b_vals[i + 1] = nn.forward(net, x)
        if mode == "relu":
            bt_vals[i + 1] = generator.tilde_b(net, R, x)
        level = bt_vals[i + 1] if mode == "relu" else b_vals[i + 1]
        if not exited and (level < 0.0 or not regions.X.contains(x)):
            exited = True
            first_exit = (i + 1) * cfg.dt
    times = np.arange(used + 1) * cfg.dt
    return Trace(
        times,
        states[: used + 1],
        controls[:used],
        b_vals[: used + 1],
        bt_vals[: used + 1] if mode == "relu" else None,
        exited,
        first_exit,
        infeasible,
        aborted,
    )


def wilson_interval(successes: int, n: int, z: float = WILSON_Z) -> tuple:
    p = successes / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * np.sqrt(p * (1.0 - p) / n + z**2 / (4 * n**2)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def estimate_safety_probability(
    mode: str,
    net: nn.Mlp,
    R: Optional[generator.NeuronBounds],
    sys: StochasticAffineSystem,
    regions: RegionSpec,
    k: float,
    cfg: SimConfig,
    x0=None,
) -> tuple:
    """(p_hat, 95% Wilson interval) of never exiting over the horizon;
    per-trial RNG streams are seed-split for order-independence."""
    if cfg.trials < 100:
        raise SimError("need at least 100 trials")
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.trials)
    safe = 0
    for ss in streams:
        tr = simulate(mode, net, R, sys, regions, k, cfg, x0, np.random.default_rng(ss))
        if not tr.exited and not tr.aborted:
            safe += 1
    return safe / cfg.trials, wilson_interval(safe, cfg.trials)


def worst_case_bound(
    mode: str,
    net: nn.Mlp,
    R: Optional[generator.NeuronBounds],
    x0,
    T: float,
    regions: RegionSpec,
    Q: Optional[list] = None,
    samples: int = 1_000_000,
    seed: int = 0,
) -> SafetyBound:
    """Analytic survival bound (B(x0)/c) e^{-cT}.

    Smooth mode estimates c = sup B by sampling (inflated 5%, flagged);
    ReLU mode certifies c as an interval upper bound of the region-wise
    quadratic lower-bound barrier."""
    x0 = np.asarray(x0, dtype=float)
    if mode == "smooth":
        b0 = nn.forward(net, x0)
        if b0 < 0.0:
            raise SimError("x0 outside the certified region")
        rng = np.random.default_rng(seed)
        pts = regions.X.sample(rng, samples)
        vals = nn.forward_batch(net, pts)
        sup = vals[vals >= 0.0]
        c = float(sup.max()) * 1.05 if len(sup) else b0
        c = max(c, b0)
        certified = False
    elif mode == "relu":
        if R is None:
            raise SimError("relu mode needs neuron bounds")
        b0 = generator.tilde_b(net, R, x0)
        if b0 < 0.0:
            raise SimError("x0 outside the certified lower-bound region")
        if Q is None:
            Q = [
                S
                for S in enumerate_feasible_regions(net, regions.X)
                if super_lp(net, S, regions.X).feasible
            ]
        bt = ExprFn(generator.tilde_b_expr(net, R))
        c = b0
        for S in Q:
            poly = region_polytope(net, S, regions.X)
            ub = interval_maximize(
                bt,
                [ExprFn(_neg_row(poly.A[i], poly.b[i])) for i in range(len(poly.b))],
                regions.X.lo,
                regions.X.hi,
                tol=1e-6,
            )
            c = max(c, ub)
        certified = True
    else:
        raise SimError(f"unknown mode {mode!r}")
    if c <= 0.0:
        raise SimError("level constant must be positive")
    return SafetyBound(float(b0 / c * np.exp(-c * T)), c, float(b0), certified)


def _neg_row(a_row, b_val) -> Expr:
    # b - a.x >= 0 encodes the polytope row a.x <= b
    e = Expr.const(float(b_val))
    for i, ai in enumerate(a_row):
        if ai != 0.0:
            e = e - Expr.const(float(ai)) * Expr.var(i)
    return e


def coverage_metric(
    mode: str, net: nn.Mlp, regions: RegionSpec, grid_n: int = 100
) -> float:
    """Fraction of the safe-set grid on which the barrier is nonnegative."""
    if grid_n < 50:
        raise SimError("grid resolution must be at least 50 per dimension")
    pts = regions.X.grid(grid_n)
    safe_mask = np.array([regions.safe.value(x) >= 0.0 for x in pts])
    pts = pts[safe_mask]
    if not len(pts):
        raise SimError("empty safe set on the grid")
    vals = nn.forward_batch(net, pts)
    return float((vals >= 0.0).mean())


def write_trace_csv(trace: Trace, sys: StochasticAffineSystem, path: str):
    header = (
        ["t"]
        + [f"x{i+1}" for i in range(sys.n_x)]
        + [f"u{i+1}" for i in range(sys.n_u)]
        + ["B"]
        + (["B_lb"] if trace.barrier_lb is not None else [])
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(trace.times):
            row = [f"{t:.10g}"] + [f"{v:.10g}" for v in trace.states[i]]
            if i < len(trace.controls):
                row += [f"{v:.10g}" for v in trace.controls[i]]
            else:
                row += [""] * sys.n_u
            row.append(f"{trace.barrier[i]:.10g}")
            if trace.barrier_lb is not None:
                row.append(f"{trace.barrier_lb[i]:.10g}")
            w.writerow(row)
