"""Certified verification of correctness and feasibility for smooth and
ReLU barriers via interval branch-and-bound, with LP fast paths for the
piecewise-linear cases.

Branch-and-bound semantics: each program asks whether the minimum of an
objective over a constrained box is >= -delta_bb (verified) or whether a
point exists with objective < -delta_ce = -delta_bb/10 that genuinely
violates the condition pointwise (counterexample); box-budget exhaustion
yields Unknown with the residual gap.  Equality constraints are relaxed to
|e| <= eps_eq bands, which only enlarges the feasible set and therefore
never certifies unsoundly.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import generator, nn
from .enumeration import enumerate_feasible_regions, region_polytope, super_lp
from .expr import Expr, Interval, SplitRequired, affine_expr, eval_interval, eval_point
from .simplex import lp_maximize, lp_minimize
from .system import Box, RegionSpec, SafeSet, StochasticAffineSystem


class VerifyError(Exception):
    pass


@dataclass
class BnbConfig:
    delta_bb: float = 1e-4
    eps_eq: float = 1e-6
    max_boxes: int = 1_000_000
    min_width: float = 1e-6

    def __post_init__(self):
        if min(self.delta_bb, self.eps_eq, self.max_boxes, self.min_width) <= 0:
            raise VerifyError("BnbConfig fields must be positive")

    @property
    def delta_ce(self) -> float:
        return self.delta_bb / 10.0


@dataclass
class VerificationOutcome:
    status: str  # 'valid' | 'counterexample' | 'unknown'
    kind: Optional[str] = None  # 'correctness' | 'feasibility'
    counterexample: Optional[np.ndarray] = None
    certified_bound: float = float("inf")
    gap: float = 0.0
    regions: list = field(default_factory=list)  # per-region report rows

    @property
    def valid(self) -> bool:
        return self.status == "valid"


# -- objective / constraint adapters ---------------------------------------


class ExprFn:
    """Expression adapter exposing point and interval evaluation."""

    def __init__(self, expr: Expr):
        self.expr = expr

    def point(self, x) -> float:
        return eval_point(self.expr, x)

    def interval(self, box) -> Interval:
        return eval_interval(self.expr, box)


class PiecewiseAffine:
    """min or max of affine pieces w.x + b."""

    def __init__(self, kind: str, pieces):
        if kind not in ("min", "max"):
            raise VerifyError("kind must be min or max")
        self.kind = kind
        self.W = np.array([w for w, _ in pieces], dtype=float)
        self.b = np.array([b for _, b in pieces], dtype=float)

    def point(self, x) -> float:
        vals = self.W @ np.asarray(x, dtype=float) + self.b
        return float(vals.min() if self.kind == "min" else vals.max())

    def interval(self, box) -> Interval:
        lo = np.array([iv.lo for iv in box])
        hi = np.array([iv.hi for iv in box])
        los = np.where(self.W > 0, self.W * lo, self.W * hi).sum(axis=1) + self.b
        his = np.where(self.W > 0, self.W * hi, self.W * lo).sum(axis=1) + self.b
        if self.kind == "min":
            return Interval(float(los.min()), float(his.min()))
        return Interval(float(los.max()), float(his.max()))


def safe_objective(safe: SafeSet):
    if safe.kind == "expr":
        return ExprFn(safe.h)
    return PiecewiseAffine(safe.combine(), safe.pieces)


@dataclass
class NlpProblem:
    """min objective over box s.t. ineqs >= 0 and |eqs| <= eps_eq."""

    objective: object
    ineqs: list
    eqs: list
    lo: np.ndarray
    hi: np.ndarray
    # Optional genuineness check for counterexample candidates; receives the
    # candidate and returns a (possibly trimmed) witness or None.
    ce_filter: Optional[Callable] = None


@dataclass
class BnbResult:
    status: str  # 'valid' | 'counterexample' | 'unknown'
    bound: float
    witness: Optional[np.ndarray] = None
    gap: float = 0.0
    boxes: int = 0


def _point_feasible(p: NlpProblem, x, eps_eq: float) -> bool:
    if any(g.point(x) < 0.0 for g in p.ineqs):
        return False
    return all(abs(e.point(x)) <= eps_eq for e in p.eqs)


def branch_and_bound(p: NlpProblem, cfg: BnbConfig) -> BnbResult:
    """Best-first interval branch and bound (widest-dimension bisection)."""
    lo = np.asarray(p.lo, dtype=float)
    hi = np.asarray(p.hi, dtype=float)
    counter = itertools.count()
    heap = [(-np.inf, next(counter), lo, hi)]
    best_bound = np.inf  # min objective lower bound over surviving boxes
    boxes = 0
    unknown_gap = 0.0
    have_unknown = False
    while heap:
        _, _, blo, bhi = heapq.heappop(heap)
        boxes += 1
        if boxes > cfg.max_boxes:
            have_unknown = True
            unknown_gap = max(unknown_gap, cfg.delta_bb)
            break
        iv_box = [Interval(float(a), float(b)) for a, b in zip(blo, bhi)]
        try:
            pruned = False
            for g in p.ineqs:
                if g.interval(iv_box).hi < 0.0:
                    pruned = True
                    break
            if not pruned:
                for e in p.eqs:
                    r = e.interval(iv_box)
                    if r.lo > cfg.eps_eq or r.hi < -cfg.eps_eq:
                        pruned = True
                        break
            if pruned:
                continue
            obj = p.objective.interval(iv_box)
        except SplitRequired:
            obj = Interval(-np.inf, np.inf)
        if obj.lo >= -cfg.delta_bb:
            best_bound = min(best_bound, obj.lo)
            continue
        # Counterexample attempt at the midpoint.
        mid = 0.5 * (blo + bhi)
        try:
            if _point_feasible(p, mid, cfg.eps_eq) and p.objective.point(mid) < -cfg.delta_ce:
                witness = mid
                if p.ce_filter is not None:
                    witness = p.ce_filter(mid)
                if witness is not None:
                    return BnbResult("counterexample", obj.lo, np.asarray(witness), boxes=boxes)
        except Exception:
            pass  # midpoint evaluation failure (e.g. division); keep splitting
        widths = bhi - blo
        d = int(np.argmax(widths))
        if widths[d] <= cfg.min_width:
            have_unknown = True
            unknown_gap = max(unknown_gap, -obj.lo - cfg.delta_bb)
            best_bound = min(best_bound, obj.lo)
            continue
        m = 0.5 * (blo[d] + bhi[d])
        for child_lo, child_hi in (
            (blo, np.array([*bhi[:d], m, *bhi[d + 1 :]])),
            (np.array([*blo[:d], m, *blo[d + 1 :]]), bhi),
        ):
            heapq.heappush(heap, (obj.lo, next(counter), child_lo, child_hi))
    if have_unknown:
        return BnbResult("unknown", best_bound, gap=unknown_gap, boxes=boxes)
    return BnbResult("valid", best_bound, boxes=boxes)


def interval_maximize(
    objective, ineqs, lo, hi, tol: float = 1e-6, max_boxes: int = 200_000
) -> float:
    """Certified upper bound on max of the objective over the box subject to
    ineqs >= 0; returns -inf when the feasible set is provably empty."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    counter = itertools.count()
    heap = [(-np.inf, next(counter), lo, hi)]
    best_lb = -np.inf
    global_ub = -np.inf
    boxes = 0
    while heap:
        neg_ub, _, blo, bhi = heapq.heappop(heap)
        ub = -neg_ub
        if ub <= best_lb + tol and np.isfinite(ub):
            global_ub = max(global_ub, ub)
            # Everything still queued has an even smaller upper bound.
            while heap:
                nb, _, _, _ = heapq.heappop(heap)
                global_ub = max(global_ub, -nb)
            break
        boxes += 1
        iv_box = [Interval(float(a), float(b)) for a, b in zip(blo, bhi)]
        try:
            if any(g.interval(iv_box).hi < 0.0 for g in ineqs):
                continue
            r = objective.interval(iv_box)
        except SplitRequired:
            r = Interval(-np.inf, np.inf)
        if r.hi <= best_lb:
            global_ub = max(global_ub, r.hi)
            continue
        mid = 0.5 * (blo + bhi)
        try:
            if all(g.point(mid) >= 0.0 for g in ineqs):
                best_lb = max(best_lb, objective.point(mid))
        except Exception:
            pass
        widths = bhi - blo
        d = int(np.argmax(widths))
        if widths[d] <= 1e-9 or boxes > max_boxes:
            global_ub = max(global_ub, r.hi)
            continue
        m = 0.5 * (blo[d] + bhi[d])
        heapq.heappush(
            heap, (-r.hi, next(counter), blo, np.array([*bhi[:d], m, *bhi[d + 1 :]]))
        )
        heapq.heappush(
            heap, (-r.hi, next(counter), np.array([*blo[:d], m, *blo[d + 1 :]]), bhi)
        )
    return float(max(global_ub, best_lb))


# -- smooth-net expression encoding ----------------------------------------


def _act_expr(activation: str, z: Expr, order: int = 0) -> Expr:
    """sigma(z), sigma'(z) or sigma''(z) as expressions."""
    if activation == "softplus":
        if order == 0:
            return Expr.unary("softplus", z)
        if order == 1:
            return Expr.unary("sigmoid", z)
        s = Expr.unary("sigmoid", z)
        return s * (Expr.const(1.0) - s)
    if activation == "tanh":
        t = Expr.unary("tanh", z)
        if order == 0:
            return t
        if order == 1:
            return Expr.const(1.0) - t**2
        return Expr.const(-2.0) * t * (Expr.const(1.0) - t**2)
    raise VerifyError(f"no expression encoding for activation {activation!r}")


def net_expr(net: nn.Mlp) -> Expr:
    """B(x) as a single expression (smooth activations, any depth)."""
    acts = [Expr.var(i) for i in range(net.n_x)]
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        nxt = []
        for j in range(w.shape[0]):
            z = Expr.const(float(b[j]))
            for m, a in enumerate(acts):
                if w[j, m] != 0.0:
                    z = z + Expr.const(float(w[j, m])) * a
            nxt.append(_act_expr(net.activation, z, 0))
        acts = nxt
    out = Expr.const(float(net.biases[-1][0]))
    for m, a in enumerate(acts):
        if net.weights[-1][0, m] != 0.0:
            out = out + Expr.const(float(net.weights[-1][0, m])) * a
    return out


def jacobian_exprs(net: nn.Mlp) -> list:
    """dB/dx components as expressions (single hidden layer)."""
    if not net.single_hidden:
        raise VerifyError("jacobian expressions require a single hidden layer")
    w1, r1 = net.weights[0], net.biases[0]
    w2 = net.weights[1].ravel()
    sig_primes = [
        _act_expr(net.activation, affine_expr(w1[j], float(r1[j])), 1)
        for j in range(w1.shape[0])
    ]
    out = []
    for m in range(net.n_x):
        e = Expr.const(0.0)
        for j in range(w1.shape[0]):
            c = w2[j] * w1[j, m]
            if c != 0.0:
                e = e + Expr.const(float(c)) * sig_primes[j]
        out.append(e)
    return out


def hessian_trace_expr(net: nn.Mlp, V: np.ndarray) -> Expr:
    """0.5 tr(V^T d2B/dx2 V) as an expression (single hidden layer)."""
    if not net.single_hidden:
        raise VerifyError("hessian-trace expression requires a single hidden layer")
    w1, r1 = net.weights[0], net.biases[0]
    w2 = net.weights[1].ravel()
    vnorm2 = np.sum((w1 @ V) ** 2, axis=1)
    e = Expr.const(0.0)
    for j in range(w1.shape[0]):
        c = 0.5 * w2[j] * vnorm2[j]
        if c != 0.0:
            e = e + Expr.const(float(c)) * _act_expr(
                net.activation, affine_expr(w1[j], float(r1[j])), 2
            )
    return e


def lambda_xi_smooth_exprs(
    net: nn.Mlp, sys: StochasticAffineSystem, k: float
) -> tuple:
    """(lambda_i(x) expressions, xi(x) expression) for a smooth net."""
    J = jacobian_exprs(net)
    lam = []
    for i in range(sys.n_u):
        e = Expr.const(0.0)
        for m in range(sys.n_x):
            e = e + J[m] * sys.g[m][i]
        lam.append(e)
    xi = hessian_trace_expr(net, sys.V) + Expr.const(k) * net_expr(net)
    for m in range(sys.n_x):
        xi = xi + J[m] * sys.f[m]
    return lam, xi


# -- input sets -------------------------------------------------------------


@dataclass
class InputSet:
    """Control polytope {u : A u <= b}."""

    A: np.ndarray
    b: np.ndarray

    @staticmethod
    def box(lo, hi) -> "InputSet":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        n = len(lo)
        return InputSet(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo]))


def control_exists(lam: np.ndarray, xi: float, input_set: Optional[InputSet]) -> bool:
    """Is there u in the input set with lam.u + xi >= 0?"""
    lam = np.atleast_1d(lam)
    if input_set is None:
        if np.any(lam != 0.0):
            return True
        return xi >= 0.0
    res = lp_maximize(lam, input_set.A, input_set.b)
    if res.status == "unbounded":
        return True
    if res.status == "infeasible":
        return False  # empty input set
    return res.value + xi >= 0.0


# -- smooth verification ----------------------------------------------------


def verify_correctness_smooth(
    net: nn.Mlp, regions: RegionSpec, cfg: BnbConfig
) -> VerificationOutcome:
    """Check the super-level set stays inside the safe set: min h >= 0 on {B>=0}."""
    b_expr = ExprFn(net_expr(net))
    obj = safe_objective(regions.safe)

    def ce_filter(x):
        if obj.point(x) < 0.0 and nn.forward(net, x) >= 0.0:
            return x
        return None

    p = NlpProblem(obj, [b_expr], [], regions.X.lo, regions.X.hi, ce_filter)
    r = branch_and_bound(p, cfg)
    if r.status == "counterexample":
        return VerificationOutcome("counterexample", "correctness", r.witness)
    if r.status == "unknown":
        return VerificationOutcome("unknown", "correctness", gap=r.gap)
    return VerificationOutcome("valid", "correctness", certified_bound=r.bound)


def verify_feasibility_smooth(
    net: nn.Mlp,
    sys: StochasticAffineSystem,
    regions: RegionSpec,
    k: float,
    input_set: Optional[InputSet],
    cfg: BnbConfig,
) -> VerificationOutcome:
    """A safe control exists everywhere on {B >= 0}."""
    lam_exprs, xi_expr = lambda_xi_smooth_exprs(net, sys, k)
    b_expr = ExprFn(net_expr(net))

    def pointwise_terms(x):
        t = generator.lambda_xi_smooth(net, sys, k, x)
        return t.lam, t.xi

    if input_set is None:
        # Unconstrained input: infeasible only where lambda(x) = 0 and xi < 0.
        def ce_filter(x):
            lam, xi = pointwise_terms(x)
            if nn.forward(net, x) >= 0.0 and xi < -cfg.delta_ce and np.all(
                np.abs(lam) <= cfg.eps_eq
            ):
                return x
            return None

        p = NlpProblem(
            ExprFn(xi_expr),
            [b_expr],
            [ExprFn(e) for e in lam_exprs],
            regions.X.lo,
            regions.X.hi,
            ce_filter,
        )
        r = branch_and_bound(p, cfg)
        if r.status == "counterexample":
            return VerificationOutcome("counterexample", "feasibility", r.witness)
        if r.status == "unknown":
            return VerificationOutcome("unknown", "feasibility", gap=r.gap)
        return VerificationOutcome("valid", "feasibility", certified_bound=r.bound)

    # Polytope input: exact Farkas program over (x, y) with sum(y) = 1.
    m = input_set.A.shape[0] + 1
    n_x = sys.n_x
    y_vars = [Expr.var(n_x + i) for i in range(m)]
    obj = y_vars[0] * xi_expr
    for i in range(1, m):
        obj = obj + Expr.const(float(input_set.b[i - 1])) * y_vars[i]
    eqs = []
    for i in range(sys.n_u):
        e = -(y_vars[0] * lam_exprs[i])
        for rr in range(1, m):
            if input_set.A[rr - 1, i] != 0.0:
                e = e + Expr.const(float(input_set.A[rr - 1, i])) * y_vars[rr]
        eqs.append(ExprFn(e))
    norm = Expr.const(-1.0)
    for yv in y_vars:
        norm = norm + yv
    eqs.append(ExprFn(norm))

    def ce_filter(xy):
        x = np.asarray(xy[:n_x])
        lam, xi = pointwise_terms(x)
        if nn.forward(net, x) >= 0.0 and not control_exists(lam, xi - cfg.delta_ce, input_set):
            return x
        return None

    p = NlpProblem(
        ExprFn(obj),
        [b_expr],
        eqs,
        np.concatenate([regions.X.lo, np.zeros(m)]),
        np.concatenate([regions.X.hi, np.ones(m)]),
        ce_filter,
    )
    r = branch_and_bound(p, cfg)
    if r.status == "counterexample":
        return VerificationOutcome("counterexample", "feasibility", r.witness)
    if r.status == "unknown":
        return VerificationOutcome("unknown", "feasibility", gap=r.gap)
    return VerificationOutcome("valid", "feasibility", certified_bound=r.bound)


# -- ReLU verification ------------------------------------------------------


def _polytope_ineq_exprs(A: np.ndarray, b: np.ndarray) -> list:
    return [ExprFn(affine_expr(-A[i], float(b[i]))) for i in range(len(b))]


def verify_correctness_relu(
    net: nn.Mlp, regions: RegionSpec, Q: list, cfg: BnbConfig
) -> VerificationOutcome:
    """Per region: min h over the affine piece's polytope with B >= 0."""
    rows = []
    worst = np.inf
    unknown = False
    gap = 0.0
    for S in Q:
        form = nn.region_linear_form(net, S)
        safe = regions.safe

        def ce_ok(x):
            return safe.value(x) < 0.0 and nn.forward(net, x) >= 0.0

        def lp_min_h(margin: float):
            """(min h over region with B >= margin, witness)."""
            poly = region_polytope(net, S, regions.X).with_rows(
                np.array([-form.w]), np.array([form.r - margin])
            )
            if safe.kind == "safe_box":
                val, wit = np.inf, None
                for w, b0 in safe.pieces:
                    res = lp_minimize(w, poly.A, poly.b)
                    if res.status == "infeasible":
                        continue
                    if res.value + b0 < val:
                        val, wit = res.value + b0, res.x
                return val, wit
            n = regions.X.dim
            # Epigraph LP on (x, t): min t s.t. t >= each face value.
            W = np.array([w for w, _ in safe.pieces])
            bb = np.array([b for _, b in safe.pieces])
            A_ub = np.hstack([poly.A, np.zeros((poly.A.shape[0], 1))])
            A_ub = np.vstack([A_ub, np.hstack([W, -np.ones((len(bb), 1))])])
            b_ub = np.concatenate([poly.b, -bb])
            res = lp_minimize(np.array([0.0] * n + [1.0]), A_ub, b_ub)
            if res.status == "infeasible":
                return np.inf, None
            return res.value, res.x[:n]

        if safe.kind in ("safe_box", "unsafe_box"):
            bound, wit = lp_min_h(0.0)
            status = "valid" if bound >= -cfg.delta_bb else "counterexample"
            if status == "counterexample" and not ce_ok(wit):
                # Boundary witness: pull it strictly inside the super-level
                # set, at the cost of a slightly weaker objective.
                val2, wit2 = lp_min_h(1e-7)
                if wit2 is not None and val2 < -cfg.delta_ce and ce_ok(wit2):
                    wit = wit2
                else:
                    status = "unknown"
                    unknown = True
                    gap = max(gap, -bound - cfg.delta_bb)
        else:
            poly = region_polytope(net, S, regions.X).with_rows(
                np.array([-form.w]), np.array([form.r])
            )
            p = NlpProblem(
                ExprFn(safe.h),
                _polytope_ineq_exprs(poly.A, poly.b),
                [],
                regions.X.lo,
                regions.X.hi,
                lambda x: x if ce_ok(x) else None,
            )
            r = branch_and_bound(p, cfg)
            status, bound, wit = r.status, r.bound, r.witness
            if status == "unknown":
                unknown = True
                gap = max(gap, r.gap)
        rows.append({"region": S[0], "check": "correctness", "bound": bound, "status": status})
        if status == "counterexample":
            return VerificationOutcome(
                "counterexample", "correctness", np.asarray(wit), regions=rows
            )
        worst = min(worst, bound)
    if unknown:
        return VerificationOutcome("unknown", "correctness", gap=gap, regions=rows)
    return VerificationOutcome("valid", "correctness", certified_bound=worst, regions=rows)


def verify_feasibility_relu(
    net: nn.Mlp,
    R: generator.NeuronBounds,
    sys: StochasticAffineSystem,
    regions: RegionSpec,
    k: float,
    input_set: Optional[InputSet],
    Q: list,
    cfg: BnbConfig,
) -> VerificationOutcome:
    """Hierarchical per-region feasibility: zero-input sufficiency, then the
    vanishing-gain program, then the exact Farkas program."""
    bt_expr = ExprFn(generator.tilde_b_expr(net, R))
    rows = []
    worst = np.inf
    unknown = False
    gap = 0.0
    for S in Q:
        lam_exprs, xi_expr = generator.lambda_xi_relu_region(net, R, sys, k, S)
        poly = region_polytope(net, S, regions.X)
        poly_ineqs = _polytope_ineq_exprs(poly.A, poly.b)
        base_ineqs = [bt_expr] + poly_ineqs

        def terms_at(x):
            return generator.lambda_xi_relu_point(net, R, sys, k, x)

        def ce_filter(x, n_x=sys.n_x):
            x = np.asarray(x[:n_x])
            t = terms_at(x)
            if generator.tilde_b(net, R, x) >= 0.0 and not control_exists(
                t.lam, t.xi - cfg.delta_ce, input_set
            ):
                return x
            return None

        exact_level = "22" if sys.n_u == 0 else ("21" if input_set is None else "19")
        level_done = None
        status, bound, wit = "unknown", np.inf, None
        # Level 22: min xi^S with u = 0 suffices.
        p22 = NlpProblem(
            ExprFn(xi_expr), base_ineqs, [], regions.X.lo, regions.X.hi,
            ce_filter if exact_level == "22" else (lambda x: None),
        )
        r = branch_and_bound(p22, cfg)
        if r.status == "valid":
            status, bound, level_done = "valid", r.bound, "22"
        elif r.status == "counterexample" and exact_level == "22":
            status, wit, level_done = "counterexample", r.witness, "22"
        elif exact_level == "22":
            status, level_done = "unknown", "22"
            gap = max(gap, r.gap)
        if level_done is None:
            # Level 21: restrict to the set where the control gain vanishes.
            p21 = NlpProblem(
                ExprFn(xi_expr),
                base_ineqs,
                [ExprFn(e) for e in lam_exprs],
                regions.X.lo,
                regions.X.hi,
                ce_filter if exact_level == "21" else (lambda x: None),
            )
            r = branch_and_bound(p21, cfg)
            if r.status == "valid":
                status, bound, level_done = "valid", r.bound, "21"
            elif r.status == "counterexample" and exact_level == "21":
                status, wit, level_done = "counterexample", r.witness, "21"
            elif exact_level == "21":
                status, level_done = "unknown", "21"
                gap = max(gap, r.gap)
        if level_done is None:
            # Level 19: exact Farkas program over (x, y).
            m = input_set.A.shape[0] + 1
            n_x = sys.n_x
            y_vars = [Expr.var(n_x + i) for i in range(m)]
            obj = y_vars[0] * xi_expr
            for i in range(1, m):
                obj = obj + Expr.const(float(input_set.b[i - 1])) * y_vars[i]
            eqs = []
            for i in range(sys.n_u):
                e = -(y_vars[0] * lam_exprs[i])
                for rr in range(1, m):
                    if input_set.A[rr - 1, i] != 0.0:
                        e = e + Expr.const(float(input_set.A[rr - 1, i])) * y_vars[rr]
                eqs.append(ExprFn(e))
            norm = Expr.const(-1.0)
            for yv in y_vars:
                norm = norm + yv
            eqs.append(ExprFn(norm))
            p19 = NlpProblem(
                ExprFn(obj),
                base_ineqs,
                eqs,
                np.concatenate([regions.X.lo, np.zeros(m)]),
                np.concatenate([regions.X.hi, np.ones(m)]),
                ce_filter,
            )
            r = branch_and_bound(p19, cfg)
            level_done = "19"
            if r.status == "valid":
                status, bound = "valid", r.bound
            elif r.status == "counterexample":
                status, wit = "counterexample", r.witness
            else:
                status = "unknown"
                gap = max(gap, r.gap)
        rows.append(
            {"region": S[0], "check": "feasibility", "level": level_done,
             "bound": bound, "status": status}
        )
        if status == "counterexample":
            return VerificationOutcome(
                "counterexample", "feasibility", np.asarray(wit), regions=rows
            )
        if status == "unknown":
            unknown = True
        else:
            worst = min(worst, bound)
    if unknown:
        return VerificationOutcome("unknown", "feasibility", gap=gap, regions=rows)
    return VerificationOutcome("valid", "feasibility", certified_bound=worst, regions=rows)


# -- top-level --------------------------------------------------------------


def verify(
    net: nn.Mlp,
    sys: StochasticAffineSystem,
    regions: RegionSpec,
    k: float,
    mode: str,
    cfg: Optional[BnbConfig] = None,
    input_set: Optional[InputSet] = None,
    enum_seed: int = 0,
) -> VerificationOutcome:
    """Correctness then feasibility; first counterexample short-circuits."""
    cfg = cfg or BnbConfig()
    if mode == "smooth":
        if net.activation not in nn.SMOOTH_ACTIVATIONS:
            raise VerifyError("smooth mode requires a smooth activation")
        c = verify_correctness_smooth(net, regions, cfg)
        if not c.valid:
            return c
        f = verify_feasibility_smooth(net, sys, regions, k, input_set, cfg)
        if not f.valid:
            return f
        return VerificationOutcome(
            "valid", certified_bound=min(c.certified_bound, f.certified_bound),
            regions=c.regions + f.regions,
        )
    if mode == "relu":
        if net.activation != "relu":
            raise VerifyError("relu mode requires a relu net")
        # Full-arrangement sweep filtered to super-level-feasible regions, so
        # disconnected components of {B >= 0} are covered.
        Q = [
            S
            for S in enumerate_feasible_regions(net, regions.X)
            if super_lp(net, S, regions.X).feasible
        ]
        if not Q:
            # Empty super-level set: both conditions hold vacuously.
            return VerificationOutcome("valid", certified_bound=np.inf)
        R = generator.compute_neuron_bounds(net, regions.X, Q)
        c = verify_correctness_relu(net, regions, Q, cfg)
        if not c.valid:
            return c
        f = verify_feasibility_relu(net, R, sys, regions, k, input_set, Q, cfg)
        if not f.valid:
            f.regions = c.regions + f.regions
            return f
        return VerificationOutcome(
            "valid", certified_bound=min(c.certified_bound, f.certified_bound),
            regions=c.regions + f.regions,
        )
    raise VerifyError(f"unknown mode {mode!r}")
