"""Stochastic control-affine system model, region specifications, presets.

The system is dx = (f(x) + g(x) u) dt + V dv with f, g held symbolically as
expression trees and V a constant diffusion matrix.  Regions are an
axis-aligned state box, an initial box, and a safe set given either by a
level-set function h (safe iff h >= 0) or by a box (safe side or unsafe
side), converted internally to a piecewise-affine h with min/max semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .expr import Expr, eval_point, parse_expr

GRAVITY = 9.8


class SystemError_(Exception):
    """Raised for malformed systems or region specifications."""


@dataclass
class StochasticAffineSystem:
    """Control-affine SDE: dx = (f(x) + g(x) u) dt + V dv."""

    n_x: int
    n_u: int
    n_v: int
    f: list  # list[Expr], length n_x
    g: list  # list[list[Expr]], n_x rows x n_u cols
    V: np.ndarray  # n_x x n_v

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        if self.V.shape != (self.n_x, self.n_v):
            raise SystemError_(f"V shape {self.V.shape} != ({self.n_x},{self.n_v})")
        if not np.all(np.isfinite(self.V)):
            raise SystemError_("V has non-finite entries")
        if len(self.f) != self.n_x:
            raise SystemError_("drift length mismatch")
        if len(self.g) != self.n_x or any(len(row) != self.n_u for row in self.g):
            raise SystemError_("input matrix shape mismatch")
        for e in list(self.f) + [c for row in self.g for c in row]:
            if e.max_var() >= self.n_x:
                raise SystemError_("expression variable index exceeds state dimension")

    def drift(self, x: Sequence[float]) -> np.ndarray:
        return np.array([eval_point(e, x) for e in self.f])

    def input_matrix(self, x: Sequence[float]) -> np.ndarray:
        return np.array([[eval_point(c, x) for c in row] for row in self.g]).reshape(
            self.n_x, self.n_u
        )

    @property
    def diagonal_diffusion(self) -> bool:
        return self.n_v == self.n_x and np.allclose(self.V, np.diag(np.diag(self.V)))


@dataclass
class Box:
    """Axis-aligned box [lo, hi] per dimension."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise SystemError_("malformed box")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def grid(self, n_per_dim: int) -> np.ndarray:
        axes = [np.linspace(self.lo[i], self.hi[i], n_per_dim) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class SafeSet:
    """Safe set {h >= 0}.

    kind 'expr': h is a single expression.
    kind 'safe_box': safe iff inside the box; h = min over face distances.
    kind 'unsafe_box': unsafe iff inside the box; h = max over face distances
    (dimensions whose unsafe range spans the whole state box carry no
    information and are dropped from the pieces).
    """

    kind: str
    h: Optional[Expr] = None
    box: Optional[Box] = None
    pieces: list = field(default_factory=list)  # [(w, b)] affine pieces

    @staticmethod
    def from_expr(h: Expr) -> "SafeSet":
        return SafeSet("expr", h=h)

    @staticmethod
    def from_safe_box(box: Box) -> "SafeSet":
        pieces = []
        for i in range(box.dim):
            w = np.zeros(box.dim)
            w[i] = 1.0
            pieces.append((w.copy(), -box.lo[i]))  # x_i - lo_i
            pieces.append((-w, box.hi[i]))  # hi_i - x_i
        return SafeSet("safe_box", box=box, pieces=pieces)

    @staticmethod
    def from_unsafe_box(box: Box, state_box: Box) -> "SafeSet":
        pieces = []
        for i in range(box.dim):
            if box.lo[i] <= state_box.lo[i] and box.hi[i] >= state_box.hi[i]:
                continue
            w = np.zeros(box.dim)
            w[i] = 1.0
            pieces.append((-w.copy(), box.lo[i]))  # lo_i - x_i
            pieces.append((w, -box.hi[i]))  # x_i - hi_i
        if not pieces:
            raise SystemError_("unsafe box covers the entire state box")
        return SafeSet("unsafe_box", box=box, pieces=pieces)

    def value(self, x) -> float:
        if self.kind == "expr":
            return eval_point(self.h, x)
        vals = [float(np.dot(w, x) + b) for w, b in self.pieces]
        return min(vals) if self.kind == "safe_box" else max(vals)

    def combine(self) -> str:
        """How the affine pieces aggregate: 'min' or 'max'."""
        return "min" if self.kind == "safe_box" else "max"


@dataclass
class RegionSpec:
    """State box X, initial box X_I, safe set X_S = {h >= 0}; X_U = X \\ X_S."""

    X: Box
    X_I: Box
    safe: SafeSet

    def validate(self, n_check: int = 10_000, seed: int = 0):
        """Sampled containment check X_I subset X_S subset X; hard error."""
        rng = np.random.default_rng(seed)
        pts = self.X_I.sample(rng, n_check)
        for p in pts:
            if not self.X.contains(p, tol=1e-12):
                raise SystemError_(f"X_I not contained in X at {p}")
            if self.safe.value(p) < 0.0:
                raise SystemError_(f"X_I point {p} is unsafe (h={self.safe.value(p)})")

    def in_unsafe(self, x) -> bool:
        """True iff h(x) < 0; boundary h = 0 counts safe."""
        return self.safe.value(x) < 0.0


@dataclass
class Benchmark:
    name: str
    system: StochasticAffineSystem
    regions: RegionSpec
    hyper: dict = field(default_factory=dict)


def _pendulum() -> Benchmark:
    m, length = 1.0, 10.0
    f = [parse_expr("x2", 2), Expr.const(GRAVITY / length) * Expr.unary("sin", Expr.var(0))]
    g = [[Expr.const(0.0)], [Expr.const(1.0 / (m * length**2))]]
    sys = StochasticAffineSystem(2, 1, 2, f, g, np.diag([0.1, 0.1]))
    X = Box([-np.pi / 4] * 2, [np.pi / 4] * 2)
    X_I = Box([-np.pi / 15] * 2, [np.pi / 15] * 2)
    safe = SafeSet.from_safe_box(Box([-np.pi / 6] * 2, [np.pi / 6] * 2))
    regions = RegionSpec(X, X_I, safe)
    hyper = {
        "activation": "softplus",
        "hidden": 20,
        "k_alpha": 1.0,
        "eps_bar": 0.01,
        "L_h": 1.7,
        "L_dh": 1.9,
        "L_x": 1.1,
        "L_d2h": 0.05,
        "delta_unsafe": 0.02,
        "lr": 1e-2,
        "max_epochs": 2000,
    }
    return Benchmark("inverted_pendulum", sys, regions, hyper)


def _darboux() -> Benchmark:
    f = [parse_expr("x2 + 2*x1*x2", 2), parse_expr("-x1 + 2*x1^2 - x2^2", 2)]
    g = [[], []]
    sys = StochasticAffineSystem(2, 0, 2, f, g, np.diag([0.1, 0.1]))
    X = Box([-2.0, -2.0], [2.0, 2.0])
    X_I = Box([0.0, 1.0], [1.0, 2.0])
    safe = SafeSet.from_expr(parse_expr("x1 + x2^2", 2))
    regions = RegionSpec(X, X_I, safe)
    hyper = {
        "activation": "relu",
        "hidden": 16,
        "k_alpha": 2.0,
        "lambda_f": 4.0,
        "lambda_c": 1.0,
        "lr": 1e-4,
        "eps_margin": 0.05,
        "init": "cuts",
    }
    return Benchmark("darboux", sys, regions, hyper)


def _unicycle(speed: float = 1.0) -> Benchmark:
    f = [
        Expr.const(speed) * Expr.unary("cos", Expr.var(2)),
        Expr.const(speed) * Expr.unary("sin", Expr.var(2)),
        Expr.const(0.0),
    ]
    g = [[Expr.const(0.0)], [Expr.const(0.0)], [Expr.const(1.0)]]
    sys = StochasticAffineSystem(3, 1, 3, f, g, np.diag([0.1, 0.1, 0.1]))
    X = Box([-2.0] * 3, [2.0] * 3)
    X_I = Box([-0.1, -2.0, -np.pi / 6], [0.1, -1.8, np.pi / 6])
    safe = SafeSet.from_unsafe_box(Box([-0.2, -0.2, -2.0], [0.2, 0.2, 2.0]), X)
    regions = RegionSpec(X, X_I, safe)
    hyper = {
        "activation": "relu",
        "hidden": 16,
        "k_alpha": 1.0,
        "lambda_f": 2.0,
        "lambda_c": 1.0,
        "lr": 0.5e-4,
        "eps_margin": 0.05,
        "speed": speed,
    }
    return Benchmark("unicycle", sys, regions, hyper)


_PRESETS = {
    "inverted_pendulum": _pendulum,
    "darboux": _darboux,
    "unicycle": _unicycle,
}


def load_benchmark(name: str) -> Benchmark:
    """Load a named preset; validates region containment by sampling."""
    try:
        factory = _PRESETS[name]
    except KeyError:
        raise SystemError_(
            f"unknown benchmark {name!r}; known: {sorted(_PRESETS)}"
        ) from None
    bench = factory()
    bench.regions.validate()
    return bench


def in_unsafe(regions: RegionSpec, x) -> bool:
    return regions.in_unsafe(x)


# ---------------------------------------------------------------------------
# Config serialization (round-trips presets unchanged)
# ---------------------------------------------------------------------------


def system_to_dict(sys: StochasticAffineSystem) -> dict:
    return {
        "n_x": sys.n_x,
        "n_u": sys.n_u,
        "n_v": sys.n_v,
        "f": [e.to_text() for e in sys.f],
        "g": [[c.to_text() for c in row] for row in sys.g],
        "V": sys.V.tolist(),
    }


def system_from_dict(d: dict) -> StochasticAffineSystem:
    n_x = int(d["n_x"])
    return StochasticAffineSystem(
        n_x,
        int(d["n_u"]),
        int(d["n_v"]),
        [parse_expr(s, n_x) for s in d["f"]],
        [[parse_expr(s, n_x) for s in row] for row in d["g"]],
        np.array(d["V"], dtype=float),
    )


def regions_to_dict(r: RegionSpec) -> dict:
    d = {
        "X": {"lo": r.X.lo.tolist(), "hi": r.X.hi.tolist()},
        "X_I": {"lo": r.X_I.lo.tolist(), "hi": r.X_I.hi.tolist()},
    }
    s = r.safe
    if s.kind == "expr":
        d["safe"] = {"kind": "expr", "h": s.h.to_text()}
    else:
        d["safe"] = {"kind": s.kind, "lo": s.box.lo.tolist(), "hi": s.box.hi.tolist()}
    return d


def regions_from_dict(d: dict) -> RegionSpec:
    X = Box(d["X"]["lo"], d["X"]["hi"])
    X_I = Box(d["X_I"]["lo"], d["X_I"]["hi"])
    s = d["safe"]
    if s["kind"] == "expr":
        safe = SafeSet.from_expr(parse_expr(s["h"], X.dim))
    elif s["kind"] == "safe_box":
        safe = SafeSet.from_safe_box(Box(s["lo"], s["hi"]))
    elif s["kind"] == "unsafe_box":
        safe = SafeSet.from_unsafe_box(Box(s["lo"], s["hi"]), X)
    else:
        raise SystemError_(f"unknown safe-set kind {s['kind']!r}")
    return RegionSpec(X, X_I, safe)
