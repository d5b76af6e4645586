"""Activation-region enumeration of a ReLU barrier's super-level set.

Breadth-first search over activation patterns: a region is recorded when the
super-level feasibility LP succeeds, and neighbors are reached across
unstable-neuron hyperplanes (the USLP check).  The output covers every
activation pattern met by {B >= 0}.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn
from .simplex import LpResult, lp_feasible_point
from .system import Box

ENUM_CAP = 1 << 20
WITNESS_TOL = 1e-7


class EnumerationError(Exception):
    pass


@dataclass
class Polytope:
    """Region {A x <= b}; always includes the state-box rows."""

    A: np.ndarray
    b: np.ndarray

    def contains(self, x, tol: float = WITNESS_TOL) -> bool:
        return bool(np.all(self.A @ np.asarray(x, dtype=float) <= self.b + tol))

    def with_rows(self, A_extra: np.ndarray, b_extra: np.ndarray) -> "Polytope":
        return Polytope(np.vstack([self.A, A_extra]), np.concatenate([self.b, b_extra]))


def box_rows(X: Box) -> Polytope:
    n = X.dim
    A = np.vstack([np.eye(n), -np.eye(n)])
    b = np.concatenate([X.hi, -X.lo])
    return Polytope(A, b)


def region_polytope(net: nn.Mlp, S: tuple, X: Box) -> Polytope:
    """Polytope of states with activation pattern S, intersected with X."""
    if not net.single_hidden:
        raise EnumerationError("enumeration implemented for single hidden layer")
    w1, r1 = net.weights[0], net.biases[0]
    M = w1.shape[0]
    mask = S[0]
    rows_A, rows_b = [], []
    for j in range(M):
        if (mask >> j) & 1:
            rows_A.append(-w1[j])  # z_j >= 0
            rows_b.append(r1[j])
        else:
            rows_A.append(w1[j])  # z_j <= 0
            rows_b.append(-r1[j])
    base = box_rows(X)
    return base.with_rows(np.array(rows_A), np.array(rows_b))


def lp_feasible(p: Polytope, A_eq=None, b_eq=None) -> LpResult:
    """Feasibility of the polytope (optionally with equality rows)."""
    res = lp_feasible_point(p.A, p.b, A_eq, b_eq)
    if res.feasible:
        assert p.contains(res.x), "LP witness violates polytope rows"
    return res


def super_lp(net: nn.Mlp, S: tuple, X: Box) -> LpResult:
    """Does region S contain a point with B(x) >= 0?"""
    form = nn.region_linear_form(net, S)
    p = region_polytope(net, S, X).with_rows(
        np.array([-form.w]), np.array([form.r])
    )
    return lp_feasible(p)


def uslp(net: nn.Mlp, S: tuple, j: int, X: Box) -> LpResult:
    """Unstable-neuron LP: super-level point with z_j(x) = 0 in region S."""
    form = nn.region_linear_form(net, S)
    p = region_polytope(net, S, X).with_rows(
        np.array([-form.w]), np.array([form.r])
    )
    w1j = net.weights[0][j]
    r1j = net.biases[0][j]
    return lp_feasible(p, A_eq=np.array([w1j]), b_eq=np.array([-r1j]))


def find_seed(net: nn.Mlp, X_I: Box, seed: int = 0, max_draws: int = 100_000) -> np.ndarray:
    """Rejection-sample the initial box for a point with B(x) >= 0."""
    rng = np.random.default_rng(seed)
    batch = 1024
    drawn = 0
    while drawn < max_draws:
        pts = X_I.sample(rng, batch)
        vals = nn.forward_batch(net, pts)
        idx = np.nonzero(vals >= 0.0)[0]
        if len(idx):
            return pts[idx[0]]
        drawn += batch
    raise EnumerationError("empty super-level set: no seed found in X_I")


def enumerate_feasible_regions(net: nn.Mlp, X: Box) -> list:
    """Every activation pattern whose closed region intersects X, by BFS over
    single-neuron flips across the full hyperplane arrangement.

    Unlike the super-level-set search, this walk does not require {B >= 0}
    connectivity, so it covers disconnected components; the verifier filters
    the result with super_lp where needed."""
    if not net.single_hidden:
        raise EnumerationError("enumeration implemented for single hidden layer")
    M = net.weights[0].shape[0]
    S0 = nn.activation_set(net, 0.5 * (X.lo + X.hi))
    queue = deque([S0])
    seen = {S0}
    out = []
    while queue:
        S = queue.popleft()
        if not lp_feasible(region_polytope(net, S, X)).feasible:
            continue
        out.append(S)
        for j in range(M):
            Sn = (S[0] ^ (1 << j),)
            if Sn not in seen:
                seen.add(Sn)
                if len(seen) > ENUM_CAP:
                    raise EnumerationError("enumeration blow-up: cap exceeded")
                queue.append(Sn)
    return out


def enumerate_activation_sets(
    net: nn.Mlp, x0: Optional[np.ndarray], X: Box, X_I: Optional[Box] = None, seed: int = 0
) -> list:
    """BFS enumeration (deterministic order) of activation sets meeting {B >= 0}."""
    if x0 is None:
        if X_I is None:
            raise EnumerationError("need either x0 or X_I to seed enumeration")
        x0 = find_seed(net, X_I, seed=seed)
    if nn.forward(net, x0) < 0.0:
        raise EnumerationError(f"seed point has B(x0) = {nn.forward(net, x0)} < 0")
    M = net.weights[0].shape[0]
    S0 = nn.activation_set(net, x0)
    queue = deque([S0])
    seen = {S0}  # dedup on enqueue; preserves the recorded output
    recorded = []
    while queue:
        S = queue.popleft()
        if not super_lp(net, S, X).feasible:
            continue
        recorded.append(S)
        for j in range(M):
            if uslp(net, S, j, X).feasible:
                Sn = (S[0] ^ (1 << j),)
                if Sn not in seen:
                    seen.add(Sn)
                    if len(seen) > ENUM_CAP:
                        raise EnumerationError("enumeration blow-up: cap exceeded")
                    queue.append(Sn)
    return recorded
