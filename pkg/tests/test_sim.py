"""Closed-loop simulation: QP control filter, Euler-Maruyama rollouts,
Wilson intervals, analytic survival bounds, and coverage."""

import csv

import numpy as np
import pytest

from sncbf import generator, nn, sim
from sncbf.expr import Expr, parse_expr
from sncbf.system import Box, RegionSpec, SafeSet, StochasticAffineSystem, load_benchmark


def constant_smooth_net(c):
    return nn.Mlp(
        [np.array([[1.0, 0.0]]), np.array([[0.0]])],
        [np.array([0.0]), np.array([float(c)])],
        "softplus",
    )


def relu_shelf_net(bias=-0.1):
    """B(x) = max(x1, 0) + bias."""
    return nn.Mlp(
        [np.array([[1.0, 0.0]]), np.array([[1.0]])],
        [np.array([0.0]), np.array([float(bias)])],
        "relu",
    )


def still_system(n_u=0):
    g = [["0"] * n_u, ["0"] * n_u]
    return StochasticAffineSystem(
        2, n_u, 1,
        [Expr.const(0.0), Expr.const(0.0)],
        [[parse_expr(t, 2) for t in row] for row in g],
        np.zeros((2, 1)),
    )


def plane_regions(x=2.0):
    return RegionSpec(
        Box([-x, -x], [x, x]),
        Box([0.2, 0.2], [0.6, 0.6]),
        SafeSet.from_expr(parse_expr("x1 + 10", 2)),
    )


def terms(lam, xi):
    return generator.GeneratorTerms(np.asarray(lam, dtype=float), float(xi))


def test_sim_config_validation():
    with pytest.raises(sim.SimError):
        sim.SimConfig(dt=0.0)
    with pytest.raises(sim.SimError):
        sim.SimConfig(dt=0.1, horizon=0.05)
    assert sim.SimConfig().bounds is None
    lo, hi = sim.SimConfig(input_lo=[-1.0], input_hi=[1.0]).bounds
    assert lo.tolist() == [-1.0] and hi.tolist() == [1.0]


def test_qp_control_keeps_reference_when_satisfied():
    qp = sim.sncbf_qp_control(terms([1.0], 0.5), np.array([0.3]))
    assert qp.u.tolist() == [0.3]
    assert not qp.infeasible


def test_qp_control_minimum_norm_correction():
    # lam = [1, 0], xi = -1, u_ref = 0: smallest correction is u = [1, 0].
    qp = sim.sncbf_qp_control(terms([1.0, 0.0], -1.0), np.zeros(2))
    assert qp.u == pytest.approx([1.0, 0.0])
    qp = sim.sncbf_qp_control(terms([1.0, 1.0], -2.0), np.zeros(2))
    assert qp.u == pytest.approx([1.0, 1.0])


def test_qp_control_zero_gain_infeasible():
    qp = sim.sncbf_qp_control(terms([0.0], -1.0), np.zeros(1))
    assert qp.infeasible
    qp = sim.sncbf_qp_control(terms(np.zeros(0), -1.0), np.zeros(0))
    assert qp.infeasible and len(qp.u) == 0


def test_qp_control_box_saturation_infeasible():
    qp = sim.sncbf_qp_control(
        terms([1.0, 0.0], -1.0), np.zeros(2),
        (np.array([-0.4, -5.0]), np.array([0.4, 5.0])),
    )
    assert qp.u == pytest.approx([0.4, 0.0])
    assert qp.infeasible


def test_qp_control_box_dual_walk_across_breakpoint():
    # lam = [2, 1], xi = -5, u in [0,1] x [0,10]: u1 saturates at 1, then the
    # remaining deficit is met by u2 alone -> u = [1, 3].
    qp = sim.sncbf_qp_control(
        terms([2.0, 1.0], -5.0), np.zeros(2),
        (np.array([0.0, 0.0]), np.array([1.0, 10.0])),
    )
    assert qp.u == pytest.approx([1.0, 3.0])
    assert not qp.infeasible


def test_simulate_still_system_is_constant():
    net = constant_smooth_net(0.7)
    cfg = sim.SimConfig(dt=0.01, horizon=0.05)
    tr = sim.simulate("smooth", net, None, still_system(), plane_regions(), 1.0, cfg)
    assert len(tr.times) == 6
    assert np.allclose(tr.states, tr.states[0])
    assert np.allclose(tr.barrier, 0.7)
    assert not tr.exited and tr.first_exit_time is None
    assert tr.infeasible_steps == 0 and not tr.aborted
    # Default start is the initial-box center.
    assert tr.states[0] == pytest.approx([0.4, 0.4])


def test_simulate_detects_exit_through_boundary():
    sys = StochasticAffineSystem(
        2, 0, 1,
        [Expr.const(10.0), Expr.const(0.0)],
        [[], []],
        np.zeros((2, 1)),
    )
    regions = RegionSpec(
        Box([-1.0, -1.0], [1.0, 1.0]),
        Box([0.8, -0.1], [1.0, 0.1]),
        SafeSet.from_expr(parse_expr("x1 + 10", 2)),
    )
    cfg = sim.SimConfig(dt=0.01, horizon=0.2)
    tr = sim.simulate("smooth", constant_smooth_net(1.0), None, sys, regions, 1.0, cfg)
    assert tr.exited
    # From x1 = 0.9 at speed 10 the box edge is crossed on the second step.
    assert tr.first_exit_time == pytest.approx(0.02)


def test_simulate_same_seed_is_bitwise_identical():
    bench = load_benchmark("inverted_pendulum")
    net = nn.init_mlp([2, 6, 1], "softplus", 0)
    cfg = sim.SimConfig(dt=1e-3, horizon=0.05, seed=11)
    a = sim.simulate("smooth", net, None, bench.system, bench.regions, 1.0, cfg)
    b = sim.simulate("smooth", net, None, bench.system, bench.regions, 1.0, cfg)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.controls, b.controls)
    assert np.array_equal(a.barrier, b.barrier)


def test_simulate_relu_reports_lower_bound_track():
    net = relu_shelf_net()
    R = generator.NeuronBounds(np.array([2.02]))
    cfg = sim.SimConfig(dt=0.01, horizon=0.03)
    tr = sim.simulate(
        "relu", net, R, still_system(), plane_regions(), 1.0, cfg, x0=[1.01, 0.0]
    )
    assert tr.barrier_lb is not None
    expect = generator.tilde_b(net, R, [1.01, 0.0])
    assert np.allclose(tr.barrier_lb, expect)
    with pytest.raises(sim.SimError):
        sim.simulate("relu", net, None, still_system(), plane_regions(), 1.0, cfg)


def test_wilson_interval_hand_values():
    lo, hi = sim.wilson_interval(50, 100)
    assert lo == pytest.approx(0.40383, abs=1e-4)
    assert hi == pytest.approx(0.59617, abs=1e-4)
    lo, hi = sim.wilson_interval(100, 100)
    assert hi == 1.0
    assert lo == pytest.approx(0.96303, abs=5e-4)
    lo, hi = sim.wilson_interval(0, 100)
    assert lo == pytest.approx(0.0, abs=1e-12) and hi < 0.05


def test_estimate_safety_probability_certain_case():
    net = constant_smooth_net(0.7)
    cfg = sim.SimConfig(dt=0.01, horizon=0.05, trials=100)
    p, (lo, hi) = sim.estimate_safety_probability(
        "smooth", net, None, still_system(), plane_regions(), 1.0, cfg
    )
    assert p == 1.0 and hi == 1.0 and lo > 0.9


def test_estimate_safety_probability_needs_trials():
    cfg = sim.SimConfig(trials=50)
    with pytest.raises(sim.SimError):
        sim.estimate_safety_probability(
            "smooth", constant_smooth_net(1.0), None, still_system(),
            plane_regions(), 1.0, cfg,
        )


def test_worst_case_bound_constant_barrier():
    c0, T = 0.8, 1.0
    net = constant_smooth_net(c0)
    sb = sim.worst_case_bound("smooth", net, None, [0.3, 0.3], T, plane_regions())
    # Sampled level constant is inflated by 5% and flagged as uncertified.
    assert sb.c == pytest.approx(1.05 * c0)
    assert sb.b0 == pytest.approx(c0)
    assert not sb.certified_c
    assert sb.bound == pytest.approx(sb.b0 / sb.c * np.exp(-sb.c * T))
    assert sb.eta == pytest.approx(1.0 - sb.bound)
    # Shrinking the horizon raises the bound toward b0 / c.
    sb0 = sim.worst_case_bound("smooth", net, None, [0.3, 0.3], 1e-9, plane_regions())
    assert sb0.bound == pytest.approx(sb.b0 / sb.c, abs=1e-6)


def test_worst_case_bound_rejects_uncovered_start():
    net = constant_smooth_net(-0.5)
    with pytest.raises(sim.SimError):
        sim.worst_case_bound("smooth", net, None, [0.3, 0.3], 1.0, plane_regions())


def test_worst_case_bound_relu_certified_level():
    # B = max(x1,0) - 0.1 on [-2,2]^2, R = 2.02: the quadratic lower bound
    # peaks at z = R/2 with value z/2 - z^2/(2R) - 0.1 = 0.1525.
    net = relu_shelf_net()
    R = generator.NeuronBounds(np.array([2.02]))
    x0 = [1.01, 0.0]
    sb = sim.worst_case_bound("relu", net, R, x0, 1.0, plane_regions(), samples=1000)
    assert sb.certified_c
    assert sb.b0 == pytest.approx(0.1525)
    assert sb.c == pytest.approx(0.1525, abs=1e-3)
    assert sb.bound == pytest.approx(sb.b0 / sb.c * np.exp(-sb.c), abs=1e-2)


def test_coverage_metric_extremes():
    regions = plane_regions()
    assert sim.coverage_metric("smooth", constant_smooth_net(1.0), regions) == 1.0
    assert sim.coverage_metric("smooth", constant_smooth_net(-1.0), regions) == 0.0
    with pytest.raises(sim.SimError):
        sim.coverage_metric("smooth", constant_smooth_net(1.0), regions, grid_n=10)


def test_coverage_metric_half_plane():
    bench = load_benchmark("darboux")
    # B = x1: nonnegative on exactly the right half of the box; the safe set
    # {x1 + x2^2 >= 0} contains all of it plus part of the left half.
    net = nn.Mlp(
        [np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([[1.0, -1.0]])],
        [np.array([0.0, 0.0]), np.array([0.0])],
        "relu",
    )
    cov = sim.coverage_metric("relu", net, bench.regions, grid_n=100)
    assert 0.5 < cov < 0.9


def test_write_trace_csv_round_trip(tmp_path):
    bench = load_benchmark("inverted_pendulum")
    net = nn.init_mlp([2, 6, 1], "softplus", 1)
    cfg = sim.SimConfig(dt=0.01, horizon=0.03, seed=4)
    tr = sim.simulate("smooth", net, None, bench.system, bench.regions, 1.0, cfg)
    path = tmp_path / "trace.csv"
    sim.write_trace_csv(tr, bench.system, str(path))
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x1", "x2", "u1", "B"]
    assert len(rows) == 1 + len(tr.times)
    assert float(rows[1][1]) == pytest.approx(tr.states[0][0])
    assert float(rows[2][4]) == pytest.approx(tr.barrier[1], rel=1e-9)
    # The final row has no control sample.
    assert rows[-1][3] == ""
