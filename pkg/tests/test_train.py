"""Training machinery: grid datasets, constraint values, validity arithmetic,
loss terms, and smoke runs of both trainers."""

import numpy as np
import pytest

from sncbf import nn, train
from sncbf.expr import Expr, parse_expr
from sncbf.system import (
    Benchmark,
    Box,
    RegionSpec,
    SafeSet,
    StochasticAffineSystem,
    load_benchmark,
)


def line_regions(xi_hi=0.4, safe_text="x1 + 10"):
    return RegionSpec(
        Box([0.0], [1.0]),
        Box([0.0], [xi_hi]),
        SafeSet.from_expr(parse_expr(safe_text, 1)),
    )


def test_sample_datasets_grid_spacing_hand_example():
    ds = train.sample_datasets(line_regions(), eps_bar=0.25)
    # Spacing <= 2 * 0.25 / sqrt(1) = 0.5 on [0, 1]: exactly {0, 0.5, 1}.
    assert ds.D_pts[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert ds.s_mask.tolist() == [True, False, False]
    assert ds.u_mask.tolist() == [False, False, False]
    assert ds.S_pts[:, 0].tolist() == [0.0]
    assert len(ds.U_pts) == 0


def test_sample_datasets_covering_radius():
    """Every random state must be within eps_bar of some grid point."""
    bench = load_benchmark("inverted_pendulum")
    eps = 0.05
    ds = train.sample_datasets(bench.regions, eps)
    rng = np.random.default_rng(0)
    for x in bench.regions.X.sample(rng, 500):
        d = np.linalg.norm(ds.D_pts - x, axis=1).min()
        assert d <= eps + 1e-12


def test_sample_datasets_rejects_bad_eps():
    with pytest.raises(train.TrainError):
        train.sample_datasets(line_regions(), eps_bar=0.0)
    bench = load_benchmark("darboux")
    with pytest.raises(train.TrainError):
        train.sample_datasets(bench.regions, eps_bar=1e-6)  # grid over cap


def test_sample_datasets_unsafe_mask():
    ds = train.sample_datasets(line_regions(safe_text="x1 - 0.75"), eps_bar=0.25)
    assert ds.u_mask.tolist() == [True, True, False]


def test_check_validity_reference_triples():
    assert train.check_validity(2.4, 0.00016, -0.00042) is True
    assert train.check_validity(4.0, 0.01, -0.04002) is True
    assert train.check_validity(4.0, 0.01, -0.03998) is False
    assert train.check_validity(1.0, 0.1, 0.0) is False


def test_loss_validity_hinge():
    assert train.loss_validity(2.0, 0.01, -0.05) == pytest.approx(0.0)
    assert train.loss_validity(2.0, 0.01, 0.1) == pytest.approx(0.12)


def constant_smooth_net(c):
    return nn.Mlp(
        [np.array([[1.0, 0.0]]), np.array([[0.0]])],
        [np.array([0.0]), np.array([float(c)])],
        "softplus",
    )


def still_system():
    return StochasticAffineSystem(
        2, 0, 1,
        [Expr.const(0.0), Expr.const(0.0)],
        [[], []],
        np.zeros((2, 1)),
    )


def plane_regions():
    return RegionSpec(
        Box([-1.0, -1.0], [1.0, 1.0]),
        Box([0.2, 0.2], [0.6, 0.6]),
        SafeSet.from_expr(parse_expr("x1 + 2", 2)),
    )


def test_q_values_constant_barrier():
    """B = c, f = 0, V = 0: the generator constraint value is q3 = -k c."""
    k, c = 1.5, 0.8
    net = constant_smooth_net(c)
    q1, q2, q3 = train.q_values(net, still_system(), plane_regions(), k, 0.02, [0.3, 0.3])
    assert q1 == pytest.approx(-c)  # inside the initial box
    assert q2 == pytest.approx(0.0)  # not unsafe
    assert q3 == pytest.approx(-k * c)
    q1_out, _, _ = train.q_values(net, still_system(), plane_regions(), k, 0.02, [0.9, 0.9])
    assert q1_out == pytest.approx(0.0)


def test_q_values_unsafe_margin():
    regions = RegionSpec(
        Box([-1.0, -1.0], [1.0, 1.0]),
        Box([0.5, 0.5], [0.9, 0.9]),
        SafeSet.from_expr(parse_expr("x1", 2)),
    )
    net = constant_smooth_net(-0.3)
    _, q2, _ = train.q_values(net, still_system(), regions, 1.0, 0.02, [-0.5, 0.0])
    assert q2 == pytest.approx(-0.3 + 0.02)


def test_compute_psi_star_is_scenario_max():
    net = constant_smooth_net(0.5)
    regions = plane_regions()
    ds = train.sample_datasets(regions, eps_bar=0.3)
    psi_star = train.compute_psi_star(net, still_system(), regions, 1.0, 0.02, ds)
    # q1 = -0.5 on initial points, q2 absent, q3 = -0.5; max = -0.5.
    assert psi_star == pytest.approx(-0.5)


def test_loss_correct_hand_values():
    assert train.loss_correct(np.array([1.0, 0.2]), np.array([-1.0]), 0.05) == pytest.approx(0.0)
    # Safe sample at 0.0 misses eps by 0.05; unsafe at +0.1 misses by 0.15.
    v = train.loss_correct(np.array([0.0]), np.array([0.1]), 0.05)
    assert v == pytest.approx(0.05 + 0.15)


def test_loss_feasible_closed_form():
    # No gain: violation is fully relaxed at linear cost.
    assert train.loss_feasible(
        np.zeros((1, 0)), np.array([-1.0]), np.zeros(0), 10.0
    ) == pytest.approx(10.0)
    # Unit gain, penalty 10: cheaper to move u all the way (cost 1).
    assert train.loss_feasible(
        np.array([[1.0]]), np.array([-1.0]), np.zeros(1), 10.0
    ) == pytest.approx(1.0)
    # Unit gain, penalty 1: split at d_u = 0.5 -> 0.25 + 0.5.
    assert train.loss_feasible(
        np.array([[1.0]]), np.array([-1.0]), np.zeros(1), 1.0
    ) == pytest.approx(0.75)
    # Satisfied constraint costs nothing.
    assert train.loss_feasible(
        np.array([[1.0]]), np.array([0.3]), np.zeros(1), 10.0
    ) == pytest.approx(0.0)


def test_loss_smooth_zero_for_generous_psi():
    net = constant_smooth_net(0.5)
    regions = plane_regions()
    ds = train.sample_datasets(regions, eps_bar=0.3)
    assert train.loss_smooth(
        net, still_system(), regions, 1.0, 0.02, ds, psi=0.0
    ) == pytest.approx(0.0)
    assert train.loss_smooth(
        net, still_system(), regions, 1.0, 0.02, ds, psi=-0.6
    ) > 0.0


def test_smooth_config_l_max():
    cfg = train.SmoothTrainConfig(
        eps_bar=0.01, L_h=1.7, L_dh=1.9, L_d2h=0.05, L_x=1.1, delta_unsafe=0.02
    )
    assert cfg.L_max == pytest.approx(max(1.7, 1.7 + 1.9 * 1.1 + 0.05))


def test_smooth_config_from_benchmark_overrides():
    bench = load_benchmark("inverted_pendulum")
    cfg = train.SmoothTrainConfig.from_benchmark(bench, max_epochs=7)
    assert cfg.max_epochs == 7
    assert cfg.eps_bar == bench.hyper["eps_bar"]
    assert cfg.activation == "softplus"


def test_vitl_config_validation():
    with pytest.raises(train.TrainError):
        train.VitlConfig(lambda_f=-1.0, lambda_c=1.0)
    cfg = train.VitlConfig.from_benchmark(load_benchmark("darboux"), seed=3)
    assert cfg.lambda_f == 4.0
    assert cfg.seed == 3


def test_geometric_init_only_for_safe_boxes():
    bench = load_benchmark("darboux")  # expression-based safe set
    cfg = train.SmoothTrainConfig.from_benchmark(bench.__class__(
        name="x", system=bench.system, regions=bench.regions,
        hyper=load_benchmark("inverted_pendulum").hyper,
    ))
    net = nn.init_mlp([2, 20, 1], "softplus", 0)
    before = [w.copy() for w in net.weights]
    ds = train.sample_datasets(bench.regions, cfg.eps_bar)
    assert train.geometric_init(net, bench.system, bench.regions, cfg, ds) is False
    assert all(np.array_equal(a, b) for a, b in zip(before, net.weights))


def test_geometric_init_separates_regions_on_pendulum():
    bench = load_benchmark("inverted_pendulum")
    cfg = train.SmoothTrainConfig.from_benchmark(bench)
    ds = train.sample_datasets(bench.regions, cfg.eps_bar)
    net = nn.init_mlp([2, 20, 1], "softplus", 0)
    assert train.geometric_init(net, bench.system, bench.regions, cfg, ds) is True
    B = nn.forward_batch(net, ds.D_pts)
    # Initial-set values sit above the Lipschitz threshold, unsafe below it.
    thr = cfg.L_max * cfg.eps_bar
    assert B[ds.s_mask].min() >= thr - 1e-9
    assert B[ds.u_mask].max() < 0.0


def test_train_vitl_smoke_structure():
    """One tiny round on an easy inline benchmark: result fields coherent."""
    sys = still_system()
    regions = plane_regions()
    bench = Benchmark("inline", sys, regions, {"activation": "relu"})
    cfg = train.VitlConfig(
        lambda_f=1.0, lambda_c=1.0, hidden=3, inner_epochs=2, max_rounds=1,
        n_safe=40, n_unsafe=0, n_feas=40, seed=0,
    )
    res = train.train_vitl(cfg, bench, "relu")
    assert len(res.history) == 1
    assert res.history[0]["round"] == 0
    assert res.outcome.status in ("valid", "counterexample", "unknown")
    assert res.epochs <= 2
    assert isinstance(res.net, nn.Mlp)


def test_train_vitl_rejects_unknown_mode():
    bench = load_benchmark("darboux")
    cfg = train.VitlConfig(lambda_f=1.0, lambda_c=1.0)
    with pytest.raises(train.TrainError):
        train.train_vitl(cfg, bench, "piecewise")
