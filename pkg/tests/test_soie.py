from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soielab.errors import DomainError, FlatLandscapeWarning
from soielab.moments import CostWeights, StateMoments
from soielab.signalgen import NoiseSpec
from soielab.soie import (
    SoieConfig,
    _lambda_costs,
    gains_from_lambda,
    impedance_surface,
    lambda_from_stiffness,
    optimal_lambda,
    optimal_lambda_pair,
    partner_haptic_noise,
)

CFG = SoieConfig()


def test_gain_map_endpoints():
    g0 = gains_from_lambda(0.0)
    assert (g0.stiffness, g0.viscosity) == (0.0, 0.0)
    g1 = gains_from_lambda(1.0)
    assert g1.stiffness == pytest.approx(57.29577951308232, rel=1e-15)
    assert g1.viscosity == pytest.approx(0.5729577951308232, rel=1e-15)
    assert g1.viscosity == g1.ratio * g1.stiffness


def test_gain_map_domain():
    with pytest.raises(DomainError):
        gains_from_lambda(1.01)
    with pytest.raises(DomainError):
        gains_from_lambda(-0.1)


def test_reported_stiffness_maps_back():
    assert lambda_from_stiffness(40.93) == pytest.approx(0.714363262841279, rel=1e-12)


def test_noiseless_initial_error_wants_full_impedance():
    cfg = replace(CFG, weights=CostWeights.table1(R=0.0), init=StateMoments(np.array([0.1, 0.0]), np.zeros((2, 2))),
                  haptic_std=0.0)
    grid = np.linspace(0, 1, 101)
    costs = _lambda_costs(grid, NoiseSpec(), NoiseSpec(), cfg.weights, cfg)
    assert np.all(np.diff(costs) < 0)
    lam, _ = optimal_lambda(NoiseSpec(), NoiseSpec(), config=cfg)
    assert lam == pytest.approx(1.0, abs=1e-4)


def test_fast_and_trajectory_costs_agree():
    from soielab.dynamics import AgentConfig
    from soielab.moments import deterministic_cost, propagate_moments

    own, hap = NoiseSpec(2.0, 0.05), NoiseSpec(-3.0, 0.05)
    for lam in (0.0, 0.05, 0.5, 1.0):
        traj = propagate_moments(AgentConfig(lam=lam, sensing=own), CFG.conn, hap, None, CFG.dt, CFG.horizon)
        ref = deterministic_cost(traj, lam, CFG.weights)
        assert _lambda_costs([lam], own, hap, CFG.weights, CFG)[0] == pytest.approx(ref, rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(own=st.floats(0, 7), partner=st.floats(0, 7))
def test_minimizer_beats_every_grid_point(own, partner):
    o, h = NoiseSpec(own, 0.05), partner_haptic_noise(NoiseSpec(partner, 0.05), CFG)
    lam, cost = optimal_lambda(o, h, config=CFG)
    grid = _lambda_costs(np.linspace(0, 1, 101), o, h, CFG.weights, CFG)
    assert cost <= grid.min() + 1e-12 * abs(grid.min())
    assert 0.0 <= lam <= 1.0


def test_flat_landscape_warns():
    cfg = replace(CFG, weights=CostWeights(np.zeros((2, 2)), np.zeros((2, 2)), 0.0), haptic_std=0.0)
    with pytest.warns(FlatLandscapeWarning):
        lam, _ = optimal_lambda(NoiseSpec(), NoiseSpec(), config=cfg)
    assert lam == 0.0


def test_own_noise_sweep_is_non_increasing():
    hap = partner_haptic_noise(NoiseSpec(3.0, 0.05), CFG)
    lams = [optimal_lambda(NoiseSpec(b, 0.05), hap, config=CFG)[0] for b in range(8)]
    # one step against the trend is tolerated
    assert sum(b > a + 1e-3 for a, b in zip(lams, lams[1:])) <= 1
    assert lams[-1] < lams[0]


def test_partner_noise_sweep_is_non_decreasing():
    lams = [optimal_lambda(NoiseSpec(3.0, 0.05), partner_haptic_noise(NoiseSpec(b, 0.05), CFG), config=CFG)[0]
            for b in range(8)]
    assert sum(b < a - 1e-3 for a, b in zip(lams, lams[1:])) <= 1
    assert lams[-1] > lams[0]


@settings(max_examples=10, deadline=None)
@given(own=st.floats(0, 7), partner=st.floats(0, 7), r=st.floats(0.5, 20))
def test_doubling_effort_weight_never_raises_impedance(own, partner, r):
    o, h = NoiseSpec(own, 0.05), partner_haptic_noise(NoiseSpec(partner, 0.05), CFG)
    lo, _ = optimal_lambda(o, h, CostWeights.table1(r), CFG)
    hi, _ = optimal_lambda(o, h, CostWeights.table1(2 * r), CFG)
    assert hi <= lo + 1e-3


def test_partner_haptic_bias_is_partner_mean_error():
    mu = partner_haptic_noise(NoiseSpec(4.0, 0.05), CFG)
    assert mu.bias == pytest.approx(-4.0)
    assert mu.std == CFG.haptic_std
    assert partner_haptic_noise(NoiseSpec(4.0, 0.05), CFG, partner_lambda=0.0).bias == 0.0


def test_constant_grid_gives_constant_surface():
    g = [NoiseSpec(2.0, 0.05)] * 3
    s = impedance_surface(g, g)
    assert s.shape == (3, 3)
    assert np.ptp(s) == 0.0


def test_surface_rejects_empty_grid():
    with pytest.raises(DomainError):
        impedance_surface([], [NoiseSpec()])


def test_surface_parallel_matches_serial():
    g = [NoiseSpec(b, 0.05) for b in (0.0, 3.0, 6.0)]
    assert np.array_equal(impedance_surface(g, g, jobs=1), impedance_surface(g, g, jobs=2))


def test_pair_modes():
    lam1, lam2 = optimal_lambda_pair(NoiseSpec(0.0, 0.05), NoiseSpec(6.0, 0.05))
    assert lam1 > lam2
    fp = optimal_lambda_pair(NoiseSpec(0.0, 0.05), NoiseSpec(6.0, 0.05), config=replace(CFG, partner_mode="fixed-point"))
    assert fp[0] > fp[1]
    with pytest.raises(DomainError):
        optimal_lambda_pair(NoiseSpec(), NoiseSpec(), config=replace(CFG, partner_mode="bogus"))


def test_monte_carlo_cross_check_agrees_at_the_optimum():
    from soielab.soie import mc_lambda_costs

    cfg = replace(CFG, horizon=5.0)
    o, h = NoiseSpec(2.0, 0.05), NoiseSpec(-3.0, 0.05)
    lam, _ = optimal_lambda(o, h, config=cfg)
    mc = mc_lambda_costs([lam], o, h, config=cfg, n_trials=200)[0]
    assert mc == pytest.approx(_lambda_costs([lam], o, h, cfg.weights, cfg)[0], rel=0.02)
