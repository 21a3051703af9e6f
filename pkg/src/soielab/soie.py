"""Optimal impedance selection.

The impedance parameter ``lam`` scales the gain vector
``L = lam * [kappa0, rho * kappa0]`` with ``kappa0 = 1 Nm/deg``. For a given
sensing and haptic noise condition the optimum minimises the deterministic
expected cost over ``lam in [0, 1]``: a 101-point grid sweep, then
golden-section refinement inside the bracketing grid cells.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import INERTIA, KAPPA0, RHO, AgentConfig, ConnectionSpec
from .errors import DomainError, FlatLandscapeWarning
from .moments import (
    CostWeights,
    StateMoments,
    batched_transition,
    deterministic_cost,
    expected_cost,
    mc_estimate_moments,
    propagate_linear,
    MomentTrajectory,
)
from .signalgen import NoiseSpec

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ImpedanceGains:
    lam: float
    stiffness: float  # Nm/rad
    viscosity: float  # Nm s/rad
    ratio: float = RHO  # s


def gains_from_lambda(lam: float, kappa0: float = KAPPA0, rho: float = RHO) -> ImpedanceGains:
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    k = lam * kappa0
    return ImpedanceGains(lam, k, rho * k, rho)


def lambda_from_stiffness(stiffness: float, kappa0: float = KAPPA0) -> float:
    return stiffness / kappa0


@dataclass(frozen=True)
class SoieConfig:
    """Everything besides the noise condition that the optimisation needs."""

    dt: float = 0.01
    horizon: float = 20.0
    inertia: float = INERTIA
    conn: ConnectionSpec = ConnectionSpec(17.32, 0.0)
    motor_std: float = 0.0
    haptic_std: float = 0.05  # deg, per sample
    weights: CostWeights = field(default_factory=CostWeights.table1)
    grid_points: int = 101
    tol: float = 1e-4
    init: StateMoments | None = None
    partner_mode: str = "one-shot"
    max_fixed_point_iter: int = 30

    def agent(self, lam: float, sensing: NoiseSpec) -> AgentConfig:
        return AgentConfig(inertia=self.inertia, lam=float(lam), sensing=sensing, motor_std=self.motor_std)


def _lambda_costs(lams, own: NoiseSpec, haptic: NoiseSpec, weights: CostWeights, cfg: SoieConfig):
    """Deterministic cost for each impedance in ``lams`` (one batched propagation)."""
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    inv_i = 1.0 / cfg.inertia
    k_l = lams * KAPPA0
    k_h, d_h = cfg.conn.stiffness, cfg.conn.damping
    abar = np.zeros((lams.size, 2, 2))
    abar[:, 0, 1] = 1.0
    abar[:, 1, 0] = -(k_h + k_l) * inv_i
    abar[:, 1, 1] = -(d_h + RHO * k_l) * inv_i
    b = np.array([[0.0], [inv_i]])
    phi, gamma, qd = batched_transition(abar, b, cfg.dt)
    u_mean = -k_l * own.bias_rad + k_h * np.radians(haptic.bias)
    intensity = ((k_l * own.std_rad) ** 2 + (k_h * np.radians(haptic.std)) ** 2 + cfg.motor_std**2) * cfg.dt
    init = cfg.init or StateMoments.zeros()
    n_steps = int(np.floor(cfg.horizon / cfg.dt + 1e-9))
    g = gamma * u_mean[:, None]
    w = qd * intensity[:, None, None]
    stable = np.abs(np.linalg.eigvals(phi)).max(axis=-1) < 1.0 - 1e-9
    out = np.empty(lams.size)
    if stable.any():
        out[stable] = expected_cost(phi[stable], g[stable], w[stable], lams[stable], weights,
                                    cfg.dt, n_steps, init.m, init.P)
    if not stable.all():
        # marginally stable (no stiffness at all): build the trajectory
        m, p = propagate_linear(phi[~stable], g[~stable], w[~stable], init.m, init.P, n_steps)
        out[~stable] = deterministic_cost(MomentTrajectory(cfg.dt, m, p), lams[~stable], weights)
    return out


def optimal_lambda(own: NoiseSpec, haptic: NoiseSpec, weights: CostWeights | None = None,
                   config: SoieConfig | None = None):
    """Return ``(lam_star, cost_star)`` for one noise condition."""
    cfg = config or SoieConfig()
    weights = weights or cfg.weights
    grid = np.linspace(0.0, 1.0, cfg.grid_points)
    costs = _lambda_costs(grid, own, haptic, weights, cfg)
    i = int(np.argmin(costs))
    if costs.max() - costs.min() < 1e-12:
        warnings.warn("flat cost landscape; returning the smallest grid minimiser", FlatLandscapeWarning)
        return float(grid[i]), float(costs[i])

    def f(x):
        return float(_lambda_costs([x], own, haptic, weights, cfg)[0])

    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    best_x, best_f = float(grid[i]), float(costs[i])
    a, b = lo, hi
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > cfg.tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    for x, fx in ((c, fc), (d, fd)):
        if fx < best_f:
            best_x, best_f = float(x), fx
    return best_x, best_f


def partner_haptic_noise(partner_sensing: NoiseSpec, config: SoieConfig | None = None,
                         partner_lambda: float = 1.0, partner_haptic: NoiseSpec | None = None) -> NoiseSpec:
    """Haptic noise an agent should expect from a partner.

    The connection torque is ``k (z_partner - z)``, so the haptic input is the
    partner's tracking error and its bias is the partner's stationary mean
    error, kept signed. Without ``partner_haptic`` the partner is propagated
    alone, which gives ``-bias`` of its sensing for any positive impedance.
    The spread is the configured haptic std.
    """
    cfg = config or SoieConfig()
    if partner_haptic is None:
        conn, hap = ConnectionSpec(0.0, 0.0), NoiseSpec()
    else:
        conn, hap = cfg.conn, partner_haptic
    agent = cfg.agent(partner_lambda, partner_sensing)
    if agent.stiffness + conn.stiffness == 0:
        return NoiseSpec(0.0, cfg.haptic_std)
    # stationary mean: position error balances the constant input torque
    u_mean = -agent.stiffness * partner_sensing.bias_rad + conn.stiffness * np.radians(hap.bias)
    m_pos = u_mean / (agent.stiffness + conn.stiffness)
    return NoiseSpec(float(np.degrees(m_pos)), cfg.haptic_std)


def optimal_lambda_pair(own: NoiseSpec, partner: NoiseSpec, weights: CostWeights | None = None,
                        config: SoieConfig | None = None):
    """Impedances ``(lam_self, lam_partner)`` for two agents with the given sensing noise.

    ``one-shot`` treats each partner as a solo tracker; ``fixed-point``
    iterates each agent's optimum against the other's coupled mean error.
    """
    cfg = config or SoieConfig()
    lam1, _ = optimal_lambda(own, partner_haptic_noise(partner, cfg), weights, cfg)
    lam2, _ = optimal_lambda(partner, partner_haptic_noise(own, cfg), weights, cfg)
    if cfg.partner_mode == "one-shot":
        return lam1, lam2
    if cfg.partner_mode != "fixed-point":
        raise DomainError(f"unknown partner mode {cfg.partner_mode!r}")
    for _ in range(cfg.max_fixed_point_iter):
        mu1 = partner_haptic_noise(partner, cfg, lam2, partner_haptic_noise(own, cfg, lam1))
        mu2 = partner_haptic_noise(own, cfg, lam1, partner_haptic_noise(partner, cfg, lam2))
        new1, _ = optimal_lambda(own, mu1, weights, cfg)
        new2, _ = optimal_lambda(partner, mu2, weights, cfg)
        done = abs(new1 - lam1) < cfg.tol and abs(new2 - lam2) < cfg.tol
        lam1, lam2 = new1, new2
        if done:
            break
    return lam1, lam2


def _surface_cell(args):
    own, partner, weights, cfg = args
    if cfg.partner_mode == "one-shot":
        return optimal_lambda(own, partner_haptic_noise(partner, cfg), weights, cfg)[0]
    return optimal_lambda_pair(own, partner, weights, cfg)[0]


def impedance_surface(own_grid, partner_grid, weights: CostWeights | None = None,
                      config: SoieConfig | None = None, jobs: int = 1) -> np.ndarray:
    """``lam*`` for every (own, partner) sensing condition; rows follow ``own_grid``."""
    cfg = config or SoieConfig()
    own_grid, partner_grid = list(own_grid), list(partner_grid)
    if not own_grid or not partner_grid:
        raise DomainError("noise grids must be non-empty")
    cells = [(o, p, weights, cfg) for o in own_grid for p in partner_grid]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            vals = list(pool.map(_surface_cell, cells))
    else:
        vals = [_surface_cell(c) for c in cells]
    return np.array(vals).reshape(len(own_grid), len(partner_grid))


def mc_lambda_costs(lams, own: NoiseSpec, haptic: NoiseSpec, weights: CostWeights | None = None,
                    config: SoieConfig | None = None, n_trials: int = 500, master_seed: int = 0):
    """Cost of each impedance with Monte-Carlo moment estimates (cross-check)."""
    cfg = config or SoieConfig()
    weights = weights or cfg.weights
    out = []
    for lam in np.atleast_1d(lams):
        traj = mc_estimate_moments(cfg.agent(lam, own), cfg.conn, haptic, cfg.init, cfg.dt,
                                   cfg.horizon, n_trials, master_seed)
        out.append(float(deterministic_cost(traj, lam, weights)))
    return np.array(out)


def with_weights(config: SoieConfig, weights: CostWeights) -> SoieConfig:
    return replace(config, weights=weights)


_POSITION_ONLY = CostWeights(np.diag([1.0, 0.0]), np.zeros((2, 2)), 0.0, "deg")


def predicted_rms_error(lam: float, own: NoiseSpec, haptic: NoiseSpec, config: SoieConfig | None = None) -> float:
    """Expected RMS position error over the horizon, in degrees."""
    cfg = config or SoieConfig()
    n_steps = int(np.floor(cfg.horizon / cfg.dt + 1e-9))
    mean_sq = _lambda_costs([lam], own, haptic, _POSITION_ONLY, cfg)[0] / (n_steps * cfg.dt)
    return float(np.sqrt(max(mean_sq, 0.0)))
