"""Bounded global-best particle swarm optimisation and the human-model fit."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, ConfigurationError, NumericalError
from .signalgen import NoiseSpec

CONDITIONS = ("SS", "SN", "NS", "NN")


@dataclass(frozen=True)
class PsoConfig:
    bounds: tuple  # ((lo, hi), ...) per dimension
    particles: int = 30
    iterations: int = 200
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    vmax_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.particles < 2:
            raise ConfigurationError("need at least two particles")
        if self.iterations < 1:
            raise ConfigurationError("need at least one iteration")
        if not self.bounds:
            raise ConfigurationError("bounds must be non-empty")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ConfigurationError(f"invalid bound ({lo}, {hi})")


@dataclass
class PsoResult:
    x: np.ndarray
    f: float
    trace: np.ndarray = field(repr=False)


def _reflect(x, v, lo, hi):
    """Mirror positions back into the box and flip the offending velocities."""
    width = hi - lo
    y = np.mod(x - lo, 2 * width)
    flipped = y > width
    y = np.where(flipped, 2 * width - y, y)
    outside = (x < lo) | (x > hi)
    return lo + y, np.where(outside, -v, v)


def _evaluate(objective, xs):
    vals = np.array([objective(x) for x in xs], dtype=float)
    vals[~np.isfinite(vals)] = np.inf
    return vals


def pso_minimize(objective, config: PsoConfig) -> PsoResult:
    """Minimise ``objective`` over the box in ``config.bounds``.

    Canonical global-best PSO with velocity clamping; positions that leave the
    box are reflected. Non-finite objective values count as ``+inf``.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = (np.array(v, dtype=float) for v in zip(*config.bounds))
    dim = lo.size
    vmax = config.vmax_fraction * (hi - lo)
    x = lo + rng.random((config.particles, dim)) * (hi - lo)
    v = (rng.random((config.particles, dim)) * 2 - 1) * vmax
    f = _evaluate(objective, x)
    if not np.isfinite(f).any():
        raise NumericalError("objective is non-finite at every initial particle")
    pbest, pbest_f = x.copy(), f.copy()
    g = int(np.argmin(pbest_f))
    trace = np.empty(config.iterations)
    for it in range(config.iterations):
        r1 = rng.random((config.particles, dim))
        r2 = rng.random((config.particles, dim))
        v = (config.inertia * v + config.cognitive * r1 * (pbest - x)
             + config.social * r2 * (pbest[g] - x))
        v = np.clip(v, -vmax, vmax)
        x, v = _reflect(x + v, v, lo, hi)
        f = _evaluate(objective, x)
        if not np.isfinite(f).any():
            raise NumericalError(f"every particle was rejected at iteration {it}")
        better = f < pbest_f
        pbest[better], pbest_f[better] = x[better], f[better]
        g = int(np.argmin(pbest_f))
        trace[it] = pbest_f[g]
    return PsoResult(pbest[g].copy(), float(pbest_f[g]), trace)


# -- human model -----------------------------------------------------------

@dataclass(frozen=True)
class HumanParams:
    sharp_bias: float = 2.56  # deg
    noisy_bias: float = 3.67  # deg
    R: float = 4.02

    def bias(self, label: str) -> float:
        return self.sharp_bias if label == "S" else self.noisy_bias

    def as_array(self) -> np.ndarray:
        return np.array([self.sharp_bias, self.noisy_bias, self.R])


HUMAN_BOUNDS = ((0.0, 10.0), (0.0, 10.0), (0.1, 50.0))


def predict_condition(params: HumanParams, condition: str, config=None):
    """Model ``(tracking error deg, lam*)`` for one ``self-partner`` condition.

    Tracking error is the stationary RMS of the position error from the
    moment propagation at the optimal impedance.
    """
    from .moments import CostWeights
    from .soie import SoieConfig, optimal_lambda, partner_haptic_noise, predicted_rms_error

    cfg = config or SoieConfig()
    cfg = replace(cfg, weights=replace(cfg.weights, R=float(params.R)))
    own = NoiseSpec(params.bias(condition[0]), cfg.haptic_std)
    partner = NoiseSpec(params.bias(condition[1]), cfg.haptic_std)
    haptic = partner_haptic_noise(partner, cfg)
    lam, _ = optimal_lambda(own, haptic, cfg.weights, cfg)
    return predicted_rms_error(lam, own, haptic, cfg), lam


def predict_conditions(params: HumanParams, config=None) -> dict:
    return {c: predict_condition(params, c, config) for c in CONDITIONS}


def _check_targets(targets: dict):
    missing = [c for c in CONDITIONS if c not in targets]
    if missing:
        raise ContractViolation(f"targets missing conditions: {', '.join(missing)}")
    for c in CONDITIONS:
        if len(targets[c]) != 2:
            raise ContractViolation(f"target {c} must be (error, cocontraction)")


def fit_objective(targets: dict, config=None):
    """Sum of squared residuals, each normalised by the mean of its target column."""
    _check_targets(targets)
    err = np.array([targets[c][0] for c in CONDITIONS], dtype=float)
    coc = np.array([targets[c][1] for c in CONDITIONS], dtype=float)
    e_scale = abs(err.mean()) or 1.0
    c_scale = abs(coc.mean()) or 1.0

    def objective(x):
        pred = predict_conditions(HumanParams(*x), config)
        pe = np.array([pred[c][0] for c in CONDITIONS])
        pc = np.array([pred[c][1] for c in CONDITIONS])
        return float(np.sum(((pe - err) / e_scale) ** 2) + np.sum(((pc - coc) / c_scale) ** 2))

    return objective


def fit_human_hyperparams(targets: dict, pso: PsoConfig | None = None, config=None) -> HumanParams:
    """Fit sharp/noisy sensing bias and effort weight to per-condition targets.

    ``targets`` maps each of SS, SN, NS, NN to ``(error deg, cocontraction)``
    where cocontraction is on the impedance-parameter scale.
    """
    pso = pso or PsoConfig(bounds=HUMAN_BOUNDS, particles=20, iterations=40)
    res = pso_minimize(fit_objective(targets, config), pso)
    return HumanParams(*(float(v) for v in res.x))
