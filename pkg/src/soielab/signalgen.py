"""Target trajectories and reproducible random streams.

Angles are configured in degrees (that is how the experiments are described)
but every simulator works in radians; use the ``*_rad`` helpers at the
boundary.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class TargetSpec:
    """Multisine target ``A sin(alpha t*) sin(beta t*)`` with ``t* = t + t0``."""

    amplitude: float = 18.5  # deg
    alpha: float = 2.031  # rad/s
    beta: float = 1.093  # rad/s
    duration: float = 10.0  # s
    t0: float = 0.0  # s

    def __post_init__(self):
        if self.amplitude <= 0:
            raise ConfigurationError("amplitude must be positive")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigurationError("alpha and beta must be positive")
        if self.duration <= 0:
            raise ConfigurationError("duration must be positive")
        if not 0.0 <= self.t0 <= 10.0:
            raise ConfigurationError("t0 must lie in [0, 10] s")

    def with_start(self, t0: float) -> "TargetSpec":
        return TargetSpec(self.amplitude, self.alpha, self.beta, self.duration, t0)


@dataclass(frozen=True)
class NoiseSpec:
    """Biased Gaussian noise N(bias, std^2), both in degrees.

    ``std`` is the per-sample standard deviation at the simulation step.
    """

    bias: float = 0.0
    std: float = 0.0

    def __post_init__(self):
        if self.std < 0:
            raise ConfigurationError("noise std must be non-negative")

    @property
    def bias_rad(self) -> float:
        return float(np.radians(self.bias))

    @property
    def std_rad(self) -> float:
        return float(np.radians(self.std))


class Channel(enum.IntEnum):
    SENSING = 0
    HAPTIC = 1
    MOTOR = 2
    START_OFFSET = 3


@dataclass(frozen=True)
class SeededStream:
    """Counter-style key for an independent random substream.

    The generator depends only on the key, never on how many other streams
    were consumed before, so trials can be evaluated in any order or process.
    """

    master_seed: int
    trial_index: int
    channel: Channel
    agent: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            int(self.master_seed) & (2**64 - 1),
            spawn_key=(int(self.trial_index), int(self.agent), int(self.channel)),
        )
        return np.random.Generator(np.random.Philox(seq))

    def for_channel(self, channel: Channel) -> "SeededStream":
        return SeededStream(self.master_seed, self.trial_index, channel, self.agent)

    def for_agent(self, agent: int) -> "SeededStream":
        return SeededStream(self.master_seed, self.trial_index, self.channel, agent)


def _check_time(spec: TargetSpec, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > spec.duration + 1e-12):
        raise DomainError(f"t must lie in [0, {spec.duration}] s")
    return t


def target_position(spec: TargetSpec, t):
    """Target angle in degrees at time(s) ``t``."""
    t = _check_time(spec, t)
    ts = t + spec.t0
    out = spec.amplitude * np.sin(spec.alpha * ts) * np.sin(spec.beta * ts)
    return float(out) if out.ndim == 0 else out


def target_derivatives(spec: TargetSpec, t):
    """Analytic (position, velocity, acceleration) in deg, deg/s, deg/s^2."""
    t = _check_time(spec, t)
    ts = t + spec.t0
    a, b, amp = spec.alpha, spec.beta, spec.amplitude
    sa, ca = np.sin(a * ts), np.cos(a * ts)
    sb, cb = np.sin(b * ts), np.cos(b * ts)
    q = amp * sa * sb
    qd = amp * (a * ca * sb + b * sa * cb)
    qdd = amp * (-(a * a + b * b) * sa * sb + 2 * a * b * ca * cb)
    return q, qd, qdd


def target_position_rad(spec: TargetSpec, t):
    return np.radians(target_position(spec, t))


@lru_cache(maxsize=64)
def multisine_zeros(alpha: float, beta: float, horizon: float = 10.0) -> tuple:
    """Sorted zeros of ``sin(alpha t) sin(beta t)`` on ``[0, horizon]``.

    The product has double roots wherever both factors vanish (always at
    t = 0), where sign-change bracketing finds nothing, so each factor's
    zeros ``k pi / w`` are enumerated directly.
    """
    roots = []
    for w in (alpha, beta):
        n = int(np.floor(horizon * w / np.pi + 1e-12))
        roots.extend(k * np.pi / w for k in range(n + 1))
    roots = np.sort(np.asarray(roots))
    keep = np.concatenate(([True], np.diff(roots) > 1e-12))
    return tuple(float(r) for r in roots[keep])


def sample_start_offset(spec: TargetSpec, stream: SeededStream, horizon: float = 10.0) -> float:
    """Draw a start time uniformly from the target's zero crossings."""
    zeros = multisine_zeros(spec.alpha, spec.beta, horizon)
    if not zeros:
        raise ConfigurationError("no zero crossings of the target on the horizon")
    rng = stream.for_channel(Channel.START_OFFSET).generator()
    return zeros[int(rng.integers(len(zeros)))]


def sample_noise(spec: NoiseSpec, stream: SeededStream, n: int) -> np.ndarray:
    """``n`` independent draws from N(bias, std^2) in degrees."""
    if n < 0:
        raise DomainError("n must be non-negative")
    rng = stream.generator()
    return spec.bias + spec.std * rng.standard_normal(n)
