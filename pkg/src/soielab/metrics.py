"""Scalar evaluations of trials: error, effort, transmission quality, tests."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .errors import ContractViolation, DomainError


@dataclass(frozen=True)
class MetricSummary:
    values: tuple
    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, values) -> "MetricSummary":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls((), math.nan, math.nan, 0)
        return cls(tuple(v.tolist()), float(v.mean()), float(v.std()), int(v.size))


def _pair(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ContractViolation(f"series lengths differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ContractViolation("series are empty")
    return a, b


def _rms(x, dt=None):
    # with uniform dt the dt-weighted mean over samples reduces to a plain mean
    return float(np.sqrt(np.mean(np.square(x))))


def rms_tracking_error(q, q_star, dt: float | None = None) -> float:
    """RMS of ``q* - q`` (radians in), in degrees."""
    q, q_star = _pair(q, q_star)
    return float(np.degrees(_rms(q_star - q, dt)))


def rms_effort(tau, dt: float | None = None) -> float:
    tau = np.asarray(tau, dtype=float)
    if tau.size == 0:
        raise ContractViolation("torque series is empty")
    return _rms(tau, dt)


def snr_db(signal, noise) -> float:
    s, n = np.asarray(signal, dtype=float), np.asarray(noise, dtype=float)
    if s.size == 0 or n.size == 0:
        raise ContractViolation("series are empty")
    ps, pn = np.mean(s * s), np.mean(n * n)
    if ps == pn:
        return 0.0
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(ps / pn))


def pearson_r(x, y) -> float:
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if den == 0:
        raise DomainError("correlation undefined for a constant series")
    return float(np.clip(xc @ yc / den, -1.0, 1.0))


def xcorr_delay(predicted, truth, dt: float, window: float = 2.0) -> float:
    """Lag (s) of ``predicted`` behind ``truth`` maximising the normalised cross-correlation.

    Both series are made zero-mean; each lag's correlation is normalised by
    the norms of the overlapping segments. Positive means ``predicted`` lags.
    """
    p, t = _pair(predicted, truth)
    if p.size < 16:
        raise ContractViolation("need at least 16 samples")
    p, t = p - p.mean(), t - t.mean()
    max_lag = min(int(round(window / dt)), p.size - 2)
    best, best_lag = -np.inf, 0
    for lag in range(-max_lag, max_lag + 1):
        a = p[lag:] if lag >= 0 else p[: p.size + lag]
        b = t[: t.size - lag] if lag >= 0 else t[-lag:]
        den = np.sqrt((a @ a) * (b @ b))
        c = (a @ b) / den if den > 0 else -np.inf
        if c > best + 1e-12:
            best, best_lag = c, lag
    return best_lag * dt


def coactivation_effort(tau_f, tau_e, dt: float | None = None) -> float:
    """Mean of ``tau_f + |tau_e|`` over the trial (Nm)."""
    f, e = _pair(tau_f, tau_e)
    return float(np.mean(f + np.abs(e)))


def fit_torque_regression(envelope, torque):
    """Least-squares ``torque = a * envelope + b`` with ``a, b >= 0``."""
    u, y = _pair(envelope, torque)
    if u.size < 2:
        raise ContractViolation("need at least two samples")
    if np.ptp(u) == 0:
        raise DomainError("envelope is constant; slope is not identifiable")
    design = np.column_stack([u, np.ones_like(u)])
    coef, _ = optimize.nnls(design, y)
    return float(coef[0]), float(coef[1])


def normalize_metric(values, value: float) -> float:
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        raise DomainError("cannot normalise against a constant set")
    return (value - lo) / (hi - lo)


def human_cost(e_n: float, tau_n: float) -> float:
    return 0.70 * e_n + 0.30 * tau_n


def _signed_rank_exact_p(ranks, w_plus) -> float:
    """Two-sided exact p-value by counting all sign assignments (ranks may be mid-ranks)."""
    doubled = np.rint(2 * np.asarray(ranks)).astype(int)
    total = int(doubled.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    counts /= counts.sum()
    obs = int(round(2 * w_plus))
    mean = total / 2
    dev = abs(obs - mean)
    grid = np.arange(total + 1)
    return float(min(1.0, counts[np.abs(grid - mean) >= dev - 1e-9].sum()))


def paired_test(x, y, kind: str = "t"):
    """Two-sided paired test. Returns ``(statistic, p)``.

    ``kind='t'``: paired t statistic. ``kind='wilcoxon'``: ``W+`` (sum of ranks
    of positive differences), exact for up to 25 non-zero differences and a
    tie-corrected normal approximation beyond.
    """
    x, y = _pair(x, y)
    if x.size < 5:
        raise ContractViolation("paired tests need at least 5 pairs")
    d = x - y
    if kind == "t":
        n = d.size
        sd = d.std(ddof=1)
        mean = d.mean()
        if sd == 0:
            if mean == 0:
                return 0.0, 1.0
            # zero-variance, non-zero shift: the t statistic is unbounded
            return math.copysign(math.inf, mean), 0.0
        t = mean / (sd / math.sqrt(n))
        return float(t), float(2 * stats.t.sf(abs(t), n - 1))
    if kind == "wilcoxon":
        d = d[d != 0]
        if d.size == 0:
            raise DomainError("no non-zero differences")
        ranks = stats.rankdata(np.abs(d))
        w_plus = float(ranks[d > 0].sum())
        n = d.size
        if n <= 25:
            return w_plus, _signed_rank_exact_p(ranks, w_plus)
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24 - (tie_counts**3 - tie_counts).sum() / 48
        z = (w_plus - n * (n + 1) / 4) / math.sqrt(var)
        return w_plus, float(2 * stats.norm.sf(abs(z)))
    raise DomainError(f"unknown test kind {kind!r}")

