"""Mean/covariance propagation of the tracking error and the deterministic cost.

The moment ODEs

    dm/dt = Abar m + B u
    dP/dt = Abar P + P Abar' + W

are advanced with their exact one-step transition (``Phi``, ``Gamma`` and
the Van Loan covariance increment), which has the same fixed point as the
continuous equations and stays stable at dt = 0.01 s for every impedance in
[0, 1]. All step states are produced at once by doubling, so leading batch
dimensions (a grid of impedances) cost one pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .dynamics import (
    AgentConfig,
    ConnectionSpec,
    closed_loop_matrices,
    simulate_design_model,
)
from .errors import (
    ContractViolation,
    DomainError,
    NoSteadyStateError,
    NumericalInstabilityError,
)
from .signalgen import Channel, NoiseSpec, SeededStream, TargetSpec

DEG = float(np.degrees(1.0))


@dataclass(frozen=True)
class StateMoments:
    m: np.ndarray
    P: np.ndarray

    @classmethod
    def zeros(cls, n: int = 2) -> "StateMoments":
        return cls(np.zeros(n), np.zeros((n, n)))


@dataclass
class MomentTrajectory:
    """Moments at ``t = k dt`` for ``k = 0..n_steps`` (index 0 is the initial state)."""

    dt: float
    m: np.ndarray  # (..., n_steps + 1, n)
    P: np.ndarray  # (..., n_steps + 1, n, n)

    def __len__(self) -> int:
        return self.m.shape[-2]

    def __getitem__(self, k) -> StateMoments:
        return StateMoments(self.m[..., k, :], self.P[..., k, :, :])

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(len(self))

    def at_time(self, t: float) -> StateMoments:
        return self[int(round(t / self.dt))]


@dataclass(frozen=True)
class CostWeights:
    """Quadratic error weights and scalar effort weight.

    ``angle_unit`` says which unit ``Q`` and ``Q_T`` are expressed in: states
    are kept in radians and rescaled before weighting.
    """

    Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 0.01]))
    Q_T: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    R: float = 4.02
    angle_unit: str = "rad"

    def __post_init__(self):
        for name in ("Q", "Q_T"):
            mat = np.asarray(getattr(self, name), dtype=float)
            if mat.shape != (2, 2):
                raise ContractViolation(f"{name} must be 2x2")
            if not np.allclose(mat, mat.T) or np.linalg.eigvalsh(mat).min() < -1e-12:
                raise ContractViolation(f"{name} must be symmetric positive semi-definite")
            object.__setattr__(self, name, mat)
        if self.R < 0:
            raise ContractViolation("R must be non-negative")
        if self.angle_unit not in ("rad", "deg"):
            raise ContractViolation("angle_unit must be 'rad' or 'deg'")

    @classmethod
    def table1(cls, R: float = 4.02) -> "CostWeights":
        return cls(np.diag([1.0, 0.01]), np.zeros((2, 2)), R, "deg")

    @property
    def scale(self) -> float:
        return DEG if self.angle_unit == "deg" else 1.0


# -- transitions --------------------------------------------------------------

def batched_transition(abar: np.ndarray, b: np.ndarray, dt: float):
    """Exact ``(Phi, Gamma, Qd)`` for stacks of ``n x n`` systems with one input.

    ``Qd`` is the covariance added per step by unit-intensity noise on ``b``.
    """
    abar = np.asarray(abar, dtype=float)
    b = np.asarray(b, dtype=float)
    n = abar.shape[-1]
    batch = abar.shape[:-2]
    b = np.broadcast_to(b.reshape(batch + (n, 1)) if b.ndim > 2 else b.reshape(n, 1), batch + (n, 1))
    aug = np.zeros(batch + (n + 1, n + 1))
    aug[..., :n, :n] = abar
    aug[..., :n, n:] = b
    e = expm(aug * dt)
    vl = np.zeros(batch + (2 * n, 2 * n))
    vl[..., :n, :n] = -abar
    vl[..., :n, n:] = b @ np.swapaxes(b, -1, -2)
    vl[..., n:, n:] = np.swapaxes(abar, -1, -2)
    f = expm(vl * dt)
    qd = np.swapaxes(f[..., n:, n:], -1, -2) @ f[..., :n, n:]
    return e[..., :n, :n], e[..., :n, n], _sym(qd)


def _sym(p):
    return 0.5 * (p + np.swapaxes(p, -1, -2))


def propagate_linear(phi, g, qd, m0, p0, n_steps: int, check_psd: bool = True):
    """All states of ``m <- Phi m + g`` and ``P <- Phi P Phi' + Qd``.

    Accepts leading batch dimensions. Returns arrays with a step axis of
    length ``n_steps + 1``.
    """
    phi = np.asarray(phi, dtype=float)
    n = phi.shape[-1]
    batch = phi.shape[:-2]
    total = n_steps + 1
    pw = np.empty(batch + (total, n, n))
    c = np.empty(batch + (total, n))
    qs = np.empty(batch + (total, n, n))
    pw[..., 0, :, :] = np.eye(n)
    c[..., 0, :] = 0.0
    qs[..., 0, :, :] = 0.0
    # block of length L is known; (pw_L, c_L, Q_L) extend it to 2L
    pw_l = phi.copy()
    c_l = np.broadcast_to(np.asarray(g, dtype=float), batch + (n,)).copy()
    q_l = np.broadcast_to(np.asarray(qd, dtype=float), batch + (n, n)).copy()
    length = 1
    while length < total:
        hi = min(2 * length, total)
        span = hi - length
        blk = pw[..., :span, :, :]
        ex = np.expand_dims
        pw[..., length:hi, :, :] = blk @ ex(pw_l, -3)
        c[..., length:hi, :] = c[..., :span, :] + (blk @ ex(ex(c_l, -2), -1))[..., 0]
        qs[..., length:hi, :, :] = _sym(
            qs[..., :span, :, :] + blk @ ex(q_l, -3) @ np.swapaxes(blk, -1, -2)
        )
        c_l = c_l + (pw_l @ c_l[..., None])[..., 0]
        q_l = _sym(q_l + pw_l @ q_l @ np.swapaxes(pw_l, -1, -2))
        pw_l = pw_l @ pw_l
        length = hi
    m0 = np.broadcast_to(np.asarray(m0, dtype=float), batch + (n,))
    p0 = np.broadcast_to(np.asarray(p0, dtype=float), batch + (n, n))
    m = (pw @ np.expand_dims(np.expand_dims(m0, -2), -1))[..., 0] + c
    p = _sym(pw @ np.expand_dims(p0, -3) @ np.swapaxes(pw, -1, -2) + qs)
    if check_psd:
        scale = np.maximum(1.0, np.abs(p).max())
        if n <= 3 and np.linalg.eigvalsh(p).min() < -1e-10 * scale:
            raise NumericalInstabilityError(
                "covariance lost positive semi-definiteness; reduce dt"
            )
    return m, p


def design_inputs(agent: AgentConfig, conn: ConnectionSpec, haptic: NoiseSpec, dt: float):
    """Mean input torque and white-noise torque intensity for the design model."""
    k_l, k_h = agent.stiffness, conn.stiffness
    u_mean = -k_l * agent.sensing.bias_rad + k_h * np.radians(haptic.bias)
    intensity = (
        (k_l * agent.sensing.std_rad) ** 2 + (k_h * np.radians(haptic.std)) ** 2 + agent.motor_std**2
    ) * dt
    return u_mean, intensity


def diffusion_matrix(agent: AgentConfig, conn: ConnectionSpec, haptic: NoiseSpec, dt: float):
    """``W = B L Sigma_nu L' B' + Omega_mu + Omega_eta`` with per-step intensities."""
    _, b = closed_loop_matrices(agent, conn)
    _, intensity = design_inputs(agent, conn, haptic, dt)
    return intensity * (b @ b.T)


def _n_steps(dt: float, horizon: float) -> int:
    if dt <= 0 or horizon < dt:
        raise DomainError("need dt > 0 and T >= dt")
    return int(np.floor(horizon / dt + 1e-9))


def propagate_moments(
    agent: AgentConfig,
    conn: ConnectionSpec,
    haptic: NoiseSpec,
    init: StateMoments | None,
    dt: float,
    T: float,
) -> MomentTrajectory:
    """Mean and covariance of the design-model tracking error on ``[0, T]``."""
    n_steps = _n_steps(dt, T)
    init = init or StateMoments.zeros()
    abar, b = closed_loop_matrices(agent, conn)
    phi, gamma, qd = batched_transition(abar, b, dt)
    u_mean, intensity = design_inputs(agent, conn, haptic, dt)
    m, p = propagate_linear(phi, gamma * u_mean, qd * intensity, init.m, init.P, n_steps)
    return MomentTrajectory(dt, m, p)


def mc_estimate_moments(
    agent: AgentConfig,
    conn: ConnectionSpec,
    haptic: NoiseSpec,
    init: StateMoments | None,
    dt: float,
    T: float,
    n_trials: int = 500,
    master_seed: int = 0,
    chunk: int = 2000,
) -> MomentTrajectory:
    """Monte-Carlo mean and covariance (divisor ``n``) over seeded design-model trials.

    Trial ``i`` uses exactly the streams :func:`simulate_design_model` would
    use for ``trial_index=i``; trials are batched for speed and reduced in
    trial-index order.
    """
    if n_trials < 2:
        raise DomainError("n_trials must be at least 2")
    init = init or StateMoments.zeros()
    n_steps = _n_steps(dt, T)
    target = TargetSpec(duration=n_steps * dt)
    s_sum = np.zeros((n_steps + 1, 2))
    ss_sum = np.zeros((n_steps + 1, 2, 2))
    chol0 = np.linalg.cholesky(init.P + 1e-300 * np.eye(2)) if np.any(init.P) else None
    for lo in range(0, n_trials, chunk):
        idx = range(lo, min(lo + chunk, n_trials))
        z = _batch_design_trials(agent, conn, haptic, dt, target, master_seed, idx, init.m, chol0)
        s_sum += z.sum(axis=0)
        ss_sum += np.einsum("tki,tkj->kij", z, z)
    m = s_sum / n_trials
    p = _sym(ss_sum / n_trials - m[:, :, None] * m[:, None, :])
    return MomentTrajectory(dt, m, p)


def _batch_design_trials(agent, conn, haptic, dt, target, seed, idx, m0, chol0):
    """States of several design-model trials, shape ``(trials, n_steps + 1, 2)``.

    Uses the same transition and noise decomposition as
    :func:`simulate_design_model`, vectorised over trials.
    """
    from .dynamics import exact_step, _normals  # shared noise layout

    n_steps = int(np.floor(target.duration / dt + 1e-9))
    abar, b = closed_loop_matrices(agent, conn)
    step = exact_step(abar, b, dt)
    k_l, k_h = agent.stiffness, conn.stiffness
    u_mean = -k_l * agent.sensing.bias_rad + k_h * np.radians(haptic.bias)
    chans = (
        (Channel.SENSING, -k_l * agent.sensing.std_rad),
        (Channel.HAPTIC, k_h * np.radians(haptic.std)),
        (Channel.MOTOR, agent.motor_std),
    )
    n_tr = len(idx)
    drive = np.zeros((n_tr, n_steps, 2))
    u = np.full((n_tr, n_steps), u_mean)
    z0 = np.broadcast_to(np.asarray(m0, dtype=float), (n_tr, 2)).copy()
    for j, i in enumerate(idx):
        stream = SeededStream(seed, i, Channel.SENSING)
        for ch, s in chans:
            if s == 0:
                continue
            xi = _normals(stream, ch, n_steps + 1, 3)[:n_steps]
            u[j] += s * xi[:, 0]
            drive[j] += abs(s) * np.sqrt(dt) * xi[:, 1:3] @ step.resid[0].T
        if chol0 is not None:
            rng = stream.for_channel(Channel.START_OFFSET).generator()
            z0[j] += chol0 @ rng.standard_normal(2)
    drive += u[..., None] * step.gamma[:, 0]
    z = np.empty((n_tr, n_steps + 1, 2))
    z[:, 0] = z0
    phi_t = step.phi.T
    for k in range(n_steps):
        z[:, k + 1] = z[:, k] @ phi_t + drive[:, k]
    return z


def deterministic_cost(traj: MomentTrajectory, lam, weights: CostWeights, dt: float | None = None):
    """Discretised expected cost of a moment trajectory.

    Sums ``(m'Qm + R lam^2 + tr(QP)) dt`` over steps ``1..N`` (the initial
    state is excluded) and adds ``m_N' Q_T m_N + tr(Q_T P_N)``. Leading batch
    dimensions of ``traj`` broadcast against ``lam``.
    """
    dt = traj.dt if dt is None else dt
    m, p = np.asarray(traj.m), np.asarray(traj.P)
    if m.shape[-1] != 2 or p.shape[-2:] != (2, 2) or m.shape[:-1] != p.shape[:-2]:
        raise ContractViolation("moment trajectory must hold 2-vectors and 2x2 matrices")
    if m.shape[-2] < 1:
        raise ContractViolation("empty trajectory")
    s2 = weights.scale**2
    q, qt = weights.Q * s2, weights.Q_T * s2
    run_m, run_p = m[..., 1:, :], p[..., 1:, :, :]
    n = run_m.shape[-2]
    stage = np.einsum("...ki,ij,...kj->...", run_m, q, run_m) + np.einsum("ij,...kji->...", q, run_p)
    effort = n * weights.R * np.asarray(lam, dtype=float) ** 2
    term = np.einsum("...i,ij,...j->...", m[..., -1, :], qt, m[..., -1, :]) + np.einsum(
        "ij,...ji->...", qt, p[..., -1, :, :]
    )
    return (stage + effort) * dt + term


def lyapunov_steady_state(abar, diffusion):
    """Solve ``A P + P A' + W = 0`` over the symmetric unknowns of ``P``."""
    a = np.atleast_2d(np.asarray(abar, dtype=float))
    w = np.atleast_2d(np.asarray(diffusion, dtype=float))
    n = a.shape[0]
    if np.linalg.eigvals(a).real.max() >= 0:
        raise NoSteadyStateError("closed-loop matrix is not Hurwitz")
    iu = np.triu_indices(n)
    cols = []
    for i, j in zip(*iu):
        e = np.zeros((n, n))
        e[i, j] = e[j, i] = 1.0
        cols.append((a @ e + e @ a.T)[iu])
    x = np.linalg.solve(np.column_stack(cols), -_sym(w)[iu])
    p = np.zeros((n, n))
    p[iu] = x
    return p + np.triu(p, 1).T


def _stein(phi, c):
    """Solve ``S - Phi S Phi' = C`` for stacks of 2x2 matrices."""
    g = phi.shape[:-2]
    k = np.einsum("...ij,...kl->...ikjl", phi, phi).reshape(g + (4, 4))
    s = np.linalg.solve(np.eye(4) - k, c.reshape(g + (4, 1)))
    return _sym(s.reshape(g + (2, 2)))


def expected_cost(phi, g, qd, lam, weights: CostWeights, dt: float, n_steps: int, m0=None, p0=None):
    """Closed-form :func:`deterministic_cost` of the exact moment recursion.

    Equals ``deterministic_cost(propagate_linear(...))`` without building the
    trajectory: the steady state plus geometric sums of the decaying
    transient, obtained from discrete Stein equations. Every ``phi`` must be
    strictly stable (spectral radius < 1).
    """
    phi = np.asarray(phi, dtype=float)
    batch = phi.shape[:-2]
    eye = np.eye(2)
    m0 = np.zeros(2) if m0 is None else np.asarray(m0, dtype=float)
    p0 = np.zeros((2, 2)) if p0 is None else np.asarray(p0, dtype=float)
    s2 = weights.scale**2
    q, qt = weights.Q * s2, weights.Q_T * s2
    m_inf = np.linalg.solve(eye - phi, np.asarray(g, dtype=float)[..., None])[..., 0]
    p_inf = _stein(phi, np.broadcast_to(qd, batch + (2, 2)))
    e0 = m0 - m_inf
    d0 = p0 - p_inf
    phi_n = np.linalg.matrix_power(phi, n_steps)
    phi_n1 = phi_n @ phi
    x = e0[..., :, None] * e0[..., None, :] + d0
    tr = lambda a: a[..., 0, 0] + a[..., 1, 1]  # noqa: E731
    rhs = phi @ x @ np.swapaxes(phi, -1, -2) - phi_n1 @ x @ np.swapaxes(phi_n1, -1, -2)
    s = _stein(phi, rhs)
    geo = np.linalg.solve(eye - phi, ((phi - phi_n1) @ e0[..., None]))[..., 0]
    quad = lambda v, mat: np.einsum("...i,ij,...j->...", v, mat, v)  # noqa: E731
    running = (
        n_steps * quad(m_inf, q)
        + 2.0 * np.einsum("...i,ij,...j->...", m_inf, q, geo)
        + n_steps * tr(q @ p_inf)
        + tr(q @ s)
        + n_steps * weights.R * np.asarray(lam, dtype=float) ** 2
    )
    m_n = m_inf + (phi_n @ e0[..., None])[..., 0]
    p_n = p_inf + phi_n @ d0 @ np.swapaxes(phi_n, -1, -2)
    return running * dt + quad(m_n, qt) + tr(qt @ p_n)
