"""Closed-loop tracking-error dynamics for one agent and for a coupled pair.

State is the tracking error ``z = [q - eta, dq - deta]`` in radians. The
feedforward is taken to cancel the rigid-body dynamics exactly, so the residual
plant is a pure inertia driven by the impedance feedback, the connection
torque and the noise torques.

Noise model
-----------
Every noise source is white in continuous time with intensity ``std**2 * dt``,
so that its average over one simulation step is ``N(bias, std**2)``: ``std``
is the per-sample standard deviation of the sampled signal. Steps are taken
with the exact transition of the linear SDE (matrix exponential for the drift,
Van Loan integral for the diffusion), split into the part explained by the
step-averaged noise sample and an independent residual. This reproduces the
moment equations step for step at any ``dt``; explicit Euler-Maruyama is
unstable at dt = 0.01 s once the stiffness exceeds roughly 17 Nm/rad.

Sign convention: sensed target ``eta_hat = eta - nu``, so sensing noise
enters the error dynamics as ``-B L' nu`` and haptic noise as ``+B H mu``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError, DivergedTrialError, DomainError
from .signalgen import Channel, NoiseSpec, SeededStream, TargetSpec, target_position_rad

KAPPA0 = float(np.degrees(1.0))  # 1 Nm/deg expressed in Nm/rad
RHO = 0.01  # viscosity / stiffness ratio, s
INERTIA = 0.0080  # kg m^2
DIVERGENCE_BOUND = 1e6


class Controller(str, enum.Enum):
    SOIE = "SOIE"
    FIXED_HIGH = "FixedHigh"
    FIXED_LOW = "FixedLow"
    FIXED = "Fixed"


@dataclass(frozen=True)
class AgentConfig:
    inertia: float = INERTIA
    controller: Controller = Controller.SOIE
    lam: float = 0.0
    sensing: NoiseSpec = NoiseSpec()
    motor_std: float = 0.0  # Nm, per sample
    kappa0: float = KAPPA0
    rho: float = RHO

    def __post_init__(self):
        if self.inertia <= 0:
            raise ConfigurationError("inertia must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.motor_std < 0:
            raise ConfigurationError("motor_std must be non-negative")

    @property
    def stiffness(self) -> float:
        return self.lam * self.kappa0

    @property
    def viscosity(self) -> float:
        return self.lam * self.kappa0 * self.rho

    def with_lambda(self, lam: float) -> "AgentConfig":
        return replace(self, lam=float(lam))


@dataclass(frozen=True)
class ConnectionSpec:
    stiffness: float = 17.32  # Nm/rad
    damping: float = 0.0  # Nm s/rad

    def __post_init__(self):
        if self.stiffness < 0 or self.damping < 0:
            raise ConfigurationError("connection stiffness and damping must be >= 0")

    @property
    def is_decoupled(self) -> bool:
        return self.stiffness == 0 and self.damping == 0


@dataclass
class TrialRecord:
    """Time series of one simulated trial (radians, seconds, Nm).

    Arrays indexed ``[agent, sample]``. ``tau[a]`` is the interaction torque
    acting on agent ``a``; ``eta_hat[a]`` is that agent's sensed target.
    """

    dt: float
    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    eta: np.ndarray
    eta_hat: np.ndarray
    tau: np.ndarray
    lam: tuple = ()
    decoded: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return self.q.shape[0]

    @property
    def error(self) -> np.ndarray:
        return self.q - self.eta[None, :]


def closed_loop_matrices(agent: AgentConfig, conn: ConnectionSpec):
    """Return ``(Abar, B)`` with ``Abar = A - B H - B L'`` for a pure inertia."""
    inv_i = 1.0 / agent.inertia
    abar = np.array(
        [
            [0.0, 1.0],
            [-(conn.stiffness + agent.stiffness) * inv_i, -(conn.damping + agent.viscosity) * inv_i],
        ]
    )
    b = np.array([[0.0], [inv_i]])
    return abar, b


@dataclass(frozen=True)
class ExactStep:
    """Exact one-step transition of ``dz = (Abar z + B u) dt + B dW``.

    ``gamma`` maps a step-constant input to the state; ``qd`` is the state
    covariance added by unit-intensity white noise; ``resid`` factors the part
    of ``qd`` not explained by the step-average of that noise.
    """

    phi: np.ndarray
    gamma: np.ndarray
    qd: np.ndarray
    resid: np.ndarray
    dt: float


def _psd_factor(m: np.ndarray) -> np.ndarray:
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    return v * np.sqrt(np.clip(w, 0.0, None))


@lru_cache(maxsize=4096)
def _exact_step_cached(abar_key: tuple, b_key: tuple, n: int, p: int, dt: float) -> ExactStep:
    abar = np.array(abar_key).reshape(n, n)
    b = np.array(b_key).reshape(n, p)
    aug = np.zeros((n + p, n + p))
    aug[:n, :n] = abar
    aug[:n, n:] = b
    e = expm(aug * dt)
    phi, gamma = e[:n, :n], e[:n, n:]
    qd = np.zeros((p, n, n))
    resid = np.zeros((p, n, n))
    vl = np.zeros((2 * n, 2 * n))
    vl[:n, :n] = -abar
    vl[n:, n:] = abar.T
    for j in range(p):
        bj = b[:, j : j + 1]
        vl[:n, n:] = bj @ bj.T
        f = expm(vl * dt)
        qj = f[n:, n:].T @ f[:n, n:]
        qj = 0.5 * (qj + qj.T)
        qd[j] = qj
        gj = gamma[:, j : j + 1]
        resid[j] = _psd_factor(qj - gj @ gj.T / dt)
    for arr in (phi, gamma, qd, resid):
        arr.setflags(write=False)
    return ExactStep(phi, gamma, qd, resid, dt)


def exact_step(abar: np.ndarray, b: np.ndarray, dt: float) -> ExactStep:
    abar = np.asarray(abar, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    n, p = b.shape
    return _exact_step_cached(tuple(abar.ravel()), tuple(b.ravel()), n, p, float(dt))


def simulate_linear_sde(
    abar, b, u_mean, scales, normals, dt, z0=None, *, trial_index=None, seed=None
):
    """Simulate ``dz = (Abar z + b u) dt`` driven by step-averaged white inputs.

    ``b`` is a single input column shared by every noise channel. Channel
    ``c`` contributes an input whose average over each step is
    ``scales[c] * normals[c][:, 0]`` (intensity ``scales[c]**2 * dt``); the
    remaining columns of ``normals[c]`` (``n_steps x (1 + dim)``) drive the
    intra-step residual. Returns the ``(n_steps + 1, dim)`` state trajectory.
    """
    abar = np.atleast_2d(np.asarray(abar, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    n = abar.shape[0]
    step = exact_step(abar, b, dt)
    n_steps = normals[0].shape[0]
    u = np.full(n_steps, float(u_mean))
    drive = np.zeros((n_steps, n))
    for s, xi in zip(scales, normals):
        if s == 0:
            continue
        u = u + s * xi[:, 0]
        drive += abs(s) * np.sqrt(dt) * xi[:, 1 : 1 + n] @ step.resid[0].T
    drive += np.outer(u, step.gamma[:, 0])
    return _iterate(step.phi, drive, z0, trial_index, seed)


def _iterate(phi, drive, z0, trial_index, seed):
    n_steps, n = drive.shape
    z = np.empty((n_steps + 1, n))
    z[0] = 0.0 if z0 is None else z0
    phi_t = phi.T
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            z[k + 1] = z[k] @ phi_t + drive[k]
    bad = ~(np.abs(z) < DIVERGENCE_BOUND).all(axis=1)
    if bad.any():
        raise DivergedTrialError(int(np.argmax(bad)), trial_index, seed)
    return z


def _normals(stream: SeededStream, channel: Channel, n_rows: int, width: int) -> np.ndarray:
    return stream.for_channel(channel).generator().standard_normal((n_rows, width))


def _n_steps(duration: float, dt: float) -> int:
    if dt <= 0:
        raise DomainError("dt must be positive")
    n = int(np.floor(duration / dt + 1e-9))
    if n < 2:
        raise DomainError("duration/dt must be at least 2")
    return n


def simulate_design_model(
    agent: AgentConfig,
    conn: ConnectionSpec,
    haptic: NoiseSpec,
    target: TargetSpec,
    dt: float,
    stream: SeededStream,
    z0=None,
) -> TrialRecord:
    """One trial of the single-agent design model; the partner is haptic noise."""
    n = _n_steps(target.duration, dt)
    abar, b = closed_loop_matrices(agent, conn)
    k_l, k_h = agent.stiffness, conn.stiffness
    nu = agent.sensing
    # torque per unit of each channel's noise sample
    gains = {
        Channel.SENSING: (-k_l, nu.std_rad),
        Channel.HAPTIC: (k_h, np.radians(haptic.std)),
        Channel.MOTOR: (1.0, agent.motor_std),
    }
    u_mean = -k_l * nu.bias_rad + k_h * np.radians(haptic.bias)
    normals, scales = {}, []
    for ch, (g, sd) in gains.items():
        normals[ch] = _normals(stream, ch, n + 1, 3)
        scales.append(g * sd)
    z = simulate_linear_sde(
        abar, b, u_mean, scales, [x[:n] for x in normals.values()], dt, z0,
        trial_index=stream.trial_index, seed=stream.master_seed,
    )
    nu_samples = nu.bias_rad + nu.std_rad * normals[Channel.SENSING][:, 0]
    mu_samples = np.radians(haptic.bias) + np.radians(haptic.std) * normals[Channel.HAPTIC][:, 0]
    t = dt * np.arange(n + 1)
    eta = target_position_rad(target, np.minimum(t, target.duration))
    q = eta + z[:, 0]
    tau = k_h * (mu_samples - z[:, 0]) - conn.damping * z[:, 1]
    return TrialRecord(
        dt=dt,
        t=t,
        q=q[None, :],
        dq=z[None, :, 1],
        eta=eta,
        eta_hat=(eta - nu_samples)[None, :],
        tau=tau[None, :],
        lam=(agent.lam,),
    )


def coupled_matrices(a1: AgentConfig, a2: AgentConfig, conn: ConnectionSpec):
    """Joint ``(Abar, B)`` for the 4-state pair ``[z1, dz1, z2, dz2]``."""
    k, d = conn.stiffness, conn.damping
    abar = np.zeros((4, 4))
    b = np.zeros((4, 2))
    for i, (me, other) in enumerate(((a1, 0), (a2, 2))):
        r = 2 * i
        o = 2 - r
        abar[r, r + 1] = 1.0
        abar[r + 1, r] = -(me.stiffness + k) / me.inertia
        abar[r + 1, r + 1] = -(me.viscosity + d) / me.inertia
        abar[r + 1, o] = k / me.inertia
        abar[r + 1, o + 1] = d / me.inertia
        b[r + 1, i] = 1.0 / me.inertia
    return abar, b


def simulate_coupled_pair(
    a1: AgentConfig,
    a2: AgentConfig,
    conn: ConnectionSpec,
    target: TargetSpec,
    dt: float,
    streams,
) -> TrialRecord:
    """Two agents tracking one target through a spring-damper connection.

    ``streams`` is a pair of :class:`SeededStream` (one per agent). The
    interaction torque comes from the partner's simulated state. With a
    decoupled connection each agent follows exactly the design-model path.
    """
    s1, s2 = streams
    n = _n_steps(target.duration, dt)
    t = dt * np.arange(n + 1)
    eta = target_position_rad(target, np.minimum(t, target.duration))
    agents = (a1, a2)

    if conn.is_decoupled:
        zero = NoiseSpec()
        recs = [simulate_design_model(a, conn, zero, target, dt, s) for a, s in zip(agents, (s1, s2))]
        q = np.vstack([r.q for r in recs])
        dq = np.vstack([r.dq for r in recs])
        eta_hat = np.vstack([r.eta_hat for r in recs])
        tau = np.zeros_like(q)
        return TrialRecord(dt, t, q, dq, eta, eta_hat, tau, lam=(a1.lam, a2.lam))

    abar, b = coupled_matrices(a1, a2, conn)
    step = exact_step(abar, b, dt)
    drive = np.zeros((n, 4))
    nu_samples = []
    # factor each agent's residual in its own state ordering so that swapping
    # identical agents swaps their noise responses exactly
    perms = (np.arange(4), np.array([2, 3, 0, 1]))
    resid = []
    for i, perm in enumerate(perms):
        g = step.gamma[:, i : i + 1]
        local = (step.qd[i] - g @ g.T / dt)[np.ix_(perm, perm)]
        f = np.empty((4, 4))
        f[perm] = _psd_factor(local)
        resid.append(f)
    for i, (agent, s) in enumerate(zip(agents, (s1, s2))):
        xs = _normals(s, Channel.SENSING, n + 1, 5)
        xm = _normals(s, Channel.MOTOR, n + 1, 5)
        nu = agent.sensing.bias_rad + agent.sensing.std_rad * xs[:, 0]
        nu_samples.append(nu)
        torque = -agent.stiffness * nu[:n] + agent.motor_std * xm[:n, 0]
        drive += np.outer(torque, step.gamma[:, i])
        for g, xi in ((agent.stiffness * agent.sensing.std_rad, xs), (agent.motor_std, xm)):
            if g:
                drive += np.sqrt(g * g * dt) * xi[:n, 1:] @ resid[i].T
    z = _iterate(step.phi, drive, None, s1.trial_index, s1.master_seed)
    q = np.vstack([eta + z[:, 0], eta + z[:, 2]])
    dq = np.vstack([z[:, 1], z[:, 3]])
    tau1 = conn.stiffness * (z[:, 2] - z[:, 0]) + conn.damping * (z[:, 3] - z[:, 1])
    tau = np.vstack([tau1, -tau1])
    eta_hat = np.vstack([eta - nu_samples[0], eta - nu_samples[1]])
    return TrialRecord(dt, t, q, dq, eta, eta_hat, tau, lam=(a1.lam, a2.lam))


def decode_target(trial: TrialRecord, agent_lambda: float, which: int = 0, kappa0: float = KAPPA0):
    """Target estimate from own sensing plus interaction torque, in radians."""
    k_l = agent_lambda * kappa0
    if k_l == 0:
        raise ZeroDivisionError("cannot decode the target with zero stiffness gain")
    return trial.eta_hat[which] + trial.tau[which] / k_l
