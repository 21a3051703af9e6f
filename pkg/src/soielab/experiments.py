"""Batch studies: the robot-robot grid, human-human prediction and human-robot runs."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import KAPPA0, AgentConfig, ConnectionSpec, Controller, decode_target, simulate_coupled_pair
from .errors import MissingPrerequisiteError
from .metrics import pearson_r, rms_effort, rms_tracking_error, snr_db, xcorr_delay
from .moments import CostWeights
from .pso import CONDITIONS, HumanParams
from .signalgen import Channel, NoiseSpec, SeededStream, TargetSpec, sample_start_offset
from .soie import SoieConfig, impedance_surface, optimal_lambda, partner_haptic_noise, predicted_rms_error

GRID_CONTROLLERS = (Controller.SOIE.value, Controller.FIXED_HIGH.value, Controller.FIXED_LOW.value)

ROW_FIELDS = (
    "own_bias_deg", "partner_bias_deg", "controller", "trial", "lam_1", "lam_2",
    "error_1_deg", "error_2_deg", "error_sum_deg", "effort_nm",
    "decoded_r", "snr_db", "delay_s",
)


@dataclass(frozen=True)
class RunManifest:
    """Every numeric input of a batch run; the hash identifies its outputs."""

    experiment_id: str = "robot-robot"
    master_seed: int = 0
    dt: float = 0.01
    duration: float = 10.0
    amplitude: float = 18.5
    alpha: float = 2.031
    beta: float = 1.093
    controllers: tuple = GRID_CONTROLLERS
    noise_biases: tuple = tuple(float(b) for b in range(8))
    noise_std: float = 0.05
    stiffness: float = 17.2  # experiment connection, Nm/rad
    damping: float = 0.0
    trials_per_cell: int = 1
    motor_std: float = 0.0
    # design model used to compute the impedance surface
    design_stiffness: float = 17.32
    design_horizon: float = 20.0
    effort_weight: float = 4.02
    haptic_std: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "controllers", tuple(self.controllers))
        object.__setattr__(self, "noise_biases", tuple(float(b) for b in self.noise_biases))

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def target(self) -> TargetSpec:
        return TargetSpec(self.amplitude, self.alpha, self.beta, self.duration)

    @property
    def connection(self) -> ConnectionSpec:
        return ConnectionSpec(self.stiffness, self.damping)

    def soie_config(self) -> SoieConfig:
        return SoieConfig(
            dt=self.dt,
            horizon=self.design_horizon,
            conn=ConnectionSpec(self.design_stiffness, 0.0),
            motor_std=self.motor_std,
            haptic_std=self.haptic_std,
            weights=CostWeights.table1(self.effort_weight),
        )

    def noise_grid(self):
        return [NoiseSpec(b, self.noise_std) for b in self.noise_biases]


@dataclass
class GridResult:
    manifest: RunManifest
    rows: list = field(default_factory=list)
    pooled: dict = field(default_factory=dict)  # controller -> concatenated-series metrics

    def column(self, name: str, controller: str | None = None) -> np.ndarray:
        return np.array([r[name] for r in self.rows if controller is None or r["controller"] == controller])

    def means(self) -> dict:
        out = {}
        for c in self.manifest.controllers:
            out[c] = {k: float(np.mean(self.column(k, c))) for k in ROW_FIELDS[6:]}
        return out


def compute_surface(manifest: RunManifest, jobs: int = 1) -> np.ndarray:
    grid = manifest.noise_grid()
    return impedance_surface(grid, grid, config=manifest.soie_config(), jobs=jobs)


def controller_lambdas(surface: np.ndarray, controller: str, i: int, j: int):
    """Impedances of the two agents in cell ``(i, j)`` under ``controller``."""
    if controller == Controller.SOIE.value:
        return float(surface[i, j]), float(surface[j, i])
    if controller == Controller.FIXED_HIGH.value:
        v = float(surface.max())
    elif controller == Controller.FIXED_LOW.value:
        v = float(surface.min())
    else:
        raise ValueError(f"unknown controller {controller!r}")
    return v, v


def _trial(args):
    """Run one coupled trial and return its metric row plus decoded/true series."""
    manifest, i, j, controller, trial, lams, trial_index = args
    grid = manifest.noise_grid()
    agents = [
        AgentConfig(controller=Controller(controller), lam=lam, sensing=s, motor_std=manifest.motor_std)
        for lam, s in zip(lams, (grid[i], grid[j]))
    ]
    streams = [SeededStream(manifest.master_seed, trial_index, Channel.SENSING, a) for a in (0, 1)]
    t0 = sample_start_offset(manifest.target, streams[0])
    rec = simulate_coupled_pair(agents[0], agents[1], manifest.connection, manifest.target.with_start(t0),
                                manifest.dt, streams)
    e1 = rms_tracking_error(rec.q[0], rec.eta)
    e2 = rms_tracking_error(rec.q[1], rec.eta)
    decoded = decode_target(rec, lams[0], 0)
    row = {
        "own_bias_deg": grid[i].bias,
        "partner_bias_deg": grid[j].bias,
        "controller": controller,
        "trial": trial,
        "lam_1": lams[0],
        "lam_2": lams[1],
        "error_1_deg": e1,
        "error_2_deg": e2,
        "error_sum_deg": e1 + e2,
        "effort_nm": rms_effort(rec.tau[0]),
        "decoded_r": pearson_r(decoded, rec.eta),
        "snr_db": snr_db(rec.eta, decoded - rec.eta),
        "delay_s": xcorr_delay(decoded, rec.eta, manifest.dt),
    }
    return row, decoded, rec.eta


def run_robot_robot_grid(manifest: RunManifest, surface=None, jobs: int = 1) -> GridResult:
    """Simulate every (noise cell, controller, trial) of the robot-robot study.

    Controllers in the same cell and trial share noise streams (common random
    numbers), so paired comparisons isolate the controller effect.
    """
    if surface is None:
        raise MissingPrerequisiteError("no impedance surface: run the optimisation first")
    surface = np.asarray(surface, dtype=float)
    n = len(manifest.noise_biases)
    if surface.shape != (n, n):
        raise MissingPrerequisiteError(f"surface shape {surface.shape} does not match the {n}x{n} noise grid")
    tasks = []
    for i in range(n):
        for j in range(n):
            for trial in range(manifest.trials_per_cell):
                trial_index = (i * n + j) * manifest.trials_per_cell + trial
                for c in manifest.controllers:
                    tasks.append((manifest, i, j, c, trial, controller_lambdas(surface, c, i, j), trial_index))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            out = list(pool.map(_trial, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        out = [_trial(t) for t in tasks]
    result = GridResult(manifest, [o[0] for o in out])
    for c in manifest.controllers:
        dec = np.concatenate([o[1] for o in out if o[0]["controller"] == c] or [np.zeros(0)])
        tru = np.concatenate([o[2] for o in out if o[0]["controller"] == c] or [np.zeros(0)])
        if dec.size:
            result.pooled[c] = {
                "decoded_r": pearson_r(dec, tru),
                "snr_db": snr_db(tru, dec - tru),
            }
    return result


def error_difference_trend(result, versus: str) -> float:
    """Correlation of (summed error under ``versus`` minus SOIE) with |bias difference|.

    ``result`` is a :class:`GridResult` or its list of rows.
    """
    rows = result.rows if isinstance(result, GridResult) else result
    soie = {(r["own_bias_deg"], r["partner_bias_deg"], r["trial"]): r["error_sum_deg"]
            for r in rows if r["controller"] == Controller.SOIE.value}
    diffs, gaps = [], []
    for r in rows:
        if r["controller"] != versus:
            continue
        diffs.append(r["error_sum_deg"] - soie[(r["own_bias_deg"], r["partner_bias_deg"], r["trial"])])
        gaps.append(abs(r["own_bias_deg"] - r["partner_bias_deg"]))
    if not diffs:
        raise ValueError(f"controller {versus!r} not in the result")
    if np.ptp(diffs) == 0 or np.ptp(gaps) == 0:
        return float("nan")
    return pearson_r(diffs, gaps)


# -- human-human ----------------------------------------------------------------

def run_human_human_prediction(params: HumanParams, config: SoieConfig | None = None) -> list:
    """Predicted impedance (cocontraction proxy) and tracking error per condition."""
    cfg = replace(config or SoieConfig(), weights=CostWeights.table1(params.R))
    rows = []
    for cond in CONDITIONS:
        own = NoiseSpec(params.bias(cond[0]), cfg.haptic_std)
        partner = NoiseSpec(params.bias(cond[1]), cfg.haptic_std)
        haptic = partner_haptic_noise(partner, cfg)
        lam, cost = optimal_lambda(own, haptic, cfg.weights, cfg)
        rows.append({
            "condition": cond,
            "lam": lam,
            "stiffness_nm_per_rad": lam * KAPPA0,
            "error_deg": predicted_rms_error(lam, own, haptic, cfg),
            "cost": cost,
        })
    return rows


def load_targets(path) -> dict:
    """Read ``condition,error_deg,cocontraction`` rows into a fit-target mapping."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    idx = {name: k for k, name in enumerate(header)}
    return {r[idx["condition"]]: (float(r[idx["error_deg"]]), float(r[idx["cocontraction"]])) for r in body}


# -- human-robot ----------------------------------------------------------------

@dataclass(frozen=True)
class HumanRobotSetup:
    human: HumanParams = HumanParams()
    robot_noisy: NoiseSpec = NoiseSpec(7.01, 0.05)
    robot_sharp: NoiseSpec = NoiseSpec(0.0, 0.0)
    human_std: float = 0.05
    alpha: float = 3.04
    beta: float = 2.51
    trials: int = 10


def run_human_robot_conditions(manifest: RunManifest, setup: HumanRobotSetup | None = None) -> list:
    """SOIE robot against a high-impedance baseline with a simulated human partner.

    Conditions are named robot-human (``NS``: noisy robot, sharp human). The
    baseline holds the SN impedance in every condition. Returns one row per
    (condition, controller, trial).
    """
    setup = setup or HumanRobotSetup()
    cfg = replace(manifest.soie_config(), weights=CostWeights.table1(setup.human.R))
    target = TargetSpec(manifest.amplitude, setup.alpha, setup.beta, manifest.duration)
    conn = manifest.connection

    def specs(cond):
        robot = setup.robot_sharp if cond[0] == "S" else setup.robot_noisy
        human = NoiseSpec(setup.human.bias(cond[1]), setup.human_std)
        return robot, human

    soie_lam = {}
    human_lam = {}
    for cond in CONDITIONS:
        robot, human = specs(cond)
        soie_lam[cond] = optimal_lambda(robot, partner_haptic_noise(human, cfg), None, cfg)[0]
        human_lam[cond] = optimal_lambda(human, partner_haptic_noise(robot, cfg), None, cfg)[0]
    hic = soie_lam["SN"]
    rows = []
    for c_idx, cond in enumerate(CONDITIONS):
        robot, human = specs(cond)
        for trial in range(setup.trials):
            trial_index = c_idx * setup.trials + trial
            streams = [SeededStream(manifest.master_seed, trial_index, Channel.SENSING, a) for a in (0, 1)]
            t0 = sample_start_offset(target, streams[0])
            tgt = target.with_start(t0)
            for controller, lam in (("SOIE", soie_lam[cond]), ("HIC", hic)):
                a_r = AgentConfig(lam=lam, sensing=robot, motor_std=manifest.motor_std)
                a_h = AgentConfig(lam=human_lam[cond], sensing=human, motor_std=manifest.motor_std)
                rec = simulate_coupled_pair(a_r, a_h, conn, tgt, manifest.dt, streams)
                decoded = decode_target(rec, lam, 0) if lam > 0 else rec.eta_hat[0]
                rows.append({
                    "condition": cond,
                    "controller": controller,
                    "trial": trial,
                    "robot_lam": lam,
                    "robot_stiffness_nm_per_rad": lam * KAPPA0,
                    "human_lam": human_lam[cond],
                    "robot_error_deg": rms_tracking_error(rec.q[0], rec.eta),
                    "human_error_deg": rms_tracking_error(rec.q[1], rec.eta),
                    "effort_nm": rms_effort(rec.tau[0]),
                    "decoded_error_deg": rms_tracking_error(decoded, rec.eta),
                })
    return rows


# -- export -----------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def rows_to_csv(rows, fields, manifest_hash: str) -> str:
    buf = io.StringIO(newline="")
    buf.write(f"# manifest_hash: {manifest_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r[f]) for f in fields])
    return buf.getvalue()


def long_format(rows, id_fields, value_fields):
    return [
        {**{k: r[k] for k in id_fields}, "metric": f, "value": r[f]}
        for r in rows
        for f in value_fields
    ]


def export_results(result: GridResult, out_dir) -> dict:
    """Write ``grid.csv``, ``grid_long.csv``, ``pooled.csv`` and ``manifest.json``.

    Files are byte-identical for identical manifests and surfaces.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = result.manifest.config_hash()
    ids = ROW_FIELDS[:4]
    files = {
        "grid.csv": rows_to_csv(result.rows, ROW_FIELDS, h),
        "grid_long.csv": rows_to_csv(long_format(result.rows, ids, ROW_FIELDS[4:]), ids + ("metric", "value"), h),
        "pooled.csv": rows_to_csv(
            [{"controller": c, **v} for c, v in result.pooled.items()], ("controller", "decoded_r", "snr_db"), h
        ),
        "manifest.json": json.dumps({"manifest_hash": h, **asdict(result.manifest)}, indent=2, sort_keys=True) + "\n",
    }
    paths = {}
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8", newline="\n")
        paths[name] = p
    return paths


def read_grid_csv(path) -> list:
    """Parse a ``grid.csv`` export back into metric rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        rows = []
        for r in reader:
            rows.append({k: (v if k == "controller" else (int(v) if k == "trial" else float(v))) for k, v in r.items()})
    return rows


# -- trend checks -----------------------------------------------------------------

def surface_trends(surface, tol: float = 1e-3) -> dict:
    """Monotonicity and range summary of an impedance surface (rows = own noise).

    A violation is a step in the wrong direction larger than ``tol``.
    """
    s = np.asarray(surface, dtype=float)
    own_steps = np.diff(s, axis=0)  # along own noise, should be <= 0
    partner_steps = np.diff(s, axis=1)  # along partner noise, should be >= 0
    return {
        "own_violations": (own_steps > tol).sum(axis=0),
        "partner_violations": (partner_steps < -tol).sum(axis=1),
        "own_range": float(np.mean(s.max(axis=0) - s.min(axis=0))),
        "partner_range": float(np.mean(s.max(axis=1) - s.min(axis=1))),
    }


def grid_trend_lines(rows) -> list:
    """``(name, passed, detail)`` for the robot-robot trends visible in grid rows."""
    from .metrics import paired_test

    def col(name, c):
        return np.array([r[name] for r in rows if r["controller"] == c])

    lines = []
    ctrls = {r["controller"] for r in rows}
    if not {"SOIE", "FixedHigh", "FixedLow"} <= ctrls:
        return lines
    eff = {c: col("effort_nm", c) for c in ctrls}
    err = {c: col("error_sum_deg", c) for c in ctrls}
    m_eff = {c: float(v.mean()) for c, v in eff.items()}
    m_err = {c: float(v.mean()) for c, v in err.items()}
    lines.append(("effort FixedLow < SOIE < FixedHigh",
                  m_eff["FixedLow"] < m_eff["SOIE"] < m_eff["FixedHigh"],
                  f"{m_eff['FixedLow']:.4g} / {m_eff['SOIE']:.4g} / {m_eff['FixedHigh']:.4g} Nm"))
    lines.append(("error SOIE < min(FixedLow, FixedHigh)",
                  m_err["SOIE"] < min(m_err["FixedLow"], m_err["FixedHigh"]),
                  f"{m_err['SOIE']:.4g} vs {m_err['FixedLow']:.4g} / {m_err['FixedHigh']:.4g} deg"))
    if len(err["SOIE"]) >= 5:
        for other in ("FixedLow", "FixedHigh"):
            _, p_err = paired_test(err["SOIE"], err[other])
            _, p_eff = paired_test(eff["SOIE"], eff[other])
            lines.append((f"paired t-test SOIE vs {other} p < 0.05",
                          p_err < 0.05 and p_eff < 0.05, f"error p={p_err:.3g}, effort p={p_eff:.3g}"))
    for other in ("FixedLow", "FixedHigh"):
        r_val = error_difference_trend(rows, other)
        lines.append((f"error difference vs {other} linear in noise gap (r >= 0.9)", r_val >= 0.9, f"r={r_val:.3f}"))
    return lines
