"""JSON run configuration with unit-suffixed keys.

Every section and key is optional; unknown keys are rejected so that a typo
never silently falls back to a default.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .errors import ConfigurationError
from .experiments import RunManifest
from .pso import HUMAN_BOUNDS, HumanParams, PsoConfig

SCHEMA = {
    "seed": None,
    "dt_s": None,
    "duration_s": None,
    "trials_per_cell": None,
    "target": {"amplitude_deg": None, "alpha_rad_per_s": None, "beta_rad_per_s": None},
    "connection": {"stiffness_nm_per_rad": None, "damping_nm_s_per_rad": None},
    "design": {
        "stiffness_nm_per_rad": None,
        "horizon_s": None,
        "effort_weight_per_s2": None,
        "haptic_std_deg": None,
    },
    "noise": {"biases_deg": None, "std_deg": None},
    "agent": {"motor_std_nm": None},
    "pso": {"particles": None, "iterations": None, "seed": None},
    "human": {"sharp_bias_deg": None, "noisy_bias_deg": None, "effort_weight_per_s2": None},
}


@dataclass(frozen=True)
class RunConfig:
    manifest: RunManifest = RunManifest()
    pso: PsoConfig = field(default_factory=lambda: PsoConfig(bounds=HUMAN_BOUNDS, particles=20, iterations=40))
    human: HumanParams = HumanParams()


def _check_keys(doc, schema, path=""):
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path or 'config'}: expected an object")
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigurationError(f"unknown key '{where}'")
        if isinstance(schema[key], dict):
            _check_keys(value, schema[key], where)


def _num(doc, key, cast=float):
    try:
        return cast(doc[key])
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"key '{key}': {exc}") from None


def parse_config(doc: dict) -> RunConfig:
    _check_keys(doc, SCHEMA)
    m = {}
    simple = {"seed": ("master_seed", int), "dt_s": ("dt", float), "duration_s": ("duration", float),
              "trials_per_cell": ("trials_per_cell", int)}
    for key, (attr, cast) in simple.items():
        if key in doc:
            m[attr] = _num(doc, key, cast)
    sections = {
        "target": {"amplitude_deg": "amplitude", "alpha_rad_per_s": "alpha", "beta_rad_per_s": "beta"},
        "connection": {"stiffness_nm_per_rad": "stiffness", "damping_nm_s_per_rad": "damping"},
        "design": {"stiffness_nm_per_rad": "design_stiffness", "horizon_s": "design_horizon",
                   "effort_weight_per_s2": "effort_weight", "haptic_std_deg": "haptic_std"},
        "noise": {"std_deg": "noise_std"},
        "agent": {"motor_std_nm": "motor_std"},
    }
    for sec, keys in sections.items():
        for key, attr in keys.items():
            if key in doc.get(sec, {}):
                m[attr] = _num(doc[sec], key)
    if "biases_deg" in doc.get("noise", {}):
        try:
            m["noise_biases"] = tuple(float(b) for b in doc["noise"]["biases_deg"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"key 'noise.biases_deg': {exc}") from None
    try:
        manifest = RunManifest(**m)
        manifest.target  # validates the target parameters
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None

    cfg = RunConfig(manifest=manifest)
    p = doc.get("pso", {})
    pso = replace(
        cfg.pso,
        **{k: _num(p, k, int) for k in ("particles", "iterations", "seed") if k in p},
    )
    h = doc.get("human", {})
    human = HumanParams(
        _num(h, "sharp_bias_deg") if "sharp_bias_deg" in h else cfg.human.sharp_bias,
        _num(h, "noisy_bias_deg") if "noisy_bias_deg" in h else cfg.human.noisy_bias,
        _num(h, "effort_weight_per_s2") if "effort_weight_per_s2" in h else cfg.human.R,
    )
    return RunConfig(manifest, pso, human)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(doc)
