"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .dynamics import AgentConfig, simulate_coupled_pair
from .errors import ConfigurationError, ContractViolation, MissingPrerequisiteError, NumericalError
from .experiments import (
    HumanRobotSetup,
    RunManifest,
    compute_surface,
    export_results,
    grid_trend_lines,
    load_targets,
    read_grid_csv,
    rows_to_csv,
    run_human_human_prediction,
    run_human_robot_conditions,
    run_robot_robot_grid,
    surface_trends,
)
from .pso import fit_human_hyperparams
from .signalgen import Channel, NoiseSpec, SeededStream
from .soie import optimal_lambda, partner_haptic_noise

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4


def _manifest(cfg: RunConfig, args) -> RunManifest:
    m = cfg.manifest
    if args.seed is not None:
        m = replace(m, master_seed=args.seed)
    if args.dt is not None:
        m = replace(m, dt=args.dt)
    return m


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def surface_to_csv(surface, biases, manifest_hash: str) -> str:
    rows = [{"own_bias_deg": b, **{f"partner_{p:g}": surface[i, j] for j, p in enumerate(biases)}}
            for i, b in enumerate(biases)]
    fields = ("own_bias_deg",) + tuple(f"partner_{p:g}" for p in biases)
    return rows_to_csv(rows, fields, manifest_hash)


def read_surface_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def cmd_optimize(args, cfg: RunConfig) -> int:
    m = _manifest(cfg, args)
    soie_cfg = m.soie_config()
    if args.own_bias is not None or args.partner_bias is not None:
        own = NoiseSpec(args.own_bias or 0.0, m.noise_std)
        partner = NoiseSpec(args.partner_bias or 0.0, m.noise_std)
        lam, cost = optimal_lambda(own, partner_haptic_noise(partner, soie_cfg), None, soie_cfg)
        print(f"lambda* = {lam:.6f}  stiffness = {lam * np.degrees(1.0):.3f} Nm/rad  cost = {cost:.6g}")
        return EXIT_OK
    surface = compute_surface(m, jobs=args.jobs)
    out = Path(args.out_dir) / "surface.csv"
    _write(out, surface_to_csv(surface, m.noise_biases, m.config_hash()))
    with np.printoptions(precision=3, suppress=True, linewidth=160):
        print("rows: own bias, columns: partner bias (deg)")
        print(surface)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_grid(args, cfg: RunConfig) -> int:
    m = _manifest(cfg, args)
    if args.trials_per_cell is not None:
        m = replace(m, trials_per_cell=args.trials_per_cell)
    surface_path = Path(args.surface or Path(args.out_dir) / "surface.csv")
    if not surface_path.exists():
        raise MissingPrerequisiteError(f"impedance surface {surface_path} not found; run 'optimize' first")
    result = run_robot_robot_grid(m, read_surface_csv(surface_path), jobs=args.jobs)
    paths = export_results(result, args.out_dir)
    print(f"{len(result.rows)} rows -> {paths['grid.csv']}")
    return EXIT_OK


def cmd_fit(args, cfg: RunConfig) -> int:
    targets = load_targets(args.targets)
    pso = cfg.pso if args.seed is None else replace(cfg.pso, seed=args.seed)
    fitted = fit_human_hyperparams(targets, pso, _manifest(cfg, args).soie_config())
    doc = {
        "manifest_hash": _manifest(cfg, args).config_hash(),
        "sharp_bias_deg": fitted.sharp_bias,
        "noisy_bias_deg": fitted.noisy_bias,
        "effort_weight_per_s2": fitted.R,
    }
    out = Path(args.out_dir) / "fitted.json"
    _write(out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    d = Path(args.results_dir or args.out_dir)
    grid = d / "grid.csv"
    surface = d / "surface.csv"
    if not grid.exists() and not surface.exists():
        raise MissingPrerequisiteError(f"no results in {d}")
    if surface.exists():
        tr = surface_trends(read_surface_csv(surface))
        ok_mono = tr["own_violations"].max() <= 1 and tr["partner_violations"].max() <= 1
        print(f"[{'PASS' if ok_mono else 'FAIL'}] surface monotone (<= 1 violation per line)")
        ok_range = tr["own_range"] > tr["partner_range"]
        print(f"[{'PASS' if ok_range else 'FAIL'}] own-noise range {tr['own_range']:.3f} "
              f"> partner-noise range {tr['partner_range']:.3f}")
    if grid.exists():
        rows = read_grid_csv(grid)
        metrics = ("error_sum_deg", "effort_nm", "decoded_r", "snr_db", "delay_s")
        print("controller " + " ".join(f"{k:>14}" for k in metrics))
        for c in sorted({r["controller"] for r in rows}):
            vals = [np.mean([r[k] for r in rows if r["controller"] == c]) for k in metrics]
            print(f"{c:<10} " + " ".join(f"{v:>14.4f}" for v in vals))
        for name, ok, detail in grid_trend_lines(rows):
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    m = _manifest(cfg, args)
    h = m.config_hash()
    out_dir = Path(args.out_dir)
    if args.study == "human-human":
        rows = run_human_human_prediction(cfg.human, m.soie_config())
        text = rows_to_csv(rows, tuple(rows[0]), h)
        name = "human_human.csv"
    elif args.study == "human-robot":
        rows = run_human_robot_conditions(m, HumanRobotSetup(human=cfg.human))
        text = rows_to_csv(rows, tuple(rows[0]), h)
        name = "human_robot.csv"
    else:
        agents = [AgentConfig(lam=lam, sensing=NoiseSpec(b, m.noise_std), motor_std=m.motor_std)
                  for lam, b in ((args.lam, args.own_bias or 0.0), (args.partner_lam, args.partner_bias or 0.0))]
        streams = [SeededStream(m.master_seed, 0, Channel.SENSING, a) for a in (0, 1)]
        rec = simulate_coupled_pair(agents[0], agents[1], m.connection, m.target, m.dt, streams)
        rows = [{"t_s": t, "eta_rad": e, "q1_rad": a, "q2_rad": b, "tau1_nm": tau}
                for t, e, a, b, tau in zip(rec.t, rec.eta, rec.q[0], rec.q[1], rec.tau[0])]
        text = rows_to_csv(rows, ("t_s", "eta_rad", "q1_rad", "q2_rad", "tau1_nm"), h)
        name = "trial.csv"
    _write(out_dir / name, text)
    print(f"wrote {out_dir / name}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="soielab", description="Optimal impedance for coupled tracking agents.")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out-dir", default="results", help="output directory")
    p.add_argument("--dt", type=float, help="time step override (s)")
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("optimize", help="optimal impedance surface or single condition")
    o.add_argument("--own-bias", type=float, help="own sensing bias (deg)")
    o.add_argument("--partner-bias", type=float, help="partner sensing bias (deg)")
    o.set_defaults(func=cmd_optimize)

    g = sub.add_parser("grid", help="robot-robot grid of coupled trials")
    g.add_argument("--trials-per-cell", type=int)
    g.add_argument("--surface", help="surface CSV (default OUT_DIR/surface.csv)")
    g.set_defaults(func=cmd_grid)

    f = sub.add_parser("fit", help="fit human-model hyperparameters with PSO")
    f.add_argument("targets", help="CSV with condition,error_deg,cocontraction")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("report", help="summary tables and trend checks")
    r.add_argument("results_dir", nargs="?")
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("simulate", help="single trial or prediction studies")
    s.add_argument("--study", choices=("trial", "human-human", "human-robot"), default="trial")
    s.add_argument("--lam", type=float, default=0.5)
    s.add_argument("--partner-lam", type=float, default=0.5)
    s.add_argument("--own-bias", type=float)
    s.add_argument("--partner-bias", type=float)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be at least 1")
        return args.func(args, cfg)
    except (ConfigurationError, ContractViolation, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingPrerequisiteError, FileNotFoundError) as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
