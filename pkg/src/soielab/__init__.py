"""Optimal impedance selection for physically coupled tracking agents."""
from .dynamics import (
    AgentConfig,
    ConnectionSpec,
    Controller,
    TrialRecord,
    closed_loop_matrices,
    decode_target,
    simulate_coupled_pair,
    simulate_design_model,
)
from .moments import (
    CostWeights,
    StateMoments,
    deterministic_cost,
    lyapunov_steady_state,
    mc_estimate_moments,
    propagate_moments,
)
from .pso import PsoConfig, fit_human_hyperparams, pso_minimize
from .signalgen import NoiseSpec, SeededStream, TargetSpec, sample_noise, sample_start_offset, target_position
from .soie import SoieConfig, gains_from_lambda, impedance_surface, optimal_lambda

__version__ = "0.1.0"
