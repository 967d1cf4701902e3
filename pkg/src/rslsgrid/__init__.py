"""Toolkit for power-grid contingency detection via switched linear models.

Pipeline: parse a grid case, solve its AC power flow, linearize the swing
dynamics around per-scenario equilibria into a bank of LTI subsystems,
validate a probing input, then jointly detect the active mode and estimate
the continuous state from output measurements on a two-time-scale schedule.
"""

__version__ = "0.1.0"

from .gridmodel import (ContingencyScenario, GridCase, apply_contingency,
                        build_bank, compute_equilibrium, linearize, parse_case,
                        solve_power_flow)
from .detect import detect_mode, precompute_input_responses, validate_probing
from .matnum import (Spectrum, eigenvalues, expm, kernel_basis, numerical_rank,
                     place_observer_gain)
from .observe import (decompose, design_gains, observability_matrix,
                      run_joint_estimation)
from .rsls import (LtiSubsystem, ProbingSignal, RslsBank, ScheduleParams,
                   sample_switching, simulate)

__all__ = [
    "ContingencyScenario", "GridCase", "LtiSubsystem", "ProbingSignal",
    "RslsBank", "ScheduleParams", "Spectrum", "apply_contingency",
    "build_bank", "compute_equilibrium", "decompose", "design_gains",
    "detect_mode", "eigenvalues", "expm", "kernel_basis", "linearize",
    "numerical_rank", "observability_matrix", "parse_case",
    "place_observer_gain", "precompute_input_responses",
    "run_joint_estimation", "sample_switching", "simulate",
    "solve_power_flow", "validate_probing",
]
