"""Spin-system simulation, pulse compilation and optimal control for magnetic-resonance qubits."""

from .dynamics import (
    Channel,
    ControlSequence,
    DensityState,
    evolve_controls,
    evolve_state,
    gate_fidelity,
    worst_case_state_fidelity,
)
from .grape import (
    OptimizerConfig,
    RobustnessEnsemble,
    controllability_rank,
    fitness,
    fitness_gradient,
    grape_optimize,
    simplex_optimize,
)
from .protocols import HbacConfig, compression_gate, hbac_run, single_transition_gate
from .pulses import PulseSequence, compile_cnot, phase_track, refocus_schedule
from .spins import Hyperfine, Spin, SpinSpecies, SpinSystem, load_system, make_system

__version__ = "0.1.0"

__all__ = [
    "Channel",
    "ControlSequence",
    "DensityState",
    "Hyperfine",
    "HbacConfig",
    "OptimizerConfig",
    "PulseSequence",
    "RobustnessEnsemble",
    "Spin",
    "SpinSpecies",
    "SpinSystem",
    "compile_cnot",
    "compression_gate",
    "controllability_rank",
    "evolve_controls",
    "evolve_state",
    "fitness",
    "fitness_gradient",
    "gate_fidelity",
    "grape_optimize",
    "hbac_run",
    "load_system",
    "make_system",
    "phase_track",
    "refocus_schedule",
    "simplex_optimize",
    "single_transition_gate",
    "worst_case_state_fidelity",
]
