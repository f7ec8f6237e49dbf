"""Exact state-vector simulation of the QBC1 quantum bit commitment protocol."""

from .adversary import AliceStrategy, BobStrategy, helstrom_success, uhlmann_local_unitary
from .analysis import (
    SecurityReport,
    alice_state_guess,
    binding_bounds_check,
    bob_optimal_cheat,
    concealing_scaling,
    monte_carlo,
    security_report,
)
from .protocol import Mode, ProtocolConfig, Transcript
from .qlin import (
    DensityOperator,
    StateVector,
    SystemLayout,
    fidelity,
    partial_trace,
    schmidt,
    trace_norm,
)
from .session import SessionResult, run_protocol

__version__ = "0.1.0"

__all__ = [
    "AliceStrategy", "BobStrategy", "DensityOperator", "Mode", "ProtocolConfig", "SecurityReport",
    "SessionResult", "StateVector", "SystemLayout", "Transcript", "alice_state_guess",
    "binding_bounds_check", "bob_optimal_cheat", "concealing_scaling", "fidelity", "helstrom_success",
    "monte_carlo", "partial_trace", "run_protocol", "schmidt", "security_report", "trace_norm",
    "uhlmann_local_unitary",
]
