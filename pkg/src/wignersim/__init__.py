"""Simulate observer-inside-the-lab protocols under unitary and collapse dynamics."""

from .engine import COLLAPSE, UNITARY, DynamicsModel, EventLog, Executor, run, run_state_trace
from .protocol import Protocol, ValidatedProtocol, builtin, compile_reverse, invert_step, validate
from .protofile import parse, serialize
from .statevec import (
    LocalOperator,
    MeasurementOutcome,
    RegisterLayout,
    StateVector,
    apply_local,
    basis_state,
    dense_embed,
    fidelity,
    measure,
    reduced_purity,
)
from .trials import TrialReport, bayes_factor, run_trials, trials_to_threshold

__all__ = [
    "COLLAPSE", "UNITARY", "DynamicsModel", "EventLog", "Executor", "LocalOperator",
    "MeasurementOutcome", "Protocol", "RegisterLayout", "StateVector", "TrialReport",
    "ValidatedProtocol", "apply_local", "basis_state", "bayes_factor", "builtin",
    "compile_reverse", "dense_embed", "fidelity", "invert_step", "measure", "parse",
    "reduced_purity", "run", "run_state_trace", "run_trials", "serialize",
    "trials_to_threshold", "validate",
]
