"""Unitary and collapse interpreters over a validated protocol.

Both interpreters share one step semantics. They differ only at
``collapse_site`` markers: the unitary interpreter skips them, the collapse
interpreter measures the listed registers there (one uniform per event) and
continues from the projected branch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol as TypingProtocol

import numpy as np

from .errors import EngineAssert, FactorizationAssertFailed, SystemTooLargeForTrace
from .protocol import CheckFactorized, CollapseSite, Instruction, Measure, ValidatedProtocol
from .statevec import (
    NORM_TOL,
    MeasurementOutcome,
    StateVector,
    apply_local,
    basis_state,
    choose_outcome,
    marginal_probabilities,
    marginal_probability,
    measure,
    norm_drift,
    project,
    reduced_purity,
)

TRACE_MAX_DIM = 2**16
# distinct collapse histories kept per executor before memoization stops
MEMO_LIMIT = 4096


class Uniforms(TypingProtocol):
    def random(self) -> float: ...


@dataclass(frozen=True)
class DynamicsModel:
    """Which dynamics to run.

    ``sites`` restricts which collapse markers fire (1-based step indices);
    ``None`` fires all of them. ``recollapse`` lets markers inside reversed
    ranges fire again during the reversal.
    """

    variant: str = "unitary"
    sites: frozenset[int] | None = None
    recollapse: bool = False

    def __post_init__(self):
        if self.variant not in ("unitary", "collapse"):
            raise ValueError(f"unknown dynamics variant {self.variant!r}")
        if self.sites is not None:
            object.__setattr__(self, "sites", frozenset(self.sites))

    def fires(self, step: int) -> bool:
        return self.variant == "collapse" and (self.sites is None or step in self.sites)


UNITARY = DynamicsModel("unitary")
COLLAPSE = DynamicsModel("collapse")


def as_model(model: DynamicsModel | str) -> DynamicsModel:
    return model if isinstance(model, DynamicsModel) else DynamicsModel(model)


@dataclass(frozen=True)
class Event:
    step: int
    kind: str
    registers: tuple[str, ...]
    values: tuple[int, ...]
    probability: float


@dataclass(frozen=True)
class EventLog:
    events: tuple[Event, ...]
    # probability that the reversed registers read their initial levels
    return_fidelity: float

    @property
    def collapses(self) -> tuple[Event, ...]:
        return tuple(e for e in self.events if e.kind == "collapse")


@dataclass(frozen=True, eq=False)
class RunResult:
    """Outcome of one run.

    ``state`` is the final state before the readout; ``outcome`` is the
    sampled readout, or None when the protocol has no measure step.
    """

    state: StateVector
    outcome: MeasurementOutcome | None
    log: EventLog


def _apply(state: StateVector, ins: Instruction) -> StateVector:
    out = apply_local(state, ins.op)
    if norm_drift(out) > NORM_TOL:
        raise EngineAssert(f"norm drifted by {norm_drift(out):.3g}", step=ins.step)
    return out


def _check(state: StateVector, ins: Instruction) -> None:
    marker = ins.marker
    purity = reduced_purity(state, [marker.register])
    if purity < 1.0 - marker.tol:
        raise FactorizationAssertFailed(
            f"register {marker.register!r} is entangled: purity {purity:.12g} < 1 - {marker.tol:g}",
            step=ins.step,
        )


class Executor:
    """Runs one validated protocol repeatedly under a fixed model.

    The state after any prefix of the run is a pure function of the collapse
    outcomes drawn so far, so intermediate states are memoized by that
    history. Memoized and fresh runs are bit-identical.
    """

    def __init__(self, vp: ValidatedProtocol, model: DynamicsModel | str = UNITARY, *, memoize: bool = True):
        self.vp = vp
        self.model = as_model(model)
        self.instructions = vp.instructions(self.model.recollapse)
        self.memoize = memoize
        self._initial = basis_state(vp.layout, vp.protocol.init_assignment)
        self._segments: dict[tuple, tuple[StateVector, int]] = {}
        self._branches: dict[tuple, tuple[np.ndarray, dict]] = {}
        self._finals: dict[tuple, tuple[np.ndarray | None, float]] = {}
        self._return_target = {r: vp.protocol.init_assignment[r] for r in vp.return_registers}
        self._measure_step = next(
            (i for i, s in enumerate(vp.protocol.steps, 1) if isinstance(s, Measure)), None
        )

    @property
    def needs_rng(self) -> bool:
        if self.vp.measure is not None:
            return True
        return any(
            isinstance(i.marker, CollapseSite) and self.model.fires(i.origin or i.step)
            for i in self.instructions
        )

    def _remember(self, table: dict, key, value) -> None:
        if self.memoize and len(table) < MEMO_LIMIT:
            table[key] = value

    def _segment(self, history: tuple, state: StateVector, pos: int) -> tuple[StateVector, int]:
        """Advance from ``pos`` to the next firing collapse site or the end."""
        key = (history, pos)
        hit = self._segments.get(key)
        if hit is not None:
            return hit
        instrs = self.instructions
        while pos < len(instrs):
            ins = instrs[pos]
            if ins.op is not None:
                state = _apply(state, ins)
            elif isinstance(ins.marker, CheckFactorized):
                _check(state, ins)
            elif self.model.fires(ins.origin or ins.step):
                break
            pos += 1
        self._remember(self._segments, key, (state, pos))
        return state, pos

    def _collapse(self, history: tuple, state: StateVector, registers: tuple[str, ...], u: float):
        probs, posts = self._branches.get(history) or (None, None)
        if probs is None:
            probs, posts = marginal_probabilities(state, registers), {}
            self._remember(self._branches, history, (probs, posts))
        k = choose_outcome(probs, u)
        post = posts.get(k)
        dims = [state.layout.dim(r) for r in registers]
        values = tuple(int(v) for v in np.unravel_index(k, dims))
        if post is None:
            post = project(state, registers, values)
            posts[k] = post
        p = min(1.0, max(0.0, float(probs[k] / probs.sum())))
        return k, MeasurementOutcome(registers, values, p), post

    def _final(self, history: tuple, state: StateVector):
        hit = self._finals.get(history)
        if hit is None:
            probs = None
            if self.vp.measure is not None:
                probs = marginal_probabilities(state, self.vp.measure_registers)
            hit = (probs, marginal_probability(state, self._return_target))
            self._remember(self._finals, history, hit)
        return hit

    def run(self, rng: Uniforms | None = None) -> RunResult:
        if rng is None and self.needs_rng:
            raise ValueError("this protocol/model combination needs a random stream")
        history: tuple = ()
        state = self._initial
        pos = 0
        events: list[Event] = []
        instrs = self.instructions
        while True:
            state, pos = self._segment(history, state, pos)
            if pos >= len(instrs):
                break
            ins = instrs[pos]
            regs = ins.marker.registers
            k, outcome, state = self._collapse(history, state, regs, rng.random())
            events.append(Event(ins.origin or ins.step, "collapse", regs, outcome.values, outcome.probability))
            history += (k,)
            pos += 1

        probs, ret = self._final(history, state)
        outcome = None
        if probs is not None:
            regs = self.vp.measure_registers
            k = choose_outcome(probs, rng.random())
            dims = [state.layout.dim(r) for r in regs]
            values = tuple(int(v) for v in np.unravel_index(k, dims))
            p = min(1.0, max(0.0, float(probs[k] / probs.sum())))
            outcome = MeasurementOutcome(regs, values, p)
            events.append(Event(self._measure_step, "measure", regs, values, p))
        return RunResult(state, outcome, EventLog(tuple(events), ret))


def run(vp: ValidatedProtocol, model: DynamicsModel | str = UNITARY, rng: Uniforms | None = None) -> RunResult:
    """Execute ``vp`` once.

    A random stream is required whenever the model fires a collapse site or
    the protocol ends with a measure step.
    """
    return Executor(vp, model, memoize=False).run(rng)


def run_state_trace(
    vp: ValidatedProtocol, model: DynamicsModel | str = UNITARY, rng: Uniforms | None = None
) -> list[StateVector]:
    """Snapshots ``[initial, after step 1, after step 2, ...]``.

    Measure and expect steps leave the snapshot unchanged: the trace shows the
    state that the readout samples from.
    """
    model = as_model(model)
    if vp.layout.total_dim > TRACE_MAX_DIM:
        raise SystemTooLargeForTrace(f"trace limited to D <= {TRACE_MAX_DIM}, got {vp.layout.total_dim}")
    state = basis_state(vp.layout, vp.protocol.init_assignment)
    snapshots = [state]
    instrs = vp.instructions(model.recollapse)
    pos = 0
    for index in range(1, len(vp.protocol.steps) + 1):
        while pos < len(instrs) and instrs[pos].step == index:
            ins = instrs[pos]
            if ins.op is not None:
                state = _apply(state, ins)
            elif isinstance(ins.marker, CheckFactorized):
                _check(state, ins)
            elif model.fires(ins.origin or ins.step):
                if rng is None:
                    raise ValueError("collapse trace needs a random stream")
                _, state = measure(state, ins.marker.registers, rng.random())
            pos += 1
        snapshots.append(state)
    return snapshots
