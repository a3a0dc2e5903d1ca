"""Mixed-radix state vectors over named qudit registers.

The first declared register is the most significant digit of the basis
index, so a layout ``(a:2, b:3)`` orders its basis as
``(0,0) (0,1) (0,2) (1,0) ...``. All public operations treat
:class:`StateVector` as immutable and hand back fresh objects.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateState,
    DimensionMismatch,
    InvalidPartition,
    LayoutError,
    LayoutMismatch,
    MissingRegister,
    NonUnitaryMatrix,
    SystemTooLarge,
    SystemTooLargeForOracle,
    UnknownRegister,
    ValueOutOfRange,
)

NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_-]*\Z")
MIN_DIM, MAX_DIM = 2, 16
DEFAULT_MAX_TOTAL_DIM = 2**24
ORACLE_MAX_DIM = 2**12

UNITARY_TOL = 1e-10
NORM_TOL = 1e-9
DEGENERATE_TOL = 1e-12


def max_total_dim() -> int:
    """Hard cap on the joint dimension.

    ``WIGNERSIM_MAX_DIM`` may lower the cap; values above the default are
    ignored.
    """
    raw = os.environ.get("WIGNERSIM_MAX_DIM")
    if raw:
        try:
            requested = int(raw)
        except ValueError:
            return DEFAULT_MAX_TOTAL_DIM
        if 1 <= requested < DEFAULT_MAX_TOTAL_DIM:
            return requested
    return DEFAULT_MAX_TOTAL_DIM


@dataclass(frozen=True)
class RegisterLayout:
    registers: tuple[tuple[str, int], ...]

    def __post_init__(self):
        regs = tuple((str(n), int(d)) for n, d in self.registers)
        object.__setattr__(self, "registers", regs)
        if not regs:
            raise LayoutError("layout needs at least one register")
        seen = set()
        for name, dim in regs:
            if not NAME_RE.match(name):
                raise LayoutError(f"invalid register name {name!r}")
            if name in seen:
                raise LayoutError(f"duplicate register {name!r}")
            seen.add(name)
            if not MIN_DIM <= dim <= MAX_DIM:
                raise LayoutError(f"register {name!r} has dim {dim}, allowed {MIN_DIM}..{MAX_DIM}")

    @classmethod
    def of(cls, *registers: tuple[str, int]) -> "RegisterLayout":
        return cls(tuple(registers))

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.registers)

    @cached_property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.registers)

    @cached_property
    def strides(self) -> tuple[int, ...]:
        strides = [1] * len(self.dims)
        for k in range(len(self.dims) - 2, -1, -1):
            strides[k] = strides[k + 1] * self.dims[k + 1]
        return tuple(strides)

    @cached_property
    def total_dim(self) -> int:
        return int(np.prod(self.dims, dtype=object))

    @cached_property
    def _positions(self) -> dict[str, int]:
        return {n: k for k, n in enumerate(self.names)}

    def position(self, name: str) -> int:
        try:
            return self._positions[name]
        except KeyError:
            raise UnknownRegister(f"unknown register {name!r}") from None

    def dim(self, name: str) -> int:
        return self.dims[self.position(name)]

    def check_size(self, cap: int | None = None) -> None:
        cap = max_total_dim() if cap is None else cap
        if self.total_dim > cap:
            raise SystemTooLarge(f"joint dimension {self.total_dim} exceeds cap {cap}")

    def index(self, values: Sequence[int]) -> int:
        return mixed_radix_index(self, values)

    def decode(self, index: int) -> tuple[int, ...]:
        return decode(self, index)


def mixed_radix_index(layout: RegisterLayout, values: Sequence[int]) -> int:
    if len(values) != len(layout.dims):
        raise ValueOutOfRange(f"expected {len(layout.dims)} values, got {len(values)}")
    index = 0
    for name, dim, stride, v in zip(layout.names, layout.dims, layout.strides, values):
        if not 0 <= v < dim:
            raise ValueOutOfRange(f"value {v} out of range for {name!r} (dim {dim})")
        index += int(v) * stride
    return index


def decode(layout: RegisterLayout, index: int) -> tuple[int, ...]:
    if not 0 <= index < layout.total_dim:
        raise ValueOutOfRange(f"index {index} outside 0..{layout.total_dim - 1}")
    return tuple((index // s) % d for s, d in zip(layout.strides, layout.dims))


class StateVector:
    """Normalized amplitudes over a :class:`RegisterLayout`.

    The amplitude array is stored read-only; engine operations return new
    instances.
    """

    __slots__ = ("layout", "amps")

    def __init__(self, layout: RegisterLayout, amps, *, normalize: bool = False):
        arr = np.array(amps, dtype=np.complex128).reshape(-1)
        if arr.shape[0] != layout.total_dim:
            raise DimensionMismatch(f"{arr.shape[0]} amplitudes for dimension {layout.total_dim}")
        if normalize:
            norm = np.linalg.norm(arr)
            if norm < DEGENERATE_TOL:
                raise DegenerateState("cannot normalize a zero vector")
            arr = arr / norm
        arr.flags.writeable = False
        self.layout = layout
        self.amps = arr

    def norm_sq(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def tensor(self) -> np.ndarray:
        return self.amps.reshape(self.layout.dims)

    def amplitude(self, assignment: Mapping[str, int]) -> complex:
        values = _full_values(self.layout, assignment)
        return complex(self.amps[mixed_radix_index(self.layout, values)])

    def nonzero(self, tol: float = 1e-12) -> dict[tuple[int, ...], complex]:
        """Basis tuples with amplitude magnitude above ``tol``."""
        idx = np.flatnonzero(np.abs(self.amps) > tol)
        return {decode(self.layout, int(i)): complex(self.amps[i]) for i in idx}

    def __eq__(self, other):
        if not isinstance(other, StateVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.amps, other.amps)

    __hash__ = None

    def __repr__(self) -> str:
        terms = ", ".join(f"{k}: {v:.6g}" for k, v in list(self.nonzero().items())[:8])
        return f"StateVector({self.layout.names}, {{{terms}}})"


def _full_values(layout: RegisterLayout, assignment: Mapping[str, int]) -> list[int]:
    for name in assignment:
        layout.position(name)
    values = []
    for name, dim in layout.registers:
        if name not in assignment:
            raise MissingRegister(f"no value for register {name!r}")
        v = int(assignment[name])
        if not 0 <= v < dim:
            raise ValueOutOfRange(f"value {v} out of range for {name!r} (dim {dim})")
        values.append(v)
    return values


def basis_state(layout: RegisterLayout, assignment: Mapping[str, int]) -> StateVector:
    values = _full_values(layout, assignment)
    layout.check_size()
    amps = np.zeros(layout.total_dim, dtype=np.complex128)
    amps[mixed_radix_index(layout, values)] = 1.0
    return StateVector(layout, amps)


@dataclass(eq=False)
class LocalOperator:
    """A dense ``m x m`` matrix acting on an ordered tuple of registers.

    The matrix is indexed by the mixed-radix value of ``targets`` in the given
    order (first target most significant), regardless of layout order.
    """

    targets: tuple[str, ...]
    matrix: np.ndarray
    unitary: bool = True
    _checked: bool = field(default=False, init=False, repr=False)

    def __post_init__(self):
        self.targets = tuple(self.targets)
        self.matrix = np.asarray(self.matrix, dtype=np.complex128)
        if not self.targets:
            raise DimensionMismatch("operator needs at least one target")
        if len(set(self.targets)) != len(self.targets):
            raise DimensionMismatch(f"repeated target in {self.targets}")
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got shape {self.matrix.shape}")
        if self.unitary:
            dev = unitarity_defect(self.matrix)
            if not dev <= UNITARY_TOL:
                raise NonUnitaryMatrix(f"max |M^dag M - I| = {dev:.3g} exceeds {UNITARY_TOL}")
        self.matrix.flags.writeable = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def dagger(self) -> "LocalOperator":
        return LocalOperator(self.targets, self.matrix.conj().T.copy(), self.unitary)


def unitarity_defect(matrix: np.ndarray) -> float:
    m = np.asarray(matrix, dtype=np.complex128)
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


def _target_axes(layout: RegisterLayout, op: LocalOperator) -> list[int]:
    axes = [layout.position(t) for t in op.targets]
    m = int(np.prod([layout.dims[a] for a in axes]))
    if m != op.size:
        raise DimensionMismatch(
            f"operator is {op.size}x{op.size} but targets {op.targets} span {m} levels"
        )
    return axes


def apply_local(state: StateVector, op: LocalOperator) -> StateVector:
    layout = state.layout
    axes = _target_axes(layout, op)
    k = len(axes)
    # gather: target axes to the front, then one (m, rest) matrix product
    t = np.moveaxis(state.tensor(), axes, list(range(k)))
    moved_shape = t.shape
    out = (op.matrix @ t.reshape(op.size, -1)).reshape(moved_shape)
    out = np.moveaxis(out, list(range(k)), axes)
    return StateVector(layout, out.reshape(-1))


def dense_embed(op: LocalOperator, layout: RegisterLayout) -> np.ndarray:
    """Full ``D x D`` matrix of ``op`` on ``layout``, built entry by entry.

    Independent of :func:`apply_local`; used as a cross-check oracle.
    """
    D = layout.total_dim
    if D > ORACLE_MAX_DIM:
        raise SystemTooLargeForOracle(f"dense oracle limited to D <= {ORACLE_MAX_DIM}, got {D}")
    axes = _target_axes(layout, op)
    tdims = [layout.dims[a] for a in axes]
    full = np.zeros((D, D), dtype=np.complex128)
    for col in range(D):
        values = list(decode(layout, col))
        sub_in = 0
        for a, d in zip(axes, tdims):
            sub_in = sub_in * d + values[a]
        for sub_out in range(op.size):
            rem = sub_out
            for a, d in zip(reversed(axes), reversed(tdims)):
                values[a] = rem % d
                rem //= d
            full[mixed_radix_index(layout, values), col] += op.matrix[sub_out, sub_in]
    return full


@dataclass(frozen=True)
class MeasurementOutcome:
    registers: tuple[str, ...]
    values: tuple[int, ...]
    probability: float

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.registers, self.values))


def _check_register_list(layout: RegisterLayout, registers: Sequence[str]) -> list[int]:
    if not registers:
        raise DimensionMismatch("register list is empty")
    if len(set(registers)) != len(registers):
        raise DimensionMismatch(f"repeated register in {tuple(registers)}")
    return [layout.position(r) for r in registers]


def marginal_probabilities(state: StateVector, registers: Sequence[str]) -> np.ndarray:
    """Joint distribution of ``registers``, flattened in their listed order."""
    axes = _check_register_list(state.layout, registers)
    probs = np.abs(state.tensor()) ** 2
    rest = tuple(a for a in range(len(state.layout.dims)) if a not in axes)
    marg = probs.sum(axis=rest) if rest else probs
    # sum() keeps surviving axes in layout order; reorder to the listed order
    kept = sorted(axes)
    marg = np.transpose(marg, [kept.index(a) for a in axes])
    return marg.reshape(-1)


def choose_outcome(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF pick in ascending index order; zero-weight entries never win."""
    total = float(probs.sum())
    if total < DEGENERATE_TOL:
        raise DegenerateState(f"total probability {total:.3g} is degenerate")
    cdf = np.cumsum(probs)
    k = int(np.searchsorted(cdf, u * total, side="right"))
    if k >= len(probs):
        k = int(np.flatnonzero(probs)[-1])
    return k


def project(state: StateVector, registers: Sequence[str], values: Sequence[int]) -> StateVector:
    """Projection onto ``registers == values``, renormalized."""
    layout = state.layout
    axes = _check_register_list(layout, registers)
    index = [slice(None)] * len(layout.dims)
    for a, r, v in zip(axes, registers, values):
        if not 0 <= v < layout.dims[a]:
            raise ValueOutOfRange(f"value {v} out of range for {r!r}")
        index[a] = v
    src = state.tensor()
    out = np.zeros_like(src)
    out[tuple(index)] = src[tuple(index)]
    norm = np.linalg.norm(out)
    if norm**2 < DEGENERATE_TOL:
        raise DegenerateState(f"projection onto {dict(zip(registers, values))} has zero weight")
    return StateVector(layout, (out / norm).reshape(-1))


def measure(
    state: StateVector, registers: Sequence[str], u: float
) -> tuple[MeasurementOutcome, StateVector]:
    registers = tuple(registers)
    probs = marginal_probabilities(state, registers)
    k = choose_outcome(probs, u)
    dims = [state.layout.dim(r) for r in registers]
    values = tuple(int(v) for v in np.unravel_index(k, dims))
    p = min(1.0, max(0.0, float(probs[k] / probs.sum())))
    return MeasurementOutcome(registers, values, p), project(state, registers, values)


def marginal_probability(state: StateVector, assignment: Mapping[str, int]) -> float:
    """Probability that every register in ``assignment`` reads its value."""
    if not assignment:
        return 1.0
    regs = list(assignment)
    probs = marginal_probabilities(state, regs)
    dims = [state.layout.dim(r) for r in regs]
    for r, d in zip(regs, dims):
        if not 0 <= assignment[r] < d:
            raise ValueOutOfRange(f"value {assignment[r]} out of range for {r!r}")
    return float(probs[np.ravel_multi_index([assignment[r] for r in regs], dims)])


def fidelity(a: StateVector, b: StateVector) -> float:
    if a.layout != b.layout:
        raise LayoutMismatch("states live on different layouts")
    return float(abs(np.vdot(a.amps, b.amps)) ** 2)


def reduced_purity(state: StateVector, part: Iterable[str]) -> float:
    """Tr(rho_part^2) for the reduced state on ``part``."""
    layout = state.layout
    part = list(part)
    if not part or len(set(part)) != len(part):
        raise InvalidPartition("part must be a nonempty list of distinct registers")
    axes = [layout.position(p) for p in part]
    if len(axes) == len(layout.dims):
        raise InvalidPartition("part must be a proper subset of the registers")
    rest = [a for a in range(len(layout.dims)) if a not in axes]
    d_part = int(np.prod([layout.dims[a] for a in axes]))
    m = np.transpose(state.tensor(), axes + rest).reshape(d_part, -1)
    rho = m @ m.conj().T
    purity = float(np.vdot(rho, rho).real)
    return min(1.0, max(0.0, purity))


def norm_drift(state: StateVector) -> float:
    return abs(state.norm_sq() - 1.0)
