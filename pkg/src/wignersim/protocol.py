"""Protocol IR: step vocabulary, validation, reversal and built-in experiments."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import ClassVar, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    LayoutError,
    NonUnitaryMatrix,
    NotInvertible,
    SystemTooLarge,
    UnknownBuiltin,
    ValidationError,
)
from .statevec import LocalOperator, RegisterLayout, max_total_dim

MAX_UNITARY_SIZE = 16


# -- steps -------------------------------------------------------------------


@dataclass(frozen=True)
class Superpose:
    """Rotation in the span of levels 0 and 1 of ``target``."""

    kind: ClassVar[str] = "superpose"
    target: str
    theta: float
    phi: float = 0.0

    @property
    def registers(self) -> tuple[str, ...]:
        return (self.target,)


@dataclass(frozen=True)
class Couple:
    """If ``control`` reads 1, add ``shift`` to ``target`` modulo its dim."""

    kind: ClassVar[str] = "couple"
    control: str
    target: str
    shift: int = 1

    @property
    def registers(self) -> tuple[str, ...]:
        return (self.control, self.target)


@dataclass(frozen=True)
class CopyInto:
    """Permute ``dst`` levels by ``perms[v]`` when ``src`` reads ``v``.

    ``perms[v][j]`` is the level that ``j`` is sent to.
    """

    kind: ClassVar[str] = "copy_into"
    src: str
    dst: str
    perms: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "perms", tuple(tuple(int(x) for x in p) for p in self.perms))

    @property
    def registers(self) -> tuple[str, ...]:
        return (self.src, self.dst)


@dataclass(frozen=True)
class RecordDefinite:
    kind: ClassVar[str] = "record_definite"
    dst: str

    @property
    def registers(self) -> tuple[str, ...]:
        return (self.dst,)


@dataclass(frozen=True)
class RecordWhich:
    kind: ClassVar[str] = "record_which"
    src: str
    dst: str

    @property
    def registers(self) -> tuple[str, ...]:
        return (self.src, self.dst)


@dataclass(frozen=True)
class Unitary:
    kind: ClassVar[str] = "unitary"
    targets: tuple[str, ...]
    matrix: tuple[tuple[complex, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        rows = tuple(tuple(complex(x) for x in row) for row in self.matrix)
        object.__setattr__(self, "matrix", rows)

    @property
    def registers(self) -> tuple[str, ...]:
        return self.targets


@dataclass(frozen=True)
class CollapseSite:
    kind: ClassVar[str] = "collapse_site"
    registers: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "registers", tuple(self.registers))


@dataclass(frozen=True)
class CheckFactorized:
    kind: ClassVar[str] = "check_factorized"
    register: str
    tol: float

    @property
    def registers(self) -> tuple[str, ...]:
        return (self.register,)


@dataclass(frozen=True)
class Reverse:
    """Undo steps ``start..stop`` (1-based, inclusive)."""

    kind: ClassVar[str] = "reverse"
    start: int
    stop: int

    registers: ClassVar[tuple[str, ...]] = ()


@dataclass(frozen=True)
class Measure:
    """Final readout; ``registers=None`` reads every register."""

    kind: ClassVar[str] = "measure"
    registers: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.registers is not None:
            object.__setattr__(self, "registers", tuple(self.registers))


@dataclass(frozen=True)
class Expect:
    kind: ClassVar[str] = "expect"
    assignment: tuple[tuple[str, int], ...]
    prob: float
    tol: float

    def __post_init__(self):
        items = self.assignment.items() if isinstance(self.assignment, dict) else self.assignment
        object.__setattr__(self, "assignment", tuple((str(k), int(v)) for k, v in items))

    @property
    def registers(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.assignment)


Step = Union[
    Superpose, Couple, CopyInto, RecordDefinite, RecordWhich, Unitary,
    CollapseSite, CheckFactorized, Reverse, Measure, Expect,
]

MATRIX_STEPS = (Superpose, Couple, CopyInto, RecordDefinite, RecordWhich, Unitary)
MARKER_STEPS = (CollapseSite, CheckFactorized)


@dataclass(frozen=True)
class Protocol:
    name: str
    layout: RegisterLayout
    init: tuple[tuple[str, int], ...]
    steps: tuple[Step, ...]
    # source locations from the parser, one per step; not part of equality
    spans: tuple = field(default=(), compare=False, repr=False)
    header_spans: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        items = self.init.items() if isinstance(self.init, dict) else self.init
        object.__setattr__(self, "init", tuple((str(k), int(v)) for k, v in items))
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def init_assignment(self) -> dict[str, int]:
        return dict(self.init)

    def span_of(self, step: int | None):
        if step is None or not 1 <= step <= len(self.spans):
            return None
        return self.spans[step - 1]


# -- lowering ------------------------------------------------------------------


def rotation_matrix(theta: float, phi: float, dim: int = 2) -> np.ndarray:
    m = np.eye(dim, dtype=np.complex128)
    c, s = math.cos(theta), math.sin(theta)
    m[0, 0] = c
    m[1, 0] = np.exp(1j * phi) * s
    m[0, 1] = -np.exp(-1j * phi) * s
    m[1, 1] = c
    return m


def _permutation_matrix(images: Sequence[int]) -> np.ndarray:
    """Column j has its 1 in row images[j]."""
    n = len(images)
    m = np.zeros((n, n), dtype=np.complex128)
    m[list(images), list(range(n))] = 1.0
    return m


def _controlled_permutations(perms: Sequence[Sequence[int]]) -> np.ndarray:
    """Block-diagonal permutation acting on (control, target)."""
    d_t = len(perms[0])
    images = [s * d_t + perms[s][j] for s in range(len(perms)) for j in range(d_t)]
    return _permutation_matrix(images)


def _swap(dim: int, a: int, b: int) -> tuple[int, ...]:
    p = list(range(dim))
    p[a], p[b] = p[b], p[a]
    return tuple(p)


def lower(step: Step, layout: RegisterLayout) -> LocalOperator:
    """The local operator implementing a matrix-bearing step."""
    if isinstance(step, Superpose):
        return LocalOperator((step.target,), rotation_matrix(step.theta, step.phi, layout.dim(step.target)))
    if isinstance(step, Couple):
        dc, dt = layout.dim(step.control), layout.dim(step.target)
        identity = tuple(range(dt))
        shifted = tuple((j + step.shift) % dt for j in range(dt))
        perms = [shifted if v == 1 else identity for v in range(dc)]
        return LocalOperator((step.control, step.target), _controlled_permutations(perms))
    if isinstance(step, CopyInto):
        return LocalOperator((step.src, step.dst), _controlled_permutations(step.perms))
    if isinstance(step, RecordDefinite):
        return LocalOperator((step.dst,), _permutation_matrix(_swap(layout.dim(step.dst), 0, 1)))
    if isinstance(step, RecordWhich):
        return LocalOperator((step.src, step.dst), _controlled_permutations(_record_which_perms(layout.dim(step.dst))))
    if isinstance(step, Unitary):
        return LocalOperator(step.targets, np.array(step.matrix, dtype=np.complex128))
    raise TypeError(f"{step.kind} has no matrix")


def _record_which_perms(d_dst: int) -> tuple[tuple[int, ...], ...]:
    return (_swap(d_dst, 0, 2), _swap(d_dst, 0, 3))


# -- inversion ---------------------------------------------------------------------


def _inverse_perm(p: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(p)
    for j, image in enumerate(p):
        inv[image] = j
    return tuple(inv)


def invert_step(step: Step, layout: RegisterLayout | None = None) -> list[Step]:
    """Steps undoing ``step``; markers invert to nothing.

    ``layout`` lets a conditional increment on a 2-level target come back as
    itself rather than as an increment by ``-1``.
    """
    if isinstance(step, Superpose):
        return [Superpose(step.target, -step.theta, step.phi)]
    if isinstance(step, Couple):
        if layout is not None:
            dt = layout.dim(step.target)
            return [Couple(step.control, step.target, (-step.shift) % dt)]
        return [Couple(step.control, step.target, -step.shift)]
    if isinstance(step, CopyInto):
        return [CopyInto(step.src, step.dst, tuple(_inverse_perm(p) for p in step.perms))]
    if isinstance(step, (RecordDefinite, RecordWhich)):
        return [step]
    if isinstance(step, Unitary):
        m = np.array(step.matrix, dtype=np.complex128).conj().T
        return [Unitary(step.targets, m)]
    if isinstance(step, MARKER_STEPS):
        return []
    raise NotInvertible(f"{step.kind} steps cannot be inverted")


def compile_reverse(
    protocol: Protocol, start: int, stop: int, *, keep_collapse_sites: bool = False
) -> list[Step]:
    """Inverse steps for ``start..stop`` in reverse order.

    With ``keep_collapse_sites`` the collapse markers stay in place (mirrored);
    otherwise every marker is dropped.
    """
    out: list[Step] = []
    for index in range(stop, start - 1, -1):
        step = protocol.steps[index - 1]
        if keep_collapse_sites and isinstance(step, CollapseSite):
            out.append(step)
        else:
            out.extend(invert_step(step, protocol.layout))
    return out


# -- validation -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Instruction:
    """One executable unit; ``step`` is the 1-based index of the source step.

    Instructions expanded from a ``reverse`` carry that reverse's index and
    ``origin`` set to the index of the step they undo.
    """

    step: int
    op: LocalOperator | None
    marker: CollapseSite | CheckFactorized | None = None
    origin: int | None = None


@dataclass(frozen=True, eq=False)
class ValidatedProtocol:
    protocol: Protocol
    forward: tuple[Instruction, ...]
    # same as forward but with collapse markers kept inside reversed ranges
    forward_recollapse: tuple[Instruction, ...]
    measure: Measure | None
    measure_registers: tuple[str, ...]
    expects: tuple[tuple[int, Expect], ...]
    return_registers: tuple[str, ...]

    @property
    def layout(self) -> RegisterLayout:
        return self.protocol.layout

    @property
    def name(self) -> str:
        return self.protocol.name

    def instructions(self, recollapse: bool = False) -> tuple[Instruction, ...]:
        return self.forward_recollapse if recollapse else self.forward

    def expanded(self) -> Protocol:
        """The protocol with every reverse range replaced by explicit steps."""
        steps: list[Step] = []
        spans = []
        for index, step in enumerate(self.protocol.steps, start=1):
            if isinstance(step, Reverse):
                new = compile_reverse(self.protocol, step.start, step.stop)
            else:
                new = [step]
            steps.extend(new)
            spans.extend([self.protocol.span_of(index)] * len(new))
        return Protocol(self.protocol.name, self.layout, self.protocol.init, tuple(steps), tuple(spans))


def _fail(code: str, message: str, step: int | None, protocol: Protocol, where: str = "init"):
    span = protocol.span_of(step) if step is not None else protocol.header_spans.get(where)
    raise ValidationError(code, message, step, span)


def _check_registers(protocol: Protocol, index: int, names: Sequence[str]) -> None:
    layout = protocol.layout
    for name in names:
        if name not in layout.names:
            _fail("UnknownRegister", f"unknown register {name!r}", index, protocol)
    if len(set(names)) != len(names):
        _fail("DuplicateRegister", f"register repeated in {tuple(names)}", index, protocol)


def _is_permutation(p: Sequence[int], n: int) -> bool:
    return len(p) == n and sorted(p) == list(range(n))


def _check_step(protocol: Protocol, index: int, step: Step) -> None:
    layout = protocol.layout
    fail = lambda code, msg: _fail(code, msg, index, protocol)  # noqa: E731

    if isinstance(step, Measure):
        if step.registers is not None:
            if not step.registers:
                fail("EmptyRegisterList", "measure needs registers or 'all'")
            _check_registers(protocol, index, step.registers)
        return
    if isinstance(step, Reverse):
        return
    _check_registers(protocol, index, step.registers)

    if isinstance(step, Superpose):
        if not (math.isfinite(step.theta) and math.isfinite(step.phi)):
            fail("NonFiniteParameter", "theta and phi must be finite")
    elif isinstance(step, CopyInto):
        ds, dd = layout.dim(step.src), layout.dim(step.dst)
        if len(step.perms) != ds:
            fail("DimensionMismatch", f"copy-into needs {ds} permutations, got {len(step.perms)}")
        for v, p in enumerate(step.perms):
            if not _is_permutation(p, dd):
                fail("NonPermutation", f"map for {step.src}={v} is not a permutation of 0..{dd - 1}")
    elif isinstance(step, RecordWhich):
        if layout.dim(step.src) != 2:
            fail("DimensionMismatch", f"record-which source {step.src!r} must have 2 levels")
        if layout.dim(step.dst) < 4:
            fail("DimensionMismatch", f"record-which destination {step.dst!r} needs at least 4 levels")
    elif isinstance(step, Unitary):
        m = len(step.matrix)
        if m > MAX_UNITARY_SIZE:
            fail("MatrixTooLarge", f"unitary matrices are limited to {MAX_UNITARY_SIZE}x{MAX_UNITARY_SIZE}")
        if any(len(row) != m for row in step.matrix):
            fail("DimensionMismatch", "unitary matrix must be square")
        span = int(np.prod([layout.dim(t) for t in step.targets]))
        if span != m:
            fail("DimensionMismatch", f"matrix is {m}x{m} but targets span {span} levels")
    elif isinstance(step, CollapseSite):
        if not step.registers:
            fail("EmptyRegisterList", "collapse-site needs at least one register")
    elif isinstance(step, CheckFactorized):
        if len(layout.names) < 2:
            fail("InvalidPartition", "check-factorized needs at least two registers")
        if not (math.isfinite(step.tol) and step.tol >= 0):
            fail("InvalidTolerance", "tol must be a finite non-negative number")
    elif isinstance(step, Expect):
        for name, value in step.assignment:
            if not 0 <= value < layout.dim(name):
                fail("ValueOutOfRange", f"{name}={value} outside 0..{layout.dim(name) - 1}")
        if not 0.0 <= step.prob <= 1.0:
            fail("InvalidProbability", f"prob={step.prob} outside [0, 1]")
        if not (math.isfinite(step.tol) and step.tol >= 0):
            fail("InvalidTolerance", "tol must be a finite non-negative number")

    if isinstance(step, MATRIX_STEPS):
        try:
            lower(step, layout)
        except NonUnitaryMatrix as exc:
            fail("NonUnitaryMatrix", str(exc))
        except DimensionMismatch as exc:
            fail("DimensionMismatch", str(exc))


def validate(protocol: Protocol) -> ValidatedProtocol:
    """Check every structural rule and compile the protocol for execution.

    The first violation is raised as a :class:`ValidationError` carrying the
    offending step index.
    """
    layout = protocol.layout
    try:
        layout.check_size(max_total_dim())
    except SystemTooLarge as exc:
        _fail("SystemTooLarge", str(exc), None, protocol, where="registers")

    init = dict(protocol.init)
    if len(init) != len(protocol.init):
        _fail("DuplicateRegister", "register assigned twice in init", None, protocol)
    for name, value in protocol.init:
        if name not in layout.names:
            _fail("UnknownRegister", f"init names unknown register {name!r}", None, protocol)
        if not 0 <= value < layout.dim(name):
            _fail("ValueOutOfRange", f"init {name}={value} outside 0..{layout.dim(name) - 1}", None, protocol)
    for name in layout.names:
        if name not in init:
            _fail("MissingRegister", f"init does not assign register {name!r}", None, protocol)

    steps = protocol.steps
    measure: Measure | None = None
    trailing_started = False
    for index, step in enumerate(steps, start=1):
        if isinstance(step, Measure):
            if measure is not None:
                _fail("DuplicateMeasure", "only one measure step is allowed", index, protocol)
            if trailing_started:
                _fail("MeasureAfterExpect", "measure must come before every expect", index, protocol)
            measure = step
            trailing_started = True
        elif isinstance(step, Expect):
            trailing_started = True
        elif trailing_started:
            _fail("NotTrailing", f"{step.kind} after the final measure/expect block", index, protocol)

        if isinstance(step, Reverse):
            if step.start < 1:
                _fail("InvalidRange", f"range {step.start}..{step.stop} starts before step 1", index, protocol)
            if step.stop >= index:
                _fail(
                    "SelfReferentialReverse",
                    f"range {step.start}..{step.stop} must end before step {index}",
                    index, protocol,
                )
            if step.stop < step.start - 1:
                _fail("InvalidRange", f"range {step.start}..{step.stop} is reversed", index, protocol)
            for inner in range(step.start, step.stop + 1):
                if isinstance(steps[inner - 1], (Reverse, Measure, Expect)):
                    _fail(
                        "NotInvertible",
                        f"range includes step {inner} ({steps[inner - 1].kind}), which has no inverse",
                        index, protocol,
                    )
        _check_step(protocol, index, step)

    forward, forward_rc = [], []
    reversed_regs: set[str] = set()
    has_reverse = False
    for index, step in enumerate(steps, start=1):
        if isinstance(step, MATRIX_STEPS):
            ins = Instruction(index, lower(step, layout))
            forward.append(ins)
            forward_rc.append(ins)
        elif isinstance(step, MARKER_STEPS):
            ins = Instruction(index, None, step)
            forward.append(ins)
            forward_rc.append(ins)
        elif isinstance(step, Reverse):
            has_reverse = True
            for origin in range(step.stop, step.start - 1, -1):
                src = steps[origin - 1]
                if isinstance(src, MATRIX_STEPS):
                    reversed_regs.update(src.registers)
                    for inv in invert_step(src, layout):
                        ins = Instruction(index, lower(inv, layout), origin=origin)
                        forward.append(ins)
                        forward_rc.append(ins)
                elif isinstance(src, CollapseSite):
                    forward_rc.append(Instruction(index, None, src, origin=origin))

    measure_regs = () if measure is None else (measure.registers or layout.names)
    expects = tuple((i, s) for i, s in enumerate(steps, start=1) if isinstance(s, Expect))
    if has_reverse:
        return_regs = tuple(n for n in layout.names if n in reversed_regs)
    else:
        return_regs = layout.names
    return ValidatedProtocol(
        protocol=protocol,
        forward=tuple(forward),
        forward_recollapse=tuple(forward_rc),
        measure=measure,
        measure_registers=tuple(measure_regs),
        expects=expects,
        return_registers=return_regs,
    )


# -- built-in experiments ---------------------------------------------------------

QUARTER_TURN = math.pi / 4

# paper register levels
PAPER_BLANK, PAPER_DEFINITE, PAPER_ALIVE, PAPER_DEAD = range(4)

_LAB = (("atom", 2), ("poison", 2), ("cat", 2), ("bob", 2), ("paper", 4))
def decay_angle(decay_prob: float) -> float:
    """Rotation angle that leaves the atom decayed with the given probability."""
    if not 0.0 <= decay_prob <= 1.0:
        raise ValueError(f"decay probability must lie in [0, 1], got {decay_prob!r}")
    if decay_prob == 0.5:
        return QUARTER_TURN  # keep the canonical text bit-stable
    return math.asin(math.sqrt(decay_prob))


def _lab_forward(decay_prob: float) -> tuple[Step, ...]:
    return (Superpose("atom", decay_angle(decay_prob), 0.0),) + _LAB_FORWARD[1:]


_LAB_FORWARD = (
    Superpose("atom", QUARTER_TURN, 0.0),
    Couple("atom", "poison"),
    Couple("poison", "cat"),
    Couple("cat", "bob"),
    CollapseSite(("bob",)),
)


def deutsch_wigner(decay_prob: float = 0.5) -> Protocol:
    layout = RegisterLayout(_LAB)
    init = tuple((n, 0) for n in layout.names)
    steps = _lab_forward(decay_prob) + (
        RecordDefinite("paper"),
        CheckFactorized("paper", 1e-10),
        Reverse(1, 4),
        Measure(None),
        Expect((("atom", 0), ("poison", 0), ("cat", 0), ("bob", 0), ("paper", PAPER_DEFINITE)), 1.0, 1e-9),
    )
    return Protocol("deutsch-wigner", layout, init, steps)


def which_outcome(decay_prob: float = 0.5) -> Protocol:
    layout = RegisterLayout(_LAB)
    init = tuple((n, 0) for n in layout.names)
    # each branch returns with its own weight: (1-p)^2 + p^2
    back = (1 - decay_prob) ** 2 + decay_prob**2
    steps = _lab_forward(decay_prob) + (
        RecordWhich("bob", "paper"),
        Reverse(1, 4),
        Measure(None),
        Expect((("atom", 0), ("poison", 0), ("cat", 0), ("bob", 0)), back, 1e-9),
    )
    return Protocol("which-outcome", layout, init, steps)


def photon_mirror() -> Protocol:
    layout = RegisterLayout((("photon", 2), ("mirror", 2)))
    steps = (
        Superpose("photon", QUARTER_TURN, 0.0),
        Couple("photon", "mirror"),
        CollapseSite(("mirror",)),
        Reverse(1, 2),
        Measure(None),
        Expect((("photon", 0), ("mirror", 0)), 1.0, 1e-9),
    )
    return Protocol("photon-mirror", layout, (("photon", 0), ("mirror", 0)), steps)


def chain(n: int) -> Protocol:
    if n < 1:
        raise UnknownBuiltin(f"chain length must be at least 1, got {n}")
    names = [f"q{k}" for k in range(n)]
    try:
        layout = RegisterLayout(tuple((q, 2) for q in names))
    except LayoutError as exc:
        raise UnknownBuiltin(str(exc)) from None
    steps: list[Step] = [Superpose("q0", QUARTER_TURN, 0.0)]
    steps += [Couple(a, b) for a, b in zip(names, names[1:])]
    steps += [Reverse(1, len(steps)), Measure(None), Expect(tuple((q, 0) for q in names), 1.0, 1e-9)]
    return Protocol(f"chain-{n}", layout, tuple((q, 0) for q in names), tuple(steps))


BUILTIN_NAMES = ("deutsch-wigner", "which-outcome", "photon-mirror", "chain-N")
_CHAIN_RE = re.compile(r"chain-([0-9]+)\Z")


def builtin(name: str) -> Protocol:
    fixed = {"deutsch-wigner": deutsch_wigner, "which-outcome": which_outcome, "photon-mirror": photon_mirror}
    if name in fixed:
        return fixed[name]()
    m = _CHAIN_RE.match(name)
    if m:
        return chain(int(m.group(1)))
    raise UnknownBuiltin(f"unknown builtin {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
