"""The ``.wproto`` text format: parser and canonical serializer.

A file looks like::

    protocol photon-mirror
    registers
      photon 2
      mirror 2
    init photon=0 mirror=0
    step superpose photon theta=0.7853981633974483 phi=0.0
    step couple photon mirror
    collapse-site mirror
    reverse 1..2
    measure all
    expect photon=0 mirror=0 prob=1.0 tol=1e-09

``#`` starts a comment. Register lines are indented (two spaces in canonical
form); every other statement starts in column 1. Floats serialize as the
shortest decimal that round-trips (at most 17 significant digits).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator

from .errors import ParseError, SourceSpan
from .protocol import (
    MAX_UNITARY_SIZE,
    CheckFactorized,
    CollapseSite,
    CopyInto,
    Couple,
    Expect,
    Measure,
    Protocol,
    RecordDefinite,
    RecordWhich,
    Reverse,
    Step,
    Superpose,
    Unitary,
)
from .statevec import MAX_DIM, MIN_DIM, RegisterLayout

RESERVED = frozenset({"all", "prob", "tol"})
INT64_MAX = 2**63 - 1

_NUM = r"\d+(?:\.\d+)?(?:[eE][+-]?\d+)?"
_TOKEN_RE = re.compile(
    rf"""
    (?P<WS>[ \t]+)
  | (?P<COMPLEX>[+-]?{_NUM}[+-]{_NUM}i)(?![A-Za-z0-9_])
  | (?P<NUMBER>[+-]?{_NUM})(?![A-Za-z0-9_])
  | (?P<DOTDOT>\.\.)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_-]*)
  | (?P<EQ>=)
  | (?P<LBRACK>\[)
  | (?P<RBRACK>\])
  | (?P<COMMA>,)
  | (?P<PIPE>\|)
    """,
    re.VERBOSE,
)
_COMPLEX_PARTS = re.compile(rf"([+-]?{_NUM})([+-]{_NUM})i")
_INT_RE = re.compile(r"\d+\Z")
_SIGNED_INT_RE = re.compile(r"[+-]?\d+\Z")

_DESCRIBE = {
    "IDENT": "identifier", "NUMBER": "number", "COMPLEX": "complex number",
    "EQ": "'='", "DOTDOT": "'..'", "LBRACK": "'['", "RBRACK": "']'",
    "COMMA": "','", "PIPE": "'|'", "EOL": "end of line",
}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    span: SourceSpan

    def describe(self) -> str:
        if self.kind == "EOL":
            return "end of line"
        return f"{_DESCRIBE[self.kind]} {self.text!r}" if self.kind in ("IDENT", "NUMBER", "COMPLEX") else _DESCRIBE[self.kind]


@dataclass
class _Line:
    number: int
    indent: int
    tokens: list[Token]
    eol: Token


def _lines(text: str) -> Iterator[_Line]:
    offset = 0
    for number, raw in enumerate(text.split("\n"), start=1):
        line_offset = offset
        offset += len(raw.encode("utf-8")) + 1
        body = raw.rstrip("\r")
        hash_at = body.find("#")
        if hash_at >= 0:
            body = body[:hash_at]

        def span(col0: int) -> SourceSpan:
            return SourceSpan(number, col0 + 1, line_offset + len(body[:col0].encode("utf-8")))

        tokens = []
        pos = 0
        while pos < len(body):
            m = _TOKEN_RE.match(body, pos)
            if m is None:
                raise ParseError(f"unexpected character {body[pos]!r}", span(pos))
            if m.lastgroup != "WS":
                tokens.append(Token(m.lastgroup, m.group(), span(pos)))
            pos = m.end()
        if not tokens:
            continue
        indent = len(body) - len(body.lstrip(" \t"))
        yield _Line(number, indent, tokens, Token("EOL", "", span(len(body.rstrip(" \t")))))


class _Cursor:
    def __init__(self, line: _Line):
        self.line = line
        self.pos = 0

    def peek(self, ahead: int = 0) -> Token:
        i = self.pos + ahead
        return self.line.tokens[i] if i < len(self.line.tokens) else self.line.eol

    def at_end(self) -> bool:
        return self.pos >= len(self.line.tokens)

    def take(self, kind: str, what: str | None = None) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(f"expected {what or _DESCRIBE[kind]}, found {tok.describe()}", tok.span)
        self.pos += 1
        return tok

    def keyword(self, word: str) -> Token:
        tok = self.peek()
        if tok.kind != "IDENT" or tok.text != word:
            raise ParseError(f"expected '{word}', found {tok.describe()}", tok.span)
        self.pos += 1
        return tok

    def key(self, word: str) -> None:
        self.keyword(word)
        self.take("EQ", f"'=' after '{word}'")

    def end(self) -> None:
        if not self.at_end():
            tok = self.peek()
            raise ParseError(f"expected end of line, found {tok.describe()}", tok.span)

    def integer(self, what: str = "non-negative integer", signed: bool = False) -> int:
        tok = self.take("NUMBER", what)
        if not (_SIGNED_INT_RE if signed else _INT_RE).match(tok.text):
            raise ParseError(f"expected {what}, found {tok.describe()}", tok.span)
        value = int(tok.text)
        if abs(value) > INT64_MAX:
            raise ParseError(f"numeric overflow: {tok.text}", tok.span)
        return value

    def real(self) -> float:
        tok = self.take("NUMBER", "number")
        return _to_float(tok.text, tok)


def _to_float(text: str, tok: Token) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ParseError(f"numeric overflow: {text}", tok.span)
    return value


class _Parser:
    def __init__(self, text: str):
        self.lines = list(_lines(text))
        self.i = 0
        self.dims: dict[str, int] = {}
        self.steps: list[Step] = []
        self.spans: list[SourceSpan] = []
        self.header_spans: dict[str, SourceSpan] = {}
        self.eof = SourceSpan(text.count("\n") + 1, 1, len(text.encode("utf-8")))

    def next_line(self, what: str) -> _Line:
        if self.i >= len(self.lines):
            raise ParseError(f"unexpected end of file, expected {what}", self.eof)
        line = self.lines[self.i]
        self.i += 1
        return line

    def top_level(self, what: str) -> _Cursor:
        line = self.next_line(what)
        if line.indent:
            raise ParseError(f"unexpected indentation, expected {what}", line.tokens[0].span)
        return _Cursor(line)

    def register(self, cur: _Cursor) -> str:
        tok = cur.take("IDENT", "register name")
        if tok.text not in self.dims:
            raise ParseError(f"unknown register {tok.text!r}", tok.span)
        return tok.text

    def register_list(self, cur: _Cursor) -> tuple[str, ...]:
        names = [self.register(cur)]
        while cur.peek().kind == "IDENT":
            names.append(self.register(cur))
        return tuple(names)

    def parse(self) -> Protocol:
        cur = self.top_level("'protocol'")
        cur.keyword("protocol")
        name = cur.take("IDENT", "protocol name").text
        cur.end()

        cur = self.top_level("'registers'")
        self.header_spans["registers"] = cur.keyword("registers").span
        cur.end()
        registers = []
        while self.i < len(self.lines) and self.lines[self.i].indent:
            cur = _Cursor(self.next_line("register"))
            tok = cur.take("IDENT", "register name")
            if tok.text in RESERVED:
                raise ParseError(f"{tok.text!r} is a reserved word", tok.span)
            if tok.text in self.dims:
                raise ParseError(f"duplicate register {tok.text!r}", tok.span)
            dim_tok = cur.peek()
            dim = cur.integer("register dimension")
            if not MIN_DIM <= dim <= MAX_DIM:
                raise ParseError(f"dimension {dim} outside {MIN_DIM}..{MAX_DIM}", dim_tok.span)
            cur.end()
            self.dims[tok.text] = dim
            registers.append((tok.text, dim))
        if not registers:
            span = self.lines[self.i].tokens[0].span if self.i < len(self.lines) else self.eof
            raise ParseError("expected at least one indented register line", span)

        cur = self.top_level("'init'")
        self.header_spans["init"] = cur.keyword("init").span
        init = []
        seen = set()
        while True:
            tok = cur.peek()
            reg = self.register(cur)
            if reg in seen:
                raise ParseError(f"register {reg!r} assigned twice", tok.span)
            seen.add(reg)
            cur.take("EQ")
            init.append((reg, cur.integer()))
            if cur.at_end():
                break

        while self.i < len(self.lines):
            cur = self.top_level("a step")
            first = cur.peek()
            self.steps.append(self.statement(cur))
            self.spans.append(first.span)
            cur.end()

        return Protocol(
            name, RegisterLayout(tuple(registers)), tuple(init), tuple(self.steps),
            spans=tuple(self.spans), header_spans=self.header_spans,
        )

    def statement(self, cur: _Cursor) -> Step:
        tok = cur.take("IDENT", "a statement keyword")
        word = tok.text
        if word == "step":
            return self.step(cur)
        if word == "reverse":
            start = cur.integer("step number")
            cur.take("DOTDOT")
            return Reverse(start, cur.integer("step number"))
        if word == "collapse-site":
            return CollapseSite(self.register_list(cur))
        if word == "check-factorized":
            reg = self.register(cur)
            cur.key("tol")
            return CheckFactorized(reg, cur.real())
        if word == "measure":
            if cur.peek().kind == "IDENT" and cur.peek().text == "all":
                cur.pos += 1
                return Measure(None)
            return Measure(self.register_list(cur))
        if word == "expect":
            assignment = []
            while not (cur.peek().text == "prob" and cur.peek(1).kind == "EQ"):
                reg = self.register(cur)
                cur.take("EQ")
                assignment.append((reg, cur.integer()))
            cur.key("prob")
            prob = cur.real()
            cur.key("tol")
            return Expect(tuple(assignment), prob, cur.real())
        raise ParseError(
            f"unknown statement {word!r}; expected step, reverse, collapse-site, "
            "check-factorized, measure or expect",
            tok.span,
        )

    def step(self, cur: _Cursor) -> Step:
        tok = cur.take("IDENT", "a step kind")
        kind = tok.text
        if kind == "superpose":
            target = self.register(cur)
            cur.key("theta")
            theta = cur.real()
            cur.key("phi")
            return Superpose(target, theta, cur.real())
        if kind == "couple":
            control, target = self.register(cur), self.register(cur)
            shift = 1
            if not cur.at_end():
                cur.key("shift")
                shift = cur.integer("integer", signed=True)
            return Couple(control, target, shift)
        if kind == "copy-into":
            src, dst = self.register(cur), self.register(cur)
            cur.key("perms")
            perms = [self.int_list(cur)]
            while cur.peek().kind == "PIPE":
                cur.pos += 1
                perms.append(self.int_list(cur))
            return CopyInto(src, dst, tuple(perms))
        if kind == "record-definite":
            return RecordDefinite(self.register(cur))
        if kind == "record-which":
            return RecordWhich(self.register(cur), self.register(cur))
        if kind == "unitary":
            targets = self.register_list(cur)
            return Unitary(targets, self.matrix(cur))
        raise ParseError(
            f"unknown step kind {kind!r}; expected superpose, couple, copy-into, "
            "record-definite, record-which or unitary",
            tok.span,
        )

    def int_list(self, cur: _Cursor) -> tuple[int, ...]:
        values = [cur.integer()]
        while cur.peek().kind == "COMMA":
            cur.pos += 1
            values.append(cur.integer())
        return tuple(values)

    def matrix(self, cur: _Cursor) -> tuple[tuple[complex, ...], ...]:
        rows = []
        first = cur.peek()
        while True:
            open_tok = cur.take("LBRACK", "'[' starting a matrix row")
            row = [self.complex_entry(cur)]
            while cur.peek().kind == "COMMA":
                cur.pos += 1
                row.append(self.complex_entry(cur))
            cur.take("RBRACK", "',' or ']'")
            rows.append(row)
            if len(rows) > MAX_UNITARY_SIZE or len(row) > MAX_UNITARY_SIZE:
                raise ParseError(
                    f"matrix literal exceeds {MAX_UNITARY_SIZE}x{MAX_UNITARY_SIZE}", open_tok.span
                )
            if len(row) != len(rows[0]):
                raise ParseError(f"row has {len(row)} entries, expected {len(rows[0])}", open_tok.span)
            if cur.peek().kind != "LBRACK":
                break
        if len(rows) != len(rows[0]):
            raise ParseError(f"matrix is {len(rows)}x{len(rows[0])}, must be square", first.span)
        return tuple(tuple(r) for r in rows)

    def complex_entry(self, cur: _Cursor) -> complex:
        tok = cur.take("COMPLEX", "complex entry like 1.0+0.0i")
        re_text, im_text = _COMPLEX_PARTS.fullmatch(tok.text).groups()
        return complex(_to_float(re_text, tok), _to_float(im_text, tok))


def parse(source: str | bytes) -> Protocol:
    """Parse ``.wproto`` text.

    Raises :class:`ParseError` with the location of the first problem.
    Register references are resolved here; everything else is left to
    :func:`wignersim.protocol.validate`.
    """
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            good = bytes(source[: exc.start]).decode("utf-8")
            line = good.count("\n") + 1
            col = len(good) - (good.rfind("\n") + 1) + 1
            raise ParseError("invalid UTF-8", SourceSpan(line, col, exc.start)) from None
    return _Parser(source).parse()


# -- serializer --------------------------------------------------------------------


def format_float(x: float) -> str:
    return repr(float(x))


def format_complex(z: complex) -> str:
    sign = "-" if math.copysign(1.0, z.imag) < 0 else "+"
    return f"{format_float(z.real)}{sign}{format_float(abs(z.imag))}i"


def _step_line(step: Step) -> str:
    if isinstance(step, Superpose):
        return f"step superpose {step.target} theta={format_float(step.theta)} phi={format_float(step.phi)}"
    if isinstance(step, Couple):
        tail = "" if step.shift == 1 else f" shift={step.shift}"
        return f"step couple {step.control} {step.target}{tail}"
    if isinstance(step, CopyInto):
        perms = "|".join(",".join(str(v) for v in p) for p in step.perms)
        return f"step copy-into {step.src} {step.dst} perms={perms}"
    if isinstance(step, RecordDefinite):
        return f"step record-definite {step.dst}"
    if isinstance(step, RecordWhich):
        return f"step record-which {step.src} {step.dst}"
    if isinstance(step, Unitary):
        rows = " ".join("[" + ", ".join(format_complex(z) for z in row) + "]" for row in step.matrix)
        return f"step unitary {' '.join(step.targets)} {rows}"
    if isinstance(step, CollapseSite):
        return f"collapse-site {' '.join(step.registers)}"
    if isinstance(step, CheckFactorized):
        return f"check-factorized {step.register} tol={format_float(step.tol)}"
    if isinstance(step, Reverse):
        return f"reverse {step.start}..{step.stop}"
    if isinstance(step, Measure):
        return "measure all" if step.registers is None else f"measure {' '.join(step.registers)}"
    if isinstance(step, Expect):
        assign = " ".join(f"{k}={v}" for k, v in step.assignment)
        return f"expect {assign} prob={format_float(step.prob)} tol={format_float(step.tol)}"
    raise TypeError(f"cannot serialize {step!r}")


def serialize(protocol: Protocol) -> str:
    lines = [f"protocol {protocol.name}", "registers"]
    lines += [f"  {name} {dim}" for name, dim in protocol.layout.registers]
    lines.append("init " + " ".join(f"{k}={v}" for k, v in protocol.init))
    lines += [_step_line(s) for s in protocol.steps]
    return "\n".join(lines) + "\n"
