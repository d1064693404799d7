"""Text DSL for problem files.

A model file is a list of statements terminated by semicolons:

    var x1;                    declare a scalar variable
    var x[9];                  declare a vector x(1)..x(9)
    var u[2,3] in m2;          matrix variables attached to measure m2
    measure m2;                subsequent vars attach to measure m2
    min 4*x1^2 + x1*x2;        objective (min or max)
    x(1) + x(2) <= 4;          constraint
    mom(x^2) == 1 + mass(m2);  moment constraint
    order 3;                   default relaxation order
    assign x = [1 2; 3 4];     discrete support (rows = variables)

Expressions use + - * ^ and parentheses; / divides by a constant, so
rational literals like 1/3 work.  '#' starts a line comment.  A
constraint is a moment constraint exactly when either side mentions
mom( or mass(, otherwise it is a support constraint.

Declarations (var, measure) take effect before the remaining
statements are evaluated, so constraints always see the final measure
layout; this matches the equivalent API session where measures are set
up before constraints are stated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .model import (
    GPMProblem,
    ModelContext,
    MomentConstraint,
    SupportConstraint,
    mass,
    maximize,
    minimize,
    mom,
)
from .polynomials import Polynomial


class ParseError(ValueError):
    """Syntax or semantic error with source location."""

    def __init__(self, message, filename="<model>", line=0, col=0):
        self.filename = filename
        self.line = line
        self.col = col
        super().__init__(f"{filename}:{line}:{col}: {message}")


# --- AST ---------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Name:
    base: str
    indices: tuple


@dataclass(frozen=True)
class Call:
    fn: str
    arg: object


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class VarDecl:
    name: str
    shape: tuple
    measure: object


@dataclass(frozen=True)
class MeasDecl:
    name: str


@dataclass(frozen=True)
class ObjectiveStmt:
    direction: str
    expr: object


@dataclass(frozen=True)
class ConstraintStmt:
    lhs: object
    rel: str
    rhs: object


@dataclass(frozen=True)
class OrderDecl:
    order: int


@dataclass(frozen=True)
class AssignStmt:
    name: str
    matrix: tuple


@dataclass(frozen=True)
class ModelSource:
    """Parsed model file: raw text, origin and statement list."""

    text: str
    filename: str
    statements: tuple


# --- lexer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|<=|>=|[-+*/^()\[\];,=])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"var", "measure", "min", "max", "order", "assign", "in", "mom", "mass"}


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text, filename):
    tokens = []
    line = 1
    line_start = 0
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            col = pos - line_start + 1
            raise ParseError(f"unexpected character {text[pos]!r}", filename, line, col)
        kind = match.lastgroup
        value = match.group()
        col = pos - line_start + 1
        if kind == "ws" or kind == "comment":
            newlines = value.count("\n")
            if newlines:
                line += newlines
                line_start = pos + value.rfind("\n") + 1
        else:
            tokens.append(_Token(kind, value, line, col))
        pos = match.end()
    tokens.append(_Token("eof", "", line, len(text) - line_start + 1))
    return tokens


# --- parser ------------------------------------------------------------


class _Parser:
    def __init__(self, text, filename):
        self.filename = filename
        self.tokens = _tokenize(text, filename)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ParseError(message, self.filename, tok.line, tok.col)

    def expect(self, kind, text=None):
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            raise ParseError(
                f"expected {want!r}, found {tok.text!r}",
                self.filename, tok.line, tok.col,
            )
        return self.advance()

    def accept(self, kind, text=None):
        tok = self.peek()
        if tok.kind == kind and (text is None or tok.text == text):
            return self.advance()
        return None

    def parse_model(self):
        statements = []
        while self.peek().kind != "eof":
            statements.append(self.parse_statement())
        return tuple(statements)

    def parse_statement(self):
        tok = self.peek()
        if tok.kind == "ident" and tok.text == "var":
            return self.parse_vardecl()
        if tok.kind == "ident" and tok.text == "measure":
            self.advance()
            name = self.expect("ident").text
            self.expect("op", ";")
            return MeasDecl(name)
        if tok.kind == "ident" and tok.text in ("min", "max"):
            self.advance()
            expr = self.parse_expr()
            self.expect("op", ";")
            return ObjectiveStmt(tok.text, expr)
        if tok.kind == "ident" and tok.text == "order":
            self.advance()
            num = self.expect("number")
            if not num.text.isdigit():
                self.fail("relaxation order must be an integer", num)
            self.expect("op", ";")
            return OrderDecl(int(num.text))
        if tok.kind == "ident" and tok.text == "assign":
            self.advance()
            name = self.expect("ident").text
            self.expect("op", "=")
            matrix = self.parse_pointlist()
            self.expect("op", ";")
            return AssignStmt(name, matrix)
        lhs = self.parse_expr()
        rel = self.peek()
        if rel.kind == "op" and rel.text in ("==", "<=", ">="):
            self.advance()
            rhs = self.parse_expr()
            self.expect("op", ";")
            return ConstraintStmt(lhs, rel.text, rhs)
        self.fail("expected a relation '==', '<=' or '>='")

    def parse_vardecl(self):
        self.expect("ident", "var")
        name_tok = self.expect("ident")
        if name_tok.text in _KEYWORDS:
            self.fail(f"{name_tok.text!r} is a reserved word", name_tok)
        shape = ()
        if self.accept("op", "["):
            rows = int(self.expect("number").text)
            if self.accept("op", ","):
                cols = int(self.expect("number").text)
                shape = (rows, cols)
            else:
                shape = (rows,)
            self.expect("op", "]")
        measure = None
        if self.accept("ident", "in"):
            measure = self.expect("ident").text
        self.expect("op", ";")
        return VarDecl(name_tok.text, shape, measure)

    def parse_pointlist(self):
        self.expect("op", "[")
        rows = []
        row = []
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text == "]":
                self.advance()
                break
            if tok.kind == "op" and tok.text == ";":
                self.advance()
                rows.append(tuple(row))
                row = []
                continue
            if tok.kind == "op" and tok.text == ",":
                self.advance()
                continue
            row.append(self.parse_number_entry())
        rows.append(tuple(row))
        if any(len(r) != len(rows[0]) for r in rows):
            self.fail("rows of a point list must have equal length")
        return tuple(rows)

    def parse_number_entry(self):
        sign = 1.0
        while True:
            if self.accept("op", "-"):
                sign = -sign
                continue
            if self.accept("op", "+"):
                continue
            break
        num = self.expect("number")
        value = float(num.text)
        if self.accept("op", "/"):
            den = float(self.expect("number").text)
            if den == 0.0:
                self.fail("division by zero", num)
            value /= den
        return sign * value

    def parse_expr(self):
        node = self.parse_term()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in ("+", "-"):
                self.advance()
                rhs = self.parse_term()
                node = BinOp(tok.text, node, rhs)
            else:
                return node

    def parse_term(self):
        node = self.parse_factor()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in ("*", "/"):
                self.advance()
                rhs = self.parse_factor()
                node = BinOp(tok.text, node, rhs)
            else:
                return node

    def parse_factor(self):
        if self.accept("op", "-"):
            return Neg(self.parse_factor())
        if self.accept("op", "+"):
            return self.parse_factor()
        return self.parse_power()

    def parse_power(self):
        base = self.parse_atom()
        if self.accept("op", "^"):
            num = self.expect("number")
            if not num.text.isdigit():
                self.fail("exponent must be a nonnegative integer", num)
            return Pow(base, int(num.text))
        return base

    def parse_atom(self):
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.parse_expr()
            self.expect("op", ")")
            return node
        if tok.kind == "ident":
            self.advance()
            if tok.text in ("mom", "mass"):
                self.expect("op", "(")
                arg = self.parse_expr()
                self.expect("op", ")")
                return Call(tok.text, arg)
            if tok.text in _KEYWORDS:
                self.fail(f"{tok.text!r} is a reserved word", tok)
            indices = ()
            if self.accept("op", "("):
                first = self.expect("number")
                if not first.text.isdigit():
                    self.fail("indices must be integers", first)
                indices = (int(first.text),)
                if self.accept("op", ","):
                    second = self.expect("number")
                    if not second.text.isdigit():
                        self.fail("indices must be integers", second)
                    indices = (int(first.text), int(second.text))
                self.expect("op", ")")
            return Name(tok.text, indices)
        self.fail(f"unexpected token {tok.text!r}")


def parse_source(text, filename="<model>"):
    """Parse DSL text into a ModelSource (statement AST)."""
    parser = _Parser(text, filename)
    return ModelSource(text=text, filename=filename, statements=parser.parse_model())


# --- pretty printer ----------------------------------------------------


def pretty(source):
    """Render a ModelSource back to DSL text that reparses identically."""
    lines = []
    for stmt in source.statements:
        lines.append(_pretty_stmt(stmt))
    return "\n".join(lines) + "\n"


def _pretty_stmt(stmt):
    if isinstance(stmt, VarDecl):
        text = f"var {stmt.name}"
        if stmt.shape:
            text += "[" + ",".join(str(s) for s in stmt.shape) + "]"
        if stmt.measure:
            text += f" in {stmt.measure}"
        return text + ";"
    if isinstance(stmt, MeasDecl):
        return f"measure {stmt.name};"
    if isinstance(stmt, ObjectiveStmt):
        return f"{stmt.direction} {_pretty_expr(stmt.expr)};"
    if isinstance(stmt, ConstraintStmt):
        return f"{_pretty_expr(stmt.lhs)} {stmt.rel} {_pretty_expr(stmt.rhs)};"
    if isinstance(stmt, OrderDecl):
        return f"order {stmt.order};"
    if isinstance(stmt, AssignStmt):
        rows = "; ".join(" ".join(repr(v) for v in row) for row in stmt.matrix)
        return f"assign {stmt.name} = [{rows}];"
    raise TypeError(f"unknown statement: {stmt!r}")


def _pretty_expr(node):
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Name):
        if node.indices:
            return f"{node.base}({','.join(str(i) for i in node.indices)})"
        return node.base
    if isinstance(node, Call):
        return f"{node.fn}({_pretty_expr(node.arg)})"
    if isinstance(node, Neg):
        return f"(-{_pretty_expr(node.operand)})"
    if isinstance(node, BinOp):
        return f"({_pretty_expr(node.lhs)}{node.op}{_pretty_expr(node.rhs)})"
    if isinstance(node, Pow):
        return f"({_pretty_expr(node.base)}^{node.exponent})"
    raise TypeError(f"unknown expression node: {node!r}")


# --- semantic build ----------------------------------------------------


@dataclass
class BuiltModel:
    """A model file realized against a fresh context."""

    source: ModelSource
    context: ModelContext
    problem: GPMProblem
    order: object
    env: dict
    measures_by_name: dict


def build(source):
    """Realize a parsed model: declare, regroup, constrain, objective."""
    ctx = ModelContext()
    env = {}
    filename = source.filename

    decls = [s for s in source.statements if isinstance(s, (VarDecl, MeasDecl))]
    others = [s for s in source.statements if not isinstance(s, (VarDecl, MeasDecl))]

    current_measure_name = None
    pending = {}  # measure name -> list of variable polynomials, file order
    measure_order = []
    for stmt in decls:
        if isinstance(stmt, MeasDecl):
            if stmt.name in pending:
                raise ParseError(f"duplicate measure name: {stmt.name}", filename)
            pending[stmt.name] = []
            measure_order.append(stmt.name)
            current_measure_name = stmt.name
            continue
        if stmt.name in env:
            raise ParseError(f"duplicate variable name: {stmt.name}", filename)
        if not stmt.shape:
            value = ctx.var(stmt.name)
            flat = [value]
        elif len(stmt.shape) == 1:
            value = ctx.vars(stmt.name, stmt.shape[0])
            flat = list(value)
        else:
            value = ctx.vars(stmt.name, stmt.shape[0], stmt.shape[1])
            flat = list(value.reshape(-1))
        env[stmt.name] = value
        target = stmt.measure if stmt.measure is not None else current_measure_name
        if target is not None:
            if target not in pending:
                raise ParseError(f"unknown measure: {target}", filename)
            pending[target].extend(flat)

    measures_by_name = {}
    for name in measure_order:
        if not pending[name]:
            raise ParseError(f"measure {name} has no variables", filename)
        measures_by_name[name] = ctx.new_measure(pending[name])

    objective = None
    constraints = []
    order = None
    for stmt in others:
        if isinstance(stmt, OrderDecl):
            order = stmt.order
        elif isinstance(stmt, AssignStmt):
            if stmt.name not in env:
                raise ParseError(f"unknown variable: {stmt.name}", filename)
            matrix = np.asarray(stmt.matrix, dtype=float)
            target = env[stmt.name]
            flat = [target] if isinstance(target, Polynomial) else list(
                np.asarray(target, dtype=object).reshape(-1)
            )
            if matrix.shape[0] == len(flat):
                points = matrix.T  # rows were variables, columns points
            elif matrix.shape[0] == 1 and matrix.shape[1] == len(flat):
                points = matrix
            else:
                raise ParseError(
                    f"point list shape {matrix.shape} does not fit "
                    f"{len(flat)} variable(s)", filename,
                )
            ctx.assign(flat, points)
        elif isinstance(stmt, ObjectiveStmt):
            if objective is not None:
                raise ParseError("multiple objectives", filename)
            value = _eval_expr(stmt.expr, env, measures_by_name, filename)
            maker = minimize if stmt.direction == "min" else maximize
            objective = maker(value)
        elif isinstance(stmt, ConstraintStmt):
            lhs = _eval_expr(stmt.lhs, env, measures_by_name, filename)
            rhs = _eval_expr(stmt.rhs, env, measures_by_name, filename)
            if _mentions_moments(stmt.lhs) or _mentions_moments(stmt.rhs):
                constraints.append(MomentConstraint(lhs, stmt.rel, rhs))
            else:
                constraints.append(SupportConstraint(lhs, stmt.rel, rhs))
        else:
            raise TypeError(f"unknown statement: {stmt!r}")
    if objective is None:
        raise ParseError("model has no objective", filename)
    problem = GPMProblem(objective, constraints)
    return BuiltModel(
        source=source,
        context=ctx,
        problem=problem,
        order=order,
        env=env,
        measures_by_name=measures_by_name,
    )


def parse_model(text, filename="<model>"):
    """Parse and build DSL text, returning the problem."""
    return build(parse_source(text, filename)).problem


def _mentions_moments(node):
    if isinstance(node, Call):
        return True
    if isinstance(node, Neg):
        return _mentions_moments(node.operand)
    if isinstance(node, BinOp):
        return _mentions_moments(node.lhs) or _mentions_moments(node.rhs)
    if isinstance(node, Pow):
        return _mentions_moments(node.base)
    return False


def _eval_expr(node, env, measures_by_name, filename):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Name):
        if node.base not in env:
            if node.base in measures_by_name and not node.indices:
                raise ParseError(
                    f"measure {node.base} can only appear inside mass()", filename
                )
            raise ParseError(f"unknown variable: {node.base}", filename)
        value = env[node.base]
        if not node.indices:
            if not isinstance(value, Polynomial):
                raise ParseError(
                    f"{node.base} is an array; index it like {node.base}(1)", filename
                )
            return value
        if isinstance(value, Polynomial):
            raise ParseError(f"{node.base} is scalar and takes no index", filename)
        try:
            idx = tuple(i - 1 for i in node.indices)
            if any(i < 0 for i in idx):
                raise IndexError
            return value[idx if len(idx) > 1 else idx[0]]
        except IndexError:
            raise ParseError(
                f"index {node.indices} out of range for {node.base}", filename
            ) from None
    if isinstance(node, Call):
        if node.fn == "mass":
            if isinstance(node.arg, Name) and not node.arg.indices \
                    and node.arg.base in measures_by_name:
                return mass(measures_by_name[node.arg.base])
            return mass(_eval_expr(node.arg, env, measures_by_name, filename))
        return mom(_eval_expr(node.arg, env, measures_by_name, filename))
    if isinstance(node, Neg):
        return -_eval_expr(node.operand, env, measures_by_name, filename)
    if isinstance(node, BinOp):
        lhs = _eval_expr(node.lhs, env, measures_by_name, filename)
        rhs = _eval_expr(node.rhs, env, measures_by_name, filename)
        if node.op == "+":
            return lhs + rhs
        if node.op == "-":
            return lhs - rhs
        if node.op == "*":
            return lhs * rhs
        scalar = rhs
        if isinstance(scalar, Polynomial):
            if not scalar.is_constant:
                raise ParseError("division only by constants", filename)
            scalar = scalar.constant_term
        if not isinstance(scalar, (int, float)):
            raise ParseError("division only by constants", filename)
        if scalar == 0.0:
            raise ParseError("division by zero", filename)
        return lhs * (1.0 / scalar) if not isinstance(lhs, (int, float)) else lhs / scalar
    if isinstance(node, Pow):
        base = _eval_expr(node.base, env, measures_by_name, filename)
        if isinstance(base, (int, float)):
            return float(base) ** node.exponent
        return base ** node.exponent
    raise TypeError(f"unknown expression node: {node!r}")
