"""Small arithmetic expression language for model coefficients.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := atom ('^' atom)?
    atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')' | '-' atom

Unary minus binds tighter than ``^`` (``-x^2`` is ``(-x)^2``); write
``-(x^2)`` for the other reading.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

VARIABLES = frozenset("txyzkuve")

_UNARY = {
    "abs": (abs, np.abs),
    "exp": (math.exp, np.exp),
    "log": (math.log, np.log),
    "sin": (math.sin, np.sin),
    "cos": (math.cos, np.cos),
    "tanh": (math.tanh, np.tanh),
    "sqrt": (math.sqrt, np.sqrt),
}
_VARIADIC = {"min": (min, np.minimum), "max": (max, np.maximum)}
FUNCTIONS = frozenset(_UNARY) | frozenset(_VARIADIC)


class ExpressionError(ValueError):
    """Syntax or name error in an expression, with 1-based line/column."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}, column {column}: "
        elif column is not None:
            where = f"column {column}: "
        super().__init__(where + message)


class EvaluationError(ArithmeticError):
    """Unbound variable or non-finite intermediate value."""

    def __init__(self, message: str, point: Mapping[str, float] | None = None):
        self.point = dict(point) if point else None
        if self.point:
            message = f"{message} at " + ", ".join(f"{k}={v!r}" for k, v in sorted(self.point.items()))
        super().__init__(message)


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Node", ...]


Node = Num | Var | Neg | BinOp | Call


# --- lexer / parser --------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str, line: int | None, col0: int):
    pos = 0
    out = []
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos]!r}", line, col0 + pos)
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), col0 + start))
        pos = m.end()
    out.append(("end", "", col0 + len(text)))
    return out


class _Parser:
    def __init__(self, text: str, line: int | None, col0: int):
        self.toks = _tokenize(text, line, col0)
        self.i = 0
        self.line = line

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExpressionError(msg, self.line, tok[2])

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            self.fail(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok)

    def parse(self) -> Node:
        if self.peek()[0] == "end":
            self.fail("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        node = self.atom()
        if self.peek()[1] == "^":
            self.take()
            node = BinOp("^", node, self.atom())
        return node

    def atom(self):
        kind, val, col = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "ident":
            if self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise ExpressionError(f"unknown function {val}", self.line, col)
                self.take()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if val in _UNARY and len(args) != 1:
                    raise ExpressionError(f"{val} takes 1 argument, got {len(args)}", self.line, col)
                return Call(val, tuple(args))
            if val not in VARIABLES:
                raise ExpressionError(f"unknown variable {val}", self.line, col)
            return Var(val)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if val == "-":
            return Neg(self.atom())
        self.i -= 1
        self.fail(f"unexpected {val or 'end of input'!r}")


# --- evaluation ------------------------------------------------------------


def _scalar(node: Node, env: Mapping[str, float]) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return float(env[node.name])
        except KeyError:
            raise EvaluationError(f"unbound variable {node.name}") from None
    if isinstance(node, Neg):
        return -_scalar(node.operand, env)
    if isinstance(node, BinOp):
        a = _scalar(node.left, env)
        b = _scalar(node.right, env)
        if node.op == "+":
            r = a + b
        elif node.op == "-":
            r = a - b
        elif node.op == "*":
            r = a * b
        elif node.op == "/":
            if b == 0.0:
                raise EvaluationError("division by zero", env)
            r = a / b
        else:
            try:
                r = math.pow(a, b)
            except (ValueError, ZeroDivisionError, OverflowError):
                raise EvaluationError(f"domain error in {a!r}^{b!r}", env) from None
    else:
        vals = [_scalar(a, env) for a in node.args]
        try:
            if node.func in _UNARY:
                r = float(_UNARY[node.func][0](vals[0]))
            else:
                r = float(_VARIADIC[node.func][0](vals))
        except (ValueError, OverflowError):
            raise EvaluationError(f"domain error in {node.func}", env) from None
    if not math.isfinite(r):
        raise EvaluationError("non-finite intermediate value", env)
    return r


def _vector(node: Node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_vector(node.operand, env)
    if isinstance(node, BinOp):
        a = _vector(node.left, env)
        b = _vector(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return np.true_divide(a, b)
        return np.power(np.asarray(a, dtype=float), b)
    args = [_vector(a, env) for a in node.args]
    if node.func in _UNARY:
        return _UNARY[node.func][1](args[0])
    out = args[0]
    for a in args[1:]:
        out = _VARIADIC[node.func][1](out, a)
    return out


def _to_source(node: Node) -> str:
    if isinstance(node, Num):
        s = repr(node.value)
        return f"({s})" if node.value < 0 or s.startswith("-") else s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({_to_source(node.left)}{node.op}{_to_source(node.right)})"
    return f"{node.func}(" + ",".join(_to_source(a) for a in node.args) + ")"


def _collect(node: Node, acc: set):
    if isinstance(node, Var):
        acc.add(node.name)
    elif isinstance(node, Neg):
        _collect(node.operand, acc)
    elif isinstance(node, BinOp):
        _collect(node.left, acc)
        _collect(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _collect(a, acc)


class Expression:
    """Parsed expression; immutable and safe to share between threads."""

    __slots__ = ("root", "source", "variables")

    def __init__(self, root: Node, source: str | None = None):
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "source", source if source is not None else _to_source(root))
        acc: set = set()
        _collect(root, acc)
        object.__setattr__(self, "variables", frozenset(acc))

    def __setattr__(self, name, value):
        raise AttributeError("Expression is immutable")

    def __repr__(self):
        return f"Expression({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and self.root == other.root

    def __hash__(self):
        return hash(self.root)

    def to_source(self) -> str:
        """Fully parenthesised text that parses back to an equivalent tree."""
        return _to_source(self.root)

    def depends_on(self, *names: str) -> bool:
        return any(n in self.variables for n in names)

    @property
    def constant(self) -> bool:
        return not self.variables

    def __call__(self, **bindings: float) -> float:
        return evaluate(self, bindings)

    def vector(self, **arrays) -> np.ndarray:
        """Evaluate elementwise over broadcast numpy inputs.

        The result always has the broadcast shape of the inputs that the
        expression references, so constant expressions also return arrays.
        """
        env = {}
        for name in self.variables:
            if name not in arrays:
                raise EvaluationError(f"unbound variable {name}")
            env[name] = np.asarray(arrays[name], dtype=float)
        shape = np.broadcast_shapes(*(np.shape(arrays[k]) for k in arrays)) if arrays else ()
        try:
            with np.errstate(over="raise", divide="raise", invalid="raise", under="ignore"):
                out = _vector(self.root, env)
        except FloatingPointError as exc:
            raise EvaluationError(self._locate(env, shape) or f"domain error ({exc})") from None
        out = np.asarray(out, dtype=float)
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out

    def _locate(self, env, shape):
        # slow path: find the first offending point for the error message
        full = {k: np.broadcast_to(v, shape) for k, v in env.items()}
        for idx in np.ndindex(*shape) if shape else [()]:
            point = {k: float(v[idx]) for k, v in full.items()}
            try:
                _scalar(self.root, point)
            except EvaluationError as err:
                return str(err)
        return None


def parse_expression(text: str, *, allowed: frozenset | set | None = None,
                     line: int | None = None, column: int = 1) -> Expression:
    """Parse ``text``; ``allowed`` restricts the free variables."""
    root = _Parser(text, line, column).parse()
    expr = Expression(root, text.strip())
    if allowed is not None:
        bad = sorted(expr.variables - set(allowed))
        if bad:
            raise ExpressionError(
                f"variable {bad[0]} not allowed here (allowed: {', '.join(sorted(allowed))})", line, column
            )
    return expr


def evaluate(expr: Expression, bindings: Mapping[str, float]) -> float:
    """Scalar IEEE double evaluation; raises EvaluationError on domain errors."""
    missing = expr.variables - set(bindings)
    if missing:
        raise EvaluationError(f"unbound variable {sorted(missing)[0]}")
    return _scalar(expr.root, bindings)
