"""Field expressions: a small arithmetic language over x, y, t.

Grammar (whitespace-insensitive)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | '+' unary | power
    power   := atom ('^' unary)?            # right-associative
    atom    := NUMBER | 'x' | 'y' | 't' | 'pi' | FUNC '(' expr ')' | '(' expr ')'

Evaluation is vectorised: ``x``, ``y`` and ``t`` may be floats or numpy arrays.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

VARIABLES = ("x", "y", "t")
FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


class ExprError(ValueError):
    """Raised for malformed expressions; ``offset`` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Const:
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
    arg: "Node"


@dataclass(frozen=True)
class Pi:
    pass


Node = Union[Const, Var, Neg, BinOp, Call, Pi]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None:
            bad = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExprError(f"unexpected character {source[bad]!r}", bad)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, value, offset = self.take()
        if value != text:
            found = value or "end of input"
            raise ExprError(f"expected {text!r}, found {found!r}", offset)

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and value == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, value, offset = self.take()
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            if value in VARIABLES:
                return Var(value)
            if value == "pi":
                return Pi()
            if value in FUNCTIONS:
                if self.peek()[1] != "(":
                    raise ExprError(f"function {value!r} requires one argument", self.peek()[2])
                self.take()
                arg = self.expr()
                if self.peek()[1] == ",":
                    raise ExprError(f"function {value!r} takes exactly one argument", self.peek()[2])
                self.expect(")")
                return Call(value, arg)
            raise ExprError(f"unknown identifier {value!r}", offset)
        if value == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprError(f"unexpected {value or 'end of input'!r}", offset)


def parse(source: str) -> Node:
    """Parse ``source`` into an immutable AST."""
    if not source.isascii():
        raise ExprError("expression must be ASCII", next(i for i, c in enumerate(source) if not c.isascii()))
    parser = _Parser(source)
    node = parser.expr()
    kind, value, offset = parser.peek()
    if kind != "end":
        raise ExprError(f"unexpected {value!r}", offset)
    return node


def _int_power(base, n: int):
    if n == 0:
        return np.ones_like(base) if isinstance(base, np.ndarray) else 1.0
    if n < 0:
        return 1.0 / _int_power(base, -n)
    result = base
    for _ in range(n - 1):
        result = result * base
    return result


def evaluate(node: Node, x=0.0, y=0.0, t=0.0):
    """Evaluate ``node`` in IEEE double precision; non-finite results propagate."""
    with np.errstate(all="ignore"):
        return _eval(node, x, y, t)


def _eval(node: Node, x, y, t):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return {"x": x, "y": y, "t": t}[node.name]
    if isinstance(node, Pi):
        return math.pi
    if isinstance(node, Neg):
        return -_eval(node.operand, x, y, t)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_eval(node.arg, x, y, t))
    left = _eval(node.left, x, y, t)
    if node.op == "^" and _is_integer_const(node.right):
        return _int_power(left, int(_const_value(node.right)))
    right = _eval(node.right, x, y, t)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        return np.divide(left, right) if _is_array(left, right) else _scalar_div(left, right)
    return np.power(left, right)


def _scalar_div(a: float, b: float) -> float:
    if b == 0.0:
        return float(np.divide(np.float64(a), np.float64(b)))
    return a / b


def _is_array(*values) -> bool:
    return any(isinstance(v, np.ndarray) for v in values)


def _const_value(node: Node):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Neg) and isinstance(node.operand, Const):
        return -node.operand.value
    return None


def _is_integer_const(node: Node) -> bool:
    v = _const_value(node)
    return v is not None and float(v).is_integer() and abs(v) <= 64


def is_constant(node: Node) -> bool:
    """True when the expression mentions none of x, y, t."""
    if isinstance(node, Var):
        return False
    if isinstance(node, (Const, Pi)):
        return True
    if isinstance(node, Neg):
        return is_constant(node.operand)
    if isinstance(node, Call):
        return is_constant(node.arg)
    return is_constant(node.left) and is_constant(node.right)


def to_source(node: Node) -> str:
    """Fully parenthesised text that reparses to an identical tree."""
    if isinstance(node, Const):
        text = repr(float(node.value))
        return text if node.value >= 0 else f"({text})"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    return f"({to_source(node.left)} {node.op} {to_source(node.right)})"


@dataclass(frozen=True)
class Expr:
    """A parsed scalar expression that remembers its source text."""

    source: str
    ast: Node

    @classmethod
    def parse(cls, source: str | float | int) -> "Expr":
        text = repr(float(source)) if isinstance(source, (int, float)) else str(source)
        return cls(text, parse(text))

    def __call__(self, x=0.0, y=0.0, t=0.0):
        return evaluate(self.ast, x, y, t)

    @property
    def constant(self) -> bool:
        return is_constant(self.ast)


@dataclass(frozen=True)
class VectorExpr:
    """Three scalar component expressions."""

    components: tuple[Expr, Expr, Expr]

    def __post_init__(self):
        if len(self.components) != 3:
            raise ExprError(f"vector expression needs 3 components, got {len(self.components)}")

    @classmethod
    def parse(cls, sources) -> "VectorExpr":
        sources = list(sources)
        if len(sources) != 3:
            raise ExprError(f"vector expression needs 3 components, got {len(sources)}")
        return cls(tuple(Expr.parse(s) for s in sources))

    @property
    def sources(self) -> list[str]:
        return [c.source for c in self.components]

    def __call__(self, x=0.0, y=0.0, t=0.0) -> np.ndarray:
        """Componentwise values stacked on the last axis: shape ``x.shape + (3,)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        return np.stack([np.broadcast_to(c(x, y, t), shape).astype(float) for c in self.components], axis=-1)


def eval_vector(vexpr: VectorExpr, x: float, y: float, t: float = 0.0) -> tuple[float, float, float]:
    v = vexpr(x, y, t)
    return float(v[0]), float(v[1]), float(v[2])
