"""Small arithmetic expression language for user-supplied scalar functions.

Grammar (``^`` is right-associative, unary minus binds tighter than ``*``
but looser than ``^``)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := ('-')? power
    power  := atom ('^' factor)?
    atom   := number | ident | ident '(' expr ')' | '(' expr ')'

Identifiers are the variables ``x`` and ``t``, the named constants ``hbar``,
``m``, ``pi`` and ``e``, the functions ``exp log sin cos sqrt abs``, and any
user parameters declared at parse time.  Parameters must be replaced with
:func:`bind_constants` before evaluation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

VARIABLES = ("x", "t")
NAMED_CONSTANTS = ("hbar", "m", "pi", "e")
FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt", "abs")
BINARY_OPS = ("+", "-", "*", "/", "^")


class ExprError(ValueError):
    """Base class for expression parse and evaluation failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class ArityError(ExprError):
    pass


class UnboundIdentifierError(ExprError):
    def __init__(self, names):
        names = sorted(set(names))
        super().__init__("unbound identifier(s): " + ", ".join(names))
        self.names = names


class EvalError(ExprError):
    """Evaluation failure; ``where`` holds the offending (x, t) when known."""

    def __init__(self, message: str, where: tuple[float, float] | None = None):
        if where is not None:
            message = f"{message} at x={where[0]!r}, t={where[1]!r}"
        super().__init__(message)
        self.where = where


class DomainError(EvalError):
    pass


class DivisionByZeroError(EvalError):
    pass


class OverflowEvalError(EvalError):
    pass


# -- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Symbol:
    """Variable, named constant or user parameter, by name."""

    name: str

    @property
    def kind(self) -> str:
        if self.name in VARIABLES:
            return "variable"
        if self.name in NAMED_CONSTANTS:
            return "constant"
        return "parameter"


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of FUNCTIONS
    operand: "ExprAst"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "ExprAst"
    right: "ExprAst"


ExprAst = Union[Number, Symbol, Unary, Binary]


# -- parsing -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        kind = match.lastgroup
        if kind != "ws":
            tokens.append((kind, match.group(), pos))
        pos = match.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, params: frozenset[str]):
        self.tokens = _tokenize(source)
        self.i = 0
        self.params = params

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, value, pos = self.take()
        if value != text or kind not in ("op",):
            what = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {what}", pos)

    def parse(self) -> ExprAst:
        node = self.expr()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {value!r}", pos)
        return node

    def expr(self) -> ExprAst:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> ExprAst:
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.factor())
        return node

    def factor(self) -> ExprAst:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Unary("neg", self.power())
        return self.power()

    def power(self) -> ExprAst:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.factor())
        return base

    def atom(self) -> ExprAst:
        kind, value, pos = self.take()
        if kind == "number":
            return Number(float(value))
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                return self.call(value, pos)
            if value in FUNCTIONS:
                raise ArityError(f"function {value!r} at offset {pos} needs one argument")
            if value in VARIABLES or value in NAMED_CONSTANTS or value in self.params:
                return Symbol(value)
            raise UnknownIdentifierError(value, pos)
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", pos)
        raise ExprSyntaxError(f"unexpected token {value!r}", pos)

    def call(self, name: str, pos: int) -> ExprAst:
        self.expect("(")
        args = []
        if not (self.peek()[0] == "op" and self.peek()[1] == ")"):
            args.append(self.expr())
            while self.peek()[0] == "op" and self.peek()[1] == ",":
                self.take()
                args.append(self.expr())
        self.expect(")")
        if name not in FUNCTIONS:
            if name in VARIABLES or name in NAMED_CONSTANTS or name in self.params:
                raise ArityError(f"{name!r} at offset {pos} is not a function")
            raise UnknownIdentifierError(name, pos)
        if len(args) != 1:
            raise ArityError(
                f"function {name!r} at offset {pos} takes 1 argument, got {len(args)}"
            )
        return Unary(name, args[0])


def parse(source: str, params=()) -> ExprAst:
    """Parse ``source`` into an AST.

    ``params`` names the user constants allowed to appear free; any other
    identifier outside the built-in set is an :class:`UnknownIdentifierError`.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    params = frozenset(params)
    clash = params & set(VARIABLES + NAMED_CONSTANTS + FUNCTIONS)
    if clash:
        raise ExprError(f"parameter names shadow built-ins: {sorted(clash)}")
    return _Parser(source, params).parse()


def to_source(ast: ExprAst) -> str:
    """Serialize to text that parses back to an equivalent tree."""
    if isinstance(ast, Number):
        text = repr(float(ast.value))
        return f"({text})" if ast.value < 0 or text.startswith("-") else text
    if isinstance(ast, Symbol):
        return ast.name
    if isinstance(ast, Unary):
        inner = to_source(ast.operand)
        if ast.op == "neg":
            return f"(-({inner}))"
        return f"{ast.op}({inner})"
    return f"({to_source(ast.left)} {ast.op} {to_source(ast.right)})"


def free_parameters(ast: ExprAst) -> set[str]:
    if isinstance(ast, Symbol):
        return {ast.name} if ast.kind == "parameter" else set()
    if isinstance(ast, Unary):
        return free_parameters(ast.operand)
    if isinstance(ast, Binary):
        return free_parameters(ast.left) | free_parameters(ast.right)
    return set()


def depends_on(ast: ExprAst, name: str) -> bool:
    if isinstance(ast, Symbol):
        return ast.name == name
    if isinstance(ast, Unary):
        return depends_on(ast.operand, name)
    if isinstance(ast, Binary):
        return depends_on(ast.left, name) or depends_on(ast.right, name)
    return False


# -- binding and folding -----------------------------------------------------

def _fold(node: ExprAst) -> ExprAst:
    # Only folds that cannot turn an evaluation error into a value on
    # all-constant subtrees; 0*e and e+0 style identities drop e.
    if isinstance(node, Unary):
        operand = _fold(node.operand)
        folded = Unary(node.op, operand)
        if isinstance(operand, Number):
            try:
                return Number(float(_evaluate(folded, 0.0, 0.0, {})))
            except EvalError:
                return folded
        return folded
    if isinstance(node, Binary):
        left, right = _fold(node.left), _fold(node.right)
        folded = Binary(node.op, left, right)
        if isinstance(left, Number) and isinstance(right, Number):
            try:
                return Number(float(_evaluate(folded, 0.0, 0.0, {})))
            except EvalError:
                return folded
        if node.op == "*":
            for a, b in ((left, right), (right, left)):
                if isinstance(a, Number) and a.value == 0.0:
                    return Number(0.0)
                if isinstance(a, Number) and a.value == 1.0:
                    return b
        if node.op == "+":
            if isinstance(left, Number) and left.value == 0.0:
                return right
            if isinstance(right, Number) and right.value == 0.0:
                return left
        if node.op == "-" and isinstance(right, Number) and right.value == 0.0:
            return left
        return folded
    return node


def _substitute(node: ExprAst, values: Mapping[str, float]) -> ExprAst:
    if isinstance(node, Symbol) and node.kind == "parameter" and node.name in values:
        return Number(float(values[node.name]))
    if isinstance(node, Unary):
        return Unary(node.op, _substitute(node.operand, values))
    if isinstance(node, Binary):
        return Binary(node.op, _substitute(node.left, values), _substitute(node.right, values))
    return node


def bind_constants(ast: ExprAst, values: Mapping[str, float]) -> ExprAst:
    """Replace user parameters by numbers and fold the constant subtrees."""
    missing = free_parameters(ast) - set(values)
    if missing:
        raise UnboundIdentifierError(missing)
    return _fold(_substitute(ast, values))


def compile_expr(source, constants: Mapping[str, float] | None = None) -> ExprAst:
    """Parse text (or pass through an AST) and bind ``constants`` in one step."""
    constants = dict(constants or {})
    ast = parse(source, params=constants) if isinstance(source, str) else source
    return bind_constants(ast, constants)


# -- evaluation --------------------------------------------------------------

_NUMPY_FUNCS = {
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


def _consts_from(consts) -> dict[str, float]:
    if consts is None:
        return {}
    if isinstance(consts, Mapping):
        return dict(consts)
    return {"hbar": consts.hbar, "m": consts.m}


def _where(mask, x, t):
    x_b, t_b, mask = np.broadcast_arrays(x, t, mask)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return None
    k = idx[0]
    return float(x_b.flat[k]), float(t_b.flat[k])


def _check_finite(value, x, t):
    bad = ~np.isfinite(value)
    if np.any(bad):
        raise OverflowEvalError("non-finite result", _where(bad, x, t))
    return value


def _evaluate(node: ExprAst, x, t, consts: Mapping[str, float]):
    if isinstance(node, Number):
        return np.float64(node.value)
    if isinstance(node, Symbol):
        if node.name == "x":
            return x
        if node.name == "t":
            return t
        if node.name == "pi":
            return np.float64(math.pi)
        if node.name == "e":
            return np.float64(math.e)
        if node.name in ("hbar", "m"):
            if node.name not in consts:
                raise EvalError(f"constant {node.name!r} not supplied")
            return np.float64(consts[node.name])
        raise UnboundIdentifierError([node.name])
    if isinstance(node, Unary):
        arg = _evaluate(node.operand, x, t, consts)
        if node.op == "neg":
            return -arg
        if node.op == "log" and np.any(arg <= 0):
            raise DomainError("log of non-positive value", _where(arg <= 0, x, t))
        if node.op == "sqrt" and np.any(arg < 0):
            raise DomainError("sqrt of negative value", _where(arg < 0, x, t))
        with np.errstate(all="ignore"):
            out = _NUMPY_FUNCS[node.op](arg)
        return _check_finite(out, x, t)
    left = _evaluate(node.left, x, t, consts)
    right = _evaluate(node.right, x, t, consts)
    op = node.op
    if op == "/" and np.any(right == 0):
        raise DivisionByZeroError("division by zero", _where(right == 0, x, t))
    if op == "^":
        neg_frac = (left < 0) & (right != np.round(right))
        if np.any(neg_frac):
            raise DomainError(
                "non-integer power of negative base", _where(neg_frac, x, t)
            )
        zero_neg = (left == 0) & (right < 0)
        if np.any(zero_neg):
            raise DivisionByZeroError("zero to a negative power", _where(zero_neg, x, t))
    with np.errstate(all="ignore"):
        if op == "+":
            out = left + right
        elif op == "-":
            out = left - right
        elif op == "*":
            out = left * right
        elif op == "/":
            out = left / right
        else:
            out = np.power(left, right)
    return _check_finite(out, x, t)


def evaluate(ast: ExprAst, x: float, t: float, consts=None) -> float:
    """Evaluate at a single point; ``consts`` maps ``hbar`` and ``m`` to values."""
    return float(_evaluate(ast, np.float64(x), np.float64(t), _consts_from(consts)))


def evaluate_array(ast: ExprAst, x, t, consts=None) -> np.ndarray:
    """Vectorized evaluation; ``x`` and ``t`` broadcast against each other."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    out = _evaluate(ast, x, t, _consts_from(consts))
    return np.broadcast_to(out, np.broadcast_shapes(x.shape, t.shape)).astype(float)


def eval_field(ast: ExprAst, grid, consts=None):
    """Sample ``ast`` at every node of ``grid``; returns a :class:`Field`."""
    from qpot.fieldgrid import Field

    x, t = grid.mesh()
    return Field(grid, evaluate_array(ast, x, t, consts))
