"""Small expression language used to define scalar fields on charts.

Grammar (the basis of all data-defined models):

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := base ('^' factor)?
    base   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')' | '-' base

'^' is right-associative and unary minus binds tighter than '^', so
``-q1^2`` parses as ``(-q1)^2``.  Known functions: sin, cos, exp, sqrt.
Identifiers resolve either to chart coordinates (``q1..qn``, ``y1..yk``)
or to named parameters bound when a :class:`ScalarField` is built.

Evaluation is guarded: division by zero, sqrt of a negative number and
ill-defined powers raise :class:`~algsode.errors.EvalError` instead of
returning NaN/inf.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .errors import EvalError, ExpressionError, ParseError

FUNCTIONS = ("sin", "cos", "exp", "sqrt")


# --- AST ------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Sym:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"


Node = Num | Sym | Neg | Bin | Call


# --- tokenizer ------------------------------------------------------------

_OPS = set("+-*/^()")


def _tokenize(text: str):
    """Yield (kind, text, line, col) tokens; kinds: num, ident, op, end."""
    tokens = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        start_col = col
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                j2 = j + 1
                if j2 < n and text[j2] in "+-":
                    j2 += 1
                if j2 < n and text[j2].isdigit():
                    j = j2
                    while j < n and text[j].isdigit():
                        j += 1
            lexeme = text[i:j]
            try:
                float(lexeme)
            except ValueError:
                raise ParseError("malformed number", line, start_col, lexeme)
            tokens.append(("num", lexeme, line, start_col))
            col += j - i
            i = j
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("ident", text[i:j], line, start_col))
            col += j - i
            i = j
        elif ch in _OPS:
            tokens.append(("op", ch, line, start_col))
            i += 1
            col += 1
        else:
            raise ParseError("unexpected character", line, start_col, ch)
    tokens.append(("end", "", line, col))
    return tokens


# --- parser ---------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, text, line, col = self.peek()
        if kind != "op" or text != op:
            raise ParseError(f"expected {op!r}", line, col, text or "<end>")
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        kind, text, line, col = self.peek()
        if kind != "end":
            raise ParseError("trailing input", line, col, text)
        return node

    def expr(self) -> Node:
        node = self.term()
        while True:
            kind, text, _, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = Bin(text, node, self.term())
            else:
                return node

    def term(self) -> Node:
        node = self.factor()
        while True:
            kind, text, _, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = Bin(text, node, self.factor())
            else:
                return node

    def factor(self) -> Node:
        node = self.base()
        kind, text, _, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return Bin("^", node, self.factor())  # right-associative
        return node

    def base(self) -> Node:
        kind, text, line, col = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            pk, pt, _, _ = self.peek()
            if pk == "op" and pt == "(":
                if text not in FUNCTIONS:
                    raise ParseError("unknown function", line, col, text)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            return Sym(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "op" and text == "-":
            return Neg(self.base())
        raise ParseError("expected a value", line, col, text or "<end>")


def parse(text: str) -> Node:
    """Parse ``text`` into an AST, raising ParseError with line/column."""
    return _Parser(text).parse()


# --- printer ---------------------------------------------------------------

def _prec(node: Node) -> int:
    if isinstance(node, Bin):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}[node.op]
    if isinstance(node, Neg):
        return 9
    return 10


def to_str(node: Node) -> str:
    """Print an AST so that parse(to_str(x)) == x (round-trip stable)."""
    if isinstance(node, Num):
        if node.value < 0:  # parser never yields these; print re-parseable
            return f"(-{repr(-node.value)})"
        return repr(node.value) if node.value != int(node.value) else repr(int(node.value))
    if isinstance(node, Sym):
        return node.name
    if isinstance(node, Call):
        return f"{node.fn}({to_str(node.arg)})"
    if isinstance(node, Neg):
        inner = to_str(node.arg)
        if _prec(node.arg) < 9:  # any binary op must be wrapped
            return f"-({inner})"
        return f"-{inner}"
    if isinstance(node, Bin):
        l, r = to_str(node.left), to_str(node.right)
        lp, rp = _prec(node.left), _prec(node.right)
        if node.op in "+-":
            if rp <= 1:
                r = f"({r})"
        elif node.op in "*/":
            if lp < 2:
                l = f"({l})"
            if rp <= 2:
                r = f"({r})"
        else:  # ^
            if lp <= 3:
                l = f"({l})"
            if rp < 3:
                r = f"({r})"
        return f"{l}{node.op}{r}"
    raise TypeError(f"not an AST node: {node!r}")


def free_symbols(node: Node) -> set[str]:
    if isinstance(node, Sym):
        return {node.name}
    if isinstance(node, Neg):
        return free_symbols(node.arg)
    if isinstance(node, Call):
        return free_symbols(node.arg)
    if isinstance(node, Bin):
        return free_symbols(node.left) | free_symbols(node.right)
    return set()


# --- compilation -----------------------------------------------------------

def compile_fn(node: Node, names: Sequence[str],
               params: Mapping[str, float]) -> Callable[[Sequence[float]], float]:
    """Compile the AST into a closure ``f(values) -> float``.

    ``values`` is indexed parallel to ``names``; parameter symbols are bound
    now.  Unknown symbols raise ExpressionError here rather than at call time.
    """
    index = {name: i for i, name in enumerate(names)}

    def build(nd: Node):
        if isinstance(nd, Num):
            v = nd.value
            return lambda x: v
        if isinstance(nd, Sym):
            if nd.name in index:
                i = index[nd.name]
                return lambda x: x[i]
            if nd.name in params:
                v = float(params[nd.name])
                return lambda x: v
            raise ExpressionError(
                f"unknown symbol {nd.name!r}; coordinates are {list(names)}, "
                f"parameters are {sorted(params)}")
        if isinstance(nd, Neg):
            f = build(nd.arg)
            return lambda x: -f(x)
        if isinstance(nd, Call):
            f = build(nd.arg)
            if nd.fn == "sin":
                return lambda x: math.sin(f(x))
            if nd.fn == "cos":
                return lambda x: math.cos(f(x))
            if nd.fn == "exp":
                return lambda x: math.exp(f(x))
            # sqrt, guarded
            def _sqrt(x, f=f):
                v = f(x)
                if v < 0.0:
                    raise EvalError(f"sqrt of negative value {v}")
                return math.sqrt(v)
            return _sqrt
        if isinstance(nd, Bin):
            fl, fr = build(nd.left), build(nd.right)
            if nd.op == "+":
                return lambda x: fl(x) + fr(x)
            if nd.op == "-":
                return lambda x: fl(x) - fr(x)
            if nd.op == "*":
                return lambda x: fl(x) * fr(x)
            if nd.op == "/":
                def _div(x, fl=fl, fr=fr):
                    d = fr(x)
                    if d == 0.0:
                        raise EvalError("division by zero")
                    return fl(x) / d
                return _div
            def _pow(x, fl=fl, fr=fr):
                b, e = fl(x), fr(x)
                try:
                    return math.pow(b, e)
                except (ValueError, OverflowError) as exc:
                    raise EvalError(f"invalid power {b}^{e}") from exc
            return _pow
        raise TypeError(f"not an AST node: {nd!r}")

    return build(node)


# --- symbolic differentiation ----------------------------------------------

def _is_num(nd: Node, value=None) -> bool:
    return isinstance(nd, Num) and (value is None or nd.value == value)


def _add(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return Bin("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return Neg(b)
    return Bin("-", a, b)


def _mul(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    return Bin("*", a, b)


def _div_node(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    return Bin("/", a, b)


def diff(node: Node, name: str) -> Node | None:
    """Symbolic derivative with respect to ``name``.

    Returns None when no analytic rule applies (only ``u^v`` with a
    non-constant exponent that actually involves ``name``); callers fall
    back to finite differences in that case.
    """
    if name not in free_symbols(node):
        return Num(0.0)
    if isinstance(node, Sym):
        return Num(1.0)  # name is in free symbols, so node.name == name
    if isinstance(node, Neg):
        d = diff(node.arg, name)
        return None if d is None else Neg(d) if not _is_num(d, 0.0) else Num(0.0)
    if isinstance(node, Call):
        da = diff(node.arg, name)
        if da is None:
            return None
        if node.fn == "sin":
            return _mul(Call("cos", node.arg), da)
        if node.fn == "cos":
            return Neg(_mul(Call("sin", node.arg), da))
        if node.fn == "exp":
            return _mul(node, da)
        # d sqrt(u) = u' / (2 sqrt(u))
        return _div_node(da, _mul(Num(2.0), node))
    if isinstance(node, Bin):
        if node.op == "^":
            if isinstance(node.right, Num):
                c = node.right.value
                da = diff(node.left, name)
                if da is None:
                    return None
                if c == 0.0:
                    return Num(0.0)
                new_exp = Num(c - 1.0) if c - 1.0 >= 0 else Neg(Num(abs(c - 1.0)))
                power = node.left if c == 2.0 else Bin("^", node.left, new_exp)
                return _mul(_mul(Num(c), power), da)
            return None  # general exponent would need log
        dl, dr = diff(node.left, name), diff(node.right, name)
        if dl is None or dr is None:
            return None
        if node.op == "+":
            return _add(dl, dr)
        if node.op == "-":
            return _sub(dl, dr)
        if node.op == "*":
            return _add(_mul(dl, node.right), _mul(node.left, dr))
        # quotient rule
        num = _sub(_mul(dl, node.right), _mul(node.left, dr))
        return _div_node(num, Bin("^", node.right, Num(2.0)))
    raise TypeError(f"not an AST node: {node!r}")


# --- scalar fields ----------------------------------------------------------

@dataclass
class ScalarField:
    """A scalar function of chart coordinates, defined by an expression tree.

    ``names`` fixes the coordinate order expected by ``__call__``; any other
    symbol in the tree must appear in ``params``.
    """

    ast: Node
    names: tuple[str, ...]
    params: dict[str, float] = field(default_factory=dict)
    _fn: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        unknown = free_symbols(self.ast) - set(self.names) - set(self.params)
        if unknown:
            raise ExpressionError(
                f"unknown symbols {sorted(unknown)} (coordinates {list(self.names)}, "
                f"parameters {sorted(self.params)})")
        self._fn = compile_fn(self.ast, self.names, self.params)

    @classmethod
    def parse(cls, text: str, names: Sequence[str],
              params: Mapping[str, float] | None = None) -> "ScalarField":
        return cls(parse(text), tuple(names), dict(params or {}))

    @classmethod
    def constant(cls, value: float, names: Sequence[str]) -> "ScalarField":
        node = Num(float(value)) if value >= 0 else Neg(Num(-float(value)))
        return cls(node, tuple(names))

    def __call__(self, values: Sequence[float]) -> float:
        return self._fn(values)

    def derivative(self, name: str) -> "ScalarField | None":
        """Analytic partial derivative, or None when not expressible."""
        d = diff(self.ast, name)
        if d is None:
            return None
        return ScalarField(d, self.names, dict(self.params))

    @property
    def printed(self) -> str:
        return to_str(self.ast)

    def is_constant(self) -> bool:
        return not (free_symbols(self.ast) & set(self.names))
