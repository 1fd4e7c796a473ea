"""Typed expression language for formulaic alphas.

Expressions combine six raw market features with a fixed vocabulary of
arithmetic, rolling time-series, and cross-sectional operators. The text
form is standard infix arithmetic (``+ - * /``, unary ``-``) plus
function-call syntax for named operators, with integer literals in window
position:

    (close - open) / open * volume
    ts_mean(close, 20)
    ts_corr(cs_rank(close), cs_rank(volume), 10)

The operator table below is the single source of truth for the parser,
the printer, the random generator, and the evaluation engine. It is
module-level data so a deployment with a different operator vocabulary
can swap it out wholesale.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

__all__ = [
    "FEATURES",
    "OPERATOR_TABLE",
    "OperatorSpec",
    "AlphaExpr",
    "FeatureLeaf",
    "ConstLeaf",
    "UnaryOp",
    "BinaryOp",
    "RollingOp",
    "CrossSectionalOp",
    "ExprError",
    "ExprSyntaxError",
    "ExprSemanticError",
    "MAX_EXPR_DEPTH",
    "MAX_EXPR_NODES",
    "MIN_WINDOW",
    "MAX_WINDOW",
    "CONST_BOUND",
    "parse",
    "unparse",
    "complexity",
    "depth",
    "validate_expr",
    "random_expr",
    "subexpressions",
    "replace_at",
    "describe_operators",
]

FEATURES = ("open", "high", "low", "close", "volume", "vwap")

MAX_EXPR_DEPTH = 12
MAX_EXPR_NODES = 128
MIN_WINDOW = 1
MAX_WINDOW = 250
CONST_BOUND = 100.0

UNARY = "unary"
BINARY = "binary"
ROLLING_UNARY = "rolling-unary"
ROLLING_BINARY = "rolling-binary"
CROSS_SECTIONAL = "cross-sectional"


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    kind: str
    semantics: str


def _specs(kind: str, items: dict[str, str]) -> list[OperatorSpec]:
    return [OperatorSpec(name, kind, doc) for name, doc in items.items()]


OPERATOR_TABLE: dict[str, OperatorSpec] = {
    spec.name: spec
    for spec in (
        _specs(UNARY, {
            "neg": "elementwise negation",
            "abs": "elementwise absolute value",
            "log1p_signed": "sign(x) * log(1 + |x|); defined for all reals",
            "sign": "elementwise sign in {-1, 0, 1}",
            "inv": "1 / x; missing where |x| < 1e-12",
        })
        + _specs(BINARY, {
            "add": "elementwise x + y (infix +)",
            "sub": "elementwise x - y (infix -)",
            "mul": "elementwise x * y (infix *)",
            "div_safe": "x / y; missing where |y| < 1e-12 (infix /)",
            "max": "elementwise maximum",
            "min": "elementwise minimum",
            "pow_signed": "sign(x) * |x| ** y; non-finite results become missing",
        })
        + _specs(ROLLING_UNARY, {
            "ts_mean": "mean over the trailing window ending at t",
            "ts_std": "sample standard deviation over the trailing window",
            "ts_sum": "sum over the trailing window",
            "ts_min": "minimum over the trailing window",
            "ts_max": "maximum over the trailing window",
            "ts_delta": "x[t] - x[t - w]",
            "ts_delay": "x[t - w]",
            "ts_rank": "fractional rank of x[t] within the trailing window, in [0, 1]",
        })
        + _specs(ROLLING_BINARY, {
            "ts_corr": "Pearson correlation of x and y over the trailing window",
            "ts_cov": "sample covariance of x and y over the trailing window",
        })
        + _specs(CROSS_SECTIONAL, {
            "cs_rank": "rank across stocks within each day, mapped to [0, 1]",
        })
    )
}

_INFIX_FOR = {"add": "+", "sub": "-", "mul": "*", "div_safe": "/"}
_OP_FOR_INFIX = {"+": "add", "-": "sub", "*": "mul", "/": "div_safe"}


class ExprError(ValueError):
    """Base class for expression language errors."""


class ExprSyntaxError(ExprError):
    """Malformed expression text; carries the byte offset of the fault."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class ExprSemanticError(ExprError):
    """Well-formed text violating the operator table or value ranges."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)
        self.position = position


# --- AST ---------------------------------------------------------------


@dataclass(frozen=True)
class FeatureLeaf:
    feature: str


@dataclass(frozen=True)
class ConstLeaf:
    value: float


@dataclass(frozen=True)
class UnaryOp:
    op: str
    child: "AlphaExpr"


@dataclass(frozen=True)
class BinaryOp:
    op: str
    left: "AlphaExpr"
    right: "AlphaExpr"


@dataclass(frozen=True)
class RollingOp:
    op: str
    window: int
    child: "AlphaExpr"
    child2: "AlphaExpr | None" = None


@dataclass(frozen=True)
class CrossSectionalOp:
    op: str
    child: "AlphaExpr"


AlphaExpr = FeatureLeaf | ConstLeaf | UnaryOp | BinaryOp | RollingOp | CrossSectionalOp


def _children(expr: AlphaExpr) -> tuple[AlphaExpr, ...]:
    if isinstance(expr, (FeatureLeaf, ConstLeaf)):
        return ()
    if isinstance(expr, (UnaryOp, CrossSectionalOp)):
        return (expr.child,)
    if isinstance(expr, BinaryOp):
        return (expr.left, expr.right)
    if isinstance(expr, RollingOp):
        return (expr.child,) if expr.child2 is None else (expr.child, expr.child2)
    raise TypeError(f"not an expression node: {expr!r}")


def _with_children(expr: AlphaExpr, kids: tuple[AlphaExpr, ...]) -> AlphaExpr:
    if isinstance(expr, UnaryOp):
        return UnaryOp(expr.op, kids[0])
    if isinstance(expr, CrossSectionalOp):
        return CrossSectionalOp(expr.op, kids[0])
    if isinstance(expr, BinaryOp):
        return BinaryOp(expr.op, kids[0], kids[1])
    if isinstance(expr, RollingOp):
        second = kids[1] if len(kids) > 1 else None
        return RollingOp(expr.op, expr.window, kids[0], second)
    return expr


def subexpressions(expr: AlphaExpr) -> list[tuple[tuple[int, ...], AlphaExpr]]:
    """All ``(path, node)`` pairs in depth-first pre-order; ``()`` is the root."""
    out: list[tuple[tuple[int, ...], AlphaExpr]] = []
    stack: list[tuple[tuple[int, ...], AlphaExpr]] = [((), expr)]
    while stack:
        path, node = stack.pop()
        out.append((path, node))
        kids = _children(node)
        for i in range(len(kids) - 1, -1, -1):
            stack.append((path + (i,), kids[i]))
    return out


def replace_at(expr: AlphaExpr, path: tuple[int, ...], sub: AlphaExpr) -> AlphaExpr:
    """Return a new expression with the node at ``path`` replaced by ``sub``."""
    if not path:
        return sub
    kids = list(_children(expr))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], sub)
    return _with_children(expr, tuple(kids))


def complexity(expr: AlphaExpr) -> int:
    """AST node count; window literals are parameters, not nodes."""
    return len(subexpressions(expr))


def depth(expr: AlphaExpr) -> int:
    """Depth of the deepest leaf; a lone leaf has depth 1."""
    return 1 + max((depth(child) for child in _children(expr)), default=0)


def validate_expr(expr: AlphaExpr) -> list[str]:
    """Check an AST against the operator table and the size/value ranges.

    Returns one message per violation; the parser enforces the same rules,
    so this mainly guards programmatically built expressions.
    """
    problems: list[str] = []
    nodes = subexpressions(expr)
    if len(nodes) > MAX_EXPR_NODES:
        problems.append(f"node count {len(nodes)} exceeds cap {MAX_EXPR_NODES}")
    d = depth(expr)
    if d > MAX_EXPR_DEPTH:
        problems.append(f"depth {d} exceeds cap {MAX_EXPR_DEPTH}")
    kind_for_type = {
        UnaryOp: UNARY,
        BinaryOp: BINARY,
        CrossSectionalOp: CROSS_SECTIONAL,
    }
    for path, node in nodes:
        where = f"at {list(path)}"
        if isinstance(node, FeatureLeaf):
            if node.feature not in FEATURES:
                problems.append(f"unknown feature '{node.feature}' {where}")
        elif isinstance(node, ConstLeaf):
            v = node.value
            if not (v == v and abs(v) != float("inf")):
                problems.append(f"non-finite constant {where}")
            elif abs(v) > CONST_BOUND:
                problems.append(f"constant {v} outside [-{CONST_BOUND}, {CONST_BOUND}] {where}")
        elif isinstance(node, RollingOp):
            spec = OPERATOR_TABLE.get(node.op)
            want = ROLLING_BINARY if node.child2 is not None else ROLLING_UNARY
            if spec is None:
                problems.append(f"unknown operator '{node.op}' {where}")
            elif spec.kind != want:
                problems.append(f"'{node.op}' used with {want} arity {where}")
            if not (isinstance(node.window, int) and MIN_WINDOW <= node.window <= MAX_WINDOW):
                problems.append(
                    f"window {node.window} outside [{MIN_WINDOW}, {MAX_WINDOW}] {where}"
                )
        else:
            spec = OPERATOR_TABLE.get(node.op)
            if spec is None:
                problems.append(f"unknown operator '{node.op}' {where}")
            elif spec.kind != kind_for_type[type(node)]:
                problems.append(f"'{node.op}' used with {kind_for_type[type(node)]} arity {where}")
    return problems


# --- Parser ------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[()+\-*/,])
  | (?P<ws>\s+)
""",
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = match.lastgroup or ""
        if kind != "ws":
            tokens.append(_Token(kind, match.group(), pos))
        pos = match.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        token = self.tokens[self.i]
        self.i += 1
        return token

    def expect(self, text: str) -> _Token:
        token = self.peek()
        if token.text != text:
            raise ExprSyntaxError(f"expected {text!r}, found {token.text!r}", token.pos)
        return self.advance()

    # expr := term (('+' | '-') term)*
    def parse_expr(self) -> AlphaExpr:
        node = self.parse_term()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            node = BinaryOp(_OP_FOR_INFIX[op], node, self.parse_term())
        return node

    # term := factor (('*' | '/') factor)*
    def parse_term(self) -> AlphaExpr:
        node = self.parse_factor()
        while self.peek().text in ("*", "/"):
            op = self.advance().text
            node = BinaryOp(_OP_FOR_INFIX[op], node, self.parse_factor())
        return node

    # factor := '-' factor | primary
    def parse_factor(self) -> AlphaExpr:
        if self.peek().text == "-":
            minus = self.advance()
            child = self.parse_factor()
            if isinstance(child, ConstLeaf):
                return self._const(-child.value, minus.pos)
            return UnaryOp("neg", child)
        return self.parse_primary()

    def parse_primary(self) -> AlphaExpr:
        token = self.peek()
        if token.kind == "number":
            self.advance()
            return self._const(float(token.text), token.pos)
        if token.text == "(":
            self.advance()
            node = self.parse_expr()
            self.expect(")")
            return node
        if token.kind == "name":
            self.advance()
            if self.peek().text == "(":
                return self.parse_call(token)
            if token.text in FEATURES:
                return FeatureLeaf(token.text)
            if token.text in OPERATOR_TABLE:
                raise ExprSemanticError(
                    f"operator '{token.text}' requires call syntax", token.pos
                )
            raise ExprSemanticError(f"unknown identifier '{token.text}'", token.pos)
        raise ExprSyntaxError(f"expected an expression, found {token.text!r}", token.pos)

    def parse_call(self, name: _Token) -> AlphaExpr:
        spec = OPERATOR_TABLE.get(name.text)
        if spec is None:
            raise ExprSemanticError(f"unknown operator '{name.text}'", name.pos)
        self.expect("(")
        # Parse the whole argument list first so wrong argument counts are
        # reported as arity mismatches, not as stray-token syntax errors.
        args: list[tuple[AlphaExpr, int | None, int]] = []
        if self.peek().text != ")":
            args.append(self.parse_arg())
            while self.peek().text == ",":
                self.advance()
                args.append(self.parse_arg())
        self.expect(")")
        n_exprs = {
            UNARY: 1, BINARY: 2, CROSS_SECTIONAL: 1,
            ROLLING_UNARY: 1, ROLLING_BINARY: 2,
        }[spec.kind]
        takes_window = spec.kind in (ROLLING_UNARY, ROLLING_BINARY)
        expected = n_exprs + (1 if takes_window else 0)
        if len(args) != expected:
            raise ExprSemanticError(
                f"'{name.text}' takes {expected} argument(s), got {len(args)}",
                name.pos,
            )
        window: int | None = None
        if takes_window:
            _, bare_int, pos = args[-1]
            if bare_int is None:
                raise ExprSemanticError(
                    f"window of '{name.text}' must be an integer literal", pos
                )
            if not MIN_WINDOW <= bare_int <= MAX_WINDOW:
                raise ExprSemanticError(
                    f"window {bare_int} outside [{MIN_WINDOW}, {MAX_WINDOW}]", pos
                )
            window = bare_int
        exprs = [a[0] for a in args]
        if spec.kind == UNARY:
            return UnaryOp(name.text, exprs[0])
        if spec.kind == BINARY:
            return BinaryOp(name.text, exprs[0], exprs[1])
        if spec.kind == CROSS_SECTIONAL:
            return CrossSectionalOp(name.text, exprs[0])
        if spec.kind == ROLLING_UNARY:
            return RollingOp(name.text, window, exprs[0])
        return RollingOp(name.text, window, exprs[0], exprs[1])

    def parse_arg(self) -> tuple[AlphaExpr, int | None, int]:
        """One argument plus, when it was a lone integer literal, its value
        (so it can serve in window position)."""
        start = self.i
        token = self.peek()
        node = self.parse_expr()
        bare_int: int | None = None
        if self.i == start + 1 and token.kind == "number" and token.text.isdigit():
            bare_int = int(token.text)
        return node, bare_int, token.pos

    def _const(self, value: float, pos: int) -> ConstLeaf:
        # Range checks happen after the whole parse so integer literals in
        # window position (which may exceed the constant bound) never get
        # misreported here.
        return ConstLeaf(value)


def parse(text: str) -> AlphaExpr:
    """Parse expression text into a validated AST."""
    parser = _Parser(text)
    node = parser.parse_expr()
    trailing = parser.peek()
    if trailing.kind != "end":
        raise ExprSyntaxError(f"unexpected trailing input {trailing.text!r}", trailing.pos)
    problems = validate_expr(node)
    if problems:
        raise ExprSemanticError("; ".join(problems))
    return node


def unparse(expr: AlphaExpr) -> str:
    """Render an AST so that ``parse(unparse(e))`` is structurally ``e``.

    Infix arithmetic is fully parenthesized; all other operators print in
    call syntax.
    """
    if isinstance(expr, FeatureLeaf):
        return expr.feature
    if isinstance(expr, ConstLeaf):
        return repr(expr.value)
    if isinstance(expr, UnaryOp):
        return f"{expr.op}({unparse(expr.child)})"
    if isinstance(expr, BinaryOp):
        if expr.op in _INFIX_FOR:
            return f"({unparse(expr.left)} {_INFIX_FOR[expr.op]} {unparse(expr.right)})"
        return f"{expr.op}({unparse(expr.left)}, {unparse(expr.right)})"
    if isinstance(expr, RollingOp):
        if expr.child2 is None:
            return f"{expr.op}({unparse(expr.child)}, {expr.window})"
        return f"{expr.op}({unparse(expr.child)}, {unparse(expr.child2)}, {expr.window})"
    if isinstance(expr, CrossSectionalOp):
        return f"{expr.op}({unparse(expr.child)})"
    raise TypeError(f"not an expression node: {expr!r}")


# --- Random generation (GP substrate) -----------------------------------

# Trailing windows the generator draws from; mutation can then nudge any
# window inside [MIN_WINDOW, MAX_WINDOW].
WINDOW_CHOICES = (1, 2, 3, 5, 10, 20, 40, 60)

_KIND_WEIGHTS = (
    (UNARY, 0.15),
    (BINARY, 0.35),
    (ROLLING_UNARY, 0.25),
    (ROLLING_BINARY, 0.05),
    (CROSS_SECTIONAL, 0.10),
    ("leaf", 0.10),
)

_OPS_BY_KIND: dict[str, tuple[str, ...]] = {}
for _spec in OPERATOR_TABLE.values():
    _OPS_BY_KIND.setdefault(_spec.kind, tuple())
    _OPS_BY_KIND[_spec.kind] += (_spec.name,)


def random_expr(rng: random.Random | int, max_depth: int) -> AlphaExpr:
    """Draw a random valid expression of depth at most ``max_depth``.

    Deterministic for a fixed seed: an ``int`` is treated as a seed for a
    fresh generator.
    """
    if isinstance(rng, int):
        rng = random.Random(rng)
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    return _random_node(rng, max_depth)


def _random_leaf(rng: random.Random) -> AlphaExpr:
    if rng.random() < 0.8:
        return FeatureLeaf(rng.choice(FEATURES))
    return ConstLeaf(round(rng.uniform(-5.0, 5.0), 2))


def _random_node(rng: random.Random, budget: int) -> AlphaExpr:
    if budget <= 1:
        return _random_leaf(rng)
    roll = rng.random()
    cumulative = 0.0
    kind = "leaf"
    for candidate, weight in _KIND_WEIGHTS:
        cumulative += weight
        if roll < cumulative:
            kind = candidate
            break
    if kind == "leaf":
        return _random_leaf(rng)
    op = rng.choice(_OPS_BY_KIND[kind])
    if kind == UNARY:
        return UnaryOp(op, _random_node(rng, budget - 1))
    if kind == BINARY:
        return BinaryOp(op, _random_node(rng, budget - 1), _random_node(rng, budget - 1))
    if kind == CROSS_SECTIONAL:
        return CrossSectionalOp(op, _random_node(rng, budget - 1))
    window = rng.choice(WINDOW_CHOICES)
    if kind == ROLLING_UNARY:
        return RollingOp(op, window, _random_node(rng, budget - 1))
    return RollingOp(
        op, window, _random_node(rng, budget - 1), _random_node(rng, budget - 1)
    )


def describe_operators() -> str:
    """Human/prompt-readable rendering of the operator table."""
    lines = []
    for kind, label, shape in (
        (UNARY, "Unary", "op(x)"),
        (BINARY, "Binary", "op(x, y)"),
        (ROLLING_UNARY, "Rolling", "op(x, window)"),
        (ROLLING_BINARY, "Rolling pair", "op(x, y, window)"),
        (CROSS_SECTIONAL, "Cross-sectional", "op(x)"),
    ):
        names = ", ".join(_OPS_BY_KIND[kind])
        lines.append(f"{label} {shape}: {names}")
    return "\n".join(lines)
