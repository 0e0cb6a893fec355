"""Coefficient functions: a small arithmetic expression language.

Expressions are parsed into immutable trees over a fixed set of variables
(``x`` and ``theta`` by default, ``t`` for time-dependent curves).  Trees
evaluate on floats or numpy arrays and can be differentiated exactly with
respect to any variable, which is how the drift derivatives needed by the
first-order process, the chi-square block and the composite tests are
obtained.

Grammar (highest precedence first)::

    atom   := number | identifier | identifier '(' expr ')' | '(' expr ')'
    power  := atom ['^' unary]            # right associative
    unary  := '-' unary | '+' unary | power
    term   := unary (('*' | '/') unary)*
    expr   := term (('+' | '-') term)*
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "ExprSyntaxError",
    "DomainError",
    "RegularityError",
    "CoefficientFn",
    "ModelSpec",
    "ValidationReport",
    "parse_expr",
    "coefficient",
    "eval_expr",
    "validate_model",
    "load_model",
    "central_difference",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "abs", "sqrt", "tanh")
CONSTANTS = {"pi": math.pi, "e": math.e}


class ExprSyntaxError(ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class DomainError(ArithmeticError):
    """Expression evaluated outside its domain (division by zero, log of x <= 0, ...)."""


class RegularityError(ValueError):
    """Model violates the positivity requirement on the drift or the diffusion."""

    def __init__(self, message: str, x: float | None = None):
        super().__init__(message)
        self.x = x


# ---------------------------------------------------------------------------
# expression tree


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Num | Var | Neg | BinOp | Call

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def to_text(node: Node) -> str:
    """Render a tree back to parseable text (fully parenthesised)."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    raw = text.encode("utf-8")
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(
                f"unexpected character {text[start]!r}", len(text[:start].encode("utf-8"))
            )
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), len(text[:start].encode("utf-8"))))
        pos = m.end()
    tokens.append(("end", "", len(raw)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: tuple[str, ...]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.take()
        if val != value or kind == "end":
            raise ExprSyntaxError(f"expected {value!r}", off)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", off)
        return node

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
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                if self.peek()[1] != "(":
                    raise ExprSyntaxError(f"function {val!r} needs an argument", self.peek()[2])
                self.take()
                arg = self.expr()
                if self.peek()[1] == ",":
                    raise ExprSyntaxError(f"function {val!r} takes exactly one argument", self.peek()[2])
                self.expect(")")
                return Call(val, arg)
            if val in self.variables:
                return Var(val)
            if val in CONSTANTS:
                return Num(CONSTANTS[val])
            raise ExprSyntaxError(f"unknown identifier {val!r}", off)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", off)
        raise ExprSyntaxError(f"unexpected token {val!r}", off)


# ---------------------------------------------------------------------------
# evaluation


def _check(mask, message: str):
    if np.any(mask):
        raise DomainError(message)


def _evaluate(node: Node, env: Mapping[str, object]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_evaluate(node.arg, env)
    if isinstance(node, Call):
        a = _evaluate(node.arg, env)
        f = node.func
        if f == "log":
            _check(np.asarray(a) <= 0, "log of non-positive argument")
            return np.log(a)
        if f == "sqrt":
            _check(np.asarray(a) < 0, "sqrt of negative argument")
            return np.sqrt(a)
        return getattr(np, f)(a)
    a = _evaluate(node.left, env)
    b = _evaluate(node.right, env)
    op = node.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        _check(np.asarray(b) == 0, "division by zero")
        return a / b
    # a ** b: negative base only with integral exponent, zero base only with b >= 0
    aa, bb = np.asarray(a), np.asarray(b)
    _check((aa < 0) & (bb != np.round(bb)), "fractional power of negative base")
    _check((aa == 0) & (bb < 0), "division by zero")
    with np.errstate(over="ignore"):
        return np.power(np.asarray(a, dtype=float), b)


# ---------------------------------------------------------------------------
# symbolic differentiation


def _is_num(node: Node, value: float | None = None) -> bool:
    return isinstance(node, Num) and (value is None or node.value == value)


def _add(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _mul(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    return BinOp("/", a, b)


def _neg(a: Node) -> Node:
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _depends(node: Node, var: str) -> bool:
    if isinstance(node, Num):
        return False
    if isinstance(node, Var):
        return node.name == var
    if isinstance(node, (Neg, Call)):
        return _depends(node.arg, var)
    return _depends(node.left, var) or _depends(node.right, var)


def _diff(node: Node, var: str) -> Node:
    if not _depends(node, var):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0)
    if isinstance(node, Neg):
        return _neg(_diff(node.arg, var))
    if isinstance(node, Call):
        u = node.arg
        du = _diff(u, var)
        f = node.func
        if f == "sin":
            outer = Call("cos", u)
        elif f == "cos":
            outer = _neg(Call("sin", u))
        elif f == "exp":
            outer = node
        elif f == "log":
            return _div(du, u)
        elif f == "abs":
            # sign(u) written as u/|u|; undefined at u=0 like |u|' itself
            outer = _div(u, node)
        elif f == "sqrt":
            return _div(du, _mul(Num(2.0), node))
        else:  # tanh
            outer = _sub(Num(1.0), BinOp("^", node, Num(2.0)))
        return _mul(outer, du)
    a, b = node.left, node.right
    da, db = _diff(a, var), _diff(b, var)
    op = node.op
    if op == "+":
        return _add(da, db)
    if op == "-":
        return _sub(da, db)
    if op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if op == "/":
        return _div(_sub(_mul(da, b), _mul(a, db)), BinOp("^", b, Num(2.0)))
    # power
    if not _depends(b, var):
        # d(a^c) = c a^(c-1) da
        return _mul(_mul(b, BinOp("^", a, _sub(b, Num(1.0)))), da)
    # general case a^b = exp(b log a)
    return _mul(node, _add(_mul(db, Call("log", a)), _div(_mul(b, da), a)))


# ---------------------------------------------------------------------------
# public type


@dataclass(frozen=True)
class CoefficientFn:
    """A scalar coefficient given by an expression tree.

    Instances are immutable and can be shared freely.  Call them like
    functions: ``f(x)``, ``f(x, theta)`` or, for time curves, ``f(t)``.
    """

    tree: Node
    variables: tuple[str, ...] = ("x", "theta")
    text: str = field(default="", compare=False)

    @property
    def uses_theta(self) -> bool:
        return "theta" in self.variables and _depends(self.tree, "theta")

    def depends_on(self, var: str) -> bool:
        return _depends(self.tree, var)

    @property
    def is_constant(self) -> bool:
        return all(not _depends(self.tree, v) for v in self.variables)

    def __call__(self, x, theta=None):
        return eval_expr(self, x, theta)

    def evaluate(self, **env):
        """Evaluate with explicit variable bindings (``f.evaluate(t=...)``)."""
        missing = [v for v in self.variables if _depends(self.tree, v) and v not in env]
        if missing:
            raise ValueError(f"missing value for {', '.join(missing)}")
        out = _evaluate(self.tree, env)
        if np.ndim(out) == 0 and not any(np.ndim(v) for v in env.values()):
            return float(out)
        shape = np.broadcast_shapes(*(np.shape(v) for v in env.values()))
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    def derivative(self, var: str = "x") -> "CoefficientFn":
        """Exact derivative with respect to ``var`` as a new coefficient."""
        d = _diff(self.tree, var)
        return CoefficientFn(d, self.variables, to_text(d))

    def compile(self) -> Callable:
        """Return a fast positional callable ``g(*values)`` in ``variables`` order."""
        tree, names = self.tree, self.variables
        return lambda *vals: _evaluate(tree, dict(zip(names, vals)))

    def __str__(self) -> str:
        return self.text or to_text(self.tree)


def parse_expr(text: str, variables: tuple[str, ...] = ("x", "theta")) -> CoefficientFn:
    """Parse expression text into a :class:`CoefficientFn`.

    Builtin shortcuts skip the parser: ``"const:c"`` is the constant ``c``
    and ``"linear:a,b"`` is ``a + b*x``.
    """
    if text.startswith("const:"):
        tree: Node = Num(float(text[6:]))
    elif text.startswith("linear:"):
        a, b = (float(v) for v in text[7:].split(","))
        tree = BinOp("+", Num(a), BinOp("*", Num(b), Var(variables[0])))
    else:
        tree = _Parser(text, variables).parse()
    return CoefficientFn(tree, variables, text)


def coefficient(value, variables: tuple[str, ...] = ("x", "theta")) -> CoefficientFn:
    """Coerce a number, expression string or existing coefficient."""
    if isinstance(value, CoefficientFn):
        return value
    if isinstance(value, (int, float)):
        return CoefficientFn(Num(float(value)), variables, repr(float(value)))
    return parse_expr(str(value), variables)


def eval_expr(f: CoefficientFn, x, theta=None):
    """Evaluate ``f`` at ``x`` (and ``theta`` when ``f`` uses it)."""
    if f.uses_theta and theta is None:
        raise ValueError("expression references theta but no value was given")
    first = f.variables[0]
    env = {first: x}
    if theta is not None and "theta" in f.variables:
        env["theta"] = theta
    return f.evaluate(**env)


def central_difference(g: Callable[[float], float], x: float, h: float | None = None) -> float:
    """Central finite difference with step ``1e-5 * (1 + |x|)``."""
    if h is None:
        h = 1e-5 * (1.0 + abs(x))
    return (g(x + h) - g(x - h)) / (2.0 * h)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class ModelSpec:
    """Small-noise diffusion ``dX = S0(X) dt + eps * sigma(X) dW``, ``X_0 = x0``."""

    trend: CoefficientFn
    diffusion: CoefficientFn
    x0: float
    T: float
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "trend", coefficient(self.trend))
        object.__setattr__(self, "diffusion", coefficient(self.diffusion))
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")

    def with_epsilon(self, epsilon: float) -> "ModelSpec":
        return ModelSpec(self.trend, self.diffusion, self.x0, self.T, epsilon)

    def to_dict(self) -> dict:
        return {
            "trend": str(self.trend),
            "diffusion": str(self.diffusion),
            "x0": self.x0,
            "T": self.T,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        missing = [k for k in ("trend", "diffusion", "x0", "T", "epsilon") if k not in d]
        if missing:
            raise KeyError(f"model config is missing field(s): {', '.join(missing)}")
        return cls(
            coefficient(d["trend"]),
            coefficient(d["diffusion"]),
            float(d["x0"]),
            float(d["T"]),
            float(d["epsilon"]),
        )

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def load_model(path) -> ModelSpec:
    with open(path) as fh:
        return ModelSpec.from_dict(json.load(fh))


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    x_lo: float
    x_hi: float
    min_trend: float
    argmin_trend: float
    min_sigma2: float
    argmin_sigma2: float
    lipschitz: float
    warnings: tuple[str, ...] = ()


def validate_model(
    spec: ModelSpec,
    grid_points: int = 1001,
    margin: float = 0.0,
    lipschitz_bound: float | None = None,
) -> ValidationReport:
    """Check positivity of ``S0`` and ``sigma^2`` on the range swept by the limit path.

    The limit ODE is solved on ``[0, T]`` and ``[min x, max x]`` (widened by
    ``margin`` on each side) is sampled at ``grid_points`` points.  Raises
    :class:`RegularityError` naming the offending ``x`` on a positivity
    failure.  A finite-difference Lipschitz estimate is reported; exceeding
    ``lipschitz_bound`` only produces a warning.
    """
    from .ode import rk4

    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    trend = spec.trend.compile()
    path = rk4(lambda _t, x: trend(x), spec.x0, spec.T, max(grid_points - 1, 100))
    lo, hi = float(np.min(path)) - margin, float(np.max(path)) + margin
    xs = np.linspace(lo, hi, grid_points)
    s = np.broadcast_to(np.asarray(spec.trend(xs), dtype=float), xs.shape)
    sig = np.broadcast_to(np.asarray(spec.diffusion(xs), dtype=float), xs.shape)
    s2 = sig**2
    i, j = int(np.argmin(s)), int(np.argmin(s2))
    if s[i] <= 0:
        raise RegularityError(f"trend is not positive at x={xs[i]:.6g} (S0={s[i]:.6g})", float(xs[i]))
    if s2[j] <= 0:
        raise RegularityError(f"diffusion vanishes at x={xs[j]:.6g}", float(xs[j]))
    if hi > lo:
        dx = np.diff(xs)
        lip = float(np.max(np.abs(np.diff(s)) / dx + np.abs(np.diff(sig)) / dx))
    else:
        lip = 0.0
    warnings = ()
    if lipschitz_bound is not None and lip > lipschitz_bound:
        warnings = (f"Lipschitz estimate {lip:.4g} exceeds bound {lipschitz_bound:.4g}",)
    return ValidationReport(True, lo, hi, float(s[i]), float(xs[i]), float(s2[j]), float(xs[j]), lip, warnings)
