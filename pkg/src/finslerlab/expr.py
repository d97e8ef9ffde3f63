"""Expression language and model files.

A model file declares a Finsler metric F(x, y), the components of a candidate
concurrent vector field phi(x), strict-inequality domain constraints and named
real parameters::

    # slope metric on R^3
    name = my_model
    dim = 3
    F = sqrt(x3^2*((x1^2*y2^2 + 2*y1*y2)/y1)^2 + y3^2)
    phi1 = 0
    phi2 = 0
    phi3 = x3
    domain = x1^2          # means: x1^2 > 0
    param scale = 1.0

Expressions are whitespace-insensitive with precedence ^ > unary - > * / > + -
('^' is right-associative).  Variables are x1..xn and y1..yn; every other
identifier is a named parameter, except sqrt/abs/sin/cos/exp/log which are
function calls.  ASTs evaluate over any scalar ring that implements the usual
operators (floats or jets).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import EvalError, ModelSyntaxError, ModelValidationError
from .numkit import Jet

__all__ = [
    "Num", "Var", "Param", "Neg", "Bin", "Call",
    "ModelDef", "parse", "parse_expression", "evaluate", "to_source",
    "free_vars", "squared",
]

FUNCTIONS = ("sqrt", "abs", "sin", "cos", "exp", "log")


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str   # 'x' or 'y'
    index: int  # 1-based


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    a: object


@dataclass(frozen=True)
class Bin:
    op: str  # + - * / ^
    a: object
    b: object


@dataclass(frozen=True)
class Call:
    fn: str
    a: object


def free_vars(ast):
    """Set of ('x'|'y', index) pairs and parameter names used by the AST."""
    vs, ps = set(), set()

    def walk(node):
        if isinstance(node, Var):
            vs.add((node.kind, node.index))
        elif isinstance(node, Param):
            ps.add(node.name)
        elif isinstance(node, Neg):
            walk(node.a)
        elif isinstance(node, Bin):
            walk(node.a)
            walk(node.b)
        elif isinstance(node, Call):
            walk(node.a)

    walk(ast)
    return vs, ps


def squared(ast):
    """AST of the square, with sqrt(u)^2 collapsed to u.

    The metric layer differentiates F^2 rather than F, so for the common shape
    F = sqrt(u) this removes the square root entirely.
    """
    if isinstance(ast, Call) and ast.fn == "sqrt":
        return ast.a
    return Bin("^", ast, Num(2.0))


# --------------------------------------------------------------------------
# tokenizer
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),=]))"
)

_VAR_RE = re.compile(r"^([xy])([1-9][0-9]*)$")


@dataclass
class _Token:
    kind: str  # 'num' | 'ident' | 'op' | 'end'
    text: str
    line: int
    col: int


def _tokenize(text: str, line: int = 1) -> list[_Token]:
    toks = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if not m or m.end() == i:
            stripped = text[i:].lstrip()
            if not stripped:
                break
            col = i + (len(text[i:]) - len(stripped)) + 1
            raise ModelSyntaxError(f"unexpected character {stripped[0]!r}", line, col,
                                   expected=("number", "identifier", "operator"))
        for kind in ("num", "ident", "op"):
            if m.group(kind) is not None:
                toks.append(_Token(kind, m.group(kind), line, m.start(kind) + 1))
                break
        i = m.end()
    toks.append(_Token("end", "", line, len(text) + 1))
    return toks


# --------------------------------------------------------------------------
# recursive-descent expression parser
# --------------------------------------------------------------------------

class _Parser:
    def __init__(self, toks: list[_Token]):
        self.toks = toks
        self.k = 0

    def peek(self) -> _Token:
        return self.toks[self.k]

    def next(self) -> _Token:
        t = self.toks[self.k]
        self.k += 1
        return t

    def expect_op(self, op: str):
        t = self.peek()
        if t.kind != "op" or t.text != op:
            raise ModelSyntaxError(f"expected {op!r}, found {t.text or 'end of input'!r}",
                                   t.line, t.col, expected=(op,))
        return self.next()

    def expression(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.next().text
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.next().text
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        t = self.peek()
        if t.kind == "op" and t.text == "-":
            self.next()
            return Neg(self.unary())
        if t.kind == "op" and t.text == "+":
            self.next()
            return self.unary()
        return self.power()

    def power(self):
        node = self.atom()
        t = self.peek()
        if t.kind == "op" and t.text == "^":
            self.next()
            return Bin("^", node, self.unary())  # right-assoc, unary exponents allowed
        return node

    def atom(self):
        t = self.next()
        if t.kind == "num":
            return Num(float(t.text))
        if t.kind == "ident":
            if self.peek().kind == "op" and self.peek().text == "(":
                if t.text not in FUNCTIONS:
                    raise ModelSyntaxError(
                        f"unknown function {t.text!r}", t.line, t.col, expected=FUNCTIONS)
                self.next()
                arg = self.expression()
                self.expect_op(")")
                return Call(t.text, arg)
            m = _VAR_RE.match(t.text)
            if m:
                return Var(m.group(1), int(m.group(2)))
            return Param(t.text)
        if t.kind == "op" and t.text == "(":
            node = self.expression()
            self.expect_op(")")
            return node
        raise ModelSyntaxError(
            f"expected an expression, found {t.text or 'end of input'!r}",
            t.line, t.col, expected=("number", "identifier", "("))

    def finish(self):
        t = self.peek()
        if t.kind != "end":
            raise ModelSyntaxError(f"trailing input {t.text!r}", t.line, t.col,
                                   expected=("end of expression",))


def parse_expression(source: str, line: int = 1):
    """Parse one expression string into an AST."""
    p = _Parser(_tokenize(source, line))
    node = p.expression()
    p.finish()
    return node


# --------------------------------------------------------------------------
# evaluation (generic over floats and jets)
# --------------------------------------------------------------------------

def _call_fn(fn: str, v):
    if isinstance(v, Jet):
        if fn == "sqrt":
            return v.sqrt()
        if fn == "abs":
            return abs(v)
        if fn == "exp":
            return v.exp()
        if fn == "log":
            return v.log()
        if fn == "sin":
            return v.sin()
        if fn == "cos":
            return v.cos()
    else:
        if fn == "sqrt":
            if v < 0:
                raise EvalError(f"sqrt of negative value {v}")
            return math.sqrt(v)
        if fn == "abs":
            return abs(v)
        if fn == "exp":
            return math.exp(v)
        if fn == "log":
            if v <= 0:
                raise EvalError(f"log of non-positive value {v}")
            return math.log(v)
        if fn == "sin":
            return math.sin(v)
        if fn == "cos":
            return math.cos(v)
    raise EvalError(f"unknown function {fn!r}")


def _pow(base, exponent):
    if isinstance(exponent, Jet):
        # variable exponent: exp(e*log(b)) on the principal branch
        if isinstance(base, Jet):
            return (exponent * base.log()).exp()
        if base <= 0:
            raise EvalError(f"{base} ** <expr>: variable power needs a positive base")
        return (exponent * math.log(base)).exp()
    if float(exponent).is_integer():
        k = int(exponent)
        if isinstance(base, Jet):
            return base ** k
        if base == 0.0 and k < 0:
            raise EvalError("0 raised to a negative power")
        return base ** k
    if isinstance(base, Jet):
        return base ** float(exponent)
    if base <= 0:
        raise EvalError(f"{base} ** {exponent}: non-integer power needs a positive base")
    return base ** float(exponent)


def evaluate(ast, xs, ys=None, params=None):
    """Evaluate an AST at coordinates xs (x1..xn) and ys (y1..yn).

    `ys` may be omitted for x-only expressions (phi components, domains over x).
    Scalars may be floats or jets, mixed freely with numeric literals.
    """
    params = params or {}

    def ev(node):
        if isinstance(node, Num):
            return node.value
        if isinstance(node, Var):
            seq = xs if node.kind == "x" else ys
            if seq is None:
                raise EvalError(f"no y-coordinates supplied but {node.kind}{node.index} used")
            if node.index > len(seq):
                raise EvalError(f"variable {node.kind}{node.index} out of range")
            return seq[node.index - 1]
        if isinstance(node, Param):
            try:
                return params[node.name]
            except KeyError:
                raise EvalError(f"unknown parameter {node.name!r}") from None
        if isinstance(node, Neg):
            return -ev(node.a)
        if isinstance(node, Call):
            return _call_fn(node.fn, ev(node.a))
        if isinstance(node, Bin):
            a = ev(node.a)
            if node.op == "^":
                return _pow(a, ev(node.b))
            b = ev(node.b)
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                if not isinstance(b, Jet) and abs(b) < 1e-300:
                    raise EvalError("division by ~0")
                return a / b
        raise EvalError(f"cannot evaluate node {node!r}")

    return ev(ast)


# --------------------------------------------------------------------------
# printer (used by the round-trip tests and diagnostics)
# --------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(ast) -> str:
    def render(node, ctx: int) -> str:
        if isinstance(node, Num):
            s = repr(node.value)
            return s
        if isinstance(node, Var):
            return f"{node.kind}{node.index}"
        if isinstance(node, Param):
            return node.name
        if isinstance(node, Call):
            return f"{node.fn}({render(node.a, 0)})"
        if isinstance(node, Neg):
            inner = f"-{render(node.a, _PREC['neg'])}"
            return f"({inner})" if ctx > _PREC["neg"] else inner
        if isinstance(node, Bin):
            p = _PREC[node.op]
            if node.op == "^":
                s = f"{render(node.a, p + 1)}^{render(node.b, p)}"
            else:
                s = f"{render(node.a, p)} {node.op} {render(node.b, p + 1)}"
            return f"({s})" if ctx > p else s
        raise ValueError(f"cannot render {node!r}")

    return render(ast, 0)


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------

@dataclass
class ModelDef:
    """Validated model: F, the phi components, domain constraints, parameters."""

    name: str
    dim: int
    F: object
    phi: tuple
    domain: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        _validate_model(self)
        # F^2 with the outer sqrt stripped; the metric layer differentiates this
        self.F2 = squared(self.F)

    def in_domain(self, x, y) -> bool:
        """True when every domain constraint is strictly positive at (x, y)."""
        for c in self.domain:
            if evaluate(c, x, y, self.params) <= 0.0:
                return False
        return True


_HEADER_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z_0-9]*)\s*=\s*(.*)$")
_PARAM_RE = re.compile(r"^\s*param\s+([A-Za-z_][A-Za-z_0-9]*)\s*=\s*(.*)$")
_PHI_RE = re.compile(r"^phi([1-9][0-9]*)$")


def parse(source: str) -> ModelDef:
    """Parse model-file text into a validated :class:`ModelDef`."""
    name = None
    dim = None
    F = None
    phi: dict[int, object] = {}
    domain: list = []
    params: dict[str, float] = {}

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        pm = _PARAM_RE.match(line)
        if pm:
            pname, rhs = pm.group(1), pm.group(2)
            try:
                params[pname] = float(rhs.strip())
            except ValueError:
                raise ModelSyntaxError(f"parameter {pname!r} needs a real literal",
                                       lineno, line.find("=") + 2,
                                       expected=("real number",)) from None
            continue
        hm = _HEADER_RE.match(line)
        if not hm:
            raise ModelSyntaxError("expected 'key = value'", lineno, 1,
                                   expected=("name", "dim", "F", "phi<k>", "domain", "param"))
        key, rhs = hm.group(1), hm.group(2).strip()
        col0 = line.index("=") + 2
        if key == "name":
            name = rhs
        elif key == "dim":
            try:
                dim = int(rhs)
            except ValueError:
                raise ModelSyntaxError("dim needs an integer", lineno, col0,
                                       expected=("integer",)) from None
        elif key == "F":
            F = parse_expression(rhs, lineno)
        elif key == "domain":
            domain.append(parse_expression(rhs, lineno))
        else:
            phim = _PHI_RE.match(key)
            if phim:
                idx = int(phim.group(1))
                if idx in phi:
                    raise ModelSyntaxError(f"duplicate phi{idx}", lineno, 1,
                                           expected=(f"phi{idx} only once",))
                phi[idx] = parse_expression(rhs, lineno)
            else:
                raise ModelSyntaxError(f"unknown key {key!r}", lineno, 1,
                                       expected=("name", "dim", "F", "phi<k>",
                                                 "domain", "param"))

    if name is None:
        raise ModelValidationError("model file lacks a 'name =' line")
    if dim is None:
        raise ModelValidationError("model file lacks a 'dim =' line")
    if F is None:
        raise ModelValidationError("model file lacks an 'F =' line")
    missing = [k for k in range(1, dim + 1) if k not in phi]
    if missing:
        raise ModelValidationError(f"missing phi components: {missing}")
    extra = [k for k in phi if k > dim]
    if extra:
        raise ModelValidationError(f"phi components beyond dim={dim}: {extra}")

    return ModelDef(name=name, dim=dim, F=F,
                    phi=tuple(phi[k] for k in range(1, dim + 1)),
                    domain=tuple(domain), params=dict(params))


def _validate_model(model: ModelDef):
    if model.dim < 2:
        raise ModelValidationError(f"dim must be >= 2, got {model.dim}")
    hi = 0
    for label, ast in [("F", model.F)] + \
            [(f"phi{i+1}", p) for i, p in enumerate(model.phi)] + \
            [(f"domain[{i}]", d) for i, d in enumerate(model.domain)]:
        vs, ps = free_vars(ast)
        for kind, idx in vs:
            if idx > model.dim:
                raise ModelValidationError(
                    f"{label} uses undeclared variable {kind}{idx} (dim={model.dim})")
            hi = max(hi, idx)
            if label.startswith("phi") and kind == "y":
                raise ModelValidationError(
                    f"{label} must not depend on directions, found y{idx}")
        for pname in ps:
            if pname not in model.params:
                raise ModelValidationError(f"{label} uses undeclared parameter {pname!r}")
    if hi != model.dim:
        raise ModelValidationError(
            f"dim={model.dim} but the highest variable index used is {hi}")
