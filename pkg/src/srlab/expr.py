"""Small symbolic expression kernel for coordinate coefficient functions.

Expressions are immutable trees built from constants, coordinate variables
x0, x1, ..., negation, sums, products, quotients, integer powers and the
analytic functions sin, cos, exp.  Integer and ratio literals are kept as
exact rationals; everything else is float.  Evaluation is vectorized over
numpy arrays of points, differentiation is exact, and simplification only
does local rewrites (constant folding and unit/zero laws) -- deciding
whether two expressions are equal is always done by evaluation at sample
points, never structurally.
"""

import math
import re
from fractions import Fraction

import numpy as np


class ExprError(ValueError):
    """Base class for expression kernel errors."""


class ParseError(ExprError):
    """Syntax or arity problem in an expression string.

    Carries the character offset of the offending token in ``position``.
    """

    def __init__(self, message, position):
        super().__init__("%s (at position %d)" % (message, position))
        self.position = position


class EvalError(ExprError):
    """Evaluation failed (division by zero, overflow, bad point shape)."""


def _coerce(value):
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Fraction)):
        return Const(Fraction(value))
    if isinstance(value, float):
        return Const(value)
    raise TypeError("cannot use %r in an expression" % (value,))


class Expr:
    """Base node.  Subclasses implement _ev, _diff and _render."""

    __slots__ = ()

    def __add__(self, other):
        return Add(self, _coerce(other))

    def __radd__(self, other):
        return Add(_coerce(other), self)

    def __sub__(self, other):
        return Add(self, Neg(_coerce(other)))

    def __rsub__(self, other):
        return Add(_coerce(other), Neg(self))

    def __mul__(self, other):
        return Mul(self, _coerce(other))

    def __rmul__(self, other):
        return Mul(_coerce(other), self)

    def __truediv__(self, other):
        return Div(self, _coerce(other))

    def __rtruediv__(self, other):
        return Div(_coerce(other), self)

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("exponent must be a Python int")
        return Pow(self, n)

    def __neg__(self):
        return Neg(self)

    def __repr__(self):
        return "<%s %s>" % (type(self).__name__, render(self))


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        if isinstance(value, int):
            value = Fraction(value)
        if not isinstance(value, (Fraction, float)):
            raise TypeError("Const takes int, Fraction or float")
        object.__setattr__(self, "value", value)

    def __setattr__(self, *a):
        raise AttributeError("expressions are immutable")

    def _ev(self, pts):
        return float(self.value)

    def _diff(self, axis):
        return Const(Fraction(0))

    def _children(self):
        return ()


class Var(Expr):
    __slots__ = ("index",)

    def __init__(self, index):
        if not isinstance(index, int) or index < 0:
            raise ValueError("variable index must be a nonnegative int")
        object.__setattr__(self, "index", index)

    def __setattr__(self, *a):
        raise AttributeError("expressions are immutable")

    def _ev(self, pts):
        if self.index >= pts.shape[1]:
            raise EvalError(
                "variable x%d out of range for %d-dimensional point"
                % (self.index, pts.shape[1])
            )
        return pts[:, self.index]

    def _diff(self, axis):
        return Const(Fraction(1 if axis == self.index else 0))

    def _children(self):
        return ()


class _Unary(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg):
        object.__setattr__(self, "arg", _coerce(arg))

    def __setattr__(self, *a):
        raise AttributeError("expressions are immutable")

    def _children(self):
        return (self.arg,)


class _Binary(Expr):
    __slots__ = ("left", "right")

    def __init__(self, left, right):
        object.__setattr__(self, "left", _coerce(left))
        object.__setattr__(self, "right", _coerce(right))

    def __setattr__(self, *a):
        raise AttributeError("expressions are immutable")

    def _children(self):
        return (self.left, self.right)


class Neg(_Unary):
    __slots__ = ()

    def _ev(self, pts):
        return -self.arg._ev(pts)

    def _diff(self, axis):
        return Neg(self.arg._diff(axis))


class Add(_Binary):
    __slots__ = ()

    def _ev(self, pts):
        return self.left._ev(pts) + self.right._ev(pts)

    def _diff(self, axis):
        return Add(self.left._diff(axis), self.right._diff(axis))


class Mul(_Binary):
    __slots__ = ()

    def _ev(self, pts):
        return self.left._ev(pts) * self.right._ev(pts)

    def _diff(self, axis):
        return Add(
            Mul(self.left._diff(axis), self.right),
            Mul(self.left, self.right._diff(axis)),
        )


class Div(_Binary):
    __slots__ = ()

    def __init__(self, left, right):
        super().__init__(left, right)
        if isinstance(self.right, Const) and self.right.value == 0:
            raise ExprError("quotient by the literal zero constant")

    def _ev(self, pts):
        num = self.left._ev(pts)
        den = self.right._ev(pts)
        if np.any(den == 0.0):
            raise EvalError("division by zero in %s" % render(self))
        return num / den

    def _diff(self, axis):
        # (u/v)' = u'/v - u v'/v^2
        u, v = self.left, self.right
        return Add(
            Div(u._diff(axis), v),
            Neg(Div(Mul(u, v._diff(axis)), Pow(v, 2))),
        )


class Pow(Expr):
    """Integer power.  The exponent is a plain int, not a sub-expression."""

    __slots__ = ("base", "exponent")

    def __init__(self, base, exponent):
        if not isinstance(exponent, int):
            raise TypeError("exponent must be a Python int")
        object.__setattr__(self, "base", _coerce(base))
        object.__setattr__(self, "exponent", exponent)

    def __setattr__(self, *a):
        raise AttributeError("expressions are immutable")

    def _ev(self, pts):
        b = self.base._ev(pts)
        if self.exponent < 0 and np.any(b == 0.0):
            raise EvalError("zero raised to negative power in %s" % render(self))
        return b ** self.exponent

    def _diff(self, axis):
        n = self.exponent
        if n == 0:
            return Const(Fraction(0))
        return Mul(
            Mul(Const(Fraction(n)), Pow(self.base, n - 1)),
            self.base._diff(axis),
        )

    def _children(self):
        return (self.base,)


class Sin(_Unary):
    __slots__ = ()

    def _ev(self, pts):
        return np.sin(self.arg._ev(pts))

    def _diff(self, axis):
        return Mul(Cos(self.arg), self.arg._diff(axis))


class Cos(_Unary):
    __slots__ = ()

    def _ev(self, pts):
        return np.cos(self.arg._ev(pts))

    def _diff(self, axis):
        return Mul(Neg(Sin(self.arg)), self.arg._diff(axis))


class Exp(_Unary):
    __slots__ = ()

    def _ev(self, pts):
        return np.exp(self.arg._ev(pts))

    def _diff(self, axis):
        return Mul(Exp(self.arg), self.arg._diff(axis))


# ---------------------------------------------------------------------------
# evaluation


def evaluate(expr, point):
    """Evaluate ``expr`` at one point (shape (m,)) or many (shape (n, m)).

    Returns a float for a single point and a float ndarray for a batch.
    Division by zero or a non-finite result raises EvalError.
    """
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.ndim != 2:
        raise EvalError("point must have shape (m,) or (n, m)")
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.broadcast_to(np.asarray(expr._ev(pts), dtype=float), (pts.shape[0],))
    if not np.all(np.isfinite(out)):
        raise EvalError("non-finite value while evaluating %s" % render(expr))
    if single:
        return float(out[0])
    return np.array(out)


def variables(expr):
    """Set of coordinate indices appearing in ``expr``."""
    out = set()
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.index)
        stack.extend(node._children())
    return out


def equivalent(e1, e2, dim, rng=None, samples=30, tol=1e-9, box=None):
    """Decide equality by evaluation at random sample points.

    ``box`` is a sequence of per-axis (lo, hi) ranges; default (-1, 1)^dim.
    Uses a relative tolerance against max(1, |values|).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    lo = np.array([b[0] for b in box]) if box else -np.ones(dim)
    hi = np.array([b[1] for b in box]) if box else np.ones(dim)
    pts = rng.uniform(lo, hi, size=(samples, dim))
    a = evaluate(e1, pts)
    b = evaluate(e2, pts)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return bool(np.all(np.abs(a - b) <= tol * scale))


# ---------------------------------------------------------------------------
# simplification


def _fold_value(c):
    """The exact value of a Const (Fraction stays exact, float stays float)."""
    return c.value


def _mk_const(v):
    return Const(v)


def _is_const(e, value=None):
    if not isinstance(e, Const):
        return False
    return value is None or e.value == value


def simplify(expr):
    """Constant folding plus the unit laws x+0, x*1, x*0 and --x.

    Works bottom-up in a single pass; equality of the results with the
    input is an evaluation property, not a structural one.
    """
    if isinstance(expr, (Const, Var)):
        return expr

    if isinstance(expr, Neg):
        a = simplify(expr.arg)
        if isinstance(a, Neg):
            return a.arg
        if isinstance(a, Const):
            return _mk_const(-a.value)
        return Neg(a)

    if isinstance(expr, Add):
        l = simplify(expr.left)
        r = simplify(expr.right)
        if isinstance(l, Const) and isinstance(r, Const):
            return _mk_const(l.value + r.value)
        if _is_const(l, 0):
            return r
        if _is_const(r, 0):
            return l
        return Add(l, r)

    if isinstance(expr, Mul):
        l = simplify(expr.left)
        r = simplify(expr.right)
        if isinstance(l, Const) and isinstance(r, Const):
            return _mk_const(l.value * r.value)
        if _is_const(l, 0) or _is_const(r, 0):
            return Const(Fraction(0))
        if _is_const(l, 1):
            return r
        if _is_const(r, 1):
            return l
        return Mul(l, r)

    if isinstance(expr, Div):
        l = simplify(expr.left)
        r = simplify(expr.right)
        if isinstance(r, Const) and r.value != 0:
            if isinstance(l, Const):
                if isinstance(l.value, Fraction) and isinstance(r.value, Fraction):
                    return _mk_const(l.value / r.value)
                return _mk_const(float(l.value) / float(r.value))
            if r.value == 1:
                return l
        if _is_const(l, 0):
            return Const(Fraction(0))
        return Div(l, r)

    if isinstance(expr, Pow):
        b = simplify(expr.base)
        n = expr.exponent
        if n == 0:
            return Const(Fraction(1))
        if n == 1:
            return b
        if isinstance(b, Const):
            if isinstance(b.value, Fraction):
                if b.value != 0 or n > 0:
                    return _mk_const(b.value ** n)
            else:
                if b.value != 0 or n > 0:
                    return _mk_const(float(b.value) ** n)
        return Pow(b, n)

    if isinstance(expr, Sin):
        a = simplify(expr.arg)
        if isinstance(a, Const):
            return Const(math.sin(float(a.value)))
        return Sin(a)

    if isinstance(expr, Cos):
        a = simplify(expr.arg)
        if isinstance(a, Const):
            return Const(math.cos(float(a.value)))
        return Cos(a)

    if isinstance(expr, Exp):
        a = simplify(expr.arg)
        if isinstance(a, Const):
            return Const(math.exp(float(a.value)))
        return Exp(a)

    raise TypeError("unknown node %r" % (expr,))


def differentiate(expr, axis):
    """Exact partial derivative with respect to coordinate ``axis``."""
    if not isinstance(axis, int) or axis < 0:
        raise ValueError("axis must be a nonnegative int")
    return simplify(expr._diff(axis))


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
  | (?P<ws>\s+)
""",
    re.VERBOSE,
)

_FUNCTIONS = {"sin": Sin, "cos": Cos, "exp": Exp}


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError("unexpected character %r" % text[pos], pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, dim):
        self.tokens = _tokenize(text)
        self.i = 0
        self.dim = dim

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.peek()
        if text != value:
            raise ParseError("expected %r, found %r" % (value, text or "end of input"), pos)
        return self.advance()

    def parse(self):
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError("unexpected trailing input %r" % text, pos)
        return e

    def expr(self):
        e = self.term()
        while True:
            kind, text, pos = self.peek()
            if text == "+":
                self.advance()
                e = Add(e, self.term())
            elif text == "-":
                self.advance()
                e = Add(e, Neg(self.term()))
            else:
                return e

    def term(self):
        e = self.factor()
        while True:
            kind, text, pos = self.peek()
            if text == "*":
                self.advance()
                e = Mul(e, self.factor())
            elif text == "/":
                self.advance()
                try:
                    e = Div(e, self.factor())
                except ExprError as err:
                    raise ParseError(str(err), pos)
            else:
                return e

    def factor(self):
        kind, text, pos = self.peek()
        if text == "-":
            self.advance()
            return Neg(self.factor())
        base = self.base()
        kind, text, pos = self.peek()
        if text == "^":
            self.advance()
            return Pow(base, self.integer())
        return base

    def integer(self):
        sign = 1
        kind, text, pos = self.peek()
        if text == "-":
            self.advance()
            sign = -1
            kind, text, pos = self.peek()
        if kind != "num" or not text.isdigit():
            raise ParseError("exponent must be an integer, found %r" % (text or "end of input"), pos)
        self.advance()
        return sign * int(text)

    def base(self):
        kind, text, pos = self.advance()
        if kind == "num":
            if text.isdigit():
                return Const(Fraction(int(text)))
            return Const(float(text))
        if kind == "name":
            if text in _FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _FUNCTIONS[text](arg)
            m = re.fullmatch(r"x(\d+)", text)
            if m is None:
                raise ParseError("unknown identifier %r" % text, pos)
            index = int(m.group(1))
            if self.dim is not None and index >= self.dim:
                raise ParseError(
                    "variable x%d out of range for dimension %d" % (index, self.dim), pos
                )
            return Var(index)
        if text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError("unexpected token %r" % (text or "end of input"), pos)


def parse(text, dim=None):
    """Parse an expression string.

    Grammar: sums of terms, terms of factors with * and /, factors are an
    optional unary minus followed by a base with an optional integer power
    ``^n``; bases are numbers, variables ``x<i>``, parenthesized
    expressions, or sin/cos/exp calls.  ``dim``, when given, bounds the
    variable indices.
    """
    if not isinstance(text, str):
        raise TypeError("parse expects a string")
    return _Parser(text, dim).parse()


# ---------------------------------------------------------------------------
# rendering

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _render(e):
    """Return (text, precedence)."""
    if isinstance(e, Const):
        v = e.value
        if isinstance(v, Fraction):
            if v.denominator == 1:
                text = str(v.numerator)
            else:
                text = "%d/%d" % (v.numerator, v.denominator)
            return text, (_PREC_ATOM if v >= 0 and v.denominator == 1 else _PREC_MUL if v >= 0 else _PREC_UNARY - 1)
        text = repr(v)
        return text, (_PREC_ATOM if v >= 0 else _PREC_UNARY - 1)
    if isinstance(e, Var):
        return "x%d" % e.index, _PREC_ATOM
    if isinstance(e, Neg):
        inner, prec = _render(e.arg)
        if prec < _PREC_UNARY:
            inner = "(" + inner + ")"
        return "-" + inner, _PREC_UNARY - 1
    if isinstance(e, Add):
        lt, lp = _render(e.left)
        if lp < _PREC_ADD:
            lt = "(" + lt + ")"
        if isinstance(e.right, Neg):
            rt, rp = _render(e.right.arg)
            if rp <= _PREC_ADD:
                rt = "(" + rt + ")"
            return "%s - %s" % (lt, rt), _PREC_ADD
        rt, rp = _render(e.right)
        if rp <= _PREC_ADD:
            rt = "(" + rt + ")"
        return "%s + %s" % (lt, rt), _PREC_ADD
    if isinstance(e, Mul):
        lt, lp = _render(e.left)
        if lp < _PREC_MUL:
            lt = "(" + lt + ")"
        rt, rp = _render(e.right)
        if rp <= _PREC_MUL:
            rt = "(" + rt + ")"
        return "%s*%s" % (lt, rt), _PREC_MUL
    if isinstance(e, Div):
        lt, lp = _render(e.left)
        if lp < _PREC_MUL:
            lt = "(" + lt + ")"
        rt, rp = _render(e.right)
        if rp <= _PREC_MUL:
            rt = "(" + rt + ")"
        return "%s/%s" % (lt, rt), _PREC_MUL
    if isinstance(e, Pow):
        bt, bp = _render(e.base)
        if bp < _PREC_ATOM:
            bt = "(" + bt + ")"
        return "%s^%d" % (bt, e.exponent), _PREC_POW
    for cls, name in ((Sin, "sin"), (Cos, "cos"), (Exp, "exp")):
        if isinstance(e, cls):
            return "%s(%s)" % (name, _render(e.arg)[0]), _PREC_ATOM
    raise TypeError("unknown node %r" % (e,))


def render(expr):
    """Render to a string that parses back to an evaluation-equivalent tree."""
    return _render(expr)[0]


ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))
