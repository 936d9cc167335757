"""Vector fields with symbolic coefficients and sub-Riemannian frame data.

A structure consists of m periodic coordinates, k horizontal fields X_i
declared orthonormal for the horizontal metric, and m-k reference
complement fields T_b completing them to a frame declared orthonormal for
a reference extension.  Everything metric is therefore read off from
frame expansion coefficients: expanding a vector in the frame at a point
is one dense m-by-m solve.
"""

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .expr import Expr, differentiate, evaluate, render, simplify


class StructureError(ValueError):
    """A frame fails its structural preconditions."""


class VectorField:
    """A vector field given by m coordinate coefficient expressions."""

    __slots__ = ("coefficients",)

    def __init__(self, coefficients):
        coeffs = []
        for c in coefficients:
            if isinstance(c, str):
                raise TypeError("parse coefficient strings before building fields")
            if not isinstance(c, Expr):
                c = ex.Const(c)
            coeffs.append(c)
        self.coefficients = tuple(coeffs)

    @property
    def dim(self):
        return len(self.coefficients)

    def evaluate(self, point):
        """Coordinate components at one point (m,) or a batch (n, m)."""
        point = np.asarray(point, dtype=float)
        single = point.ndim == 1
        pts = point[None, :] if single else point
        out = np.empty((pts.shape[0], self.dim))
        for j, c in enumerate(self.coefficients):
            out[:, j] = evaluate(c, pts)
        return out[0] if single else out

    def apply(self, f):
        """Directional derivative X f = sum_j X^j d_j f as an expression."""
        terms = None
        for j, c in enumerate(self.coefficients):
            t = ex.Mul(c, differentiate(f, j))
            terms = t if terms is None else ex.Add(terms, t)
        return simplify(terms)

    def simplified(self):
        return VectorField([simplify(c) for c in self.coefficients])

    def __repr__(self):
        return "VectorField(%s)" % ", ".join(render(c) for c in self.coefficients)


def lie_bracket(X, Y):
    """[X, Y]^j = sum_i (X^i d_i Y^j - Y^i d_i X^j)."""
    if X.dim != Y.dim:
        raise ValueError("bracket of fields with different dimensions")
    coeffs = []
    for j in range(X.dim):
        term = None
        for i in range(X.dim):
            t = ex.Add(
                ex.Mul(X.coefficients[i], differentiate(Y.coefficients[j], i)),
                ex.Neg(ex.Mul(Y.coefficients[i], differentiate(X.coefficients[j], i))),
            )
            term = t if term is None else ex.Add(term, t)
        coeffs.append(simplify(term))
    return VectorField(coeffs)


def linear_combination(coeffs, fields, base=None):
    """sum_i coeffs[i] * fields[i] (+ base), coefficients Expr or numeric."""
    out = list(base.coefficients) if base is not None else None
    for c, f in zip(coeffs, fields):
        if not isinstance(c, Expr):
            c = ex.Const(c)
        comps = [ex.Mul(c, fc) for fc in f.coefficients]
        if out is None:
            out = comps
        else:
            out = [ex.Add(a, b) for a, b in zip(out, comps)]
    return VectorField([simplify(c) for c in out])


def det_expr(rows):
    """Determinant of a square matrix of expressions, by Laplace expansion."""
    n = len(rows)
    if n == 1:
        return rows[0][0]
    total = None
    for j in range(n):
        minor = [r[:j] + r[j + 1 :] for r in rows[1:]]
        term = ex.Mul(rows[0][j], det_expr(minor))
        if j % 2 == 1:
            term = ex.Neg(term)
        total = term if total is None else ex.Add(total, term)
    return simplify(total)


# ---------------------------------------------------------------------------


@dataclass
class SubRiemannianStructure:
    """Periodic coordinates, horizontal frame and reference complement.

    The declared inner products make the full frame orthonormal; the
    horizontal metric is its restriction to span(X_1..X_k).
    """

    dim: int
    periods: tuple
    horizontal: tuple
    complement: tuple
    name: str = ""
    _bracket_cache: dict = field(default_factory=dict, repr=False)
    _flag_layers: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.periods = tuple(float(L) for L in self.periods)
        self.horizontal = tuple(self.horizontal)
        self.complement = tuple(self.complement)
        if len(self.periods) != self.dim:
            raise StructureError("need one period per coordinate")
        if any(L <= 0 for L in self.periods):
            raise StructureError("periods must be positive")
        k = len(self.horizontal)
        if not 1 <= k <= self.dim:
            raise StructureError("need between 1 and m horizontal fields")
        if len(self.complement) != self.dim - k:
            raise StructureError(
                "complement must have %d fields, got %d"
                % (self.dim - k, len(self.complement))
            )
        for f in self.frame:
            if f.dim != self.dim:
                raise StructureError("field dimension mismatch")

    @property
    def k(self):
        return len(self.horizontal)

    @property
    def frame(self):
        return self.horizontal + self.complement

    # -- pointwise frame algebra ------------------------------------------

    def frame_matrix(self, point):
        """Columns are the frame fields' coordinate components at ``point``."""
        point = np.asarray(point, dtype=float)
        single = point.ndim == 1
        pts = point[None, :] if single else point
        F = np.empty((pts.shape[0], self.dim, self.dim))
        for u, f in enumerate(self.frame):
            F[:, :, u] = f.evaluate(pts)
        return F[0] if single else F

    def expand_in_frame(self, point, vectors):
        """Frame coefficients of coordinate ``vectors`` at ``point``."""
        F = self.frame_matrix(point)
        return np.linalg.solve(F, np.asarray(vectors, dtype=float))

    def sample_lattice(self, per_axis=5):
        """Uniform lattice i * L_j / per_axis including the origin."""
        axes = [np.arange(per_axis) * (L / per_axis) for L in self.periods]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def sample_points(self, count, rng=None):
        """Seeded uniform sample inside the period box."""
        if rng is None:
            rng = np.random.default_rng(0)
        return rng.uniform(0.0, self.periods, size=(count, self.dim))

    def validate(self, points=None, tol=1e-10):
        """Check the frame condition: invertible frame matrix at samples."""
        if points is None:
            points = self.sample_lattice()
        F = self.frame_matrix(points)
        dets = np.linalg.det(F)
        norms = np.linalg.norm(F, axis=1)  # column 2-norms
        scale = np.maximum(np.prod(norms, axis=-1), np.finfo(float).tiny)
        bad = np.abs(dets) <= tol * scale
        if np.any(bad):
            p = np.asarray(points)[bad][0]
            raise StructureError(
                "frame matrix singular at point %s" % np.array2string(p, precision=6)
            )
        return True

    # -- cached symbolic brackets ------------------------------------------

    def frame_bracket(self, u, v):
        """Symbolic [E_u, E_v] of frame fields, cached."""
        if u == v:
            return VectorField([ex.ZERO] * self.dim)
        if (u, v) in self._bracket_cache:
            return self._bracket_cache[(u, v)]
        if (v, u) in self._bracket_cache:
            w = self._bracket_cache[(v, u)]
            neg = VectorField([simplify(ex.Neg(c)) for c in w.coefficients])
            self._bracket_cache[(u, v)] = neg
            return neg
        w = lie_bracket(self.frame[u], self.frame[v])
        self._bracket_cache[(u, v)] = w
        return w


@dataclass
class StructureData:
    """Frame expansion of all pairwise frame brackets at one point.

    table[u, v, w] is the E_w coefficient of [E_u, E_v].
    """

    point: np.ndarray
    k: int
    table: np.ndarray

    @property
    def C_horizontal(self):
        """C_ij^a for horizontal i, j, a."""
        k = self.k
        return self.table[:k, :k, :k]

    @property
    def C_vertical(self):
        """C_ij^b: complement components of horizontal brackets."""
        k = self.k
        return self.table[:k, :k, k:]


def structure_constants(s, point):
    """Expand every [E_u, E_v] in the frame at ``point``."""
    m = s.dim
    point = np.asarray(point, dtype=float)
    F = s.frame_matrix(point)
    table = np.zeros((m, m, m))
    for u in range(m):
        for v in range(u + 1, m):
            w = s.frame_bracket(u, v).evaluate(point)
            c = np.linalg.solve(F, w)
            table[u, v] = c
            table[v, u] = -c
    return StructureData(point=point, k=s.k, table=table)


# ---------------------------------------------------------------------------
# flags, regularity, fatness


@dataclass
class FlagResult:
    dims: tuple
    degree: object  # int or None


def _flag_layer(s, depth):
    """Symbolic bracket layers: layer d holds brackets of order d."""
    layers = s._flag_layers
    if not layers:
        layers.append(list(s.horizontal))
    while len(layers) < depth:
        new = []
        for f in layers[-1]:
            for X in s.horizontal:
                new.append(lie_bracket(X, f).simplified())
        layers.append(new)
    return layers[depth - 1]


def _rank(values, m):
    if values.size == 0:
        return 0
    sv = np.linalg.svd(values, compute_uv=False)
    if sv.size == 0:
        return 0
    cutoff = max(sv[0], 1.0) * 1e-10
    return int(np.sum(sv > cutoff))


def hormander_flag(s, point, max_depth=6):
    """Dimensions of Sigma_1 <= Sigma_2 <= ... at ``point``.

    Sigma_d is spanned by brackets of the horizontal fields of order up
    to d.  Returns the dims and the degree (first d with full rank), or
    degree None when the flag stalls below the manifold dimension.
    """
    point = np.asarray(point, dtype=float)
    rows = []
    dims = []
    degree = None
    for depth in range(1, max_depth + 1):
        for f in _flag_layer(s, depth):
            rows.append(f.evaluate(point))
        r = _rank(np.array(rows), s.dim)
        dims.append(r)
        if r == s.dim:
            degree = depth
            break
        if depth > 1 and r == dims[-2]:
            # the flag can still grow later (coefficients vary), so only
            # a full sweep to max_depth settles non-generation
            pass
    return FlagResult(dims=tuple(dims), degree=degree)


def hausdorff_dimension(dims):
    """Q = sum_i i * (dim Sigma_i - dim Sigma_{i-1}) for a full flag."""
    q = 0
    prev = 0
    for i, d in enumerate(dims, start=1):
        q += i * (d - prev)
        prev = d
    return q


@dataclass
class RegularityReport:
    regular: bool
    points: np.ndarray
    dims: list


def is_regular(s, points=None, max_depth=6):
    """Same flag dimensions at every sample point."""
    if points is None:
        points = s.sample_lattice()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    seen = []
    for p in points:
        res = hormander_flag(s, p, max_depth=max_depth)
        dims = list(res.dims)
        while len(dims) < max_depth and dims and dims[-1] == s.dim:
            dims.append(s.dim)
        seen.append(tuple(dims[:max_depth]))
    regular = len(set(seen)) == 1
    return RegularityReport(regular=regular, points=points, dims=seen)


@dataclass
class FatnessResult:
    fat: bool
    witness: object  # covector over the complement indices, or None
    tested: int


def is_fat(s, point, samples=32, rng=None, tol=1e-10):
    """Strong-bracket test at ``point``.

    For every annihilator direction lambda (basis vectors plus random
    unit covectors), the matrix M(lambda)_ij = sum_b lambda_b C_ij^b must
    be invertible.  Returns the first singular lambda as a witness.
    """
    if rng is None:
        rng = np.random.default_rng(42)
    data = structure_constants(s, point)
    C = data.C_vertical
    q = s.dim - s.k
    if q == 0:
        return FatnessResult(fat=True, witness=None, tested=0)
    lams = [np.eye(q)[b] for b in range(q)]
    while len(lams) < q + samples:
        v = rng.normal(size=q)
        n = np.linalg.norm(v)
        if n > 1e-12:
            lams.append(v / n)
    for lam in lams:
        M = np.tensordot(C, lam, axes=([2], [0]))
        rows = np.linalg.norm(M, axis=1)
        scale = max(float(np.prod(rows)), np.finfo(float).tiny)
        if abs(np.linalg.det(M)) <= tol * scale:
            return FatnessResult(fat=False, witness=lam, tested=len(lams))
    return FatnessResult(fat=True, witness=None, tested=len(lams))


# ---------------------------------------------------------------------------
# exterior calculus spot check


def cartan_residual(omega, X, Y, point):
    """|d(omega)(X,Y) - (X(omega(Y)) - Y(omega(X)) - omega([X,Y]))| at a point.

    ``omega`` is a covector field given by coordinate coefficients, so
    both sides are computable independently: the left through coefficient
    partials, the right through directional derivatives and the bracket.
    """
    omega = [c if isinstance(c, Expr) else ex.Const(c) for c in omega]
    m = X.dim
    point = np.asarray(point, dtype=float)

    lhs = 0.0
    for a in range(m):
        for b in range(a + 1, m):
            d_ab = evaluate(
                simplify(ex.Add(differentiate(omega[b], a), ex.Neg(differentiate(omega[a], b)))),
                point,
            )
            Xa, Xb = evaluate(X.coefficients[a], point), evaluate(X.coefficients[b], point)
            Ya, Yb = evaluate(Y.coefficients[a], point), evaluate(Y.coefficients[b], point)
            lhs += d_ab * (Xa * Yb - Xb * Ya)

    def pair(w, Z):
        total = None
        for c, zc in zip(w, Z.coefficients):
            t = ex.Mul(c, zc)
            total = t if total is None else ex.Add(total, t)
        return simplify(total)

    omega_Y = pair(omega, Y)
    omega_X = pair(omega, X)
    bracket = lie_bracket(X, Y)
    rhs = (
        evaluate(X.apply(omega_Y), point)
        - evaluate(Y.apply(omega_X), point)
        - evaluate(pair(omega, bracket), point)
    )
    return abs(lhs - rhs)
