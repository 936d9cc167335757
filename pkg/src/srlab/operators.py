"""Second-order operators attached to an orthonormal frame.

Every operator here is a sum over declared-orthonormal fields E_u of
E_u^2 - nabla_{E_u} E_u, expanded into coordinate form

    L f = sum_{j,l} a^{jl} d_j d_l f + sum_j b^j d_j f,

with a^{jl} = sum_u E_u^j E_u^l and b^j = sum_u E_u(E_u^j)
- sum_u sum_w Gamma_{uuw} E_w^j.  The connection coefficients in an
orthonormal frame depend only on the frame's structure constants,

    Gamma_{uvw} = (c_uv^w - c_vw^u + c_wu^v) / 2,

which for the frames shipped here are constant over the torus; the
builder verifies that constancy on a sample set and refuses frames
where it fails.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import expr as ex
from .expr import differentiate, simplify
from .geometry import SubRiemannianStructure, VectorField, structure_constants
from .complement import MetricExtension, reference_mean_curvature


class FrameError(ValueError):
    """Frame data violates an assumption (e.g. non-constant constants)."""


def _default_frame_samples(s, points):
    if points is None:
        pts = [np.zeros(s.dim)]
        pts.extend(s.sample_points(9, rng=np.random.default_rng(3)))
        return np.stack(pts)
    return np.atleast_2d(np.asarray(points, dtype=float))


def _promote_constants(samples, what, tol, snap):
    """Require stacked per-point arrays to agree; snap and return the base.

    Zeroes entries below ``snap`` and rounds near-integer and
    near-half-integer values so downstream algebra is exact.
    """
    samples = np.asarray(samples, dtype=float)
    base = samples[0]
    spread = float(np.max(np.abs(samples - base[None])))
    scale = max(1.0, float(np.max(np.abs(base))))
    if spread > tol * scale:
        raise FrameError(
            "%s vary over the sample set (spread %.3e); "
            "constant-coefficient reduction does not apply" % (what, spread)
        )
    out = base.copy()
    out[np.abs(out) < snap] = 0.0
    doubled = 2.0 * out
    near = np.abs(doubled - np.round(doubled)) < 1e-12 * np.maximum(
        1.0, np.abs(np.round(doubled))
    )
    out[near] = np.round(doubled[near]) / 2.0
    return out


def promoted_structure_constants(s, points=None, tol=1e-9, snap=1e-12):
    """The full table of frame structure constants, verified constant."""
    points = _default_frame_samples(s, points)
    tables = np.stack([structure_constants(s, p).table for p in points])
    return _promote_constants(tables, "frame structure constants", tol, snap)


def connection_sums(frame_structure, use, project, points=None, tol=1e-9, snap=1e-12):
    """The constants sum_{u in use} Gamma_uuw for w in ``project``.

    These sums are the only connection data the divergence-form
    operators need, and they can stay constant over the torus even when
    the full table of structure constants does not (the table may vary
    while its diagonal traces are fixed).
    """
    points = _default_frame_samples(frame_structure, points)
    rows = []
    for p in points:
        gamma = connection_coefficients(
            structure_constants(frame_structure, p).table
        )
        rows.append([float(sum(gamma[u, u, w] for u in use)) for w in project])
    return _promote_constants(np.asarray(rows), "connection sums", tol, snap)


def connection_coefficients(table):
    """Gamma[u, v, w] of the Levi-Civita connection in an orthonormal frame.

    Gamma_uvw = (c_uv^w - c_vw^u + c_wu^v) / 2; the transposes below read
    c_vw^u as c.transpose(2, 0, 1) and c_wu^v as c.transpose(1, 2, 0).
    """
    c = np.asarray(table, dtype=float)
    return 0.5 * (
        c - np.transpose(c, (2, 0, 1)) + np.transpose(c, (1, 2, 0))
    )


def horizontal_connection(ext, point):
    """Gamma[i, j, a] = g(D_{X_i} X_j, X_a) at a point, shape (k, k, k).

    The horizontal connection is the horizontal block of the
    orthonormal-frame Levi-Civita coefficients of the adapted metric.
    """
    s = ext.frame_structure if isinstance(ext, MetricExtension) else ext
    table = structure_constants(s, np.asarray(point, dtype=float)).table
    gamma = connection_coefficients(table)
    k = s.k
    return gamma[:k, :k, :k]


def _as_const(v):
    """Exact Const for a snapped float (integers and halves stay exact)."""
    f = Fraction(v).limit_denominator(1 << 30)
    if float(f) == v:
        return ex.Const(f)
    return ex.Const(v)


@dataclass
class OperatorSpec:
    """Coordinate form of a frame Laplacian; applies symbolically."""

    kind: str
    dim: int
    eps: object  # None for the horizontal operator
    a: tuple  # (m, m) nested tuple of Expr, symmetric
    b: tuple  # (m,) tuple of Expr

    def apply(self, f):
        """The expression sum a^{jl} d_j d_l f + sum b^j d_j f."""
        m = self.dim
        df = [differentiate(f, j) for j in range(m)]
        total = ex.ZERO
        for j in range(m):
            for l in range(m):
                if _is_zero(self.a[j][l]):
                    continue
                total = ex.Add(total, ex.Mul(self.a[j][l], differentiate(df[j], l)))
        for j in range(m):
            if _is_zero(self.b[j]):
                continue
            total = ex.Add(total, ex.Mul(self.b[j], df[j]))
        return simplify(total)

    def principal_symbol(self, point):
        """The matrix a^{jl}(p)."""
        p = np.asarray(point, dtype=float)
        return np.array(
            [[ex.evaluate(e, p) for e in row] for row in self.a]
        )

    def drift(self, point):
        p = np.asarray(point, dtype=float)
        return np.array([ex.evaluate(e, p) for e in self.b])

    def to_dict(self):
        d = {
            "kind": self.kind,
            "dim": self.dim,
            "a": [[ex.render(e) for e in row] for row in self.a],
            "b": [ex.render(e) for e in self.b],
        }
        if self.eps is not None:
            d["eps"] = float(self.eps)
        return d

    @classmethod
    def from_dict(cls, d):
        m = int(d["dim"])
        a = tuple(
            tuple(ex.parse(t, dim=m) for t in row) for row in d["a"]
        )
        b = tuple(ex.parse(t, dim=m) for t in d["b"])
        return cls(
            kind=str(d["kind"]),
            dim=m,
            eps=d.get("eps"),
            a=a,
            b=b,
        )


def _is_zero(e):
    return isinstance(e, ex.Const) and e.value == 0


def _frame_laplacian(kind, eps, frame_structure, use, project):
    """Sum of E_u^2 - nabla_{E_u}E_u over u in ``use``.

    ``project`` lists the frame indices spanning the range of the
    connection term (the horizontal ones for the horizontal operator,
    all of them for the full Laplacian).
    """
    fields = frame_structure.frame
    m = frame_structure.dim
    sums = connection_sums(frame_structure, use, project)
    a = [[ex.ZERO for _ in range(m)] for _ in range(m)]
    for j in range(m):
        for l in range(j, m):
            total = ex.ZERO
            for u in use:
                total = ex.Add(
                    total,
                    ex.Mul(fields[u].coefficients[j], fields[u].coefficients[l]),
                )
            total = simplify(total)
            a[j][l] = total
            a[l][j] = total
    b = []
    for j in range(m):
        total = ex.ZERO
        for u in use:
            total = ex.Add(total, fields[u].apply(fields[u].coefficients[j]))
        for wi, w in enumerate(project):
            g = sums[wi]
            if g != 0.0:
                total = ex.Add(
                    total, ex.Neg(ex.Mul(_as_const(g), fields[w].coefficients[j]))
                )
        b.append(simplify(total))
    return OperatorSpec(
        kind=kind,
        dim=m,
        eps=eps,
        a=tuple(tuple(row) for row in a),
        b=tuple(b),
    )


def sublaplacian(ext):
    """The horizontal Laplacian sum_i X_i^2 - P nabla_{X_i} X_i."""
    if isinstance(ext, SubRiemannianStructure):
        ext = MetricExtension(ext)
    s = ext.frame_structure
    horizontal = list(range(s.k))
    return _frame_laplacian("sublaplacian", None, s, horizontal, horizontal)


def penalty_laplacian(ext):
    """The Laplace-Beltrami operator of the rescaled frame metric."""
    if ext.epsilon is None:
        raise FrameError("penalty operator requires a positive epsilon")
    s = ext.frame_structure
    everything = list(range(s.dim))
    return _frame_laplacian(
        "penalty", ext.epsilon, s, everything, everything
    )


def riemannian_laplacian(ext):
    """The full-frame Laplacian of the unscaled adapted metric."""
    s = ext.frame_structure if isinstance(ext, MetricExtension) else ext
    everything = list(range(s.dim))
    return _frame_laplacian("riemannian", None, s, everything, everything)


# ---------------------------------------------------------------------------


def horizontal_gradient(s, f):
    """(field, frame components) of grad^H f = sum_i (X_i f) X_i."""
    if isinstance(s, MetricExtension):
        s = s.frame_structure
    comps = [s.horizontal[i].apply(f) for i in range(s.k)]
    m = s.dim
    coeffs = []
    for j in range(m):
        total = ex.ZERO
        for i in range(s.k):
            total = ex.Add(
                total, ex.Mul(comps[i], s.horizontal[i].coefficients[j])
            )
        coeffs.append(simplify(total))
    return VectorField(coeffs), comps


def horizontal_divergence(s, components):
    """div of sum_j c_j X_j as an expression, via frame connection sums.

    div^H = sum_i X_i(c_i) + sum_j c_j sum_i Gamma_iji, and the inner
    sum equals -sum_i Gamma_iij by metric compatibility.
    """
    if isinstance(s, MetricExtension):
        s = s.frame_structure
    k = s.k
    horizontal = list(range(k))
    sums = connection_sums(s, horizontal, horizontal)
    total = ex.ZERO
    for i in range(k):
        total = ex.Add(total, s.horizontal[i].apply(components[i]))
    for j in range(k):
        g = -sums[j]
        if g != 0.0:
            total = ex.Add(total, ex.Mul(_as_const(g), components[j]))
    return simplify(total)


def riemannian_divergence(ext, X):
    """div X against the extension's volume, as an expression.

    Uses the density rho = 1/|det F|: div X = sum_j d_j X^j
    - X^j (d_j det)/det, the sign of det cancelling.
    """
    _, det = ext.density_expr()
    m = ext.dim
    total = ex.ZERO
    for j in range(m):
        total = ex.Add(total, differentiate(X.coefficients[j], j))
        dd = differentiate(det, j)
        if not _is_zero(dd):
            total = ex.Add(
                total, ex.Neg(ex.Div(ex.Mul(X.coefficients[j], dd), det))
            )
    return simplify(total)


# ---------------------------------------------------------------------------


@dataclass
class HorizontalField:
    """A field given by horizontal-frame components, pointwise or symbolic."""

    structure: SubRiemannianStructure
    components_fn: object  # point -> (k,) array
    exprs: object = None  # tuple of Expr when components are symbolic

    def components_at(self, point):
        if self.exprs is not None:
            p = np.asarray(point, dtype=float)
            return np.array([ex.evaluate(e, p) for e in self.exprs])
        return np.asarray(self.components_fn(np.asarray(point, dtype=float)))

    def vector_at(self, point):
        p = np.asarray(point, dtype=float)
        comp = self.components_at(p)
        X = np.stack([f.evaluate(p) for f in self.structure.horizontal])
        return comp @ X


def mean_curvature_field(s, samples=None):
    """Mean curvature of the complement of ``s`` as a horizontal field.

    Components H_i(p) = sum_b gbar(T_b, [X_i, T_b])(p); the field is
    promoted to constant symbolic components when sampling shows them
    constant.
    """
    if isinstance(s, MetricExtension):
        s = s.frame_structure

    def comps(p):
        return reference_mean_curvature(s, p).sum(axis=0)

    exprs = None
    if samples is None:
        pts = [np.zeros(s.dim)]
        pts.extend(s.sample_points(6, rng=np.random.default_rng(5)))
        samples = np.stack(pts)
    vals = np.stack([comps(p) for p in np.atleast_2d(samples)])
    if float(np.max(np.abs(vals - vals[0][None]))) <= 1e-10 * max(
        1.0, float(np.max(np.abs(vals[0])))
    ):
        cleaned = vals[0].copy()
        cleaned[np.abs(cleaned) < 1e-12] = 0.0
        exprs = tuple(_as_const(v) for v in cleaned)
    return HorizontalField(structure=s, components_fn=comps, exprs=exprs)


def product_rule_residual(op, fields, u, points):
    """Max defect of L(u^2) = 2 u Lu + 2 sum_E (E u)^2 over sample points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    lhs = op.apply(simplify(ex.Mul(u, u)))
    lu = op.apply(u)
    grads = [f.apply(u) for f in fields]
    worst = 0.0
    for p in points:
        left = ex.evaluate(lhs, p)
        right = 2.0 * ex.evaluate(u, p) * ex.evaluate(lu, p)
        right += 2.0 * sum(ex.evaluate(g, p) ** 2 for g in grads)
        worst = max(worst, abs(left - right))
    return worst


def potential_residual(s, curvature, u, points):
    """Max over points of || (X_i u / u)(p) - H_i(p) ||_2.

    ``u`` must be positive at every sample; the logarithmic horizontal
    derivative is formed as a quotient of expressions.
    """
    if isinstance(s, MetricExtension):
        s = s.frame_structure
    points = np.atleast_2d(np.asarray(points, dtype=float))
    quotients = [
        simplify(ex.Div(s.horizontal[i].apply(u), u)) for i in range(s.k)
    ]
    worst = 0.0
    for p in points:
        up = ex.evaluate(u, p)
        if up <= 0:
            raise ValueError(
                "potential must be positive on the sample set; got %r at %s"
                % (up, np.array2string(p, precision=6))
            )
        q = np.array([ex.evaluate(e, p) for e in quotients])
        h = curvature.components_at(p)
        worst = max(worst, float(np.linalg.norm(q - h)))
    return worst
