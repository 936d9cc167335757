"""Periodic-grid discretizations.

Strong-form operators use central differences.  The weak Laplacian is
assembled cell by cell: every grid cell contributes one quadrature row
per corner, each row holding the one-sided edge differences leaving that
corner weighted by the field coefficients at the corner node and by
cellvolume / 2^m of the measure density there.  Summing B^T W B over
the declared-orthonormal fields gives a positive semidefinite operator
whose entries are computed in exact dyadic-rational arithmetic, so
symmetry, the vanishing image of constants, and the match between the
assembled matrix and its quadrature factors are exact statements about
the stored floats, not approximate ones.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import expr as ex
from .expr import Expr


class GridError(ValueError):
    pass


class PeriodicityError(ValueError):
    """A coefficient is not periodic with the declared periods."""


_PAIR_BUDGET = 50_000_000


# ---------------------------------------------------------------------------
# exact dyadic-rational arithmetic on (numerator, exponent) pairs, num / 2^e


def _dy(x):
    num, den = float(x).as_integer_ratio()
    return num, den.bit_length() - 1


def _dy_mul(a, b):
    return a[0] * b[0], a[1] + b[1]


def _dy_add(a, b):
    ea, eb = a[1], b[1]
    if ea == eb:
        return a[0] + b[0], ea
    if ea < eb:
        return (a[0] << (eb - ea)) + b[0], eb
    return a[0] + (b[0] << (ea - eb)), ea


def _dy_float(a):
    num, e = a
    if e >= 0:
        return num / (1 << e)
    return float(num * (1 << -e))


_DY_ZERO = (0, 0)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid; axis j has shape[j] nodes, spacing h[j]."""

    shape: tuple
    periods: tuple

    def __post_init__(self):
        if len(self.shape) != len(self.periods):
            raise GridError("shape and periods must have the same length")
        for n in self.shape:
            if n < 4 or n % 2:
                raise GridError(
                    "grid sizes must be even and at least 4; got %r" % (n,)
                )
        for L in self.periods:
            if not (L > 0):
                raise GridError("periods must be positive")
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(
            self, "periods", tuple(float(L) for L in self.periods)
        )

    @property
    def dim(self):
        return len(self.shape)

    @property
    def h(self):
        return tuple(L / n for L, n in zip(self.periods, self.shape))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def multi_indices(self):
        """(N, m) integer multi-indices in row-major order."""
        grids = np.indices(self.shape).reshape(self.dim, -1).T
        return np.ascontiguousarray(grids)

    def points(self):
        """(N, m) node coordinates."""
        return self.multi_indices() * np.asarray(self.h)

    def ravel(self, multi):
        wrapped = multi % np.array(self.shape)
        return np.ravel_multi_index(tuple(wrapped.T), self.shape)

    def shifted(self, multi, axis, step):
        out = multi.copy()
        out[:, axis] = (out[:, axis] + step) % self.shape[axis]
        return out

    def cell_volume(self):
        return float(np.prod(self.h))


def _uniform_field(value, grid):
    return np.full(grid.size, float(value))


def evaluate_on_grid(e, grid):
    """Node values of an expression, checked for declared periodicity."""
    pts = grid.points()
    vals = np.asarray(ex.evaluate(e, pts), dtype=float)
    if vals.ndim == 0:
        vals = np.full(grid.size, float(vals))
    check_periodicity(e, grid)
    return vals


def check_periodicity(e, grid, tol=1e-8):
    """Compare values at x and x + L_j e_j on the whole node set."""
    if not isinstance(e, Expr):
        return
    axes = ex.variables(e)
    if not axes:
        return
    pts = grid.points()
    base = np.asarray(ex.evaluate(e, pts), dtype=float)
    if base.ndim == 0:
        return
    scale = max(1.0, float(np.max(np.abs(base))))
    for j in sorted(axes):
        shifted = pts.copy()
        shifted[:, j] += grid.periods[j]
        other = np.asarray(ex.evaluate(e, shifted), dtype=float)
        worst = float(np.max(np.abs(other - base)))
        if worst > tol * scale:
            raise PeriodicityError(
                "coefficient %s is not periodic along axis %d "
                "(defect %.3e over period %g)" % (ex.render(e), j, worst, grid.periods[j])
            )


# ---------------------------------------------------------------------------


@dataclass
class SparseOperator:
    """CSR operator, optionally carrying its exact dyadic entries."""

    matrix: object  # scipy CSR
    symmetric: bool = False
    exact: object = None  # dict[(i, j)] -> (num, exp), or None

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self):
        return self.matrix.nnz

    def matvec(self, v):
        return self.matrix @ v

    def toarray(self):
        return self.matrix.toarray()


@dataclass
class DiagonalMass:
    """Diagonal mass matrix from nodal density times cell volume."""

    diagonal: np.ndarray

    @property
    def shape(self):
        return (self.diagonal.size, self.diagonal.size)

    def matvec(self, v):
        return self.diagonal * v

    def solve(self, v):
        return v / self.diagonal


@dataclass
class FieldFactor:
    """Edge-difference factor of one frame field over quadrature rows.

    Row r evaluates sum_l values[r, l] * (f[hi[r, l]] - f[lo[r, l]]),
    the directional derivative of f along the field at the row's corner.
    """

    lo: np.ndarray  # (R, m) node column of the lower edge endpoint
    hi: np.ndarray  # (R, m)
    values: np.ndarray  # (R, m) coefficient / h, including any 1/eps

    def apply(self, f):
        return np.sum(self.values * (f[self.hi] - f[self.lo]), axis=1)


@dataclass
class WeakForm:
    """Quadrature-factored weak Laplacian with exact assembled entries."""

    grid: Grid
    operator: SparseOperator
    mass: DiagonalMass
    factors: list
    weights: np.ndarray  # (R,) quadrature weights
    eps: object = None

    def quadratic_form(self, f):
        total = 0.0
        for fac in self.factors:
            g = fac.apply(f)
            total += float(np.sum(self.weights * g * g))
        return total


# ---------------------------------------------------------------------------


def _shift_matrix(grid, axis, step):
    N = grid.size
    multi = grid.multi_indices()
    cols = grid.ravel(grid.shifted(multi, axis, step))
    return sp.csr_matrix(
        (np.ones(N), (np.arange(N), cols)), shape=(N, N)
    )


def _central_difference(grid, axis):
    h = grid.h[axis]
    return (
        _shift_matrix(grid, axis, +1) - _shift_matrix(grid, axis, -1)
    ) * (0.5 / h)


def _second_difference(grid, axis):
    h = grid.h[axis]
    return (
        _shift_matrix(grid, axis, +1)
        - 2.0 * sp.identity(grid.size, format="csr")
        + _shift_matrix(grid, axis, -1)
    ) * (1.0 / h**2)


def assemble_field(X, grid):
    """Central-difference matrix of the first-order operator f -> X f.

    Row p holds X^j(p)/(2 h_j) at columns p +/- e_j; the exact entry
    table witnesses that constants are annihilated exactly.
    """
    m = grid.dim
    if X.dim != m:
        raise GridError("field dimension %d does not match grid %d" % (X.dim, m))
    for c in X.coefficients:
        check_periodicity(c, grid)
    pts = grid.points()
    multi = grid.multi_indices()
    N = grid.size
    rows, cols, data = [], [], []
    exact = {}
    for j in range(m):
        coeff = X.coefficients[j]
        if isinstance(coeff, ex.Const) and coeff.value == 0:
            continue
        vals = np.asarray(ex.evaluate(coeff, pts), dtype=float)
        if vals.ndim == 0:
            vals = np.full(N, float(vals))
        vals = vals / (2.0 * grid.h[j])
        up = grid.ravel(grid.shifted(multi, j, +1))
        dn = grid.ravel(grid.shifted(multi, j, -1))
        rows.extend([np.arange(N), np.arange(N)])
        cols.extend([up, dn])
        data.extend([vals, -vals])
        for p in range(N):
            v = vals[p]
            if v == 0.0:
                continue
            d = _dy(v)
            key = (p, int(up[p]))
            exact[key] = _dy_add(exact.get(key, _DY_ZERO), d)
            key = (p, int(dn[p]))
            exact[key] = _dy_add(exact.get(key, _DY_ZERO), (-d[0], d[1]))
    mat = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    )
    return SparseOperator(matrix=mat, symmetric=False, exact=exact)


def assemble_strong(spec, grid):
    """Central-difference matrix of a coordinate-form second-order operator.

    Pure second derivatives use the three-point stencil; mixed ones
    compose central first differences; the drift uses central first
    differences.  Each term is coefficient-at-the-row-node times the
    stencil, so the whole matrix is second-order consistent.
    """
    m = grid.dim
    if spec.dim != m:
        raise GridError("operator dimension mismatch")
    N = grid.size
    pts = grid.points()
    total = sp.csr_matrix((N, N))
    firsts = {}

    def first(j):
        if j not in firsts:
            firsts[j] = _central_difference(grid, j)
        return firsts[j]

    for j in range(m):
        for l in range(m):
            coeff = spec.a[j][l]
            if isinstance(coeff, ex.Const) and coeff.value == 0:
                continue
            check_periodicity(coeff, grid)
            vals = np.asarray(ex.evaluate(coeff, pts), dtype=float)
            if vals.ndim == 0:
                vals = np.full(N, float(vals))
            diag = sp.diags(vals)
            if j == l:
                total = total + diag @ _second_difference(grid, j)
            else:
                total = total + diag @ (first(j) @ first(l))
    for j in range(m):
        coeff = spec.b[j]
        if isinstance(coeff, ex.Const) and coeff.value == 0:
            continue
        check_periodicity(coeff, grid)
        vals = np.asarray(ex.evaluate(coeff, pts), dtype=float)
        if vals.ndim == 0:
            vals = np.full(N, float(vals))
        total = total + sp.diags(vals) @ first(j)
    return SparseOperator(matrix=sp.csr_matrix(total), symmetric=False)


# ---------------------------------------------------------------------------


def volume_density_values(structure, grid):
    """Nodal values of 1/|det F| for the structure's frame."""
    F = structure.frame_matrix(grid.points())
    det = np.abs(np.linalg.det(F))
    if np.any(det < 1e-14):
        raise GridError("frame matrix numerically singular on the grid")
    return 1.0 / det


def node_mass(grid, density):
    """Diagonal mass: nodal density times the cell volume."""
    diag = np.asarray(density, dtype=float) * grid.cell_volume()
    if np.any(diag <= 0):
        raise GridError("mass density must be positive on all nodes")
    return DiagonalMass(diagonal=diag)


def assemble_weak_laplacian(structure, grid, eps=None, density=None):
    """Corner-quadrature weak form of the frame Laplacian.

    With eps=None only the horizontal fields enter (the horizontal
    operator); with a positive eps the complement fields enter with
    weight 1/eps (the penalty operator).  ``density`` optionally
    multiplies the geometric volume density on the nodes.
    """
    m = grid.dim
    if structure.dim != m:
        raise GridError("structure dimension %d does not match grid" % structure.dim)
    fields = list(structure.horizontal)
    scales = [1.0] * len(fields)
    if eps is not None:
        if not (eps > 0):
            raise GridError("eps must be positive")
        for T in structure.complement:
            fields.append(T)
            scales.append(1.0 / float(eps))
    for f in fields:
        for c in f.coefficients:
            check_periodicity(c, grid)

    N = grid.size
    R = N * (1 << m)
    if R * m * m * len(fields) > _PAIR_BUDGET:
        raise GridError(
            "weak assembly size %d exceeds the supported budget; "
            "use a smaller grid" % (R * m * m * len(fields))
        )
    pts = grid.points()
    rho = volume_density_values(structure, grid)
    if density is not None:
        if isinstance(density, Expr):
            extra = evaluate_on_grid(density, grid)
        else:
            extra = np.asarray(density, dtype=float)
            if extra.shape != (N,):
                raise GridError("density array must have one value per node")
        rho = rho * extra
    mass = node_mass(grid, rho)

    multi = grid.multi_indices()
    h = np.asarray(grid.h)
    corner_weight = grid.cell_volume() / (1 << m)

    # rows: cell p, corner sigma; corner node index and edge endpoints
    corners = []
    for sigma_bits in range(1 << m):
        sigma = np.array([(sigma_bits >> ax) & 1 for ax in range(m)])
        corner_multi = (multi + sigma) % np.array(grid.shape)
        corner_idx = grid.ravel(corner_multi)
        lo = np.empty((N, m), dtype=np.int64)
        hi = np.empty((N, m), dtype=np.int64)
        for ax in range(m):
            # lower endpoint: sigma with axis bit cleared; upper: bit set
            lo_multi = corner_multi.copy()
            hi_multi = corner_multi.copy()
            if sigma[ax] == 0:
                hi_multi[:, ax] = (hi_multi[:, ax] + 1) % grid.shape[ax]
            else:
                lo_multi[:, ax] = (lo_multi[:, ax] - 1) % grid.shape[ax]
            lo[:, ax] = grid.ravel(lo_multi)
            hi[:, ax] = grid.ravel(hi_multi)
        corners.append((corner_idx, lo, hi))

    corner_idx_all = np.concatenate([c[0] for c in corners])
    lo_all = np.concatenate([c[1] for c in corners], axis=0)
    hi_all = np.concatenate([c[2] for c in corners], axis=0)
    weights = rho[corner_idx_all] * corner_weight

    factors = []
    exact = {}
    w_dy = [_dy(w) for w in weights]
    for f, scale in zip(fields, scales):
        V = f.evaluate(pts)  # (N, m)
        vals = (V[corner_idx_all] * (scale / h)[None, :]).astype(float)
        factors.append(FieldFactor(lo=lo_all, hi=hi_all, values=vals))
        for r in range(R):
            wr = w_dy[r]
            entries = []
            row_lo = lo_all[r]
            row_hi = hi_all[r]
            row_v = vals[r]
            for l in range(m):
                v = row_v[l]
                if v == 0.0:
                    continue
                d = _dy(v)
                entries.append((int(row_lo[l]), (-d[0], d[1])))
                entries.append((int(row_hi[l]), d))
            for ca, va in entries:
                wa = _dy_mul(wr, va)
                for cb, vb in entries:
                    key = (ca, cb)
                    exact[key] = _dy_add(
                        exact.get(key, _DY_ZERO), _dy_mul(wa, vb)
                    )

    keys = sorted(exact)
    rows = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
    cols = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
    data = np.array([_dy_float(exact[k]) for k in keys])
    keep = data != 0.0
    mat = sp.csr_matrix((data[keep], (rows[keep], cols[keep])), shape=(N, N))
    op = SparseOperator(matrix=mat, symmetric=True, exact=exact)
    return WeakForm(
        grid=grid,
        operator=op,
        mass=mass,
        factors=factors,
        weights=weights,
        eps=eps,
    )


# ---------------------------------------------------------------------------
# exact certificates


def exact_symmetry_defect(op):
    """max |L_ij - L_ji| computed in exact arithmetic, as a float."""
    if op.exact is None:
        raise GridError("operator carries no exact entries")
    worst = 0.0
    for (i, j), v in op.exact.items():
        w = op.exact.get((j, i), _DY_ZERO)
        diff = _dy_add(v, (-w[0], w[1]))
        worst = max(worst, abs(_dy_float(diff)))
    return worst


def exact_constant_image(op):
    """max_i |sum_j L_ij| in exact arithmetic, as a float."""
    if op.exact is None:
        raise GridError("operator carries no exact entries")
    sums = {}
    for (i, _j), v in op.exact.items():
        sums[i] = _dy_add(sums.get(i, _DY_ZERO), v)
    if not sums:
        return 0.0
    return max(abs(_dy_float(v)) for v in sums.values())


def exact_green_defect(weak, e, f):
    """|f^T L e - sum_fields <B e, B f>_W| in exact arithmetic, as a float.

    Both sides are evaluated over the rationals from the stored float
    entries, so agreement is exact, not merely to round-off.
    """
    op = weak.operator
    if op.exact is None:
        raise GridError("operator carries no exact entries")
    e_dy = [_dy(x) for x in np.asarray(e, dtype=float)]
    f_dy = [_dy(x) for x in np.asarray(f, dtype=float)]
    lhs = _DY_ZERO
    for (i, j), v in op.exact.items():
        lhs = _dy_add(lhs, _dy_mul(v, _dy_mul(f_dy[i], e_dy[j])))
    rhs = _DY_ZERO
    w_dy = [_dy(w) for w in weak.weights]
    for fac in weak.factors:
        R, m = fac.values.shape
        for r in range(R):
            ge = _DY_ZERO
            gf = _DY_ZERO
            for l in range(m):
                v = fac.values[r, l]
                if v == 0.0:
                    continue
                d = _dy(v)
                de = _dy_add(e_dy[fac.hi[r, l]], (-e_dy[fac.lo[r, l]][0], e_dy[fac.lo[r, l]][1]))
                df = _dy_add(f_dy[fac.hi[r, l]], (-f_dy[fac.lo[r, l]][0], f_dy[fac.lo[r, l]][1]))
                ge = _dy_add(ge, _dy_mul(d, de))
                gf = _dy_add(gf, _dy_mul(d, df))
            rhs = _dy_add(rhs, _dy_mul(w_dy[r], _dy_mul(ge, gf)))
    diff = _dy_add(lhs, (-rhs[0], rhs[1]))
    return abs(_dy_float(diff))


# ---------------------------------------------------------------------------
# Matrix Market coordinate I/O (values round-trip via repr)


def write_matrix_market(path, op, comment=""):
    if isinstance(op, DiagonalMass):
        coo = sp.diags(op.diagonal).tocoo()
        symmetric = True
    elif isinstance(op, SparseOperator):
        coo = op.matrix.tocoo()
        symmetric = op.symmetric
    else:
        coo = sp.coo_matrix(op)
        symmetric = False
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for line in comment.splitlines():
                fh.write("%% %s\n" % line)
        fh.write("%d %d %d\n" % (coo.shape[0], coo.shape[1], coo.nnz))
        for idx in order:
            fh.write(
                "%d %d %s\n"
                % (coo.row[idx] + 1, coo.col[idx] + 1, repr(float(coo.data[idx])))
            )
    return symmetric


def read_matrix_market(path):
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket matrix coordinate real"):
            raise GridError("unsupported matrix market header: %r" % header)
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        rows, cols, nnz = (int(t) for t in line.split())
        ri = np.empty(nnz, dtype=np.int64)
        ci = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        for idx in range(nnz):
            parts = fh.readline().split()
            ri[idx] = int(parts[0]) - 1
            ci[idx] = int(parts[1]) - 1
            vals[idx] = float(parts[2])
    return sp.csr_matrix((vals, (ri, ci)), shape=(rows, cols))
