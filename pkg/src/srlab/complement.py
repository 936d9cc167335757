"""Canonical flat complements for a sub-Riemannian frame.

Given the reference complement T_b, the adapted fields T'_b = T_b +
sum_i A^i_b X_i are chosen so that the projected acceleration
P(nabla_{T'}T') vanishes: per complement index b this is the k-by-k
linear system

    sum_j C_ij^b A^j_b = -gbar(T_b, [X_i, T_b]),   i = 1..k,

solved exactly when the vertical bracket matrix C^b is invertible and in
the minimum-norm least-squares sense otherwise.  Solving is pointwise
numeric; when the data is constant over the sample set the solution is
promoted to exact symbolic coefficients.
"""

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .expr import simplify
from .geometry import (
    SubRiemannianStructure,
    VectorField,
    det_expr,
    linear_combination,
    structure_constants,
)


class ComplementError(ValueError):
    """No flat complement in the affine family within tolerance."""


CONDITION_WARN = 1e8


def reference_mean_curvature(s, point):
    """Matrix F[b, i] = gbar(T_b, [X_i, T_b]) at ``point``.

    Row b collects the horizontal-frame components of the projected
    acceleration of the reference field T_b, so the mean curvature of the
    reference complement is sum_b F[b, i] X_i.
    """
    k, m = s.k, s.dim
    point = np.asarray(point, dtype=float)
    F = s.frame_matrix(point)
    out = np.empty((m - k, k))
    for b in range(m - k):
        for i in range(k):
            w = s.frame_bracket(i, k + b).evaluate(point)
            out[b, i] = np.linalg.solve(F, w)[k + b]
    return out


@dataclass
class PointSolve:
    """Per-point solution of the flatness system."""

    point: np.ndarray
    A: np.ndarray  # (m-k, k)
    modes: list  # per b: "unique" | "least-squares"
    residuals: np.ndarray  # per b, norm of C A + F
    condition_numbers: np.ndarray  # per b
    warnings: list


def solve_canonical_complement(s, point, rank_tol=1e-10, residual_tol=1e-8):
    """Solve the flatness system at one point.

    Singular C^b falls back to the minimum-norm least-squares solution;
    if even that leaves a residual beyond tolerance the system is
    infeasible and a ComplementError is raised.
    """
    point = np.asarray(point, dtype=float)
    k, m = s.k, s.dim
    data = structure_constants(s, point)
    Fbar = reference_mean_curvature(s, point)
    A = np.zeros((m - k, k))
    modes, warnings = [], []
    residuals = np.zeros(m - k)
    conds = np.zeros(m - k)
    for b in range(m - k):
        C = data.C_vertical[:, :, b]
        rhs = -Fbar[b]
        U, sv, Vt = np.linalg.svd(C)
        smax = sv[0] if sv.size else 0.0
        rank = int(np.sum(sv > rank_tol * max(smax, 1e-300)))
        if rank == k:
            modes.append("unique")
            conds[b] = smax / sv[-1]
            if conds[b] > CONDITION_WARN:
                warnings.append(
                    "complement %d: condition number %.3e exceeds %.0e"
                    % (b, conds[b], CONDITION_WARN)
                )
        else:
            modes.append("least-squares")
            conds[b] = np.inf
        inv = np.zeros_like(sv)
        inv[:rank] = 1.0 / sv[:rank]
        A[b] = Vt.T @ (inv * (U.T @ rhs))
        residuals[b] = np.linalg.norm(C @ A[b] - rhs)
        scale = max(1.0, float(np.linalg.norm(Fbar[b])))
        if residuals[b] > residual_tol * scale:
            raise ComplementError(
                "no flat complement for T_%d at %s: least-squares residual %.3e"
                % (b, np.array2string(point, precision=6), residuals[b])
            )
    return PointSolve(
        point=point,
        A=A,
        modes=modes,
        residuals=residuals,
        condition_numbers=conds,
        warnings=warnings,
    )


@dataclass
class AdaptedComplement:
    """The canonical complement, symbolic when the solve is constant."""

    structure: SubRiemannianStructure
    mode: str  # "exact-symbolic" | "pointwise"
    solvability: list  # per b
    A_exprs: object  # (m-k, k) nested tuples of Expr, or None
    adapted_fields: object  # tuple of VectorField, or None
    condition_numbers: np.ndarray
    warnings: list

    def coefficients_at(self, point):
        """The tilt matrix A at a point, from exprs or a fresh solve."""
        if self.mode == "exact-symbolic":
            k = self.structure.k
            out = np.empty((self.structure.dim - k, k))
            for b, row in enumerate(self.A_exprs):
                for i, e in enumerate(row):
                    out[b, i] = ex.evaluate(e, np.asarray(point, dtype=float))
            return out
        return solve_canonical_complement(self.structure, point).A

    def adapted_values(self, point):
        """Coordinate components of the adapted fields at a point, (m-k, m)."""
        point = np.asarray(point, dtype=float)
        if self.mode == "exact-symbolic":
            return np.stack([f.evaluate(point) for f in self.adapted_fields])
        A = self.coefficients_at(point)
        X = np.stack([f.evaluate(point) for f in self.structure.horizontal])
        T = np.stack([f.evaluate(point) for f in self.structure.complement])
        return A @ X + T

    def as_structure(self):
        """The same structure with the adapted complement installed."""
        if self.mode != "exact-symbolic":
            raise ComplementError(
                "adapted fields are only symbolic when the solve is constant; "
                "this complement is pointwise"
            )
        return SubRiemannianStructure(
            dim=self.structure.dim,
            periods=self.structure.periods,
            horizontal=self.structure.horizontal,
            complement=self.adapted_fields,
            name=self.structure.name,
        )


def canonical_complement(s, points=None, promote_tol=1e-11):
    """Solve at sample points and promote constant solutions to symbolic.

    The promotion threshold compares the spread of A entries across the
    samples; a constant solve yields exact Const coefficients so the
    adapted fields are honest vector fields.
    """
    if points is None:
        points = _default_samples(s)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    solves = [solve_canonical_complement(s, p) for p in points]
    A0 = solves[0].A
    spread = max(float(np.max(np.abs(sv.A - A0))) for sv in solves)
    scale = max(1.0, float(np.max(np.abs(A0))))
    warnings = sorted({w for sv in solves for w in sv.warnings})
    conds = np.max(np.stack([sv.condition_numbers for sv in solves]), axis=0)
    solvability = solves[0].modes
    if spread <= promote_tol * scale:
        A_exprs = tuple(
            tuple(ex.Const(_clean(v)) for v in row) for row in A0
        )
        fields = tuple(
            linear_combination(list(A_exprs[b]), s.horizontal, base=s.complement[b])
            for b in range(s.dim - s.k)
        )
        return AdaptedComplement(
            structure=s,
            mode="exact-symbolic",
            solvability=solvability,
            A_exprs=A_exprs,
            adapted_fields=fields,
            condition_numbers=conds,
            warnings=warnings,
        )
    return AdaptedComplement(
        structure=s,
        mode="pointwise",
        solvability=solvability,
        A_exprs=None,
        adapted_fields=None,
        condition_numbers=conds,
        warnings=warnings,
    )


def _clean(v):
    v = float(v)
    if v == 0.0:
        return 0
    r = round(v)
    if abs(v - r) < 1e-13 * max(1.0, abs(r)):
        return int(r)
    return v


def _default_samples(s, count=125):
    """5^m lattice for small m, a seeded 125-point sample otherwise."""
    if 5 ** s.dim <= 5 ** 3:
        return s.sample_lattice(5)
    return s.sample_points(count, rng=np.random.default_rng(7))


def verify_flat_complement(s, ac, points=None):
    """Max over samples of the projected acceleration of the adapted fields.

    Evaluates, in the reference frame, || sum_j A^j_b gbar([X_i,X_j],T_b)
    + gbar([X_i,T_b],T_b) ||_2 per complement index and returns the worst
    value; a flat complement gives 0 up to round-off.
    """
    if points is None:
        points = _default_samples(s)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k = s.k
    worst = 0.0
    for p in points:
        data = structure_constants(s, p)
        Fbar = reference_mean_curvature(s, p)
        A = ac.coefficients_at(p)
        for b in range(s.dim - k):
            C = data.C_vertical[:, :, b]
            r = C @ A[b] + Fbar[b]
            worst = max(worst, float(np.linalg.norm(r)))
    return worst


# ---------------------------------------------------------------------------


class MetricExtension:
    """Declares the (possibly rescaled) adapted frame orthonormal.

    epsilon=None keeps the frame {X_i, T_b}; a numeric epsilon rescales
    the complement to {X_i, T_b / eps}, the penalty-metric frame.  The
    volume density against coordinate Lebesgue measure is 1/|det F| for
    the frame matrix F, so the rescaled volume is eps^(m-k) times the
    unscaled one.
    """

    def __init__(self, structure, epsilon=None):
        self.structure = structure
        self.epsilon = epsilon
        if epsilon is None:
            self.frame_structure = structure
        else:
            if epsilon <= 0:
                raise ValueError("epsilon must be positive")
            scale = ex.Const(_eps_inverse(epsilon))
            rescaled = tuple(
                VectorField([simplify(ex.Mul(scale, c)) for c in T.coefficients])
                for T in structure.complement
            )
            self.frame_structure = SubRiemannianStructure(
                dim=structure.dim,
                periods=structure.periods,
                horizontal=structure.horizontal,
                complement=rescaled,
                name=structure.name,
            )

    @property
    def dim(self):
        return self.structure.dim

    @property
    def k(self):
        return self.structure.k

    @property
    def frame(self):
        return self.frame_structure.frame

    def frame_matrix(self, point):
        return self.frame_structure.frame_matrix(point)

    def volume_density(self, point):
        """Density of the extension's volume against dx, = 1/|det F|."""
        F = self.frame_matrix(point)
        det = np.linalg.det(F)
        return 1.0 / np.abs(det)

    def density_expr(self):
        """Symbolic 1/det as an expression (sign fixed from a base point).

        The logarithmic derivative d_j(rho)/rho = -d_j(det)/det that
        divergence formulas need is insensitive to the sign choice.
        """
        rows = [
            [f.coefficients[j] for f in self.frame] for j in range(self.dim)
        ]
        det = det_expr(rows)
        base = np.array([0.0] * self.dim)
        sign = np.sign(ex.evaluate(det, base)) or 1.0
        if sign < 0:
            det = simplify(ex.Neg(det))
        return simplify(ex.Div(ex.ONE, det)), det


def _eps_inverse(epsilon):
    from fractions import Fraction

    if isinstance(epsilon, int):
        return Fraction(1, epsilon)
    if isinstance(epsilon, Fraction):
        return 1 / epsilon
    return 1.0 / float(epsilon)
