"""Grid, finite-difference assembly, and exact-certificate tests.

Closed-form oracles: the one-field weak form on a flat two-torus is the
classical three-point stencil whose generalized eigenvalues are
(2/h)^2 sin^2(pi k / n), and central differences applied to samples of
sin(2 pi x) act diagonally with factor (2 cos(2 pi h) - 2)/h^2.  Both
are derived by direct computation and frozen below.
"""

import math

import numpy as np
import pytest

import srlab.expr as ex
from srlab.discrete import (
    DiagonalMass,
    Grid,
    GridError,
    PeriodicityError,
    SparseOperator,
    assemble_field,
    assemble_strong,
    assemble_weak_laplacian,
    check_periodicity,
    evaluate_on_grid,
    exact_constant_image,
    exact_green_defect,
    exact_symmetry_defect,
    node_mass,
    read_matrix_market,
    volume_density_values,
    write_matrix_market,
)
from srlab.geometry import VectorField
from srlab.operators import sublaplacian

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Grid basics


def test_grid_rejects_odd_sizes():
    with pytest.raises(GridError):
        Grid(shape=(7, 8), periods=(1.0, 1.0))


def test_grid_rejects_small_sizes():
    with pytest.raises(GridError):
        Grid(shape=(2, 8), periods=(1.0, 1.0))


def test_grid_rejects_length_mismatch():
    with pytest.raises(GridError):
        Grid(shape=(8, 8), periods=(1.0,))


def test_grid_rejects_nonpositive_periods():
    with pytest.raises(GridError):
        Grid(shape=(8, 8), periods=(1.0, 0.0))


def test_grid_geometry_properties():
    g = Grid(shape=(8, 4), periods=(2.0, 1.0))
    assert g.dim == 2
    assert g.size == 32
    assert g.h == (0.25, 0.25)
    assert g.cell_volume() == 0.0625
    pts = g.points()
    assert pts.shape == (32, 2)
    assert np.array_equal(pts[0], [0.0, 0.0])
    # row-major: the second node advances the last axis
    assert np.array_equal(pts[1], [0.0, 0.25])


def test_grid_ravel_wraps_indices():
    g = Grid(shape=(4, 6), periods=(1.0, 1.0))
    multi = np.array([[4, 0], [-1, 7]])
    # wraps to (0, 0) and (3, 1)
    assert np.array_equal(g.ravel(multi), [0, 3 * 6 + 1])


def test_grid_shifted_wraps_along_axis():
    g = Grid(shape=(4, 4), periods=(1.0, 1.0))
    multi = g.multi_indices()
    up = g.shifted(multi, 0, +1)
    assert up[:, 0].max() == 3
    assert np.array_equal(up[-1], [0, 3])
    # original is untouched
    assert multi[-1, 0] == 3


# ---------------------------------------------------------------------------
# node values and periodicity screening


def test_evaluate_on_grid_matches_numpy():
    g = Grid(shape=(8, 4), periods=(1.0, 1.0))
    e = ex.parse("sin(6.283185307179586*x0)", dim=2)
    vals = evaluate_on_grid(e, g)
    pts = g.points()
    assert np.allclose(vals, np.sin(TWO_PI * pts[:, 0]), atol=1e-14)


def test_constant_expression_broadcasts():
    g = Grid(shape=(4, 4), periods=(1.0, 1.0))
    vals = evaluate_on_grid(ex.parse("3/2", dim=2), g)
    assert vals.shape == (16,)
    assert np.all(vals == 1.5)


def test_check_periodicity_accepts_periodic_coefficient():
    g = Grid(shape=(8, 8), periods=(1.0, 1.0))
    check_periodicity(ex.parse("cos(6.283185307179586*x1)", dim=2), g)


def test_check_periodicity_names_offending_axis():
    g = Grid(shape=(4, 4, 4), periods=(1.0, 1.0, 1.0))
    with pytest.raises(PeriodicityError, match="axis 1"):
        check_periodicity(ex.parse("-x1/2", dim=3), g)


def test_heisenberg_coefficients_fail_periodicity(heisenberg):
    g = Grid(shape=(4, 4, 4), periods=heisenberg.periods)
    bad = heisenberg.horizontal[0].coefficients[2]  # -x1/2
    with pytest.raises(PeriodicityError):
        check_periodicity(bad, g)


# ---------------------------------------------------------------------------
# first-order assembly


def test_field_matrix_annihilates_constants_exactly():
    g = Grid(shape=(8, 8), periods=(TWO_PI, TWO_PI))
    X = VectorField((ex.parse("cos(x1)", dim=2), ex.parse("sin(x0)", dim=2)))
    op = assemble_field(X, g)
    assert exact_constant_image(op) == 0.0
    # float matvec only cancels up to summation-order round-off
    assert np.max(np.abs(op.matvec(np.ones(g.size)))) < 1e-14


def test_field_matrix_central_difference_error_bound():
    # |D_h f - f'| <= h^2 max|f'''| / 6 for f = sin(2 pi x): bound 0.6460
    g = Grid(shape=(8, 8), periods=(1.0, 1.0))
    X = VectorField((ex.Const(1), ex.Const(0)))
    op = assemble_field(X, g)
    pts = g.points()
    f = np.sin(TWO_PI * pts[:, 0])
    err = np.max(np.abs(op.matvec(f) - TWO_PI * np.cos(TWO_PI * pts[:, 0])))
    bound = TWO_PI**3 * (1.0 / 8.0) ** 2 / 6.0
    assert err <= bound
    # frozen measurement guards against silent stencil changes
    assert abs(err - 0.6263310576872065) < 1e-12


def test_field_matrix_rejects_dimension_mismatch():
    g = Grid(shape=(8, 8), periods=(1.0, 1.0))
    X = VectorField((ex.Const(1), ex.Const(0), ex.Const(0)))
    with pytest.raises(GridError):
        assemble_field(X, g)


# ---------------------------------------------------------------------------
# weak assembly: flat-torus closed forms


def flat_line_structure():
    from srlab.geometry import SubRiemannianStructure

    return SubRiemannianStructure(
        dim=2,
        periods=(1.0, 1.0),
        horizontal=(VectorField((ex.Const(1), ex.Const(0))),),
        complement=(VectorField((ex.Const(0), ex.Const(1))),),
    )


def test_weak_horizontal_is_three_point_stencil():
    s = flat_line_structure()
    n = 8
    g = Grid(shape=(n, n), periods=(1.0, 1.0))
    wf = assemble_weak_laplacian(s, g)
    A = wf.operator.matrix.toarray()
    multi = g.multi_indices()
    up = g.ravel(g.shifted(multi, 0, +1))
    dn = g.ravel(g.shifted(multi, 0, -1))
    B = np.zeros((g.size, g.size))
    idx = np.arange(g.size)
    B[idx, idx] = 2.0
    B[idx, up] = -1.0
    B[idx, dn] = -1.0
    assert np.array_equal(A, B)
    assert np.all(wf.mass.diagonal == g.cell_volume())


def test_weak_horizontal_eigenvalues_closed_form():
    s = flat_line_structure()
    n = 8
    h = 1.0 / n
    g = Grid(shape=(n, n), periods=(1.0, 1.0))
    wf = assemble_weak_laplacian(s, g)
    A = wf.operator.matrix.toarray()
    lam = np.sort(np.linalg.eigvalsh(A) / wf.mass.diagonal[0])
    pred = np.sort(
        np.array(
            [
                (2.0 / h) ** 2 * math.sin(math.pi * k / n) ** 2
                for k in range(n)
                for _ in range(n)
            ]
        )
    )
    assert np.allclose(lam, pred, atol=1e-9)


def test_weak_penalty_adds_scaled_transverse_stencil():
    s = flat_line_structure()
    g = Grid(shape=(8, 8), periods=(1.0, 1.0))
    wf = assemble_weak_laplacian(s, g, eps=2)
    A = wf.operator.matrix.toarray()
    p = int(g.ravel(np.array([[3, 4]]))[0])
    multi = g.multi_indices()
    row = {}
    for c in np.nonzero(A[p])[0]:
        off = tuple((multi[c] - multi[p]) % np.array(g.shape))
        row[off] = A[p, c]
    assert row == {
        (0, 0): 2.5,  # 2 + 2 / eps^2
        (1, 0): -1.0,
        (7, 0): -1.0,
        (0, 1): -0.25,  # -1 / eps^2
        (0, 7): -0.25,
    }


def test_weak_rejects_bad_eps_and_dimension(contact):
    s = flat_line_structure()
    g = Grid(shape=(8, 8), periods=(1.0, 1.0))
    with pytest.raises(GridError):
        assemble_weak_laplacian(s, g, eps=0)
    with pytest.raises(GridError):
        assemble_weak_laplacian(contact, g)


def test_weak_rejects_nonperiodic_structure(heisenberg):
    g = Grid(shape=(4, 4, 4), periods=heisenberg.periods)
    with pytest.raises(PeriodicityError):
        assemble_weak_laplacian(heisenberg, g)


def test_pair_budget_guard(monkeypatch):
    import srlab.discrete as disc

    monkeypatch.setattr(disc, "_PAIR_BUDGET", 10)
    s = flat_line_structure()
    g = Grid(shape=(4, 4), periods=(1.0, 1.0))
    with pytest.raises(GridError, match="budget"):
        assemble_weak_laplacian(s, g)


# ---------------------------------------------------------------------------
# exact certificates on a curved frame


def contact_weak(contact, n=6, eps=None):
    g = Grid(shape=(n, n, n), periods=contact.periods)
    return g, assemble_weak_laplacian(contact, g, eps=eps)


def test_exact_symmetry_certificate(contact):
    _, wf = contact_weak(contact)
    assert exact_symmetry_defect(wf.operator) == 0.0
    M = wf.operator.matrix
    assert (M != M.T).nnz == 0


def test_exact_constant_certificate(contact):
    _, wf = contact_weak(contact)
    assert exact_constant_image(wf.operator) == 0.0


def test_exact_green_certificate(contact):
    g, wf = contact_weak(contact)
    rng = np.random.default_rng(5)
    for _ in range(3):
        e = rng.standard_normal(g.size)
        f = rng.standard_normal(g.size)
        assert exact_green_defect(wf, e, f) == 0.0


def test_exact_certificates_with_penalty(contact):
    _, wf = contact_weak(contact, eps=4)
    assert exact_symmetry_defect(wf.operator) == 0.0
    assert exact_constant_image(wf.operator) == 0.0


def test_quadratic_form_matches_matrix(contact):
    g, wf = contact_weak(contact)
    rng = np.random.default_rng(7)
    f = rng.standard_normal(g.size)
    q = wf.quadratic_form(f)
    ref = float(f @ wf.operator.matvec(f))
    assert q >= 0.0
    assert abs(q - ref) <= 1e-10 * max(1.0, abs(ref))


def test_mass_is_density_times_cell_volume(contact):
    g, wf = contact_weak(contact)
    rho = volume_density_values(contact, g)
    assert np.array_equal(wf.mass.diagonal, rho * g.cell_volume())
    # the rotating contact frame is orthonormal: density is one
    assert np.allclose(rho, 1.0, atol=1e-12)


def test_node_mass_rejects_nonpositive_density():
    g = Grid(shape=(4, 4), periods=(1.0, 1.0))
    with pytest.raises(GridError):
        node_mass(g, np.zeros(g.size))


def test_mass_solve_inverts_matvec():
    g = Grid(shape=(4, 4), periods=(1.0, 1.0))
    mass = node_mass(g, np.full(g.size, 2.0))
    rng = np.random.default_rng(3)
    f = rng.standard_normal(g.size)
    assert np.allclose(mass.solve(mass.matvec(f)), f, atol=1e-14)


# ---------------------------------------------------------------------------
# strong assembly


def test_strong_operator_diagonalizes_fourier_mode():
    s = flat_line_structure()
    n = 8
    h = 1.0 / n
    g = Grid(shape=(n, n), periods=(1.0, 1.0))
    S = assemble_strong(sublaplacian(s), g)
    pts = g.points()
    f = np.sin(TWO_PI * pts[:, 0])
    factor = (2.0 * math.cos(TWO_PI * h) - 2.0) / h**2
    assert np.max(np.abs(S.matvec(f) - factor * f)) < 1e-12


def test_strong_matches_weak_on_smooth_function(contact):
    g, wf = contact_weak(contact, n=8)
    S = assemble_strong(sublaplacian(contact), g)
    f = evaluate_on_grid(ex.parse("sin(x2)", dim=3), g)
    strong = S.matvec(f)
    weak = -wf.mass.solve(wf.operator.matvec(f))
    scale = np.max(np.abs(strong))
    assert scale > 0.1
    assert np.max(np.abs(strong - weak)) <= 0.5 * scale


def test_strong_rejects_dimension_mismatch(contact):
    g = Grid(shape=(8, 8), periods=(1.0, 1.0))
    with pytest.raises(GridError):
        assemble_strong(sublaplacian(contact), g)


# ---------------------------------------------------------------------------
# Matrix Market I/O


def test_matrix_market_round_trip_is_exact(contact):
    import os
    import tempfile

    _, wf = contact_weak(contact)
    M = wf.operator.matrix
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "op.mtx")
        symmetric = write_matrix_market(path, wf.operator, comment="weak form")
        back = read_matrix_market(path)
    assert symmetric is True
    assert (back != M).nnz == 0
    # repr round-trip keeps every float bit-for-bit
    assert np.array_equal(np.sort(back.data), np.sort(M.data))


def test_matrix_market_writes_diagonal_mass(tmp_path):
    mass = DiagonalMass(diagonal=np.array([1.5, 2.5, 0.125]))
    path = tmp_path / "mass.mtx"
    write_matrix_market(str(path), mass)
    back = read_matrix_market(str(path))
    assert np.array_equal(back.toarray(), np.diag([1.5, 2.5, 0.125]))


def test_matrix_market_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text("%%MatrixMarket matrix array real general\n1 1\n3.0\n")
    with pytest.raises(GridError):
        read_matrix_market(str(path))


def test_sparse_operator_matvec_matches_matrix():
    import scipy.sparse as sp

    mat = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    op = SparseOperator(matrix=mat, symmetric=True)
    assert np.array_equal(op.matvec(np.array([1.0, 0.0])), [2.0, -1.0])
