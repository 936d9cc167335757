"""Eigensolvers for the discretized forms, written against the matrices.

Both solvers work on the symmetrically scaled standard problem
A~ = D M^{-1/2} L M^{-1/2}: the dense path runs Householder
tridiagonalization, implicit-shift QL for eigenvalues, and inverse
iteration for eigenvectors; the iterative path is a Lanczos process with
full reorthogonalization on a spectral shift of A~.  Reported residuals
are always the generalized ones, || L v - lambda M v || / || M v ||,
computed from the original matrices.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


DENSE_LIMIT = 4096
LANCZOS_MAX_COUNT = 32


class SpectrumError(RuntimeError):
    pass


def _mass_diagonal(M):
    if hasattr(M, "diagonal") and not callable(getattr(M, "diagonal", None)):
        diag = np.asarray(M.diagonal, dtype=float)
    elif sp.issparse(M):
        diag = M.diagonal()
        if (M - sp.diags(diag)).nnz:
            raise SpectrumError("mass matrix must be diagonal")
    else:
        diag = np.asarray(M, dtype=float)
        if diag.ndim == 2:
            diag = np.diag(diag)
    if np.any(diag <= 0):
        raise SpectrumError("mass diagonal must be positive")
    return diag


def _operator_matrix(L):
    if hasattr(L, "matrix"):
        return L.matrix
    return sp.csr_matrix(L)


def scaled_standard_form(L, M):
    """(A~, s) with A~ = diag(s) L diag(s), s = 1/sqrt(mass diagonal).

    The scale product s_i s_j is formed before touching the data so the
    scaled matrix is bitwise symmetric whenever L is.
    """
    mat = _operator_matrix(L)
    diag = _mass_diagonal(M)
    s = 1.0 / np.sqrt(diag)
    coo = mat.tocoo()
    factor = s[coo.row] * s[coo.col]
    scaled = sp.csr_matrix(
        (coo.data * factor, (coo.row, coo.col)), shape=mat.shape
    )
    return scaled, s


def rayleigh(L, M, v):
    mat = _operator_matrix(L)
    diag = _mass_diagonal(M)
    v = np.asarray(v, dtype=float)
    return float((v @ (mat @ v)) / (v @ (diag * v)))


def cluster_eigenvalues(values, rel=1e-6):
    """Group indices whose eigenvalues agree to rel * max(1, |value|)."""
    values = np.asarray(values, dtype=float)
    clusters = []
    for i, lam in enumerate(values):
        if clusters and abs(lam - values[clusters[-1][-1]]) <= rel * max(
            1.0, abs(lam)
        ):
            clusters[-1].append(i)
        else:
            clusters.append([i])
    return clusters


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    vectors: np.ndarray  # (N, count), generalized eigenvectors
    residuals: np.ndarray
    method: str
    iterations: object = None
    clusters: list = field(default_factory=list)

    def __post_init__(self):
        if not self.clusters:
            self.clusters = cluster_eigenvalues(self.eigenvalues)

    def cluster_index(self):
        """Per-eigenvalue cluster label, in ascending order."""
        labels = np.zeros(self.eigenvalues.size, dtype=int)
        for label, members in enumerate(self.clusters):
            for i in members:
                labels[i] = label
        return labels


# ---------------------------------------------------------------------------
# dense path


def householder_tridiagonalize(A):
    """(d, e, Q) with A = Q T Q^T, T tridiagonal (e[0] unused)."""
    A = np.array(A, dtype=float, copy=True)
    n = A.shape[0]
    d = np.zeros(n)
    e = np.zeros(n)
    reflectors = []
    for i in range(n - 1, 1, -1):
        v = A[i, :i].copy()
        scale = float(np.sum(np.abs(v)))
        if scale == 0.0:
            e[i] = 0.0
            continue
        v /= scale
        h = float(v @ v)
        f = v[-1]
        g = -math.copysign(math.sqrt(h), f)
        e[i] = scale * g
        h -= f * g
        v[-1] = f - g
        p = (A[:i, :i] @ v) / h
        K = float(v @ p) / (2.0 * h)
        q = p - K * v
        A[:i, :i] -= np.outer(q, v) + np.outer(v, q)
        A[i, :i] = 0.0
        A[:i, i] = 0.0
        reflectors.append((i, v, h))
    if n > 1:
        e[1] = A[1, 0]
    d[:] = np.diag(A)
    Q = np.zeros((n, n), order="F")
    np.fill_diagonal(Q, 1.0)
    for i, v, h in reflectors:
        g = Q[:, :i] @ v
        Q[:, :i] -= np.outer(g, v / h)
    return d, e, Q


def tridiagonal_eigenvalues(d, e):
    """Eigenvalues of the symmetric tridiagonal (d, e), ascending."""
    d = np.asarray(d, dtype=float).copy()
    n = d.size
    if n == 1:
        return d
    off = np.empty(n)
    off[: n - 1] = np.asarray(e, dtype=float)[1:]
    off[n - 1] = 0.0
    eps = np.finfo(float).eps
    for l in range(n):
        iters = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(off[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            iters += 1
            if iters > 64:
                raise SpectrumError("QL iteration failed to converge")
            g = (d[l + 1] - d[l]) / (2.0 * off[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + off[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            broke = False
            for i in range(m - 1, l - 1, -1):
                f = s * off[i]
                b = c * off[i]
                r = math.hypot(f, g)
                off[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    off[m] = 0.0
                    broke = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
            if not broke:
                d[l] -= p
                off[l] = g
                off[m] = 0.0
    return np.sort(d)


def tridiagonal_eigenvectors(d, e, values, rng=None, block=1024):
    """Inverse-iteration eigenvectors of (d, e) for the given eigenvalues.

    Shifts inside a numerical cluster are spread apart by a few ulps and
    the resulting vectors re-orthogonalized within the cluster, the
    standard safeguard for tight groups.
    """
    if rng is None:
        rng = np.random.default_rng(12345)
    d = np.asarray(d, dtype=float)
    n = d.size
    sub = np.zeros(n)
    if n > 1:
        sub[1:] = np.asarray(e, dtype=float)[1:]
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    values = values[order]
    J = values.size
    tnorm = float(np.max(np.abs(d))) if n else 0.0
    if n > 1:
        tnorm = max(tnorm, float(np.max(np.abs(sub[1:]))))
    tnorm = max(tnorm, 1.0)
    sep = 10.0 * np.finfo(float).eps * tnorm
    shifts = values.copy()
    for j in range(1, J):
        if shifts[j] <= shifts[j - 1] + sep:
            shifts[j] = shifts[j - 1] + sep
    clusters = []
    for j in range(J):
        if clusters and values[j] - values[clusters[-1][-1]] <= 100.0 * sep:
            clusters[-1].append(j)
        else:
            clusters.append([j])

    out = np.empty((n, J))
    if n == 1:
        out[:] = 1.0
        return out
    block = max(1, min(block, J))
    for start in range(0, J, block):
        sel = slice(start, min(start + block, J))
        out[:, sel] = _inverse_iteration_block(d, sub, shifts[sel], rng)
    for members in clusters:
        if len(members) > 1:
            _orthonormalize_columns(out, members)
            # polish once after the in-cluster rotation
            cols = np.array(members)
            out[:, cols] = _inverse_iteration_block(
                d, sub, shifts[cols], rng, start=out[:, cols]
            )
            _orthonormalize_columns(out, members)
    unperm = np.empty_like(order)
    unperm[order] = np.arange(J)
    return out[:, unperm]


def _inverse_iteration_block(d, sub, shifts, rng, start=None, sweeps=3):
    n = d.size
    J = shifts.size
    tiny = math.sqrt(np.finfo(float).tiny)
    if start is None:
        x = rng.standard_normal((n, J))
    else:
        x = start.copy()
    x /= np.linalg.norm(x, axis=0, keepdims=True)
    u = np.empty((n, J))
    v = np.empty((n, J))
    w = np.empty((n, J))
    lower = np.empty((n - 1, J))
    swap = np.empty((n - 1, J), dtype=bool)
    for _ in range(sweeps):
        # forward elimination with partial pivoting (keeps two superdiags)
        u[0] = d[0] - shifts
        v[0] = sub[1] if n > 1 else 0.0
        w[0] = 0.0
        y = x.copy()
        for i in range(n - 1):
            a_in = sub[i + 1]
            b_in = d[i + 1] - shifts
            c_in = sub[i + 2] if i + 2 < n else 0.0
            do_swap = np.abs(u[i]) < abs(a_in)
            swap[i] = do_swap
            u_p = np.where(do_swap, a_in, u[i])
            v_p = np.where(do_swap, b_in, v[i])
            w_p = np.where(do_swap, c_in, w[i])
            r_u = np.where(do_swap, u[i], a_in)
            r_v = np.where(do_swap, v[i], b_in)
            r_w = np.where(do_swap, w[i], c_in)
            safe = np.where(np.abs(u_p) < tiny, tiny, u_p)
            mult = r_u / safe
            lower[i] = mult
            u[i] = u_p
            v[i] = v_p
            w[i] = w_p
            u[i + 1] = r_v - mult * v_p
            v[i + 1] = r_w - mult * w_p
            w[i + 1] = 0.0
            y_p = np.where(do_swap, y[i + 1], y[i])
            y_r = np.where(do_swap, y[i], y[i + 1])
            y[i] = y_p
            y[i + 1] = y_r - mult * y_p
        # back substitution
        z = np.empty((n, J))
        un = np.where(np.abs(u[n - 1]) < tiny, tiny, u[n - 1])
        z[n - 1] = y[n - 1] / un
        if n > 1:
            un = np.where(np.abs(u[n - 2]) < tiny, tiny, u[n - 2])
            z[n - 2] = (y[n - 2] - v[n - 2] * z[n - 1]) / un
        for i in range(n - 3, -1, -1):
            un = np.where(np.abs(u[i]) < tiny, tiny, u[i])
            z[i] = (y[i] - v[i] * z[i + 1] - w[i] * z[i + 2]) / un
        peak = np.max(np.abs(z), axis=0, keepdims=True)
        peak[peak == 0.0] = 1.0
        z = z / peak
        norms = np.linalg.norm(z, axis=0, keepdims=True)
        norms[norms == 0.0] = 1.0
        x = z / norms
    return x


def _orthonormalize_columns(out, members):
    for idx, j in enumerate(members):
        col = out[:, j]
        for prev in members[:idx]:
            col -= (out[:, prev] @ col) * out[:, prev]
        norm = np.linalg.norm(col)
        if norm > 0:
            col /= norm
        out[:, j] = col


def dense_spectrum(L, M, count=None):
    """Smallest generalized eigenpairs by full tridiagonal reduction."""
    mat = _operator_matrix(L)
    N = mat.shape[0]
    if N > DENSE_LIMIT:
        raise SpectrumError(
            "dense solve limited to N <= %d; got %d" % (DENSE_LIMIT, N)
        )
    if count is None:
        count = N
    count = int(count)
    if not 1 <= count <= N:
        raise SpectrumError("count must be between 1 and N")
    scaled, s = scaled_standard_form(L, M)
    A = scaled.toarray()
    A = 0.5 * (A + A.T)
    d, e, Q = householder_tridiagonalize(A)
    lams = tridiagonal_eigenvalues(d, e)
    wanted = lams[:count]
    Z = tridiagonal_eigenvectors(d, e, wanted)
    V = Q @ Z
    V = s[:, None] * V
    V /= np.linalg.norm(V, axis=0, keepdims=True)
    diag = _mass_diagonal(M)
    res = _generalized_residuals(mat, diag, wanted, V)
    return SpectrumReport(
        eigenvalues=wanted, vectors=V, residuals=res, method="dense"
    )


def _generalized_residuals(mat, diag, lams, V):
    res = np.empty(lams.size)
    for j in range(lams.size):
        v = V[:, j]
        defect = mat @ v - lams[j] * (diag * v)
        res[j] = float(np.linalg.norm(defect) / np.linalg.norm(diag * v))
    return res


# ---------------------------------------------------------------------------
# Lanczos path


def _small_symmetric_eig(T, count):
    """Largest ``count`` eigenpairs of a small dense symmetric matrix."""
    T = 0.5 * (T + T.T)
    d, e, Qs = householder_tridiagonalize(T)
    lams = tridiagonal_eigenvalues(d, e)
    wanted = lams[-count:]
    Z = tridiagonal_eigenvectors(d, e, wanted)
    return wanted, Qs @ Z


def lanczos_smallest(
    L, M, count, tol=1e-10, max_iter=None, seed=0, block=None, sigma=0.1
):
    """Smallest generalized eigenpairs by shift-invert block Lanczos.

    Iterates with G = (A~ + sigma I)^{-1} (sparse LU for the inner
    solves), whose largest eigenvalues are the wanted smallest ones of
    A~, well separated.  The block recurrence (block size defaulting to
    min(count, 6)) resolves eigenvalue multiplicities up to the block
    size, which a single-vector Krylov process cannot see; full
    reorthogonalization keeps the basis numerically orthonormal and
    rank-deficient steps are refilled with random directions.
    """
    from scipy.sparse.linalg import splu

    count = int(count)
    if count > LANCZOS_MAX_COUNT:
        raise SpectrumError(
            "iterative solver supports at most %d eigenpairs" % LANCZOS_MAX_COUNT
        )
    mat = _operator_matrix(L)
    N = mat.shape[0]
    if count < 1 or count >= N:
        raise SpectrumError("count must be between 1 and N-1")
    if not sigma > 0:
        raise SpectrumError("sigma must be positive")
    p = int(block) if block else min(count, 6)
    p = max(1, min(p, N - 1))
    scaled, s = scaled_standard_form(L, M)
    diag = _mass_diagonal(M)
    absrow = np.asarray(np.abs(scaled).sum(axis=1)).ravel()
    cA = max(float(np.max(absrow)), 1.0)
    c = 1.0 / sigma  # scale of the largest eigenvalues of G
    solver = splu(
        (scaled + sigma * sp.identity(N, format="csr")).tocsc()
    )
    if max_iter is None:
        max_cols = min(N, max(360, 12 * count))
    else:
        max_cols = min(N, int(max_iter))

    rng = np.random.default_rng(seed)
    Q = np.zeros((N, max_cols + p))
    diag_blocks = []
    sub_blocks = []

    def _fill_orthonormal(W, n_done):
        """Orthonormalize W's columns against Q[:, :n_done] and each other.

        Returns (Z, R) with W = Z R + (reorthogonalization drift), R upper
        triangular; near-zero columns are replaced by fresh random
        directions with the matching R entries zeroed.
        """
        pcols = W.shape[1]
        Z = np.empty_like(W)
        R = np.zeros((pcols, pcols))
        for col in range(pcols):
            v = W[:, col].copy()
            for _ in range(2):
                if n_done:
                    v -= Q[:, :n_done] @ (Q[:, :n_done].T @ v)
                for prior in range(col):
                    r = float(Z[:, prior] @ v)
                    R[prior, col] += r
                    v -= r * Z[:, prior]
            norm = float(np.linalg.norm(v))
            if norm < 1e-10 * max(1.0, c):
                R[col, col] = 0.0
                v = rng.standard_normal(N)
                for _ in range(2):
                    if n_done:
                        v -= Q[:, :n_done] @ (Q[:, :n_done].T @ v)
                    for prior in range(col):
                        v -= (Z[:, prior] @ v) * Z[:, prior]
                norm = float(np.linalg.norm(v))
                if norm == 0.0:
                    raise SpectrumError("failed to extend the Krylov basis")
            else:
                R[col, col] = norm
            Z[:, col] = v / norm
        return Z, R

    Z, _ = _fill_orthonormal(rng.standard_normal((N, p)), 0)
    cols = 0
    prev_Z = None
    prev_B = None
    block_index = 0
    while cols < max_cols:
        Q[:, cols : cols + p] = Z
        cols += p
        block_index += 1
        W = solver.solve(Z)
        if prev_Z is not None:
            W -= prev_Z @ prev_B.T
        A = Z.T @ W
        A = 0.5 * (A + A.T)
        diag_blocks.append(A)
        W -= Z @ A
        Znew, Bblk = _fill_orthonormal(W, cols)
        sub_blocks.append(Bblk)
        last = cols + p > max_cols
        if cols >= count and (block_index % 3 == 0 or last):
            T = _assemble_block_tridiagonal(diag_blocks, sub_blocks, cols, p)
            theta, S = _small_symmetric_eig(T, count)
            bound = np.linalg.norm(Bblk @ S[-p:, :], axis=0)
            # Ritz residual on the G side maps to roughly (cA+sigma)/theta
            # times larger on the A~ side
            if np.all(theta > 0) and np.all(
                bound <= 0.5 * tol * theta / (cA + sigma)
            ):
                V = Q[:, :cols] @ S
                lams = 1.0 / theta - sigma
                order = np.argsort(lams)
                lams = lams[order]
                V = V[:, order]
                V = s[:, None] * V
                V /= np.linalg.norm(V, axis=0, keepdims=True)
                res = _generalized_residuals(mat, diag, lams, V)
                if np.all(res <= np.maximum(tol, 1e3 * tol * np.abs(lams))):
                    return SpectrumReport(
                        eigenvalues=lams,
                        vectors=V,
                        residuals=res,
                        method="lanczos",
                        iterations=cols,
                    )
        prev_Z = Z
        prev_B = Bblk
        Z = Znew
    raise SpectrumError(
        "block Lanczos did not converge to tolerance %.1e within %d basis "
        "vectors" % (tol, max_cols)
    )


def _assemble_block_tridiagonal(diag_blocks, sub_blocks, cols, p):
    T = np.zeros((cols, cols))
    nblocks = cols // p
    for jb in range(nblocks):
        sl_j = slice(jb * p, (jb + 1) * p)
        T[sl_j, sl_j] = diag_blocks[jb]
        if jb + 1 < nblocks:
            sl_n = slice((jb + 1) * p, (jb + 2) * p)
            T[sl_n, sl_j] = sub_blocks[jb]
            T[sl_j, sl_n] = sub_blocks[jb].T
    return T


# ---------------------------------------------------------------------------
# sweeps and kernel checks


@dataclass
class SweepReport:
    eps_values: list
    horizontal: SpectrumReport
    penalized: list  # SpectrumReport per eps
    gaps: np.ndarray  # (n_eps, count)
    orders: np.ndarray  # per-index fitted decay order
    monotone: bool
    floor: float = 1e-12

    def rows(self):
        out = []
        labels = self.horizontal.cluster_index()
        for i, lam in enumerate(self.horizontal.eigenvalues):
            out.append(
                {
                    "eps": "inf",
                    "i": i,
                    "lambda": float(lam),
                    "residual": float(self.horizontal.residuals[i]),
                    "multiplicity_cluster": int(labels[i]),
                }
            )
        for eps, rep in zip(self.eps_values, self.penalized):
            labels = rep.cluster_index()
            for i, lam in enumerate(rep.eigenvalues):
                out.append(
                    {
                        "eps": float(eps),
                        "i": i,
                        "lambda": float(lam),
                        "residual": float(rep.residuals[i]),
                        "multiplicity_cluster": int(labels[i]),
                    }
                )
        return out


def _solve(wf, count, solver, tol, seed):
    if solver == "dense" or (solver == "auto" and wf.grid.size <= 1024):
        rep = dense_spectrum(wf.operator, wf.mass, count=count)
        if np.any(rep.residuals > max(tol, 1e-8)):
            raise SpectrumError(
                "dense solve residuals exceed tolerance: %.3e"
                % float(np.max(rep.residuals))
            )
        return rep
    return lanczos_smallest(wf.operator, wf.mass, count, tol=tol, seed=seed)


def epsilon_sweep(
    structure,
    grid,
    eps_values,
    count=6,
    tol=1e-9,
    seed=0,
    solver="lanczos",
    density=None,
):
    """Penalty spectra against the horizontal spectrum over a list of eps.

    Reports per-index gaps |lambda_i(eps) - lambda_i|, whether the gaps
    decrease monotonically (gaps below the floor count as converged), and
    the per-index decay order fitted on log(gap) against log(eps).
    """
    from .discrete import assemble_weak_laplacian

    eps_values = [float(e) for e in eps_values]
    if sorted(eps_values) != eps_values:
        raise SpectrumError("eps values must be increasing")
    wfH = assemble_weak_laplacian(structure, grid, eps=None, density=density)
    base = _solve(wfH, count, solver, tol, seed)
    reports = []
    gaps = np.empty((len(eps_values), count))
    for row, eps in enumerate(eps_values):
        wfe = assemble_weak_laplacian(structure, grid, eps=eps, density=density)
        rep = _solve(wfe, count, solver, tol, seed)
        reports.append(rep)
        gaps[row] = np.abs(rep.eigenvalues - base.eigenvalues)
    floor = 1e-12
    monotone = True
    for i in range(count):
        g = gaps[:, i]
        for r in range(1, len(eps_values)):
            if g[r] >= g[r - 1] and g[r] > floor:
                monotone = False
    orders = np.full(count, np.nan)
    logeps = np.log(np.asarray(eps_values))
    for i in range(count):
        g = gaps[:, i]
        mask = g > floor
        if int(np.sum(mask)) >= 2:
            slope = np.polyfit(logeps[mask], np.log(g[mask]), 1)[0]
            orders[i] = -slope
    return SweepReport(
        eps_values=eps_values,
        horizontal=base,
        penalized=reports,
        gaps=gaps,
        orders=orders,
        monotone=monotone,
        floor=floor,
    )


@dataclass
class KernelReport:
    eigenvalues: np.ndarray
    kernel_dim: int
    flat_defect: float
    gap: float


def kernel_check(L, M, count=12, kernel_tol=1e-8):
    """Kernel dimension, flatness of the ground vector, and spectral gap."""
    mat = _operator_matrix(L)
    count = min(count, mat.shape[0])
    rep = dense_spectrum(L, M, count=count)
    lams = rep.eigenvalues
    kernel = int(np.sum(lams < kernel_tol * max(1.0, float(np.max(lams)))))
    v = rep.vectors[:, 0]
    mean = float(np.mean(v))
    if abs(mean) < 1e-300:
        flat = np.inf
    else:
        flat = float((np.max(v) - np.min(v)) / abs(mean))
    gap = float(lams[kernel]) if kernel < lams.size else np.nan
    return KernelReport(
        eigenvalues=lams, kernel_dim=kernel, flat_defect=abs(flat), gap=gap
    )
