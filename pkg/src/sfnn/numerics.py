"""Dense linear algebra kernels and deterministic random number generation.

Everything operates on plain 64-bit float, row-major (C-order) numpy
arrays; ``Matrix`` below is just an alias documenting that convention.
The decomposition routines (Householder QR, Cholesky, cyclic Jacobi) are
implemented here rather than delegated so that their error contracts
(``RankDeficient``, ``NotPositiveDefinite``, ``NoConvergence``) are exact.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite, RankDeficient

# A dense 2-D real array: float64, C-order, shape (rows, cols).
Matrix = np.ndarray

# Smallest R-diagonal magnitude relative to the largest before a
# least-squares system is declared rank deficient.
RANK_TOLERANCE = 1e-10


def as_matrix(a, name: str = "matrix") -> Matrix:
    """Coerce to a float64 2-D array, rejecting non-finite entries."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got ndim={out.ndim}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    return np.ascontiguousarray(out)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product a @ b with an explicit dimension check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def _householder_triangularize(a: Matrix, b: Matrix) -> tuple[Matrix, Matrix]:
    """Reduce ``a`` to upper-triangular R, applying the same reflections to ``b``.

    Returns (r, qtb) where r holds R in its upper triangle and qtb is Q^T b.
    Both inputs are copied.
    """
    r = a.copy()
    qtb = b.copy()
    m, n = r.shape
    for j in range(min(m - 1, n)):
        x = r[j:, j]
        norm_x = np.sqrt(x @ x)
        if norm_x == 0.0:
            continue
        # Reflect onto -sign(x0) * ||x|| * e1 to avoid cancellation.
        alpha = -np.copysign(norm_x, x[0]) if x[0] != 0.0 else -norm_x
        v = x.copy()
        v[0] -= alpha
        vnorm = np.sqrt(v @ v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
        qtb[j:, :] -= 2.0 * np.outer(v, v @ qtb[j:, :])
    return r, qtb


def least_squares(a: Matrix, b: Matrix) -> Matrix:
    """Minimize ||a x - b||_2 by Householder QR.

    ``a`` must have at least as many rows as columns and full column rank;
    the rank check compares the smallest R-diagonal magnitude against
    ``RANK_TOLERANCE`` times the largest. ``b`` may hold several
    right-hand-side columns; a 1-D ``b`` returns a 1-D solution.
    """
    a = as_matrix(a, "a")
    b_in = np.asarray(b, dtype=np.float64)
    squeeze = b_in.ndim == 1
    b2 = b_in[:, None] if squeeze else as_matrix(b_in, "b")
    m, n = a.shape
    if m < n:
        raise DimensionMismatch(f"need rows >= cols, got {m}x{n}")
    if b2.shape[0] != m:
        raise DimensionMismatch(f"b has {b2.shape[0]} rows, expected {m}")

    r, qtb = _householder_triangularize(a, b2)
    diag = np.abs(np.diagonal(r)[:n])
    largest = diag.max() if n else 0.0
    if largest == 0.0 or diag.min() < RANK_TOLERANCE * largest:
        raise RankDeficient(
            f"smallest R diagonal {diag.min():.3e} below {RANK_TOLERANCE:g} x largest {largest:.3e}"
        )

    x = np.empty((n, b2.shape[1]), dtype=np.float64)
    for i in range(n - 1, -1, -1):
        x[i] = (qtb[i] - r[i, i + 1 : n] @ x[i + 1 :]) / r[i, i]
    return x[:, 0] if squeeze else x


def least_squares_pivoted(a: Matrix, b: Matrix, rtol: float = 1e-10):
    """Least squares by column-pivoted Householder QR, tolerating rank deficiency.

    Numerically dependent columns (remaining norm below ``rtol`` times the
    largest initial column norm) get zero coefficients, so consistent but
    collinear systems, e.g. exactly periodic signals, still solve with zero
    residual. Returns (x, rank).
    """
    a = as_matrix(a, "a")
    b_in = np.asarray(b, dtype=np.float64)
    squeeze = b_in.ndim == 1
    b2 = (b_in[:, None] if squeeze else as_matrix(b_in, "b")).copy()
    m, n = a.shape
    if b2.shape[0] != m:
        raise DimensionMismatch(f"b has {b2.shape[0]} rows, expected {m}")

    r = a.copy()
    piv = np.arange(n)
    norm0 = np.sqrt((r**2).sum(axis=0)).max() if n else 0.0
    rank = 0
    for j in range(min(m, n)):
        norms = np.sqrt((r[j:, j:] ** 2).sum(axis=0))
        jmax = int(np.argmax(norms))
        if norm0 == 0.0 or norms[jmax] <= rtol * norm0:
            break
        if jmax != 0:
            r[:, [j, j + jmax]] = r[:, [j + jmax, j]]
            piv[[j, j + jmax]] = piv[[j + jmax, j]]
        x = r[j:, j]
        norm_x = np.sqrt(x @ x)
        alpha = -np.copysign(norm_x, x[0]) if x[0] != 0.0 else -norm_x
        v = x.copy()
        v[0] -= alpha
        vnorm = np.sqrt(v @ v)
        if vnorm > 0.0:
            v /= vnorm
            r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
            b2[j:, :] -= 2.0 * np.outer(v, v @ b2[j:, :])
        rank = j + 1

    x_perm = np.zeros((n, b2.shape[1]), dtype=np.float64)
    for i in range(rank - 1, -1, -1):
        x_perm[i] = (b2[i] - r[i, i + 1 : rank] @ x_perm[i + 1 : rank]) / r[i, i]
    x = np.zeros_like(x_perm)
    x[piv] = x_perm
    return (x[:, 0] if squeeze else x), rank


def cholesky_lower(b: Matrix) -> Matrix:
    """Lower Cholesky factor of a symmetric positive definite matrix."""
    b = as_matrix(b, "b")
    n = b.shape[0]
    if b.shape[1] != n:
        raise DimensionMismatch(f"matrix must be square, got {b.shape}")
    low = np.zeros_like(b)
    for j in range(n):
        d = b[j, j] - low[j, :j] @ low[j, :j]
        if not d > 0.0 or not np.isfinite(d):
            raise NotPositiveDefinite(f"leading minor of order {j + 1} is not positive definite")
        low[j, j] = np.sqrt(d)
        if j + 1 < n:
            low[j + 1 :, j] = (b[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / low[j, j]
    return low


def solve_lower(low: Matrix, b: Matrix) -> Matrix:
    """Solve low @ x = b for lower-triangular ``low``."""
    x = np.array(b, dtype=np.float64, copy=True)
    if x.ndim == 1:
        x = x[:, None]
        return solve_lower(low, x)[:, 0]
    for i in range(low.shape[0]):
        x[i] = (x[i] - low[i, :i] @ x[:i]) / low[i, i]
    return x


def solve_upper(up: Matrix, b: Matrix) -> Matrix:
    """Solve up @ x = b for upper-triangular ``up``."""
    x = np.array(b, dtype=np.float64, copy=True)
    if x.ndim == 1:
        x = x[:, None]
        return solve_upper(up, x)[:, 0]
    for i in range(up.shape[0] - 1, -1, -1):
        x[i] = (x[i] - up[i, i + 1 :] @ x[i + 1 :]) / up[i, i]
    return x


def _jacobi_eigh(c: Matrix, max_sweeps: int = 100) -> tuple[np.ndarray, Matrix]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors-as-columns), unsorted. Convergence
    is declared when the off-diagonal Frobenius mass falls below 1e-14 of
    the total; exceeding ``max_sweeps`` raises ``NoConvergence``.
    """
    c = c.copy()
    n = c.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(c)
    if scale == 0.0 or n == 1:
        return np.diagonal(c).copy(), v
    diag_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        # Off-diagonal mass measured directly; the sum-of-squares shortcut
        # cancels catastrophically once the matrix is nearly diagonal.
        off = np.sqrt(np.sum(c[diag_mask] ** 2))
        if off <= 1e-14 * scale:
            return np.diagonal(c).copy(), v
        threshold = 1e-18 * scale
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = c[p, q]
                if abs(apq) <= threshold:
                    continue
                theta = (c[q, q] - c[p, p]) / (2.0 * apq)
                if abs(theta) > 1e10:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                cos = 1.0 / np.sqrt(t * t + 1.0)
                sin = t * cos
                cp, cq = c[:, p].copy(), c[:, q].copy()
                c[:, p] = cos * cp - sin * cq
                c[:, q] = sin * cp + cos * cq
                rp, rq = c[p, :].copy(), c[q, :].copy()
                c[p, :] = cos * rp - sin * rq
                c[q, :] = sin * rp + cos * rq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = cos * vp - sin * vq
                v[:, q] = sin * vp + cos * vq
    raise NoConvergence(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def generalized_symmetric_eigen(a: Matrix, b: Matrix) -> tuple[np.ndarray, Matrix]:
    """Solve a v = lambda b v for symmetric ``a`` and SPD ``b``.

    Reduces to an ordinary symmetric problem through the Cholesky factor of
    ``b`` and solves it with cyclic Jacobi rotations. Eigenvalues come back
    sorted descending; eigenvector columns satisfy v^T b v = 1.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"need square matrices of equal shape, got {a.shape} and {b.shape}")
    # Inputs are promised symmetric; fold away round-off asymmetry.
    a = 0.5 * (a + a.T)
    b = 0.5 * (b + b.T)
    low = cholesky_lower(b)
    # C = L^-1 A L^-T, symmetric.
    y = solve_lower(low, a)
    c = solve_lower(low, y.T).T
    c = 0.5 * (c + c.T)
    eigvals, eigvecs = _jacobi_eigh(c)
    vectors = solve_upper(low.T, eigvecs)
    order = np.argsort(eigvals)[::-1]
    return eigvals[order], vectors[:, order]


class SeededRng:
    """Deterministic random stream for everything that draws randomness.

    Backed by the PCG64 generator, seeded from a single 64-bit integer, so
    identical seeds give identical sequences on every platform. Normal
    variates use the generator's ziggurat sampler.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def standard_normal(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(int(n))

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)


def rng_standard_normal(rng: SeededRng, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. standard normals, advancing ``rng`` deterministically."""
    return rng.standard_normal(n)
