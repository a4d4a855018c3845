"""Dense linear-algebra kernels: randomized SVD, pseudo-inverse, NNLS.

All routines work on float64 ndarrays and are pure functions, safe to call
concurrently on distinct inputs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DataError, PreconditionError

DEFAULT_OVERSAMPLING = 10


@dataclass(frozen=True)
class ThinSvdResult:
    """Truncated SVD factors: ``u @ diag(singular_values) @ vt`` approximates A."""

    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray


@dataclass(frozen=True)
class NnlsResult:
    weights: np.ndarray
    residual_norm: float
    iterations: int


def default_rcond(shape):
    """Singular-value cutoff used when callers do not pass one."""
    return 1e-12 * max(shape)


def randomized_svd(a, rank, oversampling=DEFAULT_OVERSAMPLING, seed=0):
    """Sketch-based truncated SVD.

    Draws a seeded Gaussian sketch of ``rank + oversampling`` columns,
    orthonormalizes the sample ``Y = A @ Omega`` with a Householder QR,
    takes the thin SVD of the projected ``Q.T @ A`` and lifts the left
    factors back. Deterministic for a fixed seed.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise PreconditionError("randomized_svd expects a nonempty 2d matrix")
    if rank < 1:
        raise PreconditionError(f"rank must be >= 1, got {rank}")
    if oversampling < 0:
        raise PreconditionError("oversampling must be >= 0")
    m, n = a.shape
    sketch = rank + oversampling
    if sketch > min(m, n):
        raise PreconditionError(
            f"rank + oversampling = {sketch} exceeds min(rows, cols) = {min(m, n)}"
        )
    if not np.isfinite(a).all():
        raise DataError("randomized_svd input contains non-finite entries")

    rng = np.random.Generator(np.random.Philox(int(seed)))
    omega = rng.standard_normal((n, sketch))
    y = a @ omega
    q, _ = np.linalg.qr(y, mode="reduced")
    s = q.T @ a
    u_small, sigma, vt = np.linalg.svd(s, full_matrices=False)
    u = q @ u_small[:, :rank]
    return ThinSvdResult(u=u, singular_values=sigma[:rank].copy(), vt=vt[:rank].copy())


def pseudo_inverse(a, rcond=None):
    """Moore-Penrose pseudo-inverse via thin SVD with relative cutoff."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise PreconditionError("pseudo_inverse expects a nonempty 2d matrix")
    if rcond is None:
        rcond = default_rcond(a.shape)
    if not 0.0 < rcond < 1.0:
        raise PreconditionError(f"rcond must lie in (0, 1), got {rcond}")
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    inv = np.where(sigma > rcond * sigma[0], 1.0 / np.where(sigma > 0, sigma, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def nnls(system, rhs, max_iterations=None):
    """Lawson-Hanson active-set solve of ``min ||system @ q - rhs||`` with q >= 0.

    Raises :class:`ConvergenceError` carrying the best iterate when the
    iteration cap (three times the number of unknowns by default) is hit.
    """
    a = np.asarray(system, dtype=np.float64)
    b = np.asarray(rhs, dtype=np.float64)
    if a.ndim != 2:
        raise PreconditionError("nnls system must be a 2d matrix")
    if b.ndim != 1 or a.shape[0] != b.shape[0]:
        raise PreconditionError(
            f"rhs length {b.shape} incompatible with system rows {a.shape}"
        )
    m, n = a.shape
    if max_iterations is None:
        max_iterations = 3 * n

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = a.T @ b
    tol = 1e-11 * max(1.0, float(np.abs(w).max(initial=0.0)))
    iterations = 0

    def _residual_norm(xv):
        return float(np.linalg.norm(a @ xv - b))

    while True:
        w = a.T @ (b - a @ x)
        candidates = ~passive
        if not candidates.any() or np.max(w[candidates], initial=-np.inf) <= tol:
            return NnlsResult(weights=x, residual_norm=_residual_norm(x),
                              iterations=iterations)
        j = int(np.flatnonzero(candidates)[np.argmax(w[candidates])])
        passive[j] = True

        while True:
            iterations += 1
            if iterations > max_iterations:
                raise ConvergenceError(
                    f"nnls exceeded {max_iterations} iterations",
                    best=NnlsResult(weights=x, residual_norm=_residual_norm(x),
                                    iterations=iterations - 1),
                    iterations=iterations - 1,
                )
            cols = np.flatnonzero(passive)
            z_p, *_ = np.linalg.lstsq(a[:, cols], b, rcond=None)
            if np.all(z_p > 0.0):
                x = np.zeros(n)
                x[cols] = z_p
                break
            # step toward z until the first passive weight hits zero
            x_p = x[cols]
            mask = z_p <= 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(mask, x_p / (x_p - z_p), np.inf)
            alpha = float(np.min(ratios))
            x_new = np.zeros(n)
            x_new[cols] = x_p + alpha * (z_p - x_p)
            x_new[x_new < 0.0] = 0.0
            x = x_new
            hit = cols[np.isclose(x[cols], 0.0, atol=1e-14)]
            passive[hit] = False
            if not passive.any():
                x = np.zeros(n)
                break
