"""Dense real linear algebra for small matrices.

Matrices are 2-D ``float64`` numpy arrays (row-major), vectors are 1-D
arrays.  ``matrix()`` and ``vector()`` are the validating constructors:
they reject NaN/infinity so nothing non-finite enters the pipeline.
Everything here is sized for the dimensions this package works at
(n up to a few dozen); no attempt is made at BLAS-grade performance.

The SVD is a one-sided Jacobi iteration.  It is small, deterministic,
and exact on the structured (many-exact-zeros) matrices the decoupling
produces; `numpy.linalg.svd` serves as an independent cross-check in the
test suite rather than as the implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = float(np.finfo(np.float64).eps)

DEFAULT_MAX_SWEEPS = 60


class SvdConvergenceError(RuntimeError):
    """Jacobi sweeps hit the bound without reaching the rotation tolerance."""

    def __init__(self, sweeps: int):
        super().__init__(f"SVD did not converge after {sweeps} sweeps")
        self.sweeps = sweeps


def matrix(entries, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validating matrix constructor.

    Accepts a 2-D array-like, or a flat sequence plus explicit
    ``rows``/``cols`` (row-major).  Rejects non-finite entries.
    """
    a = np.asarray(entries, dtype=float)
    if rows is not None or cols is not None:
        if rows is None or cols is None:
            raise ValueError("rows and cols must be given together")
        if a.ndim != 1 or a.size != rows * cols:
            raise ValueError(f"expected {rows * cols} flat entries, got shape {a.shape}")
        a = a.reshape(rows, cols)
    if a.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def vector(entries) -> np.ndarray:
    """Validating vector constructor (1-D, finite entries)."""
    v = np.asarray(entries, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"vector must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


def frobenius(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


@dataclass(frozen=True)
class SvdResult:
    """Full SVD ``a = u_factor @ diag(singular_values) @ v_factor.T``.

    ``u_factor`` is square orthogonal (rows x rows), ``v_factor`` square
    orthogonal (cols x cols); ``singular_values`` has min(rows, cols)
    nonincreasing nonnegative entries.
    """

    u_factor: np.ndarray
    singular_values: np.ndarray
    v_factor: np.ndarray
    rank_tolerance: float

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.singular_values > self.rank_tolerance))

    def reconstruct(self) -> np.ndarray:
        k = self.singular_values.size
        return (self.u_factor[:, :k] * self.singular_values) @ self.v_factor[:, :k].T


def _jacobi_orthogonalize(a: np.ndarray, max_sweeps: int):
    """Rotate columns of a copy of ``a`` until mutually orthogonal.

    Returns (b, v) with b = a @ v, v orthogonal, columns of b orthogonal.
    """
    m, n = a.shape
    b = np.array(a, dtype=float, copy=True)
    v = np.eye(n)
    tol = EPS * max(m, n)
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(b[:, p] @ b[:, p])
                beta = float(b[:, q] @ b[:, q])
                gamma = float(b[:, p] @ b[:, q])
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                sign = 1.0 if zeta >= 0.0 else -1.0
                t = sign / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                bp = b[:, p].copy()
                b[:, p] = c * bp - s * b[:, q]
                b[:, q] = s * bp + c * b[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            return b, v
    raise SvdConvergenceError(max_sweeps)


def _complete_orthonormal(u_cols: np.ndarray, dim: int) -> np.ndarray:
    """Extend orthonormal columns ``u_cols`` (dim x r) to a dim x dim basis."""
    r = u_cols.shape[1]
    if r == 0:
        return np.eye(dim)
    if r == dim:
        return u_cols
    q, _ = np.linalg.qr(u_cols, mode="complete")
    # q[:, r:] spans the orthogonal complement regardless of sign choices
    return np.hstack([u_cols, q[:, r:]])


def svd(a, max_sweeps: int = DEFAULT_MAX_SWEEPS) -> SvdResult:
    """One-sided Jacobi SVD with full orthogonal factors.

    Raises SvdConvergenceError if the sweep bound is exhausted (does not
    happen for finite input at these sizes; the bound is a diagnostic
    guard, not a tuning knob).
    """
    a = matrix(a)
    m, n = a.shape
    if m < n:
        flipped = svd(a.T, max_sweeps=max_sweeps)
        return SvdResult(
            u_factor=flipped.v_factor,
            singular_values=flipped.singular_values,
            v_factor=flipped.u_factor,
            rank_tolerance=flipped.rank_tolerance,
        )
    b, v = _jacobi_orthogonalize(a, max_sweeps)
    sigma = np.linalg.norm(b, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    b = b[:, order]
    v = v[:, order]
    nonzero = sigma > 0.0
    u_cols = np.zeros((m, int(np.count_nonzero(nonzero))))
    if u_cols.shape[1]:
        u_cols[:, :] = b[:, nonzero] / sigma[nonzero]
    u = _complete_orthonormal(u_cols, m)
    tol = max(m, n) * EPS * (float(sigma[0]) if sigma.size else 0.0)
    return SvdResult(u_factor=u, singular_values=sigma, v_factor=v, rank_tolerance=tol)


def numerical_rank(a, decomposition: SvdResult | None = None) -> int:
    dec = decomposition if decomposition is not None else svd(a)
    return dec.rank


def pseudo_inverse(a, decomposition: SvdResult | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse (the unique four-axiom one)."""
    a = matrix(a)
    dec = decomposition if decomposition is not None else svd(a)
    r = dec.rank
    if r == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    return (dec.v_factor[:, :r] / dec.singular_values[:r]) @ dec.u_factor[:, :r].T


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip so the largest-magnitude component is positive (deterministic)."""
    if v[int(np.argmax(np.abs(v)))] < 0:
        return -v
    return v


def kernel_basis(a, decomposition: SvdResult | None = None) -> list[np.ndarray]:
    """Orthonormal basis of Ker(a) as a list of vectors (may be empty)."""
    a = matrix(a)
    dec = decomposition if decomposition is not None else svd(a)
    r = dec.rank
    return [_canonical_sign(dec.v_factor[:, j].copy()) for j in range(r, a.shape[1])]


def cokernel_basis(a, decomposition: SvdResult | None = None) -> list[np.ndarray]:
    """Orthonormal basis of Ker(a.T), i.e. the orthogonal complement of Im(a)."""
    a = matrix(a)
    if decomposition is not None:
        dec = decomposition
        r = dec.rank
        return [_canonical_sign(dec.u_factor[:, j].copy()) for j in range(r, a.shape[0])]
    return kernel_basis(a.T)


def penrose_residuals(a: np.ndarray, a_pinv: np.ndarray) -> dict[str, float]:
    """Frobenius residuals of the four pseudo-inverse axioms."""
    ap = a @ a_pinv
    pa = a_pinv @ a
    return {
        "a*p*a - a": frobenius(ap @ a - a),
        "p*a*p - p": frobenius(pa @ a_pinv - a_pinv),
        "sym(a*p)": frobenius(ap - ap.T),
        "sym(p*a)": frobenius(pa - pa.T),
    }
