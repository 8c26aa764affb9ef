"""Projector family construction for a square matrix A(t).

For A = A(t) at a fixed time the family consists of

    Q        orthogonal projector onto Ker A
    P = I-Q  projector onto the orthogonal complement (Im A^T)
    R        orthogonal projector onto Ker A^T  (so R A = 0)
    A^-      the Moore-Penrose pseudo-inverse, with A^- A = P and
             A A^- = I - R
    D        a nonsingular completion satisfying D A = P and
             D (I - R) = A^-

Q and R are built with the orthogonal choice (the defining identities
only pin the subspaces); that choice makes A^- the unique four-axiom
pseudo-inverse and D = A^- + K C^T nonsingular whenever A is square.

``appendix_construction`` is the alternative splitting-based completion
that acts as the identity on Ker B and as B on Im B.  Its premise
Ker B ∩ Im B = {0} genuinely fails for some singular matrices, so it is
kept separate from ``family_at`` and reports the violation instead of
guessing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg


class SingularCompletionError(RuntimeError):
    """The completion D failed its nonsingularity check (rank bookkeeping bug)."""


class PreconditionViolated(ValueError):
    """Ker B and Im B intersect nontrivially; the splitting construction needs
    them to be complementary."""

    def __init__(self, intersection_dim: int):
        super().__init__(
            f"Ker and Im intersect in a subspace of dimension {intersection_dim}"
        )
        self.intersection_dim = intersection_dim


@dataclass(frozen=True)
class ProjectorFamily:
    t: float
    a: np.ndarray
    q: np.ndarray
    p: np.ndarray
    r: np.ndarray
    a_minus: np.ndarray
    d: np.ndarray
    rank: int
    residuals: dict[str, float] = field(compare=False)

    @property
    def n(self) -> int:
        return self.a.shape[0]


def verify_family(fam: ProjectorFamily) -> dict[str, float]:
    """Frobenius residuals of every defining identity, plus the four
    pseudo-inverse axioms.  Caller decides pass/fail."""
    a, q, p, r, am, d = fam.a, fam.q, fam.p, fam.r, fam.a_minus, fam.d
    n = a.shape[0]
    eye = np.eye(n)
    out = {
        "q*q - q": linalg.frobenius(q @ q - q),
        "p*p - p": linalg.frobenius(p @ p - p),
        "r*r - r": linalg.frobenius(r @ r - r),
        "p - (i - q)": linalg.frobenius(p - (eye - q)),
        "r*a": linalg.frobenius(r @ a),
        "a_minus*a - p": linalg.frobenius(am @ a - p),
        "a*a_minus - (i - r)": linalg.frobenius(a @ am - (eye - r)),
        "d*a - p": linalg.frobenius(d @ a - p),
        "d*(i - r) - a_minus": linalg.frobenius(d @ (eye - r) - am),
    }
    out.update(linalg.penrose_residuals(a, am))
    return out


def complete_to_nonsingular(a_minus: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Nonsingular D with D a = P and D (I - R) = a_minus.

    Built as a_minus + K C^T with K, C orthonormal bases of Ker a and
    Ker a^T; for square a the two kernels have equal dimension, which
    makes the sum invertible.
    """
    a = linalg.matrix(a)
    dec = linalg.svd(a)
    kern = linalg.kernel_basis(a, dec)
    cokern = linalg.cokernel_basis(a, dec)
    if len(kern) != len(cokern):
        raise SingularCompletionError(
            f"kernel dims differ ({len(kern)} vs {len(cokern)}); no square completion"
        )
    d = np.array(a_minus, dtype=float, copy=True)
    for k_vec, c_vec in zip(kern, cokern):
        d += np.outer(k_vec, c_vec)
    if linalg.numerical_rank(d) < d.shape[0]:
        raise SingularCompletionError("constructed completion is numerically singular")
    return d


def family_at(a, t: float = 0.0) -> ProjectorFamily:
    """Build the full projector family of a square matrix at time label t."""
    a = linalg.matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"projector family needs a square matrix, got {a.shape}")
    dec = linalg.svd(a)
    a_minus = linalg.pseudo_inverse(a, dec)
    eye = np.eye(n)
    q = eye - a_minus @ a
    p = eye - q
    r = eye - a @ a_minus
    d = complete_to_nonsingular(a_minus, a)
    fam = ProjectorFamily(
        t=float(t), a=a, q=q, p=p, r=r, a_minus=a_minus, d=d,
        rank=dec.rank, residuals={},
    )
    residuals = verify_family(fam)
    object.__setattr__(fam, "residuals", residuals)
    return fam


def completion_residuals(fam: ProjectorFamily, d_candidate) -> dict[str, float]:
    """Check any candidate completion matrix against the three identities.

    Any matrix with nonzero determinant passing these is a valid D for the
    family; the canonical construction is just one choice.
    """
    d = linalg.matrix(d_candidate)
    eye = np.eye(fam.n)
    return {
        "det": float(np.linalg.det(d)),
        "d*a - p": linalg.frobenius(d @ fam.a - fam.p),
        "d*(i - r) - a_minus": linalg.frobenius(d @ (eye - fam.r) - fam.a_minus),
    }


def appendix_construction(b) -> np.ndarray:
    """Completion via the splitting R^n = Ker B (+) Im B.

    Defines L to act as the identity on Ker B and as B on Im B, and
    returns D = L^{-1}; then D B is the (generally oblique) projector
    onto Im B along Ker B.  Requires Ker B ∩ Im B = {0}; violation is
    reported with the intersection dimension.
    """
    b = linalg.matrix(b)
    n, m = b.shape
    if n != m:
        raise ValueError(f"splitting construction needs a square matrix, got {b.shape}")
    dec = linalg.svd(b)
    rank = dec.rank
    kern = dec.v_factor[:, rank:]           # basis of Ker B
    image = dec.u_factor[:, :rank]          # basis of Im B
    span = np.hstack([kern, image])
    span_rank = linalg.numerical_rank(span)
    if span_rank < n:
        raise PreconditionViolated(n - span_rank)
    # L maps [kern | image] to [kern | B image]; D = L^{-1}
    l_on_basis = np.hstack([kern, b @ image])
    d = span @ np.linalg.solve(l_on_basis, np.eye(n))
    return d
