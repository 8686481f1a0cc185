"""Dense tensor primitives: contraction, truncated SVD splits, unitaries.

Everything operates on plain complex numpy arrays. The SVD driver is
LAPACK's divide-and-conquer routine (deterministic for a fixed build),
with the slower Golub-Kahan routine as a fallback when it fails to
converge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import lapack as _lapack

from .errors import InvariantError, NumericalError, TensorShapeError

Array = np.ndarray

# Singular values closer than this (relative to the largest) are treated
# as one degenerate group by the truncation rule.
DEGENERACY_TOL = 1e-12


@dataclass(frozen=True)
class TruncationPolicy:
    """Bond truncation rule for SVD splits.

    cutoff is the largest relative discarded weight allowed at a cut:
    sum of squared dropped singular values over the total. max_bond is a
    hard cap that wins over the cutoff.
    """

    cutoff: float = 0.0
    max_bond: int = 2**31

    def __post_init__(self):
        if not (0.0 <= self.cutoff < 1.0):
            raise InvariantError(f"cutoff must be in [0, 1), got {self.cutoff}")
        if self.max_bond < 1:
            raise InvariantError(f"max_bond must be >= 1, got {self.max_bond}")


EXACT = TruncationPolicy()


@dataclass
class SvdResult:
    """Outcome of a truncated split.

    left_isometry carries the left extents plus the new bond as its last
    axis; right_isometry carries the new bond first. discarded_weight is
    the sum of squared dropped singular values (absolute, not relative).
    """

    left_isometry: Array
    singular_values: Array
    right_isometry: Array
    discarded_weight: float


def contract_pair(a: Array, b: Array, pairs: Sequence[tuple[int, int]]) -> Array:
    """Contract paired axes of two tensors.

    Result extents are the unpaired extents of a followed by those of b.
    An empty pairing is the outer product.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    ax_a = [p[0] for p in pairs]
    ax_b = [p[1] for p in pairs]
    for axis, ndim, name in ((ax_a, a.ndim, "a"), (ax_b, b.ndim, "b")):
        for x in axis:
            if not -ndim <= x < ndim:
                raise TensorShapeError(f"axis {x} out of range for operand {name} with {ndim} axes")
        if len({x % ndim for x in axis}) != len(axis):
            raise TensorShapeError(f"repeated contraction axis on operand {name}: {axis}")
    for xa, xb in pairs:
        if a.shape[xa] != b.shape[xb]:
            raise TensorShapeError(
                f"paired axes disagree: a axis {xa} has extent {a.shape[xa]}, "
                f"b axis {xb} has extent {b.shape[xb]}"
            )
    return np.tensordot(a, b, axes=(ax_a, ax_b))


def _svd_matrix(mat: Array) -> tuple[Array, Array, Array]:
    """SVD with a fallback driver; raises NumericalError on breakdown.

    Goes straight to the LAPACK entry points: the numpy wrapper costs more
    than the factorization itself at the matrix sizes a swap produces.
    """
    a = np.asarray(mat, dtype=np.complex128)
    if a.size == 0:
        return np.linalg.svd(a, full_matrices=False)
    u, s, vh, info = _lapack.zgesdd(a, compute_uv=1, full_matrices=0)
    if info != 0:
        u, s, vh, info = _lapack.zgesvd(a, compute_uv=1, full_matrices=0)
        if info != 0:
            raise NumericalError(f"SVD failed to converge on a {mat.shape} matrix")
    if not np.all(np.isfinite(s)):
        raise NumericalError(f"SVD produced non-finite singular values on a {mat.shape} matrix")
    return u, s, vh


def truncation_rank(s: Array, policy: TruncationPolicy) -> int:
    """Kept rank for a descending singular-value spectrum under a policy.

    The cut keeps the smallest rank whose relative discarded weight is
    within policy.cutoff, then extends across any degenerate group it
    landed in, and finally applies the max_bond cap. At least one value
    is always kept.
    """
    k = len(s)
    if k == 0:
        return 0
    if k <= 64:
        # Plain Python beats vectorized ops at the spectrum sizes a time-bin
        # swap produces; this path runs millions of times per trace.
        vals = np.asarray(s).tolist()
        total = 0.0
        for v in vals:
            total += v * v
        if total <= 0.0:
            rank = 1
        else:
            # Walk the tail weight up from the end; the kept rank is the
            # smallest whose discarded share fits under the cutoff.
            cut = policy.cutoff * total
            rank = k
            acc = 0.0
            for r in range(k - 1, 0, -1):
                acc += vals[r] * vals[r]
                if acc > cut:
                    break
                rank = r
            # Never split a degenerate group: extend the kept set to its end.
            group_tol = DEGENERACY_TOL * vals[0]
            while rank < k and vals[rank - 1] - vals[rank] <= group_tol:
                rank += 1
        if rank > policy.max_bond:
            rank = policy.max_bond
        return rank
    weights = s * s
    total = float(weights.sum())
    if total <= 0.0:
        rank = 1
    else:
        # tail[r] = discarded weight when keeping r values
        tail = np.concatenate([np.cumsum(weights[::-1])[::-1][1:], [0.0]])
        allowed = tail <= policy.cutoff * total
        rank = int(np.argmax(allowed)) + 1
        # Never split a degenerate group: extend the kept set to its end.
        while rank < k and s[rank - 1] - s[rank] <= DEGENERACY_TOL * s[0]:
            rank += 1
    return min(rank, policy.max_bond, k)


def svd_split(t: Array, left_axes: Sequence[int], policy: TruncationPolicy = EXACT) -> SvdResult:
    """Split a tensor across a bipartition of its axes by truncated SVD.

    left_axes selects which axes go to the left factor (in the order
    given); the remaining axes, in their original order, go right.
    """
    t = np.asarray(t)
    left = [x % t.ndim for x in left_axes]
    if len(set(left)) != len(left):
        raise TensorShapeError(f"repeated axis in left_axes: {left_axes}")
    right = [x for x in range(t.ndim) if x not in set(left)]
    if not left or not right:
        raise TensorShapeError("svd_split needs at least one axis on each side")
    perm = left + right
    lshape = [t.shape[x] for x in left]
    rshape = [t.shape[x] for x in right]
    mat = t.transpose(perm).reshape(int(np.prod(lshape)), int(np.prod(rshape)))
    u, s, vh = _svd_matrix(mat)
    rank = truncation_rank(s, policy)
    discarded = float(np.sum(s[rank:] ** 2))
    return SvdResult(
        left_isometry=u[:, :rank].reshape(*lshape, rank),
        singular_values=s[:rank],
        right_isometry=vh[:rank].reshape(rank, *rshape),
        discarded_weight=discarded,
    )


def unitary_from_generator(m: Array, tol: float = 1e-12) -> Array:
    """exp(m) for an anti-Hermitian matrix m, exactly unitary by construction.

    Diagonalizes the Hermitian matrix i*m and exponentiates its spectrum,
    so the result is unitary to round-off regardless of the step size.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise TensorShapeError(f"generator must be a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    dev = float(np.abs(m + m.conj().T).max())
    if dev > tol * scale:
        raise InvariantError(f"generator is not anti-Hermitian: max |m + m^dag| = {dev:.3e}")
    h = 1j * m
    h = (h + h.conj().T) / 2.0
    evals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(-1j * evals)) @ vecs.conj().T
