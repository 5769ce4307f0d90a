"""Dense covariance, symmetric eigendecomposition, and rank correlation.

Everything here operates on plain float64 numpy arrays. Matrices are at
most a few hundred columns (descriptor dimensions), so a cyclic Jacobi
sweep is fast enough for the eigensolver and keeps the numerics easy to
reason about.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, ValidationError


class DegenerateInputWarning(UserWarning):
    """A correlation was requested on an input with zero rank variance."""


def covariance(x):
    """Sample covariance of the rows of ``x``.

    Returns ``(cov, mean)`` where ``cov = (X-mean)^T (X-mean) / (n-1)`` and
    ``mean`` is the column mean, kept so callers can center test data the
    same way. The result is symmetrized exactly so the eigensolver never
    sees rounding skew.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("covariance expects a 2-d array, got ndim=%d" % x.ndim)
    if x.shape[0] < 2:
        raise DimensionError("covariance needs at least 2 rows, got %d" % x.shape[0])
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    cov = (cov + cov.T) / 2.0
    return cov, mean


@dataclass
class EigenDecomposition:
    """Full symmetric eigendecomposition, eigenvalues sorted descending.

    ``eigenvectors[i]`` is the unit eigenvector paired with
    ``eigenvalues[i]`` (one eigenvector per row).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _canonical_signs(vectors):
    # Flip each row so its largest-magnitude component is positive; makes
    # eigenvector files reproducible despite the inherent sign ambiguity.
    idx = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(vectors.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def eigh(a, max_sweeps=60):
    """Eigendecompose a symmetric matrix by cyclic Jacobi rotations.

    Input must be square and symmetric within ``1e-9`` relative to its
    largest entry. Raises :class:`NumericError` with the remaining
    off-diagonal residual if the sweep cap is hit (never observed below
    ~15 sweeps in practice).
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("eigh expects a square matrix, got shape %s" % (a.shape,))
    n = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(a))) if n else 1.0)
    skew = float(np.max(np.abs(a - a.T))) if n else 0.0
    if skew > 1e-9 * scale:
        raise ValidationError(
            "matrix is not symmetric: max |A - A^T| = %.3e exceeds tolerance" % skew
        )
    a = (a + a.T) / 2.0
    v = np.eye(n)
    if n < 2:
        return EigenDecomposition(np.diag(a).copy(), v)

    off_tol = 4.0 * np.finfo(np.float64).eps * scale
    converged = False
    for _ in range(max_sweeps):
        off = np.abs(a - np.diag(np.diag(a))).max()
        if off <= off_tol:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app, aqq = a[p, p], a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    sign = 1.0 if theta >= 0.0 else -1.0
                    t = sign / (abs(theta) + np.hypot(1.0, theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                a[p, :] = a[:, p]
                a[q, :] = a[:, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    if not converged:
        off = np.abs(a - np.diag(np.diag(a))).max()
        if off > off_tol:
            raise NumericError(
                "Jacobi sweep failed to converge in %d sweeps; "
                "off-diagonal residual %.3e" % (max_sweeps, off)
            )

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return EigenDecomposition(eigenvalues[order], _canonical_signs(v[:, order].T.copy()))


def average_ranks(values):
    """Ranks 1..n with ties assigned the mean of their covered positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(len(values))
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def spearman(v, labels):
    """Spearman rank correlation with average ranks for ties.

    Constant input on either side has no rank variance; by convention that
    returns 0.0 and emits :class:`DegenerateInputWarning` instead of NaN,
    so threshold comparisons downstream stay well defined.
    """
    v = np.asarray(v, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if v.ndim != 1 or labels.ndim != 1:
        raise DimensionError("spearman expects 1-d arrays")
    if len(v) != len(labels):
        raise DimensionError(
            "length mismatch: %d vs %d" % (len(v), len(labels))
        )
    if len(v) < 3:
        raise ValidationError("spearman needs at least 3 observations")
    rv = average_ranks(v)
    rl = average_ranks(labels)
    rv -= rv.mean()
    rl -= rl.mean()
    ss_v = float(rv @ rv)
    ss_l = float(rl @ rl)
    if ss_v == 0.0 or ss_l == 0.0:
        warnings.warn(
            "constant input to spearman; returning 0.0", DegenerateInputWarning
        )
        return 0.0
    rho = float(rv @ rl) / np.sqrt(ss_v * ss_l)
    return float(np.clip(rho, -1.0, 1.0))
