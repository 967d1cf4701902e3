"""Dense linear-algebra kernels shared by the rest of the package.

Matrix exponential and eigenvalues are thin wrappers over scipy/numpy
(LAPACK-backed; the exponential uses the scaling-and-squaring Pade method).
Numerical rank and kernel bases come from the SVD.  Observer pole placement
is implemented here directly: Ackermann assignment for single-output pairs
and a Sylvester-equation method for multi-output pairs, both via duality
with the controller problem on (A^T, C^T).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class MatrixError(ValueError):
    """Raised for malformed matrix inputs (shape, non-finite entries)."""


class PlacementError(ValueError):
    """Raised when an observer gain cannot be computed or verified."""


def _as_matrix(M, name="M", square=False):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise MatrixError(f"{name} must be 2-D, got ndim={M.ndim}")
    if not np.all(np.isfinite(M)):
        raise MatrixError(f"{name} contains non-finite entries")
    if square and M.shape[0] != M.shape[1]:
        raise MatrixError(f"{name} must be square, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalue multiset: distinct values with positive multiplicities."""

    values: tuple
    multiplicities: tuple

    def __post_init__(self):
        if len(self.values) != len(self.multiplicities):
            raise MatrixError("values and multiplicities length mismatch")
        if any(m < 1 for m in self.multiplicities):
            raise MatrixError("multiplicities must be positive")

    @property
    def dim(self):
        return int(sum(self.multiplicities))

    def flat(self):
        """All eigenvalues repeated by multiplicity, sorted by (real, imag)."""
        out = []
        for v, m in zip(self.values, self.multiplicities):
            out.extend([v] * m)
        return np.array(sorted(out, key=lambda z: (z.real, z.imag)), dtype=complex)

    @classmethod
    def from_values(cls, values, tol=1e-9):
        """Group a flat eigenvalue list into (value, multiplicity) clusters."""
        vals = sorted(np.atleast_1d(np.asarray(values, dtype=complex)),
                      key=lambda z: (z.real, z.imag))
        groups = []
        for v in vals:
            if groups and abs(v - groups[-1][0]) <= tol * max(1.0, abs(v)):
                groups[-1][1] += 1
            else:
                groups.append([v, 1])
        return cls(tuple(g[0] for g in groups), tuple(g[1] for g in groups))


def expm(A, t=1.0):
    """e^{A t} for a square matrix A (scaling-and-squaring Pade)."""
    A = _as_matrix(A, "A", square=True)
    return scipy.linalg.expm(A * float(t))


def eigenvalues(A, tol=1e-9):
    """Spectrum of a square matrix; conjugate pairs survive grouping."""
    A = _as_matrix(A, "A", square=True)
    return Spectrum.from_values(np.linalg.eigvals(A), tol=tol)


def default_rank_tol(M, svals=None):
    """max(rows, cols) * sigma_max * machine epsilon."""
    if svals is None:
        svals = np.linalg.svd(M, compute_uv=False)
    smax = svals[0] if len(svals) else 0.0
    return max(M.shape) * smax * np.finfo(float).eps


def numerical_rank(M, tol=None):
    """Number of singular values above ``tol`` (see default_rank_tol)."""
    M = _as_matrix(M, "M")
    svals = np.linalg.svd(M, compute_uv=False)
    if tol is None:
        tol = default_rank_tol(M, svals)
    elif tol < 0:
        raise MatrixError("tol must be nonnegative")
    return int(np.sum(svals > tol))

def kernel_basis(M, tol=None):
    """Orthonormal basis of ker(M) as columns; width 0 for full column rank.

    The basis comes from the trailing right-singular vectors, so the result
    is a Base(ker(M)) with orthonormal columns.
    """
    M = _as_matrix(M, "M")
    _, svals, Vt = np.linalg.svd(M)
    if tol is None:
        tol = default_rank_tol(M, svals)
    rank = int(np.sum(svals > tol))
    return Vt[rank:].T.copy()


def _conjugate_closed(poles, tol=1e-9):
    remaining = list(poles)
    while remaining:
        z = remaining.pop()
        if abs(z.imag) <= tol:
            continue
        match = None
        for k, w in enumerate(remaining):
            if abs(w - z.conjugate()) <= tol * max(1.0, abs(z)):
                match = k
                break
        if match is None:
            return False
        remaining.pop(match)
    return True


def _real_block_diag(poles, tol=1e-9):
    """Real matrix with the requested spectrum: 1x1 blocks for real poles,
    2x2 rotation-like blocks for conjugate pairs."""
    reals, pairs = [], []
    pool = sorted(poles, key=lambda z: (z.real, abs(z.imag)))
    used = [False] * len(pool)
    for i, z in enumerate(pool):
        if used[i]:
            continue
        if abs(z.imag) <= tol:
            reals.append(z.real)
            used[i] = True
            continue
        for j in range(i + 1, len(pool)):
            if not used[j] and abs(pool[j] - z.conjugate()) <= tol * max(1.0, abs(z)):
                pairs.append((z.real, abs(z.imag)))
                used[i] = used[j] = True
                break
    blocks = [np.array([[r]]) for r in reals]
    blocks += [np.array([[a, b], [-b, a]]) for a, b in pairs]
    return scipy.linalg.block_diag(*blocks) if blocks else np.zeros((0, 0))


def _observability(A, C):
    n = A.shape[0]
    blocks = []
    Ak = np.eye(n)
    for _ in range(n):
        blocks.append(C @ Ak)
        Ak = Ak @ A
    return np.vstack(blocks)


def _acker_observer(A, C, poles):
    # unique single-output gain: L = q(A) W^{-1} e_n with q the target polynomial
    n = A.shape[0]
    coeffs = np.real(np.poly(poles))
    qA = coeffs[-1] * np.eye(n)
    Ak = np.eye(n)
    for k in range(1, n + 1):
        Ak = Ak @ A
        qA += coeffs[n - k] * Ak
    W = _observability(A, C)
    en = np.zeros((n, 1))
    en[-1, 0] = 1.0
    return qA @ np.linalg.solve(W, en)


def _sylvester_observer(A, C, poles, seed, tries):
    # dual controller design: solve A^T X - X Lam = C^T G, L = (G X^{-1})^T;
    # keep the smallest-norm verified gain over several random G draws
    n = A.shape[0]
    lam_set = np.array(poles, dtype=complex)
    if np.min(np.abs(lam_set[:, None] - np.linalg.eigvals(A)[None, :])) < 1e-9:
        raise PlacementError(
            "multi-output placement requires requested poles disjoint from eig(A)")
    Lam = _real_block_diag(poles)
    rng = np.random.default_rng(seed)
    best = None
    best_norm = np.inf
    for _ in range(tries):
        G = rng.standard_normal((C.shape[0], n))
        try:
            X = scipy.linalg.solve_sylvester(A.T, -Lam, C.T @ G)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(X)) or np.linalg.cond(X) > 1e10:
            continue
        L = (G @ np.linalg.inv(X)).T
        if _spectrum_deviation(A - L @ C, poles) < 1e-6 and np.linalg.norm(L) < best_norm:
            best_norm = np.linalg.norm(L)
            best = L
    if best is None:
        raise PlacementError("Sylvester placement failed for all right-hand sides")
    return best


def _spectrum_deviation(M, poles):
    got = np.sort_complex(np.linalg.eigvals(M))
    want = np.sort_complex(np.asarray(poles, dtype=complex))
    return float(np.max(np.abs(got - want))) if len(want) else 0.0


def place_observer_gain(A, C, poles, seed=0, tries=50):
    """Gain L with eig(A - L C) equal to the requested pole multiset.

    Parameters
    ----------
    A : (n, n) array
    C : (p, n) array
    poles : Spectrum or sequence of n complex numbers, closed under
        conjugation.
    seed, tries : control the random right-hand sides of the Sylvester
        method (multi-output only); the smallest-norm verified gain wins.

    Raises
    ------
    PlacementError
        for an unobservable pair, a pole set that is not conjugate-closed,
        or when the achieved spectrum misses the request by more than 1e-6.
    """
    A = _as_matrix(A, "A", square=True)
    C = _as_matrix(C, "C")
    n = A.shape[0]
    if C.shape[1] != n:
        raise MatrixError(f"C has {C.shape[1]} columns, expected {n}")
    if isinstance(poles, Spectrum):
        poles = poles.flat()
    poles = np.atleast_1d(np.asarray(poles, dtype=complex))
    if len(poles) != n:
        raise PlacementError(f"need {n} poles, got {len(poles)}")
    if not _conjugate_closed(list(poles)):
        raise PlacementError("pole multiset is not closed under conjugation")
    if numerical_rank(_observability(A, C)) < n:
        raise PlacementError("(C, A) is not an observable pair")

    if C.shape[0] == 1:
        L = _acker_observer(A, C, poles)
    else:
        L = _sylvester_observer(A, C, poles, seed, tries)
    dev = _spectrum_deviation(A - L @ C, poles)
    if dev > 1e-6 * max(1.0, float(np.max(np.abs(poles)))):
        raise PlacementError(f"placed spectrum off by {dev:.3e}")
    return L
