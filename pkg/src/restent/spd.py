"""Trace-metric geometry on symmetric positive definite matrices.

All singular-value and distance logarithms are base 2 (bits).  Matrix powers
go through a full symmetric eigen-decomposition; the dimensions here are
small enough that accuracy beats any iterative scheme.

Every function is pure and safe to call concurrently.
"""
from __future__ import annotations

import warnings

import numpy as np

from .errors import NumericError

Array = np.ndarray

# Relative floor for the smallest eigenvalue accepted at construction.
EIG_FLOOR = 1e-12


def sym(m: Array) -> Array:
    """Symmetric part (m + m^T)/2, batched over leading axes."""
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def as_spd(m, floor: float = EIG_FLOOR) -> Array:
    """Canonicalize an SPD matrix: symmetrize, then reject if any eigenvalue
    is at or below ``floor`` times the largest one."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NumericError(f"expected a square matrix, got shape {m.shape}")
    m = sym(m)
    try:
        w = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigen-decomposition failed: {exc}") from exc
    if not np.all(np.isfinite(w)) or w[-1] <= 0 or w[0] <= floor * w[-1]:
        raise NumericError(f"matrix is not positive definite (eigenvalues {w})")
    return m


def is_spd(m: Array, floor: float = EIG_FLOOR) -> bool:
    try:
        as_spd(m, floor=floor)
    except NumericError:
        return False
    return True


def power(p: Array, t: float) -> Array:
    """t-th power of an SPD matrix via eigen-decomposition, batched."""
    p = np.asarray(p, dtype=float)
    try:
        w, u = np.linalg.eigh(sym(p))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigen-decomposition failed: {exc}") from exc
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise NumericError("matrix power requires strictly positive eigenvalues")
    out = (u * (w ** t)[..., None, :]) @ np.swapaxes(u, -1, -2)
    return sym(out)


def congruence(g: Array, p: Array, cond_limit: float = 1e12) -> Array:
    """Action g * p := g p g^T of an invertible matrix on an SPD matrix."""
    g = np.asarray(g, dtype=float)
    c = np.linalg.cond(g)
    if not np.isfinite(c) or c > cond_limit:
        raise NumericError(f"congruence action is ill-conditioned (cond={c:.3g})")
    return sym(g @ p @ g.T)


def geodesic(p: Array, q: Array, t: float) -> Array:
    """Point p #_t q = p^{1/2} (p^{-1/2} q p^{-1/2})^t p^{1/2} on the
    distance-minimizing curve from p to q."""
    s = power(p, 0.5)
    si = power(p, -0.5)
    return sym(s @ power(sym(si @ q @ si), t) @ s)


def log_singular_values(g: Array) -> Array:
    """Base-2 logs of the singular values of an invertible matrix,
    nonincreasing.  Singular input is rejected: the domain is GL(n)."""
    g = np.asarray(g, dtype=float)
    try:
        sv = np.linalg.svd(g, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    if np.any(sv <= 0) or not np.all(np.isfinite(sv)):
        raise NumericError("singular or non-finite matrix has no log singular values")
    return np.log2(sv)


def vectorial_distance(p: Array, q: Array) -> Array:
    """Vector of doubled log singular values of p^{-1/2} q^{1/2},
    nonincreasing.  Its Euclidean norm is the trace-metric distance."""
    return 2.0 * log_singular_values(power(p, -0.5) @ power(q, 0.5))


def distance(p: Array, q: Array) -> float:
    """Riemannian (trace-metric) distance, in bits."""
    return float(np.linalg.norm(vectorial_distance(p, q)))


def majorizes_leq(x: Array, y: Array, slack: float | None = None) -> bool:
    """Partial-sum order on nonincreasing vectors: every partial sum of x is
    below the one of y, and the totals agree.

    ``slack`` defaults to 1e-8 scaled by the larger vector norm; the order is
    meant for floating-point outputs of eigen/SVD routines.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise NumericError(f"length mismatch: {x.shape} vs {y.shape}")
    if slack is None:
        slack = 1e-8 * max(1.0, np.linalg.norm(x), np.linalg.norm(y))
    cx = np.cumsum(x)
    cy = np.cumsum(y)
    if np.any(cx[:-1] > cy[:-1] + slack):
        return False
    return bool(abs(cx[-1] - cy[-1]) <= slack)


def inductive_barycenter(
    atoms,
    weights=None,
    max_cycles: int = 10000,
    tol: float = 1e-9,
) -> Array:
    """Weighted barycenter of SPD matrices by cyclic geodesic interpolation.

    Starting from the first atom, step k moves the running mean toward atom
    ``k mod m`` (residue 0 meaning atom m) by the fraction
    s_k = w_{k mod m} / sum_{i<=k} w_{i mod m}.  The iteration stops when the
    distance between consecutive full-cycle iterates drops below ``tol``;
    exhausting ``max_cycles`` returns the last iterate with a warning carrying
    the distance achieved.
    """
    atoms = [np.asarray(a, dtype=float) for a in atoms]
    m = len(atoms)
    if m == 0:
        raise NumericError("barycenter of an empty atom list")
    if weights is None:
        w = np.full(m, 1.0 / m)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (m,):
            raise NumericError(f"expected {m} weights, got shape {w.shape}")
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-6:
            raise NumericError("weights must be nonnegative and sum to 1")
        w = np.clip(w, 0.0, None)
        w = w / w.sum()
    if m == 1:
        return atoms[0]

    bar = atoms[0]
    mass = w[0]          # running l(k); k = 1 consumed by the start value
    k = 1
    prev_cycle = bar
    last_gap = np.inf
    for cycle in range(max_cycles):
        # First pass covers k = 2..m, later passes k = cm+1..(c+1)m, so the
        # convergence test always compares iterates at multiples of m.
        steps = m - 1 if cycle == 0 else m
        for _ in range(steps):
            k += 1
            j = (k - 1) % m          # residue 0 -> atom m -> index m-1
            mass += w[j]
            s = w[j] / mass if mass > 0 else 0.0
            bar = geodesic(bar, atoms[j], s)
        last_gap = distance(prev_cycle, bar)
        if last_gap < tol:
            return bar
        prev_cycle = bar
    warnings.warn(
        f"inductive barycenter stopped after {max_cycles} cycles; "
        f"last full-cycle move {last_gap:.3e} (tol {tol:.1e})",
        RuntimeWarning,
        stacklevel=2,
    )
    return bar


def lyapunov_solve(s: Array, v: Array) -> Array:
    """Unique symmetric h with h s + s h = v, for SPD s and symmetric v.

    Solved in the eigenbasis of s where h_ij = v_ij / (sigma_i + sigma_j);
    the denominators are positive, so the solution always exists.
    """
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    if not np.allclose(v, v.T, atol=1e-10 * max(1.0, np.abs(v).max())):
        raise NumericError("right-hand side must be symmetric")
    w, u = np.linalg.eigh(sym(s))
    if np.any(w <= 0):
        raise NumericError("coefficient matrix must be positive definite")
    vt = u.T @ sym(v) @ u
    h = vt / (w[:, None] + w[None, :])
    return sym(u @ h @ u.T)
