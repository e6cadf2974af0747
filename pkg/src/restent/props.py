"""Randomized property suites for the geometry and spectrum layers.

Each property function draws its own instances from a seeded generator and
returns the worst violation magnitude observed; a property passes when that
magnitude stays within its tolerance.  The suites are shared between the
test suite and the ``props`` CLI command.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError
from .metrics import metric_sv_values
from .spd import (
    congruence,
    distance,
    geodesic,
    inductive_barycenter,
    log_singular_values,
    lyapunov_solve,
    power,
    sym,
    vectorial_distance,
)

Array = np.ndarray

LN2 = float(np.log(2.0))


@dataclass
class PropertyResult:
    name: str
    instances: int
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def random_spd(rng, n, spread=1.2):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(-spread, spread, size=n))
    return sym(q @ np.diag(w) @ q.T)


def random_gl(rng, n):
    while True:
        g = rng.standard_normal((n, n))
        if np.linalg.cond(g) < 1e3:
            return g


def _majorization_excess(x, y):
    """How far x is from being majorized by y: positive partial-sum excess or
    total-sum mismatch, whichever is worse."""
    cx, cy = np.cumsum(np.sort(x)[::-1]), np.cumsum(np.sort(y)[::-1])
    head = float(np.max(cx[:-1] - cy[:-1])) if len(cx) > 1 else -np.inf
    return max(head, abs(float(cx[-1] - cy[-1])))


def _prop_isometry(rng, n):
    p, q = random_spd(rng, n), random_spd(rng, n)
    g = random_gl(rng, n)
    d1 = vectorial_distance(p, q)
    d2 = vectorial_distance(congruence(g, p), congruence(g, q))
    return float(np.max(np.abs(d1 - d2)))


def _prop_triangle(rng, n):
    p, q, r = (random_spd(rng, n) for _ in range(3))
    lhs = vectorial_distance(p, q)
    rhs = vectorial_distance(p, r) + vectorial_distance(r, q)
    return _majorization_excess(lhs, rhs)


def _prop_reversal(rng, n):
    p, q = random_spd(rng, n), random_spd(rng, n)
    return float(np.max(np.abs(
        vectorial_distance(q, p) + vectorial_distance(p, q)[::-1])))


def _prop_geodesic_segment(rng, n):
    p, q = random_spd(rng, n), random_spd(rng, n)
    xi = vectorial_distance(p, q)
    worst = 0.0
    grid = (0.0, 0.25, 0.5, 0.75, 1.0)
    for i, t in enumerate(grid):
        for s in grid[i:]:
            d = vectorial_distance(geodesic(p, q, t), geodesic(p, q, s))
            worst = max(worst, float(np.max(np.abs(d - (s - t) * xi))))
    return worst


def _prop_midpoint_contraction(rng, n):
    p, q, r = (random_spd(rng, n) for _ in range(3))
    lhs = vectorial_distance(geodesic(r, p, 0.5), geodesic(r, q, 0.5))
    return _majorization_excess(lhs, 0.5 * vectorial_distance(p, q))


def _prop_geodesic_equivariance(rng, n):
    p, q = random_spd(rng, n), random_spd(rng, n)
    g = random_gl(rng, n)
    t = float(rng.uniform(0.0, 1.0))
    lhs = congruence(g, geodesic(p, q, t))
    rhs = geodesic(congruence(g, p), congruence(g, q), t)
    return float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs))))


def _prop_geodesic_convexity(rng, n):
    p, q, r, o = (random_spd(rng, n) for _ in range(4))
    worst = 0.0
    for t in (0.0, 0.5, 1.0):
        lhs = vectorial_distance(geodesic(p, q, t), geodesic(r, o, t))
        rhs = (1 - t) * vectorial_distance(p, r) + t * vectorial_distance(q, o)
        worst = max(worst, _majorization_excess(lhs, rhs))
    return worst


def _run_cycles(atoms, weights, cycles):
    """Fixed number of inductive-mean cycles (no convergence test)."""
    m = len(atoms)
    w = np.asarray(weights, dtype=float)
    bar = atoms[0]
    mass = w[0]
    k = 1
    for _ in range(cycles * m - 1):
        k += 1
        j = (k - 1) % m
        mass += w[j]
        s = w[j] / mass if mass > 0 else 0.0
        bar = geodesic(bar, atoms[j], s)
    return bar


def _prop_barycenter_equivariance(rng, n):
    # equivariance holds at every iterate, not only in the limit
    atoms = [random_spd(rng, n) for _ in range(3)]
    w = rng.dirichlet(np.ones(3))
    g = random_gl(rng, n)
    lhs = congruence(g, _run_cycles(atoms, w, 40))
    rhs = _run_cycles([congruence(g, a) for a in atoms], w, 40)
    return float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs))))


def _prop_barycenter_perturbation(rng, n):
    # two atoms: the limit is the geodesic point at the far weight
    p = random_spd(rng, n)
    q = random_spd(rng, n)
    dq = sym(rng.standard_normal((n, n))) * 0.2
    q2 = sym(scipy.linalg.expm(scipy.linalg.logm(q) + dq)) if n > 1 else q * np.exp(dq)
    q2 = sym(np.asarray(q2, dtype=float))
    w2 = float(rng.uniform(0.2, 0.8))
    u = geodesic(p, q, w2)
    v = geodesic(p, q2, w2)
    return _majorization_excess(vectorial_distance(u, v),
                                w2 * vectorial_distance(q, q2))


def _prop_barycenter_perturbation_iterative(rng, n):
    # three atoms, genuinely iterative barycenters; tolerance calibrated to
    # the O(1/k) scheme via the consecutive-cycle stopping rule
    base = random_spd(rng, n, spread=0.4)
    atoms = [sym(scipy.linalg.expm(
        scipy.linalg.logm(base) + 0.25 * sym(rng.standard_normal((n, n)))))
        for _ in range(3)] if n > 1 else [
        base * np.exp(rng.uniform(-0.25, 0.25)) for _ in range(3)]
    atoms = [np.asarray(a, dtype=float) for a in atoms]
    w = np.array([0.3, 0.3, 0.4])
    last = atoms[2] @ np.eye(n)
    wobble = 0.2 * sym(rng.standard_normal((n, n)))
    last2 = (sym(scipy.linalg.expm(scipy.linalg.logm(last) + wobble))
             if n > 1 else last * np.exp(wobble))
    u = inductive_barycenter(atoms, weights=w, tol=1e-7, max_cycles=20000)
    v = inductive_barycenter(atoms[:2] + [np.asarray(last2, dtype=float)],
                             weights=w, tol=1e-7, max_cycles=20000)
    return _majorization_excess(vectorial_distance(u, v),
                                w[2] * vectorial_distance(last, np.asarray(last2)))


def _prop_barycenter_permutation(rng, n):
    atoms = [random_spd(rng, n, spread=0.5) for _ in range(2)]
    w = rng.dirichlet(np.ones(2))
    b1 = inductive_barycenter(atoms, weights=w, tol=1e-8, max_cycles=40000)
    b2 = inductive_barycenter(atoms[::-1], weights=w[::-1], tol=1e-8,
                              max_cycles=40000)
    return distance(b1, b2)


def _prop_inductive_scalar_convergence(rng, n):
    # scalars: every full cycle lands exactly on the geometric mean
    vals = np.exp(rng.uniform(-2.0, 2.0, size=4))
    atoms = [np.array([[v]]) for v in vals]
    bar = inductive_barycenter(atoms, tol=1e-14, max_cycles=50)
    target = float(np.exp(np.mean(np.log(vals))))
    worst = abs(bar[0, 0] - target)
    # commuting case reduces to the scalar one in a shared eigenbasis
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    spectra = np.exp(rng.uniform(-1.5, 1.5, size=(3, n)))
    mats = [sym(q @ np.diag(s) @ q.T) for s in spectra]
    expected = sym(q @ np.diag(np.exp(np.mean(np.log(spectra), axis=0))) @ q.T)
    got = inductive_barycenter(mats, tol=1e-12, max_cycles=20000)
    worst = max(worst, float(np.max(np.abs(got - expected))))
    return worst


def _prop_spectrum_three_way(rng, n):
    p, q = random_spd(rng, n), random_spd(rng, n)
    a = random_gl(rng, n)
    by_svd = metric_sv_values(p, q, a)
    pencil = scipy.linalg.eigh(a.T @ q @ a, p, eigvals_only=True)
    by_pencil = 0.5 * np.log2(np.sort(pencil)[::-1])
    adjoint = np.linalg.eigvals(np.linalg.solve(p, a.T @ q @ a))
    by_adjoint = 0.5 * np.log2(np.sort(adjoint.real)[::-1])
    return float(max(np.max(np.abs(by_svd - by_pencil)),
                     np.max(np.abs(by_svd - by_adjoint))))


def _prop_singular_value_derivative(rng, n):
    # Right derivative of the log singular vector along g(t) = exp(tH).
    # The derivative is one-sided: sorting makes sigma(exp(-tH)) the reversed
    # negation of sigma(exp(tH)), so a two-sided difference through t=0 would
    # average lambda_i with lambda_{n+1-i}.  A second-order one-sided stencil
    # keeps the O(eps^2) accuracy of a centered one.
    while True:
        h = rng.standard_normal((n, n))
        w = np.linalg.eigvalsh(h + h.T)
        if n == 1 or np.min(np.diff(np.sort(w))) > 0.1:
            break
    formula = np.sort(w)[::-1] / (2.0 * LN2)
    eps = 1e-4
    s1 = log_singular_values(scipy.linalg.expm(eps * h))
    s2 = log_singular_values(scipy.linalg.expm(2.0 * eps * h))
    fd = (4.0 * s1 - s2) / (2.0 * eps)        # sigma(I) vanishes exactly
    return float(np.max(np.abs(fd - formula)))


def _prop_sqrt_factor_derivative(rng, n):
    # directional derivative of (p, q) -> p^{-1/2} q^{1/2} at p = q
    p = random_spd(rng, n)
    vp = sym(rng.standard_normal((n, n))) * 0.3
    vq = sym(rng.standard_normal((n, n))) * 0.3
    h = lyapunov_solve(power(p, 0.5), vq - vp)
    formula = power(p, -0.5) @ h
    eps = 1e-5

    def upsilon(pp, qq):
        return power(pp, -0.5) @ power(qq, 0.5)

    fd = (upsilon(p + eps * vp, p + eps * vq)
          - upsilon(p - eps * vp, p - eps * vq)) / (2 * eps)
    return float(np.max(np.abs(fd - formula)))


# (name, per-instance function, tolerance)
_SUITE = [
    ("isometry-of-congruence", _prop_isometry, 1e-8),
    ("triangle-majorization", _prop_triangle, 1e-8),
    ("reversal-identity", _prop_reversal, 1e-9),
    ("geodesic-segment", _prop_geodesic_segment, 1e-8),
    ("midpoint-contraction", _prop_midpoint_contraction, 1e-8),
    ("geodesic-equivariance", _prop_geodesic_equivariance, 1e-8),
    ("geodesic-convexity", _prop_geodesic_convexity, 1e-8),
    ("barycenter-equivariance", _prop_barycenter_equivariance, 1e-8),
    ("barycenter-perturbation", _prop_barycenter_perturbation, 1e-8),
    ("barycenter-perturbation-iterative", _prop_barycenter_perturbation_iterative, 2e-3),
    ("barycenter-permutation", _prop_barycenter_permutation, 2e-3),
    ("inductive-mean-scalar", _prop_inductive_scalar_convergence, 1e-8),
    ("spectrum-three-way", _prop_spectrum_three_way, 1e-8),
    ("singular-value-derivative", _prop_singular_value_derivative, 1e-5),
    ("sqrt-factor-derivative", _prop_sqrt_factor_derivative, 1e-5),
]


def property_names() -> list:
    return [name for name, _, _ in _SUITE]


def run_property_suite(seed: int = 42, instances: int = 50,
                       dims=(1, 2, 3, 5), names=None) -> list:
    """Run the randomized property suite and return one PropertyResult per
    property.  ``instances`` is the draw count per property, split evenly
    across ``dims``."""
    if instances < 1:
        raise ConfigError("instances must be at least 1")
    per_dim = max(1, int(round(instances / len(dims))))
    results = []
    for name, fn, tol in _SUITE:
        if names is not None and name not in names:
            continue
        rng = np.random.default_rng(seed)
        worst = 0.0
        total = 0
        for n in dims:
            for _ in range(per_dim):
                worst = max(worst, float(fn(rng, int(n))))
                total += 1
        results.append(PropertyResult(name=name, instances=total, worst=worst,
                                      tolerance=tol))
    return results
