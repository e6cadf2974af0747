"""Singular values and continuous-time spectra of Jacobians measured in a
state-dependent Riemannian metric.

A metric field maps a state x to an SPD matrix P(x).  Discrete-time spectra
are base-2 logs of the singular values of B = P(x')^{1/2} A P(x)^{-1/2}
(x' the image point); continuous-time spectra are the eigenvalues of
P^{-1/2} (P J + J^T P + Pdot) P^{-1/2}, kept in natural-log-per-time units
until the final bit conversion in the bound formulas.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NumericError
from .spd import power, sym

Array = np.ndarray

# Stand-in for log2(0) when a singular Jacobian is admitted for bound-only
# use; annihilated by the max{0, .} in every bound formula.
LOG_ZERO = -1e18


@dataclass(frozen=True)
class MetricField:
    """Rule x -> P(x) plus, when available, the orbital derivative rule
    x -> Pdot(x) (per unit time).

    kind is one of "constant", "analytic", "tabulated".  Tabulated fields
    compute values on demand and memoize per point; they carry no orbital
    derivative, so continuous-time use requires an explicit flow-based
    finite-difference fallback.  Evaluation rules must be pure: the memo
    cache is the only internal state and its writes are idempotent.
    """

    dim: int
    kind: str
    label: str
    eval_rule: Callable[[Array], Array]
    orbital_rule: Optional[Callable[[Array], Array]] = None
    horizon: Optional[float] = None      # lookback of minimizing metrics
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @staticmethod
    def constant(matrix, label: str = "constant") -> "MetricField":
        from .spd import as_spd

        p = as_spd(matrix)
        n = p.shape[0]

        def ev(x: Array) -> Array:
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(p, x.shape[:-1] + (n, n)).copy()

        def od(x: Array) -> Array:
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape[:-1] + (n, n))

        return MetricField(dim=n, kind="constant", label=label, eval_rule=ev, orbital_rule=od)

    @staticmethod
    def identity(dim: int) -> "MetricField":
        return MetricField.constant(np.eye(dim), label="identity")

    @staticmethod
    def analytic(dim, eval_rule, orbital_rule=None, label: str = "analytic") -> "MetricField":
        return MetricField(dim=dim, kind="analytic", label=label,
                           eval_rule=eval_rule, orbital_rule=orbital_rule)

    @staticmethod
    def tabulated(dim, rule, label: str = "tabulated",
                  horizon: Optional[float] = None) -> "MetricField":
        return MetricField(dim=dim, kind="tabulated", label=label,
                           eval_rule=rule, horizon=horizon)

    def evaluate(self, x: Array) -> Array:
        """P at x; batched over leading axes of x."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ConfigError(f"state dimension {x.shape[-1]} != metric dimension {self.dim}")
        if self.kind == "tabulated":
            if x.ndim == 1:
                key = x.tobytes()
                hit = self._cache.get(key)
                if hit is None:
                    hit = sym(np.asarray(self.eval_rule(x), dtype=float))
                    self._cache[key] = hit
                return hit
            return np.stack([self.evaluate(row) for row in x.reshape(-1, self.dim)]).reshape(
                x.shape[:-1] + (self.dim, self.dim)
            )
        return sym(np.asarray(self.eval_rule(x), dtype=float))

    @property
    def has_orbital(self) -> bool:
        return self.orbital_rule is not None

    def orbital_derivative(self, x: Array) -> Array:
        """Analytic Pdot at x (per unit time); batched."""
        if self.orbital_rule is None:
            raise ConfigError(
                f"metric '{self.label}' has no orbital derivative; "
                "enable a flow-based finite difference instead"
            )
        return sym(np.asarray(self.orbital_rule(np.asarray(x, dtype=float)), dtype=float))


@dataclass(frozen=True)
class MetricSpectrum:
    """Spectrum at one sample point, values nonincreasing.

    Discrete time: base-2 log singular values (bits/step).  Continuous time:
    real roots in natural-log units (1/time).
    """

    point: tuple
    values: tuple

    @staticmethod
    def make(point, values) -> "MetricSpectrum":
        return MetricSpectrum(
            point=tuple(float(v) for v in np.atleast_1d(point)),
            values=tuple(float(v) for v in np.atleast_1d(values)),
        )


def metric_sv_values(p: Array, q: Array, jac: Array) -> Array:
    """Log2 singular values (nonincreasing) of a Jacobian mapping the inner
    product p at the source to q at the image: SVD of q^{1/2} jac p^{-1/2}.

    Zero singular values map to the LOG_ZERO sentinel (bound-only use)."""
    b = power(q, 0.5) @ jac @ power(p, -0.5)
    sv = np.linalg.svd(b, compute_uv=False)
    if not np.all(np.isfinite(sv)):
        raise NumericError("non-finite singular values in metric spectrum")
    with np.errstate(divide="ignore"):
        out = np.where(sv > 0.0, np.log2(np.maximum(sv, 1e-300)), LOG_ZERO)
    return out


def metric_singular_values(metric: MetricField, x, phi_x, jac) -> MetricSpectrum:
    """Metric-adapted singular-value spectrum of the one-step Jacobian at x,
    with image point phi_x."""
    x = np.asarray(x, dtype=float)
    p = metric.evaluate(x)
    q = metric.evaluate(np.asarray(phi_x, dtype=float))
    values = metric_sv_values(p, q, np.asarray(jac, dtype=float))
    return MetricSpectrum.make(x, values)


def ct_spectrum_values(p: Array, jac: Array, pdot: Array) -> Array:
    """Eigenvalues (nonincreasing) of P^{-1/2} (P J + J^T P + Pdot) P^{-1/2},
    batched over leading axes."""
    jt = np.swapaxes(jac, -1, -2)
    core = p @ jac + jt @ p + pdot
    r = power(p, -0.5)
    w = np.linalg.eigvalsh(sym(r @ core @ r))
    return w[..., ::-1]


def ct_metric_spectrum(metric: MetricField, x, jac, pdot) -> MetricSpectrum:
    """Continuous-time spectrum at x from the metric value, the vector-field
    Jacobian, and a symmetric orbital derivative."""
    x = np.asarray(x, dtype=float)
    pdot = np.asarray(pdot, dtype=float)
    scale = max(1.0, float(np.abs(pdot).max()))
    if not np.allclose(pdot, np.swapaxes(pdot, -1, -2), atol=1e-9 * scale):
        raise NumericError("orbital derivative must be symmetric")
    p = metric.evaluate(x)
    values = ct_spectrum_values(p, np.asarray(jac, dtype=float), sym(pdot))
    return MetricSpectrum.make(x, values)


def orbital_derivative_fd(metric: MetricField, system, x, h: float = 1e-5) -> Array:
    """One-sided finite-difference orbital derivative
    (P(flow(x, h)) - P(x)) / h, symmetrized; batched over points.

    Used only when no analytic rule is supplied; the error is O(h)."""
    from .dynamics import flow

    if system.time_type != "continuous":
        raise ConfigError("orbital derivatives require a continuous-time system")
    x = np.asarray(x, dtype=float)
    ahead = flow(system, x, h, step=h)
    return sym((metric.evaluate(ahead) - metric.evaluate(x)) / h)
