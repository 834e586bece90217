"""Parameters and closed-form analytics of the two-factor Black-Karasinski model.

The log short rate decomposes as ``ln r(t) = x(t) + y(t) + phi(t)`` where ``x``
and ``y`` are correlated zero-started Ornstein-Uhlenbeck factors with speeds
``alpha1``/``alpha2`` and ``phi`` is a deterministic shift.  Everything here is
a pure function of its arguments.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateModelError, ParameterError

__all__ = [
    "ETA_SOURCES",
    "G2Stats",
    "ModelParams",
    "TRAINING_PARAMS",
    "VALIDATION_PARAMS",
    "derive_g2",
    "mean_S",
    "phi",
    "theta",
    "time_grid",
    "var_S",
    "var_S_cross",
]

ETA_SOURCES = ("as_printed", "derivation")


@dataclass(frozen=True)
class ModelParams:
    """Two-factor Black-Karasinski parameter set.

    ``mu_prime`` is the long-run level of ``ln m`` (a log-rate).  ``m0``
    defaults to ``exp(mu_prime)``, i.e. the reversion level starts at its
    long-run value.
    """

    alpha1: float
    alpha2: float
    sigma1: float
    sigma2: float
    mu_prime: float
    r0: float
    rho_prime: float = 0.0
    m0: float | None = None
    dt: float = 1.0 / 12.0

    def __post_init__(self) -> None:
        if self.m0 is None:
            object.__setattr__(self, "m0", math.exp(self.mu_prime))
        values = asdict(self)
        for name, value in values.items():
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value!r}")
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ParameterError("alpha1 and alpha2 must be positive")
        if self.alpha1 == self.alpha2:
            raise ParameterError("alpha1 == alpha2 makes the factor decomposition singular")
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ParameterError("volatilities must be non-negative")
        if not -1.0 <= self.rho_prime <= 1.0:
            raise ParameterError(f"rho_prime must lie in [-1, 1], got {self.rho_prime}")
        if self.r0 <= 0 or self.m0 <= 0:
            raise ParameterError("r0 and m0 must be positive")
        if self.dt <= 0:
            raise ParameterError("dt must be positive")

    @classmethod
    def from_level(cls, *, mu: float, **kwargs) -> ModelParams:
        """Build from the long-run reversion *level* ``mu`` (a rate, not its log)."""
        if mu <= 0:
            raise ParameterError("mu must be positive")
        return cls(mu_prime=math.log(mu), **kwargs)

    def replace(self, **changes) -> ModelParams:
        values = asdict(self)
        if "mu_prime" in changes and "m0" not in changes:
            values["m0"] = None
        values.update(changes)
        return ModelParams(**values)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps({k: repr(v) for k, v in asdict(self).items()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


TRAINING_PARAMS = ModelParams.from_level(
    alpha1=0.1759, alpha2=0.0785, sigma1=0.3423, sigma2=0.2242, mu=0.0377, r0=0.0307
)
VALIDATION_PARAMS = ModelParams.from_level(
    alpha1=0.1776, alpha2=0.0819, sigma1=0.3407, sigma2=0.2177, mu=0.0377, r0=0.0394
)


@dataclass(frozen=True)
class G2Stats:
    """Volatility constants of the additive two-factor decomposition.

    ``sigma_g`` drives the x-factor, ``eta`` the y-factor.  The correlation
    ``rho_g`` is undefined when ``sigma_g == 0``; reading it then raises
    :class:`DegenerateModelError`.
    """

    eta: float
    sigma_g: float
    eta_source: str = "as_printed"
    _rho_numerator: float = field(default=0.0, repr=False)

    @property
    def rho_g(self) -> float:
        if self.sigma_g == 0.0:
            raise DegenerateModelError("sigma_g = 0: the factor correlation is undefined")
        return self._rho_numerator / self.sigma_g


def derive_g2(params: ModelParams, eta_source: str = "as_printed") -> G2Stats:
    """Decomposition constants.

    ``as_printed`` scales ``eta`` by ``sigma1``; ``derivation`` uses ``sigma2``,
    which is what the factor rewrite of the two SDEs actually produces.
    """
    if eta_source not in ETA_SOURCES:
        raise ParameterError(f"eta_source must be one of {ETA_SOURCES}, got {eta_source!r}")
    a1, a2 = params.alpha1, params.alpha2
    vol = params.sigma1 if eta_source == "as_printed" else params.sigma2
    eta = abs(a1 * vol / (a1 - a2))
    s1, rho = params.sigma1, params.rho_prime
    sigma_sq = s1 * s1 + eta * eta - 2.0 * rho * s1 * eta
    # |rho| <= 1 keeps this non-negative up to rounding
    sigma_g = math.sqrt(max(sigma_sq, 0.0))
    return G2Stats(eta=eta, sigma_g=sigma_g, eta_source=eta_source, _rho_numerator=rho * s1 - eta)


def time_grid(params: ModelParams, n_steps: int) -> np.ndarray:
    if n_steps < 1:
        raise ParameterError("n_steps must be >= 1")
    return np.arange(n_steps + 1) * params.dt


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ParameterError("t must be finite and non-negative")
    return t


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def theta(t, params: ModelParams):
    """Deterministic drift level ``alpha1 * E[ln m(t)]``."""
    t = _check_time(t)
    decay = np.exp(-params.alpha2 * t)
    a1 = params.alpha1
    return _scalar(a1 * math.log(params.m0) * decay - a1 * params.mu_prime * np.expm1(-params.alpha2 * t))


def phi(t, params: ModelParams):
    """Deterministic shift ``ln r0 e^{-a1 t} + int_0^t theta(v) e^{-a1 (t-v)} dv``.

    Uses the closed-form antiderivative; equals ``E[ln r(t)]`` under the model.
    """
    t = _check_time(t)
    a1, a2 = params.alpha1, params.alpha2
    log_m0, mu = math.log(params.m0), params.mu_prime
    e1 = np.exp(-a1 * t)
    # (e^{-a2 t} - e^{-a1 t}) / (a1 - a2), written with expm1 for small t
    cross = (np.expm1(-a2 * t) - np.expm1(-a1 * t)) / (a1 - a2)
    return _scalar(math.log(params.r0) * e1 + a1 * (log_m0 - mu) * cross - mu * np.expm1(-a1 * t))


def mean_S(t, params: ModelParams, x0: float = 0.0, y0: float = 0.0):
    t = _check_time(t)
    return _scalar(x0 * np.exp(-params.alpha1 * t) + y0 * np.exp(-params.alpha2 * t))


def _var_terms(t, params: ModelParams):
    a1, a2 = params.alpha1, params.alpha2
    one = -np.expm1(-2.0 * a1 * t) / (2.0 * a1)
    both = -np.expm1(-(a1 + a2) * t) / (a1 + a2)
    two = -np.expm1(-2.0 * a2 * t) / (2.0 * a2)
    return one, both, two


def var_S(t, g2: G2Stats, params: ModelParams):
    """Variance of ``x(t) + y(t)`` with the correlation folded in as ``-eta**2``."""
    t = _check_time(t)
    one, both, two = _var_terms(t, params)
    eta2 = g2.eta * g2.eta
    v = g2.sigma_g**2 * one - 2.0 * eta2 * both + eta2 * two
    # cancellation at tiny t can leave a few ulps below zero
    scale = g2.sigma_g**2 * one + 2.0 * eta2 * both + eta2 * two
    v = np.where((v < 0) & (v > -1e-12 * np.maximum(scale, 1e-300)), 0.0, v)
    if np.any(v < 0):
        raise DegenerateModelError("negative variance: inconsistent G2Stats")
    return _scalar(v)


def var_S_cross(t, g2: G2Stats, params: ModelParams):
    """Variance written with an ``eta*rho_g*sigma_g`` last term instead of ``eta**2``.

    Not used by the pipeline; kept so the two recomposition forms can be
    compared directly.
    """
    t = _check_time(t)
    one, both, two = _var_terms(t, params)
    return _scalar(
        g2.sigma_g**2 * one - 2.0 * g2.eta**2 * both + g2.eta * g2.rho_g * g2.sigma_g * two
    )
