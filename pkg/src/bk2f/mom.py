"""Method-of-moments next-step quantile predictor.

Quantiles of ``r`` at timestep ``t`` are mapped to S-space,
``z = (ln q - phi(t dt)) / sqrt(var_S(t dt))``.  The predictor keeps ``z``
fixed and maps it back at ``t+1``: the shape of the previous distribution is
carried forward, re-centred and re-scaled by the theoretical moments.

When the model variance is exactly zero (both volatilities zero) the law is a
point mass and every quantile standardizes to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .model import G2Stats, ModelParams, phi, var_S

DRIFT_MODES = ("none", "indexed")


@dataclass(frozen=True)
class StandardizedQuantiles:
    t: int
    values: np.ndarray


def _moments(t: int, params: ModelParams, g2: G2Stats) -> tuple[float, float]:
    time = t * params.dt
    return phi(time, params), math.sqrt(var_S(time, g2, params))


def standardize(raw, t: int, params: ModelParams, g2: G2Stats) -> StandardizedQuantiles:
    """S-space position of each quantile; works on any array of positive rates."""
    if t < 1:
        raise ParameterError("cannot standardize at t=0: the law is a point mass at r0")
    raw = np.asarray(raw, dtype=float)
    if np.any(~(raw > 0)):
        raise ParameterError("quantiles of r must be positive")
    centre, scale = _moments(t, params, g2)
    if scale == 0.0:
        return StandardizedQuantiles(t, np.zeros_like(raw))
    return StandardizedQuantiles(t, (np.log(raw) - centre) / scale)


def destandardize(sq: StandardizedQuantiles | np.ndarray, t: int, params: ModelParams, g2: G2Stats) -> np.ndarray:
    if t < 1:
        raise ParameterError("t must be >= 1")
    values = sq.values if isinstance(sq, StandardizedQuantiles) else np.asarray(sq, dtype=float)
    centre, scale = _moments(t, params, g2)
    return np.exp(centre + scale * values)


def drift_index(r_t, t: int, params: ModelParams):
    """``r_t * exp((e^{a1 dt} + e^{a2 dt}) + phi((t+1) dt) - phi(t dt))``.

    The growth factors are ``e^{+alpha dt}``, not decay factors.  The form is
    kept uncorrected so runs with ``drift_mode="indexed"`` are comparable; that
    mode is off by default.
    """
    dt = params.dt
    growth = math.exp(params.alpha1 * dt) + math.exp(params.alpha2 * dt)
    shift = phi((t + 1) * dt, params) - phi(t * dt, params)
    out = np.asarray(r_t, dtype=float) * math.exp(growth + shift)
    return float(out) if out.ndim == 0 else out


def mom_predict(prev, t: int, params: ModelParams, g2: G2Stats, drift_mode: str = "none") -> np.ndarray:
    """Predict quantiles of ``r`` at ``t+1`` from those at ``t``.

    ``drift_mode="indexed"`` rescales the dispersion at ``t`` first and then
    applies :func:`drift_index`.
    """
    if drift_mode not in DRIFT_MODES:
        raise ParameterError(f"drift_mode must be one of {DRIFT_MODES}, got {drift_mode!r}")
    sq = standardize(prev, t, params, g2)
    if drift_mode == "none":
        return destandardize(sq, t + 1, params, g2)
    centre, _ = _moments(t, params, g2)
    _, next_scale = _moments(t + 1, params, g2)
    rescaled = np.exp(centre + next_scale * sq.values)
    return drift_index(rescaled, t, params)
