"""Run configuration: flat ``dotted.key = value`` text files.

Every key has a typed default; unknown keys are an error.  Rates for the
reversion level are given as the level ``mu`` (e.g. 0.0377), not its log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ParameterError
from .mlp import INPUT_ACTIVATIONS, TrainConfig
from .model import ETA_SOURCES, ModelParams
from .mom import DRIFT_MODES
from .sim import SimConfig

_PARAM_KEYS = ("alpha1", "alpha2", "sigma1", "sigma2", "mu", "rho_prime", "r0", "m0", "dt")

DEFAULTS: dict[str, object] = {
    "params_train.alpha1": 0.1759,
    "params_train.alpha2": 0.0785,
    "params_train.sigma1": 0.3423,
    "params_train.sigma2": 0.2242,
    "params_train.mu": 0.0377,
    "params_train.rho_prime": 0.0,
    "params_train.r0": 0.0307,
    "params_train.m0": None,
    "params_train.dt": 1.0 / 12.0,
    "params_valid.alpha1": 0.1776,
    "params_valid.alpha2": 0.0819,
    "params_valid.sigma1": 0.3407,
    "params_valid.sigma2": 0.2177,
    "params_valid.mu": 0.0377,
    "params_valid.rho_prime": 0.0,
    "params_valid.r0": 0.0394,
    "params_valid.m0": None,
    "params_valid.dt": 1.0 / 12.0,
    "sim.branch_factor": 4,
    "sim.n_steps": 12,
    "sim.depth": 8,
    "sim.n_scenarios": 500,
    "sim.max_nodes": None,
    "train.learning_rate": 0.1,
    "train.batch_size": 32,
    "train.max_epochs": 1000,
    "train.tol": 1e-6,
    "train.patience": 25,
    "train.seed": 0,
    "train.l2": 1e-6,
    "train.holdout_fraction": 0.1,
    "modes.eta_source": "as_printed",
    "modes.drift_mode": "none",
    "modes.input_activation": "identity",
    "master_seed": 20240501,
    "valid_seed": None,
    "output_dir": "bk2f_out",
    "threads": 1,
}

_INT_KEYS = {"sim.branch_factor", "sim.n_steps", "sim.depth", "sim.n_scenarios", "sim.max_nodes",
             "train.batch_size", "train.max_epochs", "train.patience", "train.seed",
             "master_seed", "valid_seed", "threads"}
_STR_KEYS = {"modes.eta_source", "modes.drift_mode", "modes.input_activation", "output_dir"}
_CHOICES = {
    "modes.eta_source": ETA_SOURCES,
    "modes.drift_mode": DRIFT_MODES,
    "modes.input_activation": INPUT_ACTIVATIONS,
}


def coerce(key: str, text) -> object:
    """Parse one value for ``key``; ``none`` clears optional keys."""
    if key not in DEFAULTS:
        raise ParameterError(f"unknown config key {key!r}")
    if not isinstance(text, str):
        return text
    text = text.strip()
    if text.lower() in ("none", "") and DEFAULTS[key] is None:
        return None
    try:
        if key in _INT_KEYS:
            return int(text, 0)
        if key in _STR_KEYS:
            if key in _CHOICES and text not in _CHOICES[key]:
                raise ParameterError(f"{key} must be one of {_CHOICES[key]}, got {text!r}")
            return text
        return float(text)
    except ValueError as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"bad value for {key}: {text!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = coerce(key, value)
        except ParameterError as exc:
            raise ParameterError(f"{source}:{n}: {exc}") from None
    return values


def load_config_file(path: str | Path) -> dict[str, object]:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    params_train: ModelParams
    params_valid: ModelParams
    sim: SimConfig
    valid_sim: SimConfig
    train: TrainConfig
    eta_source: str
    drift_mode: str
    input_activation: str
    output_dir: Path
    master_seed: int
    threads: int
    flat: dict

    @classmethod
    def from_values(cls, overrides: dict[str, object] | None = None) -> RunConfig:
        flat = dict(DEFAULTS)
        for key, value in (overrides or {}).items():
            flat[key] = coerce(key, value)
        seed = flat["master_seed"]
        valid_seed = flat["valid_seed"]
        if valid_seed is None:
            # independent shocks for the out-of-sample set
            valid_seed = (seed + 1) % 2**64
        sim_kwargs = dict(
            branch_factor=flat["sim.branch_factor"],
            n_steps=flat["sim.n_steps"],
            n_scenarios=flat["sim.n_scenarios"],
            branch_depth=flat["sim.depth"],
            max_nodes=flat["sim.max_nodes"],
        )
        if flat["threads"] < 1:
            raise ParameterError("threads must be >= 1")
        return cls(
            params_train=_params(flat, "params_train"),
            params_valid=_params(flat, "params_valid"),
            sim=SimConfig(master_seed=seed, **sim_kwargs),
            valid_sim=SimConfig(master_seed=valid_seed, **sim_kwargs),
            train=TrainConfig(**{k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith("train.")}),
            eta_source=flat["modes.eta_source"],
            drift_mode=flat["modes.drift_mode"],
            input_activation=flat["modes.input_activation"],
            output_dir=Path(flat["output_dir"]),
            master_seed=seed,
            threads=flat["threads"],
            flat=flat,
        )

    def echo(self) -> dict[str, str]:
        return {k: format_value(v) for k, v in sorted(self.flat.items())}


def _params(flat: dict, prefix: str) -> ModelParams:
    kw = {k: flat[f"{prefix}.{k}"] for k in _PARAM_KEYS}
    mu = kw.pop("mu")
    if not (isinstance(mu, float) and mu > 0 and math.isfinite(mu)):
        raise ParameterError(f"{prefix}.mu must be a positive rate")
    return ModelParams.from_level(mu=mu, **kw)
