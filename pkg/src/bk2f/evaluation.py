"""One-step-ahead evaluation of quantile predictors in S-space.

A predictor is any callable ``predictor(prev, t) -> next`` taking the realized
quantiles of ``r`` at timestep ``t`` (shape ``(n, 200)``) and returning the
predicted quantiles at ``t+1``.  Errors are measured after standardizing both
prediction and realization at ``t+1``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ParameterError, ZeroStochasticError
from .mlp import MlpModel, TrainConfig, build_pairs, fit, nn_predict, scaler_recipe
from .model import ModelParams, derive_g2
from .mom import mom_predict, standardize
from .sim import GRID, PercentileDataset, SimConfig, generate_dataset

log = logging.getLogger(__name__)

Predictor = Callable[[np.ndarray, int], np.ndarray]
CROSS_SECTION_TIMES = (3, 6, 9, 12)
ERROR_UNITS = "standardized S-space: (ln q - phi(t)) / sqrt(var_S(t))"


def mom_predictor(params: ModelParams, eta_source: str = "as_printed", drift_mode: str = "none") -> Predictor:
    g2 = derive_g2(params, eta_source)
    return lambda prev, t: mom_predict(prev, t, params, g2, drift_mode)


def nn_predictor(model: MlpModel, params: ModelParams, eta_source: str = "as_printed") -> Predictor:
    g2 = derive_g2(params, eta_source)
    return lambda prev, t: nn_predict(model, prev, t, params, g2)


def _check(dataset: PercentileDataset) -> None:
    if dataset.n_scenarios == 0:
        raise ParameterError("empty dataset")
    if dataset.n_steps < 2:
        raise ParameterError("need at least two timesteps")


def standardized_realized(dataset: PercentileDataset, t: int, eta_source: str = "as_printed") -> np.ndarray:
    g2 = derive_g2(dataset.params, eta_source)
    return standardize(dataset.at(t), t, dataset.params, g2).values


def prediction_errors(predictor: Predictor, dataset: PercentileDataset, t: int,
                      eta_source: str = "as_printed") -> np.ndarray:
    """Predicted minus realized S-space quantiles at target timestep ``t``, per scenario."""
    if not 2 <= t <= dataset.n_steps:
        raise ParameterError(f"target timestep must lie in 2..{dataset.n_steps}, got {t}")
    g2 = derive_g2(dataset.params, eta_source)
    predicted = predictor(dataset.at(t - 1), t - 1)
    return (standardize(predicted, t, dataset.params, g2).values
            - standardize(dataset.at(t), t, dataset.params, g2).values)


def rmse_by_timestep(predictor: Predictor, dataset: PercentileDataset,
                     eta_source: str = "as_printed") -> dict[int, float]:
    _check(dataset)
    out = {}
    for t in range(2, dataset.n_steps + 1):
        err = prediction_errors(predictor, dataset, t, eta_source)
        out[t] = float(np.sqrt(np.mean(err * err)))
    return out


@dataclass
class StochasticError:
    """Cross-scenario sample std (ddof=1) of realized S-space quantiles; row ``t``."""

    values: np.ndarray

    def at(self, t: int) -> np.ndarray:
        return self.values[t]


def stochastic_error(dataset: PercentileDataset, eta_source: str = "as_printed") -> StochasticError:
    if dataset.n_scenarios < 2:
        raise ParameterError("stochastic error needs at least two scenarios")
    values = np.full((dataset.n_steps + 1, GRID.size), np.nan)
    for t in range(1, dataset.n_steps + 1):
        z = standardized_realized(dataset, t, eta_source)
        # shifting by one scenario keeps identical columns at exactly zero
        values[t] = np.std(z - z[0], axis=0, ddof=1)
    return StochasticError(values)


def cross_section(predictor: Predictor, dataset: PercentileDataset, t: int,
                  eta_source: str = "as_printed", stderr: StochasticError | None = None) -> np.ndarray:
    """Mean prediction error per percentile, in units of the stochastic error."""
    if stderr is None:
        stderr = stochastic_error(dataset, eta_source)
    scale = stderr.at(t)
    zero = np.flatnonzero(scale == 0)
    if zero.size:
        raise ZeroStochasticError(t, int(zero[0]))
    return prediction_errors(predictor, dataset, t, eta_source).mean(axis=0) / scale


@dataclass
class EvalReport:
    rmse_table: list[tuple[int, float, float, float, float]]
    cross_sections: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    n_scenarios_eval: int = 0
    dataset_fingerprints: dict[str, str] = field(default_factory=dict)
    units: str = ERROR_UNITS

    def column(self, name: str) -> dict[int, float]:
        i = {"nn_in": 1, "nn_oos": 2, "mom_in": 3, "mom_oos": 4}[name]
        return {row[0]: row[i] for row in self.rmse_table}


def evaluate(model: MlpModel, train_data: PercentileDataset, valid_data: PercentileDataset, *,
             eta_source: str = "as_printed", drift_mode: str = "none",
             cross_section_times=CROSS_SECTION_TIMES) -> EvalReport:
    """Score both predictors in-sample (``train_data``) and out-of-sample (``valid_data``).

    Cross-sections are taken on the in-sample data.
    """
    _check(train_data)
    _check(valid_data)
    cols = []
    for ds in (train_data, valid_data):
        cols.append(rmse_by_timestep(nn_predictor(model, ds.params, eta_source), ds, eta_source))
    for ds in (train_data, valid_data):
        cols.append(rmse_by_timestep(mom_predictor(ds.params, eta_source, drift_mode), ds, eta_source))
    times = sorted(set(cols[0]) & set(cols[1]))
    table = [(t, cols[0][t], cols[1][t], cols[2][t], cols[3][t]) for t in times]

    sections: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    if train_data.n_scenarios >= 2:
        stderr = stochastic_error(train_data, eta_source)
        nn = nn_predictor(model, train_data.params, eta_source)
        mom = mom_predictor(train_data.params, eta_source, drift_mode)
        for t in cross_section_times:
            if not 2 <= t <= train_data.n_steps:
                continue
            try:
                sections[t] = (
                    cross_section(nn, train_data, t, eta_source, stderr),
                    cross_section(mom, train_data, t, eta_source, stderr),
                )
            except ZeroStochasticError as exc:
                log.warning("skipping cross-section: %s", exc)
    return EvalReport(
        rmse_table=table,
        cross_sections=sections,
        n_scenarios_eval=train_data.n_scenarios + valid_data.n_scenarios,
        dataset_fingerprints={"train": train_data.fingerprint, "valid": valid_data.fingerprint},
    )


def run_experiment(train_params: ModelParams, valid_params: ModelParams, cfg: SimConfig,
                   train_cfg: TrainConfig = TrainConfig(), *, eta_source: str = "as_printed",
                   drift_mode: str = "none", input_activation: str = "identity",
                   valid_seed: int | None = None, workers: int = 1) -> EvalReport:
    """Generate both datasets, train on the first, evaluate on both.

    The validation data is drawn with ``valid_seed`` (default: the next seed
    after ``cfg.master_seed``), so its shocks are independent of the training
    data.
    """
    train_data = generate_dataset(train_params, cfg, workers)
    g2 = derive_g2(train_params, eta_source)
    result = fit(build_pairs(train_data, g2), train_cfg, input_activation=input_activation,
                 scaler=scaler_recipe(eta_source), train_params=train_params.fingerprint())
    if valid_seed is None:
        valid_seed = (cfg.master_seed + 1) % 2**64
    vcfg = replace(cfg, master_seed=valid_seed)
    valid_data = generate_dataset(valid_params, vcfg, workers)
    return evaluate(result.model, train_data, valid_data, eta_source=eta_source, drift_mode=drift_mode)


def write_report(report: EvalReport, out_dir: str | Path) -> Path:
    """``rmse.csv``, ``cross_section_t<k>.csv`` and ``report.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["t,nn_in,nn_oos,mom_in,mom_oos"]
    lines += [f"{t},{a:.17g},{b:.17g},{c:.17g},{d:.17g}" for t, a, b, c, d in report.rmse_table]
    (out / "rmse.csv").write_text("\n".join(lines) + "\n")
    for t, (nn, mom) in sorted(report.cross_sections.items()):
        rows = ["percentile,nn_rel_err,mom_rel_err"]
        rows += [f"{p:.3f},{a:.17g},{b:.17g}" for p, a, b in zip(GRID, nn, mom)]
        (out / f"cross_section_t{t}.csv").write_text("\n".join(rows) + "\n")
    meta = {
        "units": report.units,
        "evaluation": "one-step-ahead on realized previous-step quantiles",
        "cross_section_dataset": "train (in-sample)",
        "n_scenarios_eval": report.n_scenarios_eval,
        "dataset_fingerprints": report.dataset_fingerprints,
        "cross_section_times": sorted(report.cross_sections),
    }
    (out / "report.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def format_table(report: EvalReport) -> str:
    head = f"{'t':>3} {'NN in':>12} {'NN oos':>12} {'MoM in':>12} {'MoM oos':>12}"
    rows = [head, "-" * len(head)]
    rows += [f"{t:>3} {a:>12.5f} {b:>12.5f} {c:>12.5f} {d:>12.5f}" for t, a, b, c, d in report.rmse_table]
    return "\n".join(rows)
