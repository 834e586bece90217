"""Single-hidden-layer perceptron mapping S-space quantiles at t to t+1.

``out = W2 @ f(W1 @ g(x) + b1) + b2`` with ``f`` the logistic function and
``g`` either the identity (default) or the logistic function.  Trained with
plain mini-batch SGD on squared error.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import FingerprintMismatchError, FormatError, ParameterError, TrainingDivergedError
from .model import G2Stats, ModelParams
from .mom import destandardize, standardize

log = logging.getLogger(__name__)

INPUT_ACTIVATIONS = ("identity", "logistic")
MODEL_FORMAT_VERSION = 1
N_HIDDEN = 10


def scaler_recipe(eta_source: str = "as_printed") -> str:
    """Identifier of the per-timestep S-space standardization used around the net."""
    return f"s-space-v1:eta={eta_source}"


@dataclass
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    input_activation: str = "identity"
    scaler_recipe: str = field(default_factory=scaler_recipe)
    train_params: str = ""

    def __post_init__(self) -> None:
        if self.input_activation not in INPUT_ACTIVATIONS:
            raise ParameterError(f"input_activation must be one of {INPUT_ACTIVATIONS}")
        h, n_in = self.W1.shape
        n_out = self.W2.shape[0]
        if self.b1.shape != (h,) or self.W2.shape != (n_out, h) or self.b2.shape != (n_out,):
            raise ParameterError("inconsistent layer shapes")
        for name in ("W1", "b1", "W2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ParameterError(f"{name} has non-finite entries")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0]

    @classmethod
    def zeros(cls, n_in: int = 200, n_hidden: int = N_HIDDEN, n_out: int = 200, **kwargs) -> MlpModel:
        return cls(
            W1=np.zeros((n_hidden, n_in)),
            b1=np.zeros(n_hidden),
            W2=np.zeros((n_out, n_hidden)),
            b2=np.zeros(n_out),
            **kwargs,
        )

    @classmethod
    def glorot(cls, rng: np.random.Generator, n_in: int = 200, n_hidden: int = N_HIDDEN,
               n_out: int = 200, **kwargs) -> MlpModel:
        lim1 = math.sqrt(6.0 / (n_in + n_hidden))
        lim2 = math.sqrt(6.0 / (n_hidden + n_out))
        return cls(
            W1=rng.uniform(-lim1, lim1, size=(n_hidden, n_in)),
            b1=np.zeros(n_hidden),
            W2=rng.uniform(-lim2, lim2, size=(n_out, n_hidden)),
            b2=np.zeros(n_out),
            **kwargs,
        )


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass
class TrainingPairs:
    inputs: np.ndarray
    targets: np.ndarray
    pair_meta: np.ndarray  # (N, 2): scenario id, input timestep

    def __post_init__(self) -> None:
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        self.pair_meta = np.asarray(self.pair_meta, dtype=np.int64).reshape(-1, 2)
        n = self.inputs.shape[0]
        if self.targets.shape[0] != n or self.pair_meta.shape[0] != n:
            raise ParameterError("inputs, targets and pair_meta need equal row counts")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, rows) -> TrainingPairs:
        return TrainingPairs(self.inputs[rows], self.targets[rows], self.pair_meta[rows])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    max_epochs: int = 200
    tol: float = 1e-6
    patience: int = 10
    seed: int = 0
    l2: float = 1e-6
    holdout_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ParameterError("batch_size, max_epochs and patience must be >= 1")
        if self.l2 < 0 or self.tol < 0:
            raise ParameterError("l2 and tol must be non-negative")
        if not 0 <= self.holdout_fraction < 1:
            raise ParameterError("holdout_fraction must lie in [0, 1)")


def _input_layer(model: MlpModel, x: np.ndarray) -> np.ndarray:
    return expit(x) if model.input_activation == "logistic" else x


def _check_input(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n_in = model.dims[0]
    if x.ndim not in (1, 2) or x.shape[-1] != n_in:
        raise ParameterError(f"expected input of length {n_in}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("input has non-finite entries")
    return x


def forward(model: MlpModel, x) -> np.ndarray:
    """Network output for one input vector or a batch of rows."""
    x = _check_input(model, x)
    hidden = expit(_input_layer(model, x) @ model.W1.T + model.b1)
    return hidden @ model.W2.T + model.b2


def _weight_penalty(model: MlpModel, l2: float) -> float:
    if l2 == 0.0:
        return 0.0
    return 0.5 * l2 * (float(np.sum(model.W1 * model.W1)) + float(np.sum(model.W2 * model.W2)))


def mse(model: MlpModel, batch: TrainingPairs) -> float:
    diff = forward(model, batch.inputs) - batch.targets
    return float(np.mean(diff * diff))


def loss(model: MlpModel, batch: TrainingPairs, l2: float = 0.0) -> float:
    """Mean squared error over all entries plus ``l2/2 * (|W1|^2 + |W2|^2)``."""
    if len(batch) == 0:
        raise ParameterError("empty batch")
    return mse(model, batch) + _weight_penalty(model, l2)


def _loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray, l2: float):
    a = _input_layer(model, x)
    hidden = expit(a @ model.W1.T + model.b1)
    diff = hidden @ model.W2.T + model.b2 - y
    data_loss = float(np.mean(diff * diff))
    d_out = diff * (2.0 / diff.size)
    d_pre = (d_out @ model.W2) * hidden * (1.0 - hidden)
    grads = Gradients(
        W1=d_pre.T @ a + l2 * model.W1,
        b1=d_pre.sum(axis=0),
        W2=d_out.T @ hidden + l2 * model.W2,
        b2=d_out.sum(axis=0),
    )
    return data_loss + _weight_penalty(model, l2), grads


def backward(model: MlpModel, batch: TrainingPairs, l2: float = 0.0) -> Gradients:
    """Exact gradients of :func:`loss` with respect to every parameter."""
    if len(batch) == 0:
        raise ParameterError("empty batch")
    x = _check_input(model, batch.inputs)
    return _loss_and_grads(model, np.atleast_2d(x), batch.targets, l2)[1]


def _split_by_scenario(pairs: TrainingPairs, fraction: float, rng: np.random.Generator):
    scenarios = np.unique(pairs.pair_meta[:, 0])
    n_hold = int(round(fraction * scenarios.size))
    if scenarios.size < 2 or n_hold == 0:
        rows = np.arange(len(pairs))
        return rows, rows
    n_hold = min(n_hold, scenarios.size - 1)
    held = rng.permutation(scenarios)[:n_hold]
    mask = np.isin(pairs.pair_meta[:, 0], held)
    return np.flatnonzero(~mask), np.flatnonzero(mask)


@dataclass
class TrainResult:
    model: MlpModel
    train_loss: list[float]
    holdout_loss: list[float]
    best_epoch: int

    @property
    def final_train_loss(self) -> float:
        return self.train_loss[self.best_epoch]

    @property
    def final_holdout_loss(self) -> float:
        return self.holdout_loss[self.best_epoch]


def fit(pairs: TrainingPairs, cfg: TrainConfig = TrainConfig(), *, input_activation: str = "identity",
        scaler: str | None = None, n_hidden: int = N_HIDDEN, train_params: str = "") -> TrainResult:
    """SGD over shuffled mini-batches, keeping the weights with the best holdout loss.

    The holdout set is ``cfg.holdout_fraction`` of the *scenarios*, so no
    scenario contributes to both sides.
    """
    if len(pairs) == 0:
        raise ParameterError("no training pairs")
    rng = np.random.default_rng(cfg.seed)
    train_rows, hold_rows = _split_by_scenario(pairs, cfg.holdout_fraction, rng)
    train_set, hold_set = pairs.subset(train_rows), pairs.subset(hold_rows)
    n_in, n_out = pairs.inputs.shape[1], pairs.targets.shape[1]
    model = MlpModel.glorot(
        rng, n_in, n_hidden, n_out,
        input_activation=input_activation,
        scaler_recipe=scaler if scaler is not None else scaler_recipe(),
        train_params=train_params,
    )
    x, y = train_set.inputs, train_set.targets
    lr, bs = cfg.learning_rate, cfg.batch_size
    best, best_epoch, best_loss = copy.deepcopy(model), 0, math.inf
    train_hist: list[float] = []
    hold_hist: list[float] = []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, order.size, bs):
            rows = order[start:start + bs]
            batch_loss, g = _loss_and_grads(model, x[rows], y[rows], cfg.l2)
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"loss became {batch_loss} at epoch {epoch}, batch starting {start}; "
                    f"learning_rate={lr}, last finite epoch loss "
                    f"{train_hist[-1] if train_hist else 'n/a'}"
                )
            total += batch_loss * rows.size
            model.W1 -= lr * g.W1
            model.b1 -= lr * g.b1
            model.W2 -= lr * g.W2
            model.b2 -= lr * g.b2
        train_hist.append(total / order.size)
        hold = mse(model, hold_set)
        if not math.isfinite(hold):
            raise TrainingDivergedError(f"holdout loss became {hold} at epoch {epoch}")
        hold_hist.append(hold)
        if hold < best_loss - cfg.tol:
            best, best_epoch, best_loss = copy.deepcopy(model), epoch, hold
        elif epoch - best_epoch >= cfg.patience:
            log.info("early stop at epoch %d (best %d, holdout %.3e)", epoch, best_epoch, best_loss)
            break
    return TrainResult(best, train_hist, hold_hist, best_epoch)


def train(pairs: TrainingPairs, cfg: TrainConfig = TrainConfig(), **kwargs) -> MlpModel:
    return fit(pairs, cfg, **kwargs).model


def build_pairs(dataset, g2: G2Stats) -> TrainingPairs:
    """S-space (t, t+1) pairs for t = 1..n_steps-1, rows ordered by t then scenario."""
    n = dataset.n_scenarios
    inputs, targets, meta = [], [], []
    for t in range(1, dataset.n_steps):
        inputs.append(standardize(dataset.at(t), t, dataset.params, g2).values)
        targets.append(standardize(dataset.at(t + 1), t + 1, dataset.params, g2).values)
        meta.append(np.column_stack([np.arange(n), np.full(n, t)]))
    return TrainingPairs(np.vstack(inputs), np.vstack(targets), np.vstack(meta))


def nn_predict(model: MlpModel, prev, t: int, params: ModelParams, g2: G2Stats) -> np.ndarray:
    """Quantiles of ``r`` at ``t+1``; not forced to be monotone."""
    expected = scaler_recipe(g2.eta_source)
    if model.scaler_recipe != expected:
        raise FingerprintMismatchError(
            f"model was trained with scaler {model.scaler_recipe!r}, inputs use {expected!r}"
        )
    z = standardize(prev, t, params, g2).values
    return destandardize(forward(model, z), t + 1, params, g2)


def save_model(model: MlpModel, path: str | Path) -> Path:
    """Flat text: header lines, then one ``W1 i j v`` / ``b1 i v`` record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_in, h, n_out = model.dims
    lines = [
        "bk2f-mlp",
        f"format_version {MODEL_FORMAT_VERSION}",
        f"dims {n_in} {h} {n_out}",
        f"input_activation {model.input_activation}",
        f"scaler {model.scaler_recipe}",
        f"train_params {model.train_params or '-'}",
    ]
    for name in ("W1", "W2"):
        m = getattr(model, name)
        lines += [f"{name} {i} {j} {m[i, j]:.17g}" for i in range(m.shape[0]) for j in range(m.shape[1])]
    for name in ("b1", "b2"):
        v = getattr(model, name)
        lines += [f"{name} {i} {v[i]:.17g}" for i in range(v.size)]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_model(path: str | Path) -> MlpModel:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "bk2f-mlp":
        raise FormatError(f"{path}: not a bk2f model file")
    header: dict[str, list[str]] = {}
    records = []
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if parts[0] in ("W1", "W2", "b1", "b2"):
            records.append((ln, parts))
        else:
            header[parts[0]] = parts[1:]
    try:
        version = int(header["format_version"][0])
        n_in, h, n_out = (int(v) for v in header["dims"])
        activation = header["input_activation"][0]
        scaler = header["scaler"][0]
        train_params = header.get("train_params", ["-"])[0]
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from exc
    if version != MODEL_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported model format version {version}")
    arrays = {
        "W1": np.full((h, n_in), np.nan), "b1": np.full(h, np.nan),
        "W2": np.full((n_out, h), np.nan), "b2": np.full(n_out, np.nan),
    }
    for ln, parts in records:
        try:
            idx = tuple(int(p) for p in parts[1:-1])
            arrays[parts[0]][idx] = float(parts[-1])
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}:{ln}: bad record {' '.join(parts)!r}") from exc
    for name, arr in arrays.items():
        if np.any(np.isnan(arr)):
            raise FormatError(f"{path}: missing entries for {name}")
    return MlpModel(
        **arrays,
        input_activation=activation,
        scaler_recipe=scaler,
        train_params="" if train_params == "-" else train_params,
    )


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
