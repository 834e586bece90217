"""Branching Euler simulation of the two-factor Black-Karasinski model.

Every node at level ``k`` spawns ``branch_factor`` children at level ``k+1``,
each child drawing its own ``(z_m, z_r)`` pair.  Only one level is resident at
a time; after it is built its short rates are condensed to 200 empirical
quantiles.  Past ``branch_depth`` each node keeps a single child, so the
population stops growing but every path keeps evolving.

Randomness is keyed by ``(master_seed, scenario_id, step)`` on a Philox
stream, and normals come from the inverse CDF of the raw uniforms.  The draw
for child ``j`` of node ``i`` is therefore a pure function of
``(master_seed, scenario_id, step, i, j)`` and datasets do not depend on the
worker count or scheduling.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import FormatError, MemoryGuardError, ParameterError, ScenarioError
from .model import ModelParams

log = logging.getLogger(__name__)

N_QUANTILES = 200
GRID = np.arange(1, N_QUANTILES + 1) / N_QUANTILES
COLUMNS = [f"q{5 * k:04d}" for k in range(1, N_QUANTILES + 1)]
DATASET_FORMAT_VERSION = 1
# peak working set per node at the widest level (state, children, draws)
BYTES_PER_NODE = 80


@dataclass(frozen=True)
class NodeState:
    r: float
    m: float


@dataclass(frozen=True)
class SimConfig:
    branch_factor: int = 4
    n_steps: int = 12
    n_scenarios: int = 500
    master_seed: int = 20240501
    branch_depth: int | None = 8
    max_nodes: int | None = None

    def __post_init__(self) -> None:
        if self.branch_factor < 1:
            raise ParameterError("branch_factor must be >= 1")
        if self.n_steps < 2:
            raise ParameterError("n_steps must be >= 2")
        if self.n_scenarios < 1:
            raise ParameterError("n_scenarios must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ParameterError("master_seed must be an unsigned 64-bit integer")
        if self.branch_depth is not None and self.branch_depth < 0:
            raise ParameterError("branch_depth must be >= 0")

    @property
    def depth(self) -> int:
        if self.branch_depth is None:
            return self.n_steps
        return min(self.branch_depth, self.n_steps)

    def level_size(self, k: int) -> int:
        return self.branch_factor ** min(k, self.depth)

    @property
    def peak_nodes(self) -> int:
        return self.level_size(self.n_steps)

    @property
    def memory_estimate(self) -> int:
        return self.peak_nodes * BYTES_PER_NODE

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("max_nodes")
        return d


def euler_step(node: NodeState, z_m: float, z_r: float, params: ModelParams) -> NodeState:
    """Advance one node by ``params.dt``; the rate drift uses the pre-step ``ln m``."""
    dt = params.dt
    sqdt = math.sqrt(dt)
    lm, lr = math.log(node.m), math.log(node.r)
    lm_next = lm + params.alpha2 * (params.mu_prime - lm) * dt + params.sigma2 * z_m * sqdt
    lr_next = lr + params.alpha1 * (lm - lr) * dt + params.sigma1 * z_r * sqdt
    return NodeState(r=math.exp(lr_next), m=math.exp(lm_next))


def quantile_ranks(n: int) -> np.ndarray:
    """Zero-based order-statistic indices ``ceil(k n / 200) - 1`` for k = 1..200."""
    k = np.arange(1, N_QUANTILES + 1, dtype=np.int64)
    return (k * n + N_QUANTILES - 1) // N_QUANTILES - 1


def condense_percentiles(values) -> np.ndarray:
    """200 inverse-empirical-CDF quantiles at 0.5%, 1.0%, ..., 100%."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ParameterError("cannot condense an empty sample")
    idx = quantile_ranks(values.size)
    kth = np.unique(idx)
    return np.partition(values, kth)[idx]


def step_generator(master_seed: int, scenario_id: int, step: int) -> np.random.Generator:
    seq = np.random.SeedSequence(master_seed, spawn_key=(scenario_id, step))
    return np.random.Generator(np.random.Philox(seq))


def standard_normals(gen: np.random.Generator, size: int) -> np.ndarray:
    """Inverse-CDF normals from 53-bit uniforms on the open interval (0, 1)."""
    raw = gen.bit_generator.random_raw(size)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def _correlate(z_m: np.ndarray, z_2: np.ndarray, rho: float) -> np.ndarray:
    if rho == 0.0:
        return z_2
    return rho * z_m + math.sqrt(1.0 - rho * rho) * z_2


def iter_levels(params: ModelParams, cfg: SimConfig, scenario_id: int):
    """Yield ``(k, ln_r, ln_m)`` for each level k = 1..n_steps.

    The yielded arrays are replaced, not mutated, on the next iteration.
    """
    a1, a2 = params.alpha1, params.alpha2
    dt = params.dt
    sqdt = math.sqrt(dt)
    mu = params.mu_prime
    s1, s2 = params.sigma1, params.sigma2
    lr = np.array([math.log(params.r0)])
    lm = np.array([math.log(params.m0)])
    for k in range(1, cfg.n_steps + 1):
        branch = cfg.branch_factor if k <= cfg.depth else 1
        size = lr.size * branch
        if cfg.max_nodes is not None and size > cfg.max_nodes:
            raise MemoryGuardError(
                f"level {k} needs {size} nodes (~{size * BYTES_PER_NODE / 2**20:.0f} MiB), "
                f"cap is {cfg.max_nodes}"
            )
        try:
            if branch > 1:
                lr = np.repeat(lr, branch)
                lm = np.repeat(lm, branch)
            # child j of node i reads pair i*branch + j: (z_m, z_r) interleaved
            z = standard_normals(step_generator(cfg.master_seed, scenario_id, k), 2 * size)
            z_m = z[0::2]
            z_r = _correlate(z_m, z[1::2], params.rho_prime)
            lm_next = lm + a2 * (mu - lm) * dt + s2 * z_m * sqdt
            lr = lr + a1 * (lm - lr) * dt + s1 * z_r * sqdt
            lm = lm_next
        except MemoryError as exc:
            raise MemoryGuardError(
                f"out of memory building level {k} ({size} nodes, "
                f"~{size * BYTES_PER_NODE / 2**20:.0f} MiB)"
            ) from exc
        yield k, lr, lm


def simulate_scenario(params: ModelParams, cfg: SimConfig, scenario_id: int) -> np.ndarray:
    """Quantile vectors of ``r`` for t = 1..n_steps, shape ``(n_steps, 200)``."""
    out = np.empty((cfg.n_steps, N_QUANTILES))
    for k, lr, _ in iter_levels(params, cfg, scenario_id):
        # exp is monotone, so condensing ln r and exponentiating 200 points is exact
        out[k - 1] = np.exp(condense_percentiles(lr))
    return out


@dataclass
class PercentileDataset:
    """Quantiles of ``r`` with shape ``(n_scenarios, n_steps + 1, 200)``.

    Index 1 on the time axis is the timestep; row ``t=0`` holds ``r0``
    everywhere.
    """

    quantiles: np.ndarray
    params: ModelParams
    config: SimConfig

    @property
    def n_scenarios(self) -> int:
        return self.quantiles.shape[0]

    @property
    def n_steps(self) -> int:
        return self.quantiles.shape[1] - 1

    @property
    def grid(self) -> np.ndarray:
        return GRID

    @property
    def fingerprint(self) -> str:
        return dataset_fingerprint(self.params, self.config)

    def at(self, t: int) -> np.ndarray:
        return self.quantiles[:, t, :]


def dataset_fingerprint(params: ModelParams, cfg: SimConfig) -> str:
    blob = json.dumps({"params": params.fingerprint(), "sim": cfg.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _scenario_job(job):
    params, cfg, scenario_id = job
    try:
        return simulate_scenario(params, cfg, scenario_id)
    except MemoryGuardError:
        raise
    except Exception as exc:
        raise ScenarioError(scenario_id, exc) from exc


def generate_dataset(params: ModelParams, cfg: SimConfig, workers: int = 1) -> PercentileDataset:
    """Run every scenario; output is independent of ``workers``."""
    q = np.empty((cfg.n_scenarios, cfg.n_steps + 1, N_QUANTILES))
    q[:, 0, :] = params.r0
    jobs = ((params, cfg, i) for i in range(cfg.n_scenarios))
    log.info(
        "generating %d scenarios, %d steps, peak level %d nodes",
        cfg.n_scenarios, cfg.n_steps, cfg.peak_nodes,
    )
    if workers <= 1:
        for i, job in enumerate(jobs):
            q[i, 1:] = _scenario_job(job)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, cfg.n_scenarios // (4 * workers))
            for i, res in enumerate(pool.map(_scenario_job, jobs, chunksize=chunk)):
                q[i, 1:] = res
    return PercentileDataset(quantiles=q, params=params, config=cfg)


def meta_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".meta")


def write_dataset(ds: PercentileDataset, path: str | Path) -> Path:
    """CSV (one row per scenario and timestep) plus a JSON ``.meta`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["scenario,t," + ",".join(COLUMNS)]
    for s in range(ds.n_scenarios):
        for t in range(1, ds.n_steps + 1):
            vals = ",".join(f"{v:.17g}" for v in ds.quantiles[s, t])
            lines.append(f"{s},{t},{vals}")
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "format": "bk2f-percentiles",
        "format_version": DATASET_FORMAT_VERSION,
        "params": ds.params.to_dict(),
        "sim": ds.config.to_dict(),
        "master_seed": ds.config.master_seed,
        "fingerprint": ds.fingerprint,
    }
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path: str | Path) -> PercentileDataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    try:
        meta = json.loads(meta_path(path).read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: missing metadata sidecar {meta_path(path)}") from exc
    if meta.get("format") != "bk2f-percentiles" or meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported dataset format {meta.get('format')!r} v{meta.get('format_version')}")
    params = ModelParams(**meta["params"])
    cfg = SimConfig(**meta["sim"])
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    expected = cfg.n_scenarios * cfg.n_steps
    if data.shape != (expected, N_QUANTILES + 2):
        raise FormatError(f"{path}: expected {expected} rows of {N_QUANTILES + 2} columns, got {data.shape}")
    q = np.empty((cfg.n_scenarios, cfg.n_steps + 1, N_QUANTILES))
    q[:, 0, :] = params.r0
    s = data[:, 0].astype(int)
    t = data[:, 1].astype(int)
    q[s, t] = data[:, 2:]
    ds = PercentileDataset(quantiles=q, params=params, config=cfg)
    if ds.fingerprint != meta["fingerprint"]:
        raise FormatError(f"{path}: fingerprint in metadata does not match its parameters")
    return ds
