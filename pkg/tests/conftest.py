import numpy as np
import pytest

from bk2f.mlp import build_pairs, fit, scaler_recipe
from bk2f.model import TRAINING_PARAMS, VALIDATION_PARAMS, derive_g2
from bk2f.sim import SimConfig, generate_dataset

DESK = SimConfig(branch_factor=4, n_steps=12, n_scenarios=500, branch_depth=8, master_seed=20240501)

_acceptance_lines: list[str] = []


@pytest.fixture(scope="session")
def record_criterion():
    def record(number, name, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        _acceptance_lines.append(f"[{status}] criterion {number}: {name}" + (f" ({detail})" if detail else ""))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_train():
    return generate_dataset(TRAINING_PARAMS, DESK)


@pytest.fixture(scope="session")
def desk_valid():
    cfg = SimConfig(**{**DESK.to_dict(), "master_seed": DESK.master_seed + 1})
    return generate_dataset(VALIDATION_PARAMS, cfg)


@pytest.fixture(scope="session")
def desk_fit(desk_train):
    from bk2f.config import RunConfig

    cfg = RunConfig.from_values()
    g2 = derive_g2(TRAINING_PARAMS)
    return fit(build_pairs(desk_train, g2), cfg.train, scaler=scaler_recipe(),
               train_params=TRAINING_PARAMS.fingerprint())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
