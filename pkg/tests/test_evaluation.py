import json
import math

import numpy as np
import pytest

from bk2f.errors import ParameterError, ZeroStochasticError
from bk2f.evaluation import (
    EvalReport,
    cross_section,
    evaluate,
    format_table,
    mom_predictor,
    prediction_errors,
    rmse_by_timestep,
    run_experiment,
    stochastic_error,
    write_report,
)
from bk2f.mlp import MlpModel, TrainConfig
from bk2f.model import TRAINING_PARAMS, VALIDATION_PARAMS, derive_g2, phi, var_S
from bk2f.mom import destandardize, standardize
from bk2f.sim import GRID, PercentileDataset, SimConfig, generate_dataset

P = TRAINING_PARAMS
G2 = derive_g2(P)
SMALL = SimConfig(branch_factor=4, n_steps=12, n_scenarios=30, branch_depth=4, master_seed=7)


def from_standardized(z, params=P, n_steps=12):
    """Dataset whose standardized quantiles are ``z[s]`` at every t >= 1."""
    z = np.atleast_2d(z)
    g2 = derive_g2(params)
    q = np.empty((z.shape[0], n_steps + 1, 200))
    q[:, 0] = params.r0
    for t in range(1, n_steps + 1):
        time = t * params.dt
        q[:, t] = np.exp(phi(time, params) + math.sqrt(var_S(time, g2, params)) * z)
    cfg = SimConfig(branch_factor=1, n_steps=n_steps, n_scenarios=z.shape[0])
    return PercentileDataset(quantiles=q, params=params, config=cfg)


def oracle(ds):
    """Predicts the realized next step exactly."""
    return lambda prev, t: ds.at(t + 1)


@pytest.fixture(scope="module")
def small():
    return generate_dataset(P, SMALL)


class TestRmse:
    def test_perfect_predictor(self, small):
        assert all(v == 0.0 for v in rmse_by_timestep(oracle(small), small).values())

    def test_rows_cover_targets(self, small):
        assert sorted(rmse_by_timestep(mom_predictor(P), small)) == list(range(2, 13))

    def test_constant_standardized_data_is_exact_for_mom(self, rng):
        z = np.sort(rng.normal(size=(5, 200)), axis=1)
        ds = from_standardized(z)
        assert max(rmse_by_timestep(mom_predictor(P), ds).values()) < 1e-12

    def test_permutation_invariant(self, small, rng):
        perm = rng.permutation(small.n_scenarios)
        shuffled = PercentileDataset(small.quantiles[perm], small.params, small.config)
        a = rmse_by_timestep(mom_predictor(P), small)
        b = rmse_by_timestep(mom_predictor(P), shuffled)
        for t in a:
            assert b[t] == pytest.approx(a[t], rel=1e-12)

    def test_one_step_ahead(self, small):
        # the predictor sees the realized previous step, never its own output
        seen = []

        def spy(prev, t):
            seen.append((t, prev.copy()))
            return small.at(t + 1)

        rmse_by_timestep(spy, small)
        for t, prev in seen:
            assert np.array_equal(prev, small.at(t))

    def test_errors_are_standardized(self, small):
        err = prediction_errors(mom_predictor(P), small, 5)
        pred = mom_predictor(P)(small.at(4), 4)
        manual = standardize(pred, 5, P, G2).values - standardize(small.at(5), 5, P, G2).values
        assert np.array_equal(err, manual)

    def test_rejects_empty(self):
        empty = PercentileDataset(np.zeros((0, 13, 200)), P, SMALL)
        with pytest.raises(ParameterError):
            rmse_by_timestep(mom_predictor(P), empty)

    @pytest.mark.parametrize("t", [0, 1, 13])
    def test_target_range(self, small, t):
        with pytest.raises(ParameterError):
            prediction_errors(mom_predictor(P), small, t)


class TestStochasticError:
    def test_duplicates_give_zero(self, small):
        dup = PercentileDataset(np.repeat(small.quantiles[:1], 3, axis=0), P, small.config)
        assert np.all(stochastic_error(dup).values[1:] == 0.0)

    def test_two_point_sample(self, rng):
        z = np.sort(rng.normal(size=200))
        se = stochastic_error(from_standardized(np.stack([z, -z])))
        for t in (1, 6, 12):
            assert np.allclose(se.at(t), math.sqrt(2) * np.abs(z), rtol=1e-12, atol=1e-12)

    def test_positive_on_simulated_data(self, small):
        assert np.all(stochastic_error(small).values[1:] > 0)

    def test_single_scenario_rejected(self, small):
        one = PercentileDataset(small.quantiles[:1], P, small.config)
        with pytest.raises(ParameterError):
            stochastic_error(one)


class TestCrossSection:
    def test_perfect_predictor(self, small):
        assert np.all(cross_section(oracle(small), small, 6) == 0.0)

    @pytest.mark.parametrize("c", [0.25, -1.5])
    def test_bias_is_linear(self, small, c):
        def biased(prev, t):
            z = standardize(small.at(t + 1), t + 1, P, G2).values
            return destandardize(z + c, t + 1, P, G2)

        se = stochastic_error(small)
        for t in (3, 9):
            assert np.allclose(cross_section(biased, small, t, stderr=se), c / se.at(t), rtol=1e-9)

    def test_zero_stderr_located(self, small):
        q = small.quantiles.copy()
        q[:, 6, 17] = q[0, 6, 17]
        ds = PercentileDataset(q, P, small.config)
        with pytest.raises(ZeroStochasticError) as info:
            cross_section(mom_predictor(P), ds, 6)
        assert info.value.t == 6 and info.value.percentile_index == 17


class TestExperiment:
    def test_same_data_gives_identical_columns(self):
        cfg = SimConfig(branch_factor=4, n_steps=6, n_scenarios=20, branch_depth=3, master_seed=11)
        report = run_experiment(P, P, cfg, TrainConfig(max_epochs=5), valid_seed=cfg.master_seed)
        assert report.column("nn_in") == report.column("nn_oos")
        assert report.column("mom_in") == report.column("mom_oos")
        assert report.dataset_fingerprints["train"] == report.dataset_fingerprints["valid"]

    def test_zero_volatility(self):
        flat = P.replace(sigma1=0.0, sigma2=0.0)
        cfg = SimConfig(branch_factor=2, n_steps=12, n_scenarios=10, branch_depth=3, master_seed=1)
        report = run_experiment(flat, flat, cfg, TrainConfig(max_epochs=50))
        assert all(v == 0.0 for v in report.column("mom_in").values())
        assert all(v == 0.0 for v in report.column("mom_oos").values())
        assert all(v < 1e-12 for v in report.column("nn_in").values())
        # a point-mass law has no stochastic error to normalize by
        assert report.cross_sections == {}

    def test_validation_seed_is_independent(self):
        cfg = SimConfig(branch_factor=4, n_steps=4, n_scenarios=10, branch_depth=3, master_seed=5)
        report = run_experiment(P, P, cfg, TrainConfig(max_epochs=2))
        assert report.column("mom_in") != report.column("mom_oos")

    @pytest.mark.slow
    def test_mom_rmse_stable_across_seeds(self):
        table = []
        for seed in range(5):
            cfg = SimConfig(branch_factor=4, n_steps=12, n_scenarios=500, branch_depth=8, master_seed=1000 + seed)
            table.append(list(rmse_by_timestep(mom_predictor(P), generate_dataset(P, cfg)).values()))
        table = np.array(table)
        cv = table.std(axis=0, ddof=1) / table.mean(axis=0)
        assert np.all(cv <= 0.2), cv


class TestReportFiles:
    @pytest.fixture(scope="class")
    @staticmethod
    def report():
        train = generate_dataset(P, SMALL)
        valid = generate_dataset(VALIDATION_PARAMS, SimConfig(**{**SMALL.to_dict(), "master_seed": 8}))
        return evaluate(MlpModel.zeros(), train, valid)

    def test_rmse_csv(self, report, tmp_path):
        out = write_report(report, tmp_path / "r")
        lines = (out / "rmse.csv").read_text().splitlines()
        assert lines[0] == "t,nn_in,nn_oos,mom_in,mom_oos"
        assert [int(l.split(",")[0]) for l in lines[1:]] == list(range(2, 13))
        row = [float(v) for v in lines[1].split(",")]
        assert row[1:] == list(report.rmse_table[0][1:])

    def test_cross_section_csv(self, report, tmp_path):
        out = write_report(report, tmp_path / "r")
        assert sorted(p.name for p in out.glob("cross_section_t*.csv")) == [
            "cross_section_t12.csv", "cross_section_t3.csv", "cross_section_t6.csv", "cross_section_t9.csv"]
        lines = (out / "cross_section_t6.csv").read_text().splitlines()
        assert lines[0] == "percentile,nn_rel_err,mom_rel_err"
        assert len(lines) == 201
        assert lines[1].startswith("0.005,") and lines[-1].startswith("1.000,")
        nn, mom = report.cross_sections[6]
        assert float(lines[100].split(",")[2]) == mom[99]

    def test_metadata(self, report, tmp_path):
        meta = json.loads((write_report(report, tmp_path / "r") / "report.json").read_text())
        assert "standardized" in meta["units"]
        assert meta["cross_section_times"] == [3, 6, 9, 12]

    def test_table(self, report):
        text = format_table(report).splitlines()
        assert "MoM oos" in text[0] and len(text) == 2 + 11

    def test_column(self):
        rep = EvalReport(rmse_table=[(2, 1.0, 2.0, 3.0, 4.0)])
        assert rep.column("mom_oos") == {2: 4.0}
        assert GRID.size == 200
