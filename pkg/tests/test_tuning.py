import numpy as np
import pytest

from broadcastreg.dataset import Dataset
from broadcastreg.model import BroadcastModel
from broadcastreg.solver import FitConfig, fit
from broadcastreg.splines import SplineBasis, default_knots
from broadcastreg.synth import CaseSpec, generate_case
from broadcastreg.tensor_ops import CPFactors
from broadcastreg.tuning import (
    CellResult,
    GridSpec,
    grid_search,
    split_dataset,
    validation_error,
    write_tuning_table,
)


def small_data(seed=0, n=80, dims=(3, 3)):
    spec = CaseSpec(case=3, dims=dims, n=n, seed=seed, noise_ratio=0.1)
    data, _ = generate_case(spec)
    return data


def constant_model(value, dims=(3, 3)):
    basis = SplineBasis(zeta=3, interior_knots=(0.5,))
    return BroadcastModel(
        value,
        CPFactors(tuple(np.zeros((p, 1)) for p in dims), coeffs=np.zeros((basis.size - 1, 1))),
        basis,
    )


class TestSplit:
    def test_partition(self):
        data = small_data()
        train, valid = split_dataset(data, 0.2, seed=3)
        assert train.n == int(np.floor(80 * 0.8))
        assert valid.n == 80 - train.n
        merged = np.concatenate([train.responses, valid.responses])
        np.testing.assert_array_equal(np.sort(merged), np.sort(data.responses))

    def test_deterministic(self):
        data = small_data()
        a_train, _ = split_dataset(data, 0.25, seed=7)
        b_train, _ = split_dataset(data, 0.25, seed=7)
        np.testing.assert_array_equal(a_train.responses, b_train.responses)
        c_train, _ = split_dataset(data, 0.25, seed=8)
        assert not np.array_equal(a_train.responses, c_train.responses)

    def test_bad_fraction(self):
        data = small_data()
        with pytest.raises(ValueError):
            split_dataset(data, 0.0, seed=0)


class TestValidationError:
    def test_perfect_predictions(self):
        data = small_data()
        class Oracle:
            def predict(self, X, clamp=False):
                return data.responses
        assert validation_error(Oracle(), data) == 0.0

    def test_constant_model(self):
        data = small_data()
        model = constant_model(2.0)
        want = float(np.mean((data.responses - 2.0) ** 2))
        assert validation_error(model, data) == pytest.approx(want, rel=1e-12)

    def test_matches_recomputation_from_exported_predictions(self, tmp_path):
        data = small_data(seed=5, n=40)
        cfg = FitConfig(rank=1, lambda1=0.5, lambda2=0.5, n_basis=5, spline_order=3, seed=0)
        result = fit(data, cfg)
        err = validation_error(result.model, data)
        path = tmp_path / "pred.csv"
        predictions = result.model.predict(data.covariates)
        path.write_text("\n".join(repr(float(v)) for v in predictions))
        loaded = np.array([float(line) for line in path.read_text().splitlines()])
        recomputed = float(np.mean((data.responses - loaded) ** 2))
        assert err == pytest.approx(recomputed, abs=1e-15)

    def test_empty_set_rejected(self):
        model = constant_model(0.0)
        with pytest.raises(Exception):
            validation_error(model, Dataset(np.zeros((0, 3, 3)), np.zeros(0)))


class TestGridSearch:
    def test_single_cell_matches_direct_fit(self):
        data = small_data(seed=1, n=60)
        grid = GridSpec(ranks=(1,), lambda1s=(0.5,), lambda2s=(0.5,), split_fraction=0.25, seed=4)
        cfg = FitConfig(n_basis=5, spline_order=3, seed=9, max_iters=60)
        best, table = grid_search(data, grid, cfg)
        assert len(table) == 1
        train, valid = split_dataset(data, 0.25, seed=4)
        basis = default_knots(train.covariates, 5, 3)
        direct = fit(
            train,
            FitConfig(rank=1, lambda1=0.5, lambda2=0.5, n_basis=5, spline_order=3, seed=9, max_iters=60),
            basis=basis,
        )
        assert best.objective_trace == direct.objective_trace
        assert table[0].validation_error == pytest.approx(
            validation_error(direct.model, valid), abs=1e-15
        )

    def test_duplicate_lambda1_deduplicated(self):
        grid = GridSpec(ranks=(1,), lambda1s=(0.5, 0.5, 0.1), lambda2s=(0.0,))
        assert grid.lambda1_path() == (0.1, 0.5)

    def test_reported_error_recomputes(self):
        data = small_data(seed=2, n=60)
        grid = GridSpec(
            ranks=(1, 2), lambda1s=(0.1, 1.0), lambda2s=(0.0, 1.0), split_fraction=0.2, seed=5
        )
        cfg = FitConfig(n_basis=5, spline_order=3, seed=1, max_iters=40)
        best, table = grid_search(data, grid, cfg)
        _, valid = split_dataset(data, 0.2, seed=5)
        best_cell = min(table, key=lambda c: (c.validation_error, c.rank, -c.lambda1, -c.lambda2))
        assert best_cell.validation_error == pytest.approx(
            validation_error(best.model, valid), abs=1e-12
        )
        assert len(table) == 2 * 2 * 2

    def test_table_round_trips_through_csv(self, tmp_path):
        table = [
            CellResult(1, 0.1, 0.5, 0.25, 12, True),
            CellResult(2, 1.0, 0.0, float("inf"), 0, False),
        ]
        path = tmp_path / "tuning.csv"
        write_tuning_table(path, table)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "R,lambda1,lambda2,validation_error,iterations,converged"
        assert lines[1].startswith("1,0.1,0.5,0.25,12,True")
        assert "inf" in lines[2]

    def test_warm_start_no_worse_than_cold_median(self):
        # paired comparison over seeds on one clean synthetic instance
        deltas = []
        for seed in range(8):
            data = small_data(seed=200 + seed, n=50)
            train, _ = split_dataset(data, 0.2, seed=seed)
            basis = default_knots(train.covariates, 5, 3)
            cfg_small = FitConfig(
                rank=1, lambda1=0.05, lambda2=0.5, n_basis=5, spline_order=3,
                seed=seed, max_iters=50,
            )
            warm_base = fit(train, cfg_small, basis=basis)
            cfg_big = FitConfig(
                rank=1, lambda1=0.5, lambda2=0.5, n_basis=5, spline_order=3,
                seed=seed, max_iters=50,
            )
            warm = fit(train, cfg_big, basis=basis, start=warm_base.model)
            cold = fit(train, cfg_big, basis=basis)
            deltas.append(cold.objective_trace[-1] - warm.objective_trace[-1])
        assert float(np.median(deltas)) >= -1e-9
