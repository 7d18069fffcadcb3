import numpy as np
import pytest

from broadcastreg.model import BroadcastModel
from broadcastreg.splines import SplineBasis
from broadcastreg.synth import (
    CaseSpec,
    GroundTruth,
    case_truth,
    default_masks,
    f_bump,
    f_wave,
    generate_case,
    ise,
    load_truth,
    save_truth,
)
from broadcastreg.tensor_ops import CPFactors


class TestFunctions:
    def test_bump_formula(self):
        x = np.array([0.0, 0.3, 1.0])
        np.testing.assert_allclose(
            f_bump(x), x + 0.6 * np.sin(2 * np.pi * (x - 0.5) ** 2), atol=1e-15
        )

    def test_wave_formula(self):
        x = np.array([0.0, 0.3, 1.0])
        np.testing.assert_allclose(f_wave(x), x + 0.3 * np.cos(2 * np.pi * x), atol=1e-15)


class TestDefaultMasks:
    @pytest.mark.parametrize(
        "case,expected_ranks", [(1, (2,)), (2, (4,)), (3, (2,)), (4, (1, 1))]
    )
    def test_exact_matrix_ranks(self, case, expected_ranks):
        masks = default_masks(case, (64, 64))
        assert tuple(np.linalg.matrix_rank(m) for m in masks) == expected_ranks

    def test_case4_regions_disjoint(self):
        a, b = default_masks(4, (64, 64))
        assert float((a * b).sum()) == 0.0

    def test_masks_are_binary(self):
        for case in (1, 2, 3, 4):
            for mask in default_masks(case, (64, 64)):
                assert set(np.unique(mask)) <= {0.0, 1.0}
                assert mask.sum() > 0

    def test_scales_with_dims(self):
        masks = default_masks(2, (32, 32))
        assert masks[0].shape == (32, 32)
        assert np.linalg.matrix_rank(masks[0]) == 4


class TestGenerateCase:
    def test_zero_noise_reproduces_truth(self):
        spec = CaseSpec(case=2, dims=(16, 16), n=50, noise_ratio=0.0, seed=3)
        data, truth = generate_case(spec)
        np.testing.assert_array_equal(data.responses, truth.evaluate(data.covariates))

    def test_all_zero_mask_gives_intercept_plus_noise(self):
        mask = np.zeros((8, 8))
        spec = CaseSpec(case=2, dims=(8, 8), n=2000, noise_ratio=0.1, seed=4, masks=(mask,))
        data, truth = generate_case(spec)
        # zero signal spread means zero noise scale
        np.testing.assert_array_equal(data.responses, np.ones(2000))
        assert truth.evaluate(data.covariates[0]) == 1.0

    def test_noise_ratio_matches_requested(self):
        spec = CaseSpec(case=3, dims=(16, 16), n=1000, noise_ratio=0.10, seed=5)
        data, truth = generate_case(spec)
        signal = truth.evaluate(data.covariates)
        ratio = np.std(data.responses - signal) / np.std(signal)
        assert ratio == pytest.approx(0.10, abs=0.01)

    def test_deterministic_per_seed(self):
        spec = CaseSpec(case=1, dims=(8, 8), n=20, seed=11)
        a, _ = generate_case(spec)
        b, _ = generate_case(spec)
        np.testing.assert_array_equal(a.covariates, b.covariates)
        np.testing.assert_array_equal(a.responses, b.responses)

    def test_entries_uniform_in_unit_interval(self):
        data, _ = generate_case(CaseSpec(case=1, dims=(8, 8), n=200, seed=0))
        assert data.covariates.min() >= 0.0 and data.covariates.max() <= 1.0
        assert data.covariates.mean() == pytest.approx(0.5, abs=0.01)

    def test_mask_validation(self):
        with pytest.raises(ValueError):
            CaseSpec(case=4, dims=(8, 8), masks=(np.zeros((8, 8)),))
        with pytest.raises(ValueError):
            CaseSpec(case=1, dims=(8, 8), masks=(np.full((8, 8), 0.5),))

    def test_truth_round_trips_as_json(self, tmp_path):
        truth = case_truth(CaseSpec(case=4, dims=(8, 8)))
        path = tmp_path / "truth.json"
        save_truth(path, truth)
        loaded = load_truth(path)
        assert loaded.intercept == truth.intercept
        for (ma, fa), (mb, fb) in zip(loaded.components, truth.components):
            assert fa == fb
            np.testing.assert_array_equal(ma, mb)


class TestIse:
    def linear_truth_and_model(self, dims=(4, 4)):
        # linear case truth is exactly representable: coefficient on the
        # linear basis function with entry weights s * mask
        mask = np.zeros(dims)
        mask[1:3, 0:2] = 1.0
        truth = GroundTruth(intercept=1.0, components=((mask, "linear"),))
        basis = SplineBasis(zeta=4)
        u, sv, vt = np.linalg.svd(mask * np.prod(dims))
        rank = int((sv > 1e-12).sum())
        factors = (u[:, :rank] * sv[:rank], vt[:rank, :].T)
        coeffs = np.zeros((basis.size - 1, rank))
        coeffs[0, :] = 1.0
        model = BroadcastModel(1.0, CPFactors(factors, coeffs=coeffs), basis)
        return truth, model

    def test_structurally_equal_gives_zero(self):
        truth, model = self.linear_truth_and_model()
        x = np.random.default_rng(0).uniform(size=(5, 4, 4))
        np.testing.assert_allclose(model.predict(x), truth.evaluate(x), atol=1e-10)
        result = ise(model, truth, mc_points=2000, seed=1)
        assert result.estimate == pytest.approx(0.0, abs=1e-18)

    def test_constant_offset_gives_square(self):
        truth, model = self.linear_truth_and_model()
        shifted = BroadcastModel(model.intercept + 0.5, model.factors, model.basis)
        result = ise(shifted, truth, mc_points=2000, seed=2)
        assert result.estimate == pytest.approx(0.25, rel=1e-10)
        assert result.stderr == pytest.approx(0.0, abs=1e-12)

    def test_variance_halves_when_points_double(self):
        truth, model = self.linear_truth_and_model()
        noisy = BroadcastModel(
            model.intercept,
            CPFactors(model.factors.factors, coeffs=model.factors.coeffs * 0.9),
            model.basis,
        )
        small = [
            ise(noisy, truth, mc_points=1000, seed=s).estimate for s in range(50)
        ]
        large = [
            ise(noisy, truth, mc_points=2000, seed=1000 + s).estimate for s in range(50)
        ]
        ratio = np.var(small) / np.var(large)
        assert 1.2 < ratio < 3.5

    def test_stderr_consistent_with_replication_spread(self):
        truth, model = self.linear_truth_and_model()
        noisy = BroadcastModel(
            model.intercept,
            CPFactors(model.factors.factors, coeffs=model.factors.coeffs * 0.8),
            model.basis,
        )
        results = [ise(noisy, truth, mc_points=1500, seed=s) for s in range(40)]
        spread = np.std([r.estimate for r in results])
        typical_stderr = np.median([r.stderr for r in results])
        assert typical_stderr == pytest.approx(spread, rel=0.5)

    def test_minimum_points_enforced(self):
        truth, model = self.linear_truth_and_model()
        with pytest.raises(ValueError):
            ise(model, truth, mc_points=10)
