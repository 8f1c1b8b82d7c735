"""Tests for continuous marginal flows."""

import io

import numpy as np
import pytest
from scipy.stats import ks_2samp

from copulaflow.errors import DataError, DegenerateDataError
from copulaflow.marginals import (
    MarginalFitConfig,
    MarginalFlowModel,
    fit_marginal,
    infer_bounds,
)
from copulaflow.splines import RawSplineParams

DESK_CONFIG = MarginalFitConfig(k_bins=32, epochs=400, batch_size=2048,
                                learning_rate=1e-2, patience=50, seed=1)
# sparse-tailed data needs more optimizer steps to drain the tail bins
TAIL_CONFIG = MarginalFitConfig(k_bins=32, epochs=400, batch_size=1024,
                                learning_rate=1e-2, patience=50, seed=1)


def identity_model(bounds=(0.0, 1.0), k=8):
    return MarginalFlowModel(RawSplineParams.zeros(k, bounds), "col", bounds)


@pytest.fixture(scope="module")
def normal_fit():
    rng = np.random.default_rng(0)
    data = rng.normal(size=10_000)
    model, trace = fit_marginal(data, DESK_CONFIG, "z")
    return data, model, trace


class TestFitMarginal:
    def test_uniform_logpdf_near_zero(self):
        rng = np.random.default_rng(3)
        data = rng.uniform(size=10_000)
        model, _ = fit_marginal(data, DESK_CONFIG, "u",
                                bounds=(-0.05, 1.05))
        held = rng.uniform(0.01, 0.99, size=5_000)
        assert abs(model.logpdf(held).mean()) <= 0.05

    def test_normal_samples_pass_ks(self, normal_fit):
        _, model, _ = normal_fit
        rng = np.random.default_rng(42)
        generated = model.quantile(rng.uniform(size=10_000))
        result = ks_2samp(generated, rng.normal(size=10_000))
        assert result.pvalue > 0.01

    def test_probability_integral_transform(self, normal_fit):
        data, model, _ = normal_fit
        rng = np.random.default_rng(9)
        fresh = rng.normal(size=10_000)
        result = ks_2samp(model.cdf(fresh), rng.uniform(size=10_000))
        assert result.pvalue > 0.01

    def test_fit_improves_validation(self, normal_fit):
        _, _, trace = normal_fit
        assert trace.best_val < trace.val_nll[0]

    def test_constant_column_rejected(self):
        with pytest.raises(DegenerateDataError, match="discrete"):
            fit_marginal(np.full(100, 2.5), DESK_CONFIG, "c")

    def test_nan_rejected(self):
        data = np.linspace(0, 1, 100)
        data[3] = np.nan
        with pytest.raises(DataError, match="NaN"):
            fit_marginal(data, DESK_CONFIG, "c")

    def test_too_few_samples_rejected(self):
        with pytest.raises(DataError):
            fit_marginal(np.arange(5.0), DESK_CONFIG, "c")

    def test_default_bounds_pad_range(self):
        lo, hi = infer_bounds(np.array([0.0, 10.0]))
        assert lo == pytest.approx(-0.5)
        assert hi == pytest.approx(10.5)

    def test_trace_csv_rows(self, normal_fit):
        _, _, trace = normal_fit
        buf = io.StringIO()
        trace.write_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert len(lines) == len(trace.epochs)
        first = lines[0].split(",")
        assert first[0] == "0" and len(first) == 3


class TestCdfQuantile:
    def test_identity_cdf(self):
        model = identity_model()
        assert abs(model.cdf(0.25) - 0.25) < 1e-14

    def test_cdf_nondecreasing(self, normal_fit):
        _, model, _ = normal_fit
        lo, hi = model.data_bounds
        grid = np.linspace(lo, hi, 1001)
        u = model.cdf(grid)
        assert np.all(np.diff(u) >= 0)

    def test_cdf_median_near_half(self, normal_fit):
        _, model, _ = normal_fit
        assert 0.48 <= model.cdf(0.0) <= 0.52

    def test_quantile_cdf_round_trip(self, normal_fit):
        _, model, _ = normal_fit
        rng = np.random.default_rng(5)
        lo, hi = model.data_bounds
        x = rng.uniform(lo, hi, size=1000)
        assert np.abs(model.quantile(model.cdf(x)) - x).max() <= 1e-8

    def test_cdf_quantile_round_trip(self, normal_fit):
        _, model, _ = normal_fit
        rng = np.random.default_rng(6)
        u = rng.uniform(size=1000)
        assert np.abs(model.cdf(model.quantile(u)) - u).max() <= 1e-10

    def test_quantile_boundaries(self, normal_fit):
        _, model, _ = normal_fit
        lo, hi = model.data_bounds
        assert model.quantile(0.0) == lo
        assert model.quantile(1.0) == hi

    def test_quantile_rejects_out_of_range(self):
        model = identity_model()
        with pytest.raises(ValueError):
            model.quantile(1.5)

    def test_gamma_generated_mean(self):
        rng = np.random.default_rng(11)
        data = rng.gamma(shape=2.0, scale=1.0, size=10_000)
        model, _ = fit_marginal(data, TAIL_CONFIG, "g")
        samples = model.quantile(rng.uniform(size=100_000))
        se = data.std() / np.sqrt(data.size)
        assert abs(samples.mean() - data.mean()) <= 3 * se


class TestLogpdf:
    def test_identity_logpdf_zero(self):
        model = identity_model()
        assert abs(model.logpdf(0.5)) < 1e-12

    def test_affine_logpdf_constant(self):
        model = identity_model(bounds=(-2.0, 3.0))
        for x in (-1.9, 0.0, 2.3):
            assert abs(model.logpdf(x) + np.log(5.0)) < 1e-12

    def test_quadrature_mass_one(self, normal_fit):
        _, model, _ = normal_fit
        lo, hi = model.data_bounds
        grid = np.linspace(lo, hi, 10_000)
        mass = np.trapezoid(np.exp(model.logpdf(grid)), grid)
        assert abs(mass - 1.0) <= 1e-4

    def test_saturation_counter(self):
        model = identity_model()
        assert model.saturation_count == 0
        model.logpdf(np.array([-1.0, 0.5, 2.0]))
        assert model.saturation_count == 2
        model.cdf(-3.0)
        assert model.saturation_count == 3
