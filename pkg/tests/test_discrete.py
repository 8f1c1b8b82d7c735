"""Tests for discrete marginal flows and the distributional transform."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import hypergeom, ks_2samp

from copulaflow.errors import DataError, DegenerateDataError
from copulaflow.discrete import (
    CategoryCodec,
    DiscreteFitConfig,
    DiscreteMarginalFlow,
    build_codec,
    fit_discrete,
)
from copulaflow.splines import RawSplineParams

DESK_CONFIG = DiscreteFitConfig(seed=1)


def identity_latent(n_classes, k=8):
    codec = CategoryCodec(tuple(range(n_classes)))
    raw = RawSplineParams.zeros(k, (-1.0, float(n_classes - 1)))
    return DiscreteMarginalFlow(codec, raw, "col")


@pytest.fixture(scope="module")
def hypergeom_fit():
    rng = np.random.default_rng(0)
    draws = hypergeom(20, 7, 12).rvs(size=10_000, random_state=rng)
    codec = build_codec(draws, "ordinal")
    codes = codec.encode(draws)
    model, trace = fit_discrete(codes, codec, DESK_CONFIG, "h")
    return codes, model, trace


class TestCodec:
    def test_lexicographic_order(self):
        codec = build_codec(["b", "a", "c", "a"])
        assert codec.classes == ("a", "b", "c")
        assert codec.to_code == {"a": 0, "b": 1, "c": 2}

    def test_ordinal_numeric_order(self):
        codec = build_codec([3, 1, 2, 1], kind="ordinal")
        assert codec.classes == (1, 2, 3)
        assert_allclose(codec.encode([1, 2, 3]), [0, 1, 2])

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        codec = build_codec(["red", "green", "blue"])
        labels = [codec.classes[i] for i in rng.integers(0, 3, size=1000)]
        assert codec.decode(codec.encode(labels)) == labels

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateDataError):
            build_codec(["a", "a", "a"])

    def test_unknown_label_rejected(self):
        codec = build_codec(["a", "b"])
        with pytest.raises(DataError):
            codec.encode(["a", "z"])


class TestFitDiscrete:
    def test_balanced_bernoulli(self):
        rng = np.random.default_rng(8)
        codes = rng.integers(0, 2, size=10_000)
        codec = CategoryCodec((0, 1))
        model, _ = fit_discrete(codes, codec, DESK_CONFIG, "b")
        assert model.pmf(0) == pytest.approx(0.5, abs=0.02)

    def test_skewed_bernoulli(self):
        rng = np.random.default_rng(12)
        codes = (rng.uniform(size=10_000) < 0.7).astype(np.int64)
        codec = CategoryCodec((0, 1))
        model, _ = fit_discrete(codes, codec, DESK_CONFIG, "b")
        assert model.pmf(1) == pytest.approx(0.7, abs=0.02)

    def test_hypergeometric_total_variation(self, hypergeom_fit):
        codes, model, _ = hypergeom_fit
        empirical = np.bincount(codes, minlength=model.n_classes) / codes.size
        tv = 0.5 * np.abs(model.pmf_vector() - empirical).sum()
        assert tv <= 0.02

    def test_codes_out_of_range_rejected(self):
        codec = CategoryCodec((0, 1))
        with pytest.raises(DataError):
            fit_discrete(np.array([0, 1, 2]), codec, DESK_CONFIG, "b")


class TestSampleCode:
    def test_ceiling_rule(self):
        model = identity_latent(2)
        # identity latent on (-1, 1): u=0.35 -> x=-0.3 -> code 0;
        # u=0.7 -> x=0.4 -> code 1
        assert model.sample_code(0.35) == 0
        assert model.sample_code(0.7) == 1

    def test_boundary_lands_in_lower_cell(self):
        model = identity_latent(3)
        # latent x exactly k belongs to cell (k-1, k]
        for k in range(3):
            u_at_k = model.cell_edges[k + 1]
            x, _ = __import__("copulaflow.splines", fromlist=["rq_forward"]) \
                .rq_forward(model.spline, u_at_k)
            assert x == pytest.approx(k, abs=1e-12)
            assert model.sample_code(u_at_k) == k

    def test_frequencies_match_cell_masses(self, hypergeom_fit):
        _, model, _ = hypergeom_fit
        rng = np.random.default_rng(10)
        codes = model.sample_code(rng.uniform(size=100_000))
        freq = np.bincount(codes, minlength=model.n_classes) / codes.size
        assert np.abs(freq - model.pmf_vector()).max() <= 0.01

    def test_rejects_out_of_range(self):
        model = identity_latent(2)
        with pytest.raises(ValueError):
            model.sample_code(1.2)


class TestDistTransform:
    def test_exact_bernoulli_midcell(self):
        model = identity_latent(2)
        # exact Bernoulli(0.5) cells: u = 0 + 0.6 * 0.5
        assert model.dist_transform(0, 0.6) == pytest.approx(0.3, abs=1e-12)

    def test_top_cell_upper_edge(self):
        model = identity_latent(5)
        assert model.dist_transform(4, 1.0) == 1.0

    def test_uniformity_on_hypergeometric(self, hypergeom_fit):
        codes, model, _ = hypergeom_fit
        rng = np.random.default_rng(5)
        u = model.dist_transform(codes, rng.uniform(size=codes.size))
        result = ks_2samp(u, rng.uniform(size=10_000))
        assert result.pvalue > 0.01

    def test_round_trip_identity(self, hypergeom_fit):
        _, model, _ = hypergeom_fit
        all_k = np.arange(model.n_classes)
        for v in (0.01, 0.2, 0.5, 0.8, 0.99):
            back = model.sample_code(
                model.dist_transform(all_k, np.full(all_k.size, v)))
            assert np.array_equal(back, all_k)

    def test_quantization_consistency(self, hypergeom_fit):
        # grid sweep: sample_code(u) == k exactly when u is in cell k
        _, model, _ = hypergeom_fit
        edges = model.cell_edges
        grid = np.linspace(1e-9, 1.0, 2001)
        codes = model.sample_code(grid)
        expected = np.searchsorted(edges[1:-1], grid, side="left")
        assert np.array_equal(codes, expected)


class TestPmf:
    def test_identity_two_class(self):
        model = identity_latent(2)
        assert model.pmf(0) == pytest.approx(0.5, abs=1e-12)
        assert model.pmf(1) == pytest.approx(0.5, abs=1e-12)

    def test_sums_to_one_random_models(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            n = int(rng.integers(2, 12))
            k = int(rng.integers(4, 24))
            raw = RawSplineParams(rng.normal(size=k), rng.normal(size=k),
                                  rng.normal(size=k + 1), (-1.0, float(n - 1)))
            model = DiscreteMarginalFlow(CategoryCodec(tuple(range(n))), raw, "c")
            assert abs(model.pmf_vector().sum() - 1.0) <= 1e-10

    def test_strictly_positive(self, hypergeom_fit):
        _, model, _ = hypergeom_fit
        assert np.all(model.pmf_vector() > 0)

    def test_out_of_range_rejected(self):
        model = identity_latent(3)
        with pytest.raises(ValueError):
            model.pmf(3)
