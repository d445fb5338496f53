from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from selfreq.datagen import (
    IndepGenConfig,
    Region,
    effect_size,
    fit_latent_model,
    gen_correlated,
    gen_independent,
    make_synthetic_source,
    patch_region,
)
from selfreq.null_model import ParameterError


def pearson(x, y):
    return np.corrcoef(x, y)[0, 1]


# ---- independent ----

def test_effect_size_formula():
    assert effect_size(0.0) == 0.0
    assert effect_size(0.5) == pytest.approx(2 * 0.5 / np.sqrt(0.75))
    with pytest.raises(ParameterError):
        effect_size(1.0)


def test_null_independent():
    d, truth = gen_independent(IndepGenConfig(2000, 6, 0, 0.5, rng_seed=1))
    assert truth.size == 0
    assert d.features.std() == pytest.approx(5.0, rel=0.03)
    for f in range(6):
        assert abs(pearson(d.features[:, f], d.labels)) < 0.1


def test_rho_zero_has_no_shift():
    d, truth = gen_independent(IndepGenConfig(4000, 4, 2, 0.0, rng_seed=2))
    assert truth.tolist() == [2, 3]
    for f in truth:
        assert abs(pearson(d.features[:, f], d.labels)) < 0.06


def test_relevant_correlation_large_sample():
    d, truth = gen_independent(IndepGenConfig(100_000, 5, 2, 0.5, rng_seed=3))
    for f in truth:
        assert pearson(d.features[:, f], d.labels) == pytest.approx(0.5, abs=0.01)
    y = d.labels.astype(bool)
    diff = d.features[y][:, truth].mean(0) - d.features[~y][:, truth].mean(0)
    se = 5.0 * np.sqrt(2 / 50_000)
    np.testing.assert_allclose(diff, 2 * 0.5 * 5.0 / np.sqrt(0.75), atol=4 * se)


@pytest.mark.parametrize("S", [7, 10, 101])
def test_labels_balanced(S):
    d, _ = gen_independent(IndepGenConfig(S, 3, 1, 0.3, rng_seed=S))
    assert d.labels.sum() == S // 2


def test_independent_deterministic():
    a, _ = gen_independent(IndepGenConfig(50, 5, 1, 0.3, rng_seed=9))
    b, _ = gen_independent(IndepGenConfig(50, 5, 1, 0.3, rng_seed=9))
    np.testing.assert_array_equal(a.features, b.features)


def test_independent_validation():
    with pytest.raises(ParameterError):
        IndepGenConfig(10, 3, 4)
    with pytest.raises(ParameterError):
        IndepGenConfig(10, 3, 1, rho=1.0)


# ---- latent model ----

def test_identical_columns():
    col = np.array([1.0, 2.0, 3.0])
    m = fit_latent_model(np.tile(col[:, None], (1, 4)))
    np.testing.assert_allclose(m.mean, col)
    np.testing.assert_allclose(m.factor, 0, atol=1e-12)
    np.testing.assert_allclose(m.diag_cov, 0, atol=1e-12)


def test_covariance_reproduction_small():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(3, 5))
    m = fit_latent_model(src)
    X = src - src.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(m.factor @ m.factor.T / 5, X @ X.T / 5, atol=1e-10)
    np.testing.assert_allclose(m.diag_cov, np.diag(X @ X.T / 5), atol=1e-12)
    assert m.factor.shape == (3, 5)


def test_covariance_reproduction_frobenius():
    src = make_synthetic_source(12, 2.0, 60, rng_seed=4)
    m = fit_latent_model(src)
    X = src - src.mean(axis=1, keepdims=True)
    C = X @ X.T / 60
    assert np.linalg.norm(m.covariance() - C) / np.linalg.norm(C) < 1e-8
    assert np.all(m.diag_cov >= 0)


def test_latent_rejects_rank_zero():
    with pytest.raises(ParameterError):
        fit_latent_model(np.zeros((4, 3)))
    with pytest.raises(ParameterError):
        fit_latent_model(np.ones((4, 1)))


# ---- correlated ----

@pytest.fixture(scope="module")
def grid_model():
    return fit_latent_model(make_synthetic_source(10, 1.5, 80, rng_seed=5))


def test_empty_region_matches_moments(grid_model):
    region = Region.empty(100)
    d, truth = gen_correlated(grid_model, region, 0.7, 10_000, rng_seed=1)
    assert truth.size == 0
    np.testing.assert_allclose(d.features.mean(0), grid_model.mean, atol=5 * np.sqrt(grid_model.diag_cov.max() / 10_000))
    y = d.labels.astype(bool)
    _, p = stats.ttest_ind(d.features[y], d.features[~y], axis=0)
    assert np.mean(p < 0.001) < 0.01


def test_rho_zero_ignores_region(grid_model):
    region = patch_region(10, 0.1)
    a, _ = gen_correlated(grid_model, region, 0.0, 50, rng_seed=3)
    b, _ = gen_correlated(grid_model, Region.empty(100), 0.0, 50, rng_seed=3)
    np.testing.assert_array_equal(a.features, b.features)


def test_correlated_moments(grid_model):
    region = patch_region(10, 0.05)
    d, truth = gen_correlated(grid_model, region, 0.5, 10_000, rng_seed=2)
    assert truth.tolist() == region.indices.tolist() and truth.size == 5
    y = d.labels.astype(bool)
    # within-class variance is the latent variance
    within = 0.5 * (d.features[y].var(0) + d.features[~y].var(0))
    np.testing.assert_allclose(within, grid_model.diag_cov, rtol=0.05)
    outside = np.flatnonzero(~region.mask)
    np.testing.assert_allclose(d.features[:, outside].var(0), grid_model.diag_cov[outside], rtol=0.05)
    for f in truth:
        assert pearson(d.features[:, f], d.labels) == pytest.approx(-0.5, abs=0.05)


def test_correlated_validation(grid_model):
    with pytest.raises(ParameterError):
        gen_correlated(grid_model, Region.empty(100), 1.0, 10)
    with pytest.raises(ParameterError):
        gen_correlated(grid_model, Region.empty(99), 0.5, 10)


# ---- synthetic source ----

def neighbour_corr(src, g):
    fields = src.T.reshape(-1, g, g)
    # remove per-cell mean before correlating
    mean = src.mean(axis=1).reshape(g, g)
    a = (fields[:, :, :-1] - mean[:, :-1]).ravel()
    b = (fields[:, :, 1:] - mean[:, 1:]).ravel()
    return pearson(a, b)


def test_source_smoothness_limits():
    assert abs(neighbour_corr(make_synthetic_source(16, 0.0, 40, rng_seed=1), 16)) < 0.05
    assert neighbour_corr(make_synthetic_source(16, 4.0, 40, rng_seed=1), 16) > 0.9


def test_source_deterministic():
    a = make_synthetic_source(8, 1.0, 5, rng_seed=3)
    np.testing.assert_array_equal(a, make_synthetic_source(8, 1.0, 5, rng_seed=3))
    assert a.shape == (64, 5)


def test_patch_region_size_and_contiguity():
    r = patch_region(32, 0.01)
    assert r.size == 10
    rows, cols = np.divmod(r.indices, 32)
    assert np.ptp(rows) <= 3 and np.ptp(cols) <= 3
    assert patch_region(32, 0.0).size == 0
