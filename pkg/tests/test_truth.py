import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from umlearn.errors import ConfigError, ModelSupportError
from umlearn.truth import (
    TABLE_I,
    TABLE_III,
    GaussianSpec,
    MixtureSpec,
    MultinomialSpec,
    kl_gaussian,
    kl_monte_carlo,
    kl_multinomial,
    moment_match_gaussian,
    sample,
    sample_components,
    spec_from_json,
    spec_to_json,
)


def test_sample_zero_draws_is_empty():
    rng = np.random.default_rng(0)
    assert sample(TABLE_I["Q1"], rng, 0).shape == (0, 2)
    assert sample(TABLE_III["Q1"], rng, 0).shape == (0, 2)
    assert sample(MultinomialSpec([0.5, 0.5]), rng, 0).shape == (0,)


def test_gaussian_sample_mean_within_clt_bound():
    n = 100_000
    x = sample(TABLE_I["Q1"], np.random.default_rng(1), n)
    assert np.all(np.abs(x.mean(axis=0)) < 3.0 / np.sqrt(n))


def test_mixture_component_frequencies():
    n = 100_000
    _, comp = sample_components(TABLE_III["Q1"], np.random.default_rng(2), n)
    freq = np.bincount(comp, minlength=4) / n
    sigma = np.sqrt(0.25 * 0.75 / n)
    np.testing.assert_array_less(np.abs(freq - 0.25), 3 * sigma)


def test_multinomial_sample_frequencies():
    pi = np.array([0.1, 0.2, 0.7])
    n = 50_000
    k = sample(MultinomialSpec(pi), np.random.default_rng(3), n)
    freq = np.bincount(k, minlength=3) / n
    np.testing.assert_array_less(np.abs(freq - pi), 4 * np.sqrt(pi * (1 - pi) / n))


def test_sampler_is_deterministic_per_seed():
    a = sample(TABLE_III["Q2"], np.random.default_rng(11), 1000)
    b = sample(TABLE_III["Q2"], np.random.default_rng(11), 1000)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("name, var", [("Q1", 2.37), ("Q2", 2.37), ("Q3", 2.5)])
def test_moment_match_table_iii(name, var):
    fit = moment_match_gaussian(TABLE_III[name])
    np.testing.assert_allclose(fit.mean, 0.0, atol=1e-12)
    np.testing.assert_allclose(fit.cov, var * np.eye(2), atol=1e-12)


def test_moment_match_matches_sample_moments():
    mix = MixtureSpec([0.2, 0.8], [[0.0, 1.0], [2.0, -1.0]], [np.eye(2), [[2.0, 0.3], [0.3, 0.5]]])
    x = sample(mix, np.random.default_rng(5), 400_000)
    fit = moment_match_gaussian(mix)
    np.testing.assert_allclose(x.mean(axis=0), fit.mean, atol=0.01)
    np.testing.assert_allclose(np.cov(x.T), fit.cov, atol=0.02)


def test_kl_gaussian_table_i_values():
    # 0.5 * (2/1.1 - 2 + 2 ln 1.1) and 0.5 * (2/1.5 - 2 + 2 ln 1.5), evaluated by hand
    assert kl_gaussian(TABLE_I["Q1"], TABLE_I["Q2"]) == pytest.approx(0.0044010889, abs=1e-9)
    assert kl_gaussian(TABLE_I["Q1"], TABLE_I["Q3"]) == pytest.approx(0.0721317748, abs=1e-9)


def test_kl_gaussian_self_is_exactly_zero():
    p = GaussianSpec([0.3, -1.0], [[2.0, 0.4], [0.4, 1.0]])
    assert kl_gaussian(p, p) == 0.0


def test_kl_gaussian_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        kl_gaussian(TABLE_I["Q1"], GaussianSpec([0.0], [[1.0]]))


@st.composite
def gaussians(draw, d=2):
    mean = np.array(draw(st.lists(st.floats(-3, 3), min_size=d, max_size=d)))
    a = np.array(draw(st.lists(st.floats(-1, 1), min_size=d * d, max_size=d * d))).reshape(d, d)
    return GaussianSpec(mean, a @ a.T + 0.2 * np.eye(d))


@settings(max_examples=60, deadline=None)
@given(gaussians(), gaussians())
def test_kl_gaussian_nonnegative(p, q):
    kl = kl_gaussian(p, q)
    assert kl >= 0.0
    if not (np.allclose(p.mean, q.mean) and np.allclose(p.cov, q.cov)):
        assert kl > 0.0


def test_kl_monte_carlo_self_is_zero():
    p = TABLE_I["Q2"]
    est, se = kl_monte_carlo(p, p.logpdf, 10_000, np.random.default_rng(0))
    assert abs(est) <= 3 * se + 1e-15


def test_kl_monte_carlo_matches_closed_form():
    p, q = TABLE_I["Q1"], TABLE_I["Q3"]
    est, se = kl_monte_carlo(p, q.logpdf, 1_000_000, np.random.default_rng(6))
    assert abs(est - kl_gaussian(p, q)) < 3 * se


def test_kl_mixture_to_its_fit_is_positive():
    mix = TABLE_III["Q1"]
    est, se = kl_monte_carlo(mix, moment_match_gaussian(mix).logpdf, 200_000, np.random.default_rng(7))
    assert est > 5 * se


def test_kl_monte_carlo_flags_support_violation():
    p = MultinomialSpec([0.5, 0.5])
    q = MultinomialSpec([1.0, 0.0])
    with pytest.raises(ModelSupportError):
        kl_monte_carlo(p, q.logpdf, 100, np.random.default_rng(0))


@pytest.mark.parametrize("which", ["mean", "cov"])
@pytest.mark.parametrize("name", ["Q1", "Q2"])
def test_moment_match_is_locally_kl_optimal(name, which):
    mix = TABLE_III[name]
    fit = moment_match_gaussian(mix)
    n = 400_000
    rng = np.random.default_rng(8)
    x = sample(mix, rng, n)
    base = mix.logpdf(x) - fit.logpdf(x)
    for sign in (-1.0, 1.0):
        if which == "mean":
            other = GaussianSpec(fit.mean + sign * 0.01 * np.sqrt(np.diag(fit.cov)), fit.cov)
        else:
            other = GaussianSpec(fit.mean, fit.cov * (1.0 + sign * 0.01))
        # paired difference on the same draws keeps the standard error small
        diff = (mix.logpdf(x) - other.logpdf(x)) - base
        assert diff.mean() > -3 * diff.std(ddof=1) / np.sqrt(n)


def test_kl_multinomial():
    p, q = MultinomialSpec([0.5, 0.5]), MultinomialSpec([0.25, 0.75])
    assert kl_multinomial(p, q) == pytest.approx(0.5 * np.log(2) + 0.5 * np.log(2 / 3))
    assert kl_multinomial(p, MultinomialSpec([1.0, 0.0])) == np.inf


def test_spec_json_round_trip():
    for spec in (TABLE_I["Q2"], TABLE_III["Q3"], MultinomialSpec([0.2, 0.8])):
        back = spec_from_json(spec_to_json(spec))
        assert spec_to_json(back) == spec_to_json(spec)


def test_mixture_json_shared_cov_and_default_weights():
    spec = spec_from_json({"type": "mixture", "means": [[0, 0], [1, 1]], "cov": [[1, 0], [0, 1]]})
    np.testing.assert_array_equal(spec.weights, [0.5, 0.5])
    assert spec.covs.shape == (2, 2, 2)


@pytest.mark.parametrize(
    "obj",
    [
        {"type": "gaussian", "mean": [0, 0]},
        {"type": "gaussian", "mean": [0], "cov": [[-1.0]]},
        {"type": "mixture", "weights": [0.7, 0.7], "means": [[0], [1]], "cov": [[1.0]]},
        {"type": "multinomial", "pi": [0.6, 0.6]},
        {"type": "poisson"},
    ],
)
def test_spec_from_json_rejects_bad_input(obj):
    with pytest.raises(ConfigError):
        spec_from_json(obj)
