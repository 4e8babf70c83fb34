import math

import numpy as np
import pytest
from scipy.stats import invweibull, kstest

from maxstable.errors import InvalidParameterError
from maxstable.mu_engine import v_star
from maxstable.simulators import CHUNK_ROWS, SimConfig, sample_max_stable, sample_mda
from maxstable.spectral import GaussianSpectral, build_logistic


@pytest.mark.parametrize("overrides", [
    {"n": 0},
    {"truncation": 0},
    {"noise_mean": -1.0},
    {"noise_mean": 0.0},
    {"scaling": "uniform"},
])
def test_sim_config_validation(overrides, logistic3):
    with pytest.raises(InvalidParameterError):
        SimConfig(**{"model": logistic3, "n": 5, **overrides})


def test_sim_config_to_dict(logistic3):
    d = SimConfig(logistic3, 7, seed=3, noise_mean=2.0).to_dict()
    assert d["n"] == 7
    assert d["seed"] == 3
    assert d["noise_mean"] == 2.0
    assert d["model"] == logistic3.to_config()


def test_sample_mda_is_deterministic(logistic3):
    a = sample_mda(SimConfig(logistic3, 50, seed=8))
    b = sample_mda(SimConfig(logistic3, 50, seed=8))
    c = sample_mda(SimConfig(logistic3, 50, seed=9))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (50, 3)


def test_sample_mda_does_not_depend_on_threads(logistic3):
    n = 3 * CHUNK_ROWS + 17
    one = sample_mda(SimConfig(logistic3, n, seed=1), threads=1)
    three = sample_mda(SimConfig(logistic3, n, seed=1), threads=3)
    np.testing.assert_array_equal(one, three)


def test_sample_max_stable_does_not_depend_on_threads(gaussian2):
    cfg = SimConfig(gaussian2, CHUNK_ROWS + 5, seed=2, truncation=200)
    np.testing.assert_array_equal(sample_max_stable(cfg, threads=1), sample_max_stable(cfg, threads=2))


def test_noise_is_added_on_top_of_the_same_draws(logistic3):
    plain = sample_mda(SimConfig(logistic3, 2000, seed=4))
    noisy = sample_mda(SimConfig(logistic3, 2000, seed=4, noise_mean=10.0))
    diff = noisy - plain
    assert np.all(diff > 0)
    assert diff.mean() == pytest.approx(10.0, abs=1.0)


def test_mda_margins_have_unit_pareto_tail():
    data = sample_mda(SimConfig(build_logistic(1, 2.0), 20_000, seed=6))
    assert np.mean(data[:, 0] > 50.0) == pytest.approx(1.0 / 50.0, rel=0.15)


def test_uniform_ratio_scaling_is_at_least_one():
    model = build_logistic(1, 2.0)
    data = sample_mda(SimConfig(model, 1000, seed=6, scaling="uniform_ratio"))
    assert np.all(np.isfinite(data))
    assert np.all(data > 0)


def test_comonotone_gaussian_gives_equal_columns():
    model = GaussianSpectral.from_correlation(np.ones((2, 2)))
    data = sample_max_stable(SimConfig(model, 100, seed=3, truncation=200))
    np.testing.assert_allclose(data[:, 0], data[:, 1], rtol=1e-3)


def test_truncation_bound_shrinks_with_more_points(caplog, logistic3):
    with caplog.at_level("WARNING", logger="maxstable"):
        _, small = sample_max_stable(SimConfig(logistic3, 200, seed=5, truncation=20), return_bound=True)
    assert "Truncation N=20" in caplog.text
    _, large = sample_max_stable(SimConfig(logistic3, 200, seed=5, truncation=1000), return_bound=True)
    assert 0.0 <= large < small <= 1.0


@pytest.mark.slow
def test_max_stable_margins_are_unit_frechet():
    data = sample_max_stable(SimConfig(build_logistic(2, 2.0), 2000, seed=10, truncation=1000))
    for j in range(2):
        assert kstest(data[:, j], invweibull(1.0).cdf).pvalue > 1e-3


@pytest.mark.slow
def test_max_stable_cdf_matches_exponent_measure(gaussian2):
    n = 20_000
    data = sample_max_stable(SimConfig(gaussian2, n, seed=21, truncation=1000))
    empirical = float(np.mean(np.all(data <= 1.0, axis=1)))
    expected = math.exp(-v_star(gaussian2, np.ones(2)))
    assert expected == pytest.approx(math.exp(-1.5), rel=1e-4)
    se = math.sqrt(expected * (1.0 - expected) / n)
    assert abs(empirical - expected) <= 3.0 * se
