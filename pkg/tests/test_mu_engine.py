import math

import numpy as np
import pytest

from maxstable.combinatorics import ComponentSet, enumerate_nonempty_subsets
from maxstable.errors import InvalidParameterError, ModelMismatchError, NumericalError
from maxstable.mu_engine import (
    MuStrategy,
    SharedMcSample,
    StrategyKind,
    default_strategy,
    grad_log_mu,
    grad_mu,
    grad_v_star,
    integrate_log,
    integrate_log_fixed,
    log_mu,
    log_mu_table,
    log_mu_with_panels,
    mu,
    p_b_weights,
    v_b_star,
    v_star,
    v_star_monte_carlo,
)
from maxstable.spectral import (
    ArchimedeanClusterSpec,
    ClusteredArchimedeanSpectral,
    CopulaSpec,
    GaussianSpectral,
    LogNormalSpectral,
    MarginSpec,
    build_logistic,
)


def logistic_v(z, alpha):
    return float(np.sum(np.asarray(z) ** -alpha) ** (1.0 / alpha))


def logistic_mu(B, z, alpha):
    z = np.asarray(z, dtype=float)
    k = len(B)
    s = float(np.sum(z ** -alpha))
    coef = math.prod(alpha * i - 1.0 for i in range(1, k))
    return coef * float(np.prod(z[B.indices] ** (-alpha - 1.0))) * s ** (1.0 / alpha - k)


def cs(indices, m):
    return ComponentSet(tuple(indices), m)


# integrate_log

def test_integrate_log_polynomial():
    res = integrate_log(lambda u: np.log(3.0 * u ** 2 + 1e-300))
    assert res.value == pytest.approx(1.0, rel=1e-10)
    assert res.residual <= 1e-8


def test_integrate_log_fixed_reuses_panels():
    res = integrate_log(lambda u: -u)
    fixed = integrate_log_fixed(lambda u: -u, res.panels)
    assert math.exp(fixed) == pytest.approx(1.0 - math.exp(-1.0), rel=1e-12)


def test_integrate_log_zero_integrand():
    res = integrate_log(lambda u: np.full_like(u, -np.inf))
    assert res.log_value == -np.inf


def test_integrate_log_panel_cap_raises_with_estimate():
    def spike(u):
        return -((u - 0.3) / 1e-4) ** 2

    with pytest.raises(NumericalError) as err:
        integrate_log(spike, rel_tol=1e-14, max_panels=8)
    assert err.value.last_estimate is not None
    assert err.value.residual > 1e-14


# closed forms

@pytest.mark.parametrize("model", [
    GaussianSpectral.from_correlation([[1.0]]),
    LogNormalSpectral.from_covariance([[0.7]]),
    build_logistic(1, 2.5),
])
def test_single_component_mu_is_inverse_square(model):
    B = cs([0], 1)
    for z in (0.5, 1.0, 3.0):
        assert mu(model, B, [z]) == pytest.approx(z ** -2, rel=1e-6)


def test_gaussian_single_site_analytic_and_quadrature():
    model = GaussianSpectral.from_correlation([[1.0]])
    B = cs([0], 1)
    for kind in (StrategyKind.QUADRATURE, StrategyKind.ANALYTIC_GAUSSIAN):
        assert mu(model, B, [2.0], MuStrategy(kind)) == pytest.approx(0.25, rel=1e-6)


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
def test_gaussian_bivariate_v_star(rho):
    model = GaussianSpectral.from_correlation([[1.0, rho], [rho, 1.0]])
    assert v_star(model, [1.0, 1.0]) == pytest.approx(1.0 + math.sqrt((1.0 - rho) / 2.0), rel=1e-4)


def test_comonotone_gaussian_singleton_mu_is_half():
    model = GaussianSpectral.from_correlation(np.ones((2, 2)))
    assert mu(model, cs([0], 2), [1.0, 1.0]) == pytest.approx(0.5, abs=1e-4)


def test_logistic_v_star_matches_closed_form(logistic3):
    for z in ([1.0, 1.0, 1.0], [0.5, 2.0, 1.3]):
        assert v_star(logistic3, z) == pytest.approx(logistic_v(z, 2.0), rel=1e-6)


def test_logistic_mu_matches_closed_form(logistic3):
    z = [0.8, 1.7, 1.2]
    for B in enumerate_nonempty_subsets(3):
        assert mu(logistic3, B, z) == pytest.approx(logistic_mu(B, z, 2.0), rel=1e-6)


def test_homogeneity(matern3, logistic3):
    z = np.array([0.7, 1.4, 2.1])
    for model in (matern3, logistic3):
        for B in (cs([0], 3), cs([0, 2], 3), cs([0, 1, 2], 3)):
            expected = log_mu(model, B, z) - (len(B) + 1) * math.log(2.0)
            assert log_mu(model, B, 2.0 * z) == pytest.approx(expected, rel=1e-8, abs=1e-10)


# strategies

def test_default_strategies(gaussian2, logistic3):
    assert default_strategy(gaussian2).kind == StrategyKind.QUADRATURE
    assert default_strategy(logistic3).kind == StrategyKind.ARCHIMEDEAN_QUADRATURE
    lognormal = LogNormalSpectral.from_covariance([[1.0, 0.3], [0.3, 1.0]])
    assert default_strategy(lognormal).kind == StrategyKind.ANALYTIC_LOGNORMAL


def test_strategy_mismatch_raises(gaussian2, logistic3):
    with pytest.raises(ModelMismatchError):
        log_mu(gaussian2, cs([0], 2), [1.0, 1.0], MuStrategy(StrategyKind.ANALYTIC_LOGNORMAL))
    with pytest.raises(ModelMismatchError):
        log_mu(logistic3, cs([0], 3), [1.0, 1.0, 1.0], MuStrategy(StrategyKind.ANALYTIC_GAUSSIAN))


def test_monte_carlo_strategy_needs_sample():
    with pytest.raises(InvalidParameterError):
        MuStrategy(StrategyKind.MONTE_CARLO)
    with pytest.raises(InvalidParameterError):
        SharedMcSample.create(0, 1)


def test_invalid_z_rejected(gaussian2):
    with pytest.raises(InvalidParameterError):
        log_mu(gaussian2, cs([0], 2), [1.0, 0.0])
    with pytest.raises(InvalidParameterError):
        log_mu(gaussian2, cs([0], 2), [1.0, 1.0, 1.0])


def test_analytic_gaussian_agrees_with_quadrature_bivariate(gaussian2):
    z = [0.9, 1.6]
    for B in enumerate_nonempty_subsets(2):
        quad = mu(gaussian2, B, z, MuStrategy(StrategyKind.QUADRATURE))
        analytic = mu(gaussian2, B, z, MuStrategy(StrategyKind.ANALYTIC_GAUSSIAN))
        assert analytic == pytest.approx(quad, rel=1e-4)


def test_analytic_gaussian_agrees_with_quadrature_trivariate(matern3):
    z = [1.0, 0.6, 1.5]
    for B in enumerate_nonempty_subsets(3):
        quad = mu(matern3, B, z, MuStrategy(StrategyKind.QUADRATURE))
        analytic = mu(matern3, B, z, MuStrategy(StrategyKind.ANALYTIC_GAUSSIAN))
        assert analytic == pytest.approx(quad, rel=1e-3)


def test_analytic_lognormal_agrees_with_quadrature():
    model = LogNormalSpectral.from_covariance([[1.0, 0.4], [0.4, 0.8]])
    z = [1.2, 0.7]
    for B in enumerate_nonempty_subsets(2):
        quad = mu(model, B, z, MuStrategy(StrategyKind.QUADRATURE))
        analytic = mu(model, B, z, MuStrategy(StrategyKind.ANALYTIC_LOGNORMAL))
        assert analytic == pytest.approx(quad, rel=1e-4)


@pytest.mark.slow
def test_analytic_lognormal_agrees_with_quadrature_trivariate():
    model = LogNormalSpectral.from_covariance([[1.0, 0.4, 0.2], [0.4, 0.8, 0.3], [0.2, 0.3, 1.1]])
    z = [1.2, 0.7, 1.0]
    for B in enumerate_nonempty_subsets(3):
        quad = mu(model, B, z, MuStrategy(StrategyKind.QUADRATURE))
        analytic = mu(model, B, z, MuStrategy(StrategyKind.ANALYTIC_LOGNORMAL))
        assert analytic == pytest.approx(quad, rel=1e-3)


def test_archimedean_quadrature_matches_generic_quadrature(clustered4):
    z = [1.0, 1.3, 0.8, 1.1]
    for B in (cs([0], 4), cs([0, 1], 4), cs([1, 2], 4), cs([0, 1, 2, 3], 4)):
        a = log_mu(clustered4, B, z, MuStrategy(StrategyKind.ARCHIMEDEAN_QUADRATURE))
        q = log_mu(clustered4, B, z, MuStrategy(StrategyKind.QUADRATURE))
        assert a == pytest.approx(q, abs=1e-10)


def test_monte_carlo_mu_is_unbiased():
    model = build_logistic(2, 2.0)
    z = [1.0, 1.5]
    B = cs([0, 1], 2)
    exact = logistic_mu(B, z, 2.0)
    estimates = np.array([mu(model, B, z, MuStrategy.monte_carlo(SharedMcSample.create(10_000, seed)))
                          for seed in range(20)])
    se = estimates.std(ddof=1) / math.sqrt(estimates.size)
    assert abs(estimates.mean() - exact) <= 3 * se + 1e-3 * exact


def test_monte_carlo_mu_is_deterministic_per_sample():
    model = build_logistic(2, 2.0)
    sample = SharedMcSample.create(5_000, 7)
    a = log_mu(model, cs([0], 2), [1.0, 2.0], MuStrategy.monte_carlo(sample))
    b = log_mu(model, cs([0], 2), [1.0, 2.0], MuStrategy.monte_carlo(sample))
    assert a == b


# V*, V_B*, p_B

@pytest.mark.slow
@pytest.mark.parametrize("which", ["logistic", "gaussian", "lognormal"])
def test_v_star_euler_identity_against_direct_expectation(which, matern3):
    models = {
        "logistic": build_logistic(3, 2.0),
        "gaussian": matern3,
        "lognormal": LogNormalSpectral.from_covariance([[1.0, 0.5, 0.2], [0.5, 1.0, 0.4], [0.2, 0.4, 1.0]]),
    }
    model = models[which]
    z = [0.9, 1.2, 1.0]
    mean, se = v_star_monte_carlo(model, z, 1_000_000, seed=3)
    assert abs(v_star(model, z) - mean) <= 3 * se + 1e-4


def test_v_star_monte_carlo_needs_two_draws(logistic3):
    with pytest.raises(InvalidParameterError):
        v_star_monte_carlo(logistic3, [1.0, 1.0, 1.0], 1, seed=0)


def test_v_b_star_sums_to_v_star(logistic3):
    z = np.ones(3)
    total = math.fsum(v_b_star(logistic3, B, z) for B in enumerate_nonempty_subsets(3))
    assert total == pytest.approx(logistic_v(z, 2.0), rel=1e-4)


def test_p_b_weights_sum_to_one(clustered4):
    weights = p_b_weights(clustered4, np.ones(4))
    assert len(weights) == 15
    assert math.fsum(weights.values()) == pytest.approx(1.0, abs=1e-12)
    assert all(w >= 0 for w in weights.values())


def test_p_b_weights_comonotone_mass_on_full_set():
    model = GaussianSpectral.from_correlation(np.ones((2, 2)))
    weights = p_b_weights(model, [1.0, 1.0])
    assert weights[cs([0, 1], 2)] > 0.99


# derivatives

def _frozen_v_star(model, z, panels):
    m = model.dim
    return math.fsum(z[l] * math.exp(log_mu_with_panels(model, cs([l], m), z, panels=panels[l])[0])
                     for l in range(m))


def test_mu_is_negative_partial_of_v_star(gaussian2):
    z = np.array([1.0, 1.3])
    h = 1e-3
    panels = [log_mu_with_panels(gaussian2, cs([l], 2), z)[1] for l in range(2)]
    e0 = np.array([h, 0.0])
    e1 = np.array([0.0, h])

    def V(x):
        return _frozen_v_star(gaussian2, x, panels)

    d0 = (V(z + e0) - V(z - e0)) / (2 * h)
    assert -d0 == pytest.approx(mu(gaussian2, cs([0], 2), z), rel=1e-3)
    mixed = (V(z + e0 + e1) - V(z + e0 - e1) - V(z - e0 + e1) + V(z - e0 - e1)) / (4 * h * h)
    assert -mixed == pytest.approx(mu(gaussian2, cs([0, 1], 2), z), rel=1e-3)


def test_grad_log_mu_matches_five_point_stencil(matern3):
    z = np.array([1.0, 0.8, 1.4])
    B = cs([0, 1], 3)
    base = log_mu_with_panels(matern3, B, z)
    grad = grad_log_mu(matern3, B, z, base=base)
    free = matern3.theta.free_values
    h = 1e-3
    for i in range(free.size):
        def f(offset):
            shifted = free.copy()
            shifted[i] += offset
            return log_mu_with_panels(matern3.with_free_values(shifted), B, z, panels=base[1])[0]

        stencil = (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)
        assert grad[i] == pytest.approx(stencil, rel=1e-4, abs=1e-8)


def test_grad_is_zero_for_single_site_gaussian():
    from maxstable.spatial import MaternParams, SiteSet
    from maxstable.spectral import build_gaussian_spectral

    model = build_gaussian_spectral(SiteSet(np.array([[0.0, 0.0]])), MaternParams(1.0, 1.0))
    assert np.all(grad_log_mu(model, cs([0], 1), [1.0]) == 0.0)


def test_grad_ignores_parameters_of_foreign_singleton_cluster():
    m = 3
    model = ClusteredArchimedeanSpectral([
        ArchimedeanClusterSpec(cs([0, 1], m), CopulaSpec("gumbel", 1.5), MarginSpec("frechet", 2.0)),
        ArchimedeanClusterSpec(cs([2], m), CopulaSpec("gumbel", 1.8), MarginSpec("frechet", 2.5)),
    ], m)
    grad = grad_log_mu(model, cs([0, 1], m), [1.0, 1.2, 0.9])
    names = [p.name for p in model.theta.free]
    assert grad[names.index("theta_2")] == 0.0
    assert grad[names.index("theta_1")] != 0.0


def test_logistic_grad_matches_closed_form():
    alpha = 2.0
    model = build_logistic(2, alpha)
    z = np.array([1.0, 1.5])
    B = cs([0, 1], 2)
    h = 1e-5
    expected = (logistic_mu(B, z, alpha + h) - logistic_mu(B, z, alpha - h)) / (2 * h)
    assert grad_mu(model, B, z)[0] == pytest.approx(expected, rel=1e-4)
    v_expected = (logistic_v(z, alpha + h) - logistic_v(z, alpha - h)) / (2 * h)
    assert grad_v_star(model, z)[0] == pytest.approx(v_expected, rel=1e-4)


def test_fd_near_bound_warns(caplog):
    model = ClusteredArchimedeanSpectral([
        ArchimedeanClusterSpec(cs([0, 1], 2), CopulaSpec("gumbel", 1.0 + 1e-6), MarginSpec("frechet", 2.0)),
    ], 2)
    with caplog.at_level("WARNING", logger="maxstable"):
        grad = grad_log_mu(model, cs([0], 2), [1.0, 1.0])
    assert "forward difference" in caplog.text
    assert np.all(np.isfinite(grad))


def test_log_mu_table_covers_all_subsets(logistic3):
    table = log_mu_table(logistic3, [1.0, 1.0, 1.0])
    assert sorted(table) == list(range(1, 8))
    assert table[0b111][0] == pytest.approx(math.log(logistic_mu(cs([0, 1, 2], 3), [1, 1, 1], 2.0)), rel=1e-6)
