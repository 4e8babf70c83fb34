import math

import numpy as np
import pytest

from maxstable.combinatorics import ComponentSet, Partition
from maxstable.data_pipeline import (
    block_maxima_with_occurrence,
    censor_sample,
    cluster_components,
    exceedance_frequencies,
    hill_transform,
    kendall_tau_matrix,
    rank_pareto_transform,
)
from maxstable.errors import DataError, InvalidParameterError
from maxstable.mu_engine import p_b_weights
from maxstable.simulators import SimConfig, sample_mda
from maxstable.spatial import SiteSet


def test_rank_transform_values():
    out = rank_pareto_transform([[1.0], [2.0], [3.0]])
    np.testing.assert_allclose(out[:, 0], [4.0 / 3.0, 2.0, 4.0])


def test_rank_transform_ties_keep_row_order():
    out = rank_pareto_transform([[5.0, 1.0], [5.0, 2.0], [1.0, 3.0]])
    np.testing.assert_allclose(out[:, 0], [4.0 / 2.0, 4.0 / 1.0, 4.0 / 3.0])


def test_rank_transform_rejects_constant_column():
    with pytest.raises(DataError):
        rank_pareto_transform([[1.0, 2.0], [1.0, 3.0]])


def test_rank_transform_rejects_missing_values():
    with pytest.raises(DataError):
        rank_pareto_transform([[1.0], [math.nan]])


def test_hill_estimate():
    out, hill = hill_transform([[1.0], [2.0], [4.0], [8.0]], k=2)
    assert hill.alpha_hat[0] == pytest.approx(1.0 / (1.5 * math.log(2.0)), rel=1e-12)
    assert hill.alpha_hat[0] == pytest.approx(0.9618, abs=1e-4)
    assert hill.u_hat[0] == 2.0
    assert out[0, 0] == 1.0
    assert out[3, 0] == pytest.approx(4.0 ** hill.alpha_hat[0])
    assert hill.to_dict()["k"] == 2


def test_hill_validation():
    with pytest.raises(InvalidParameterError):
        hill_transform([[1.0], [2.0]], k=2)
    with pytest.raises(DataError):
        hill_transform([[1.0], [-2.0], [3.0]], k=1)
    with pytest.raises(DataError):
        hill_transform([[2.0], [2.0], [2.0]], k=1)


def test_censor_sample_scales_and_floors():
    data = np.ones((10, 3))
    data[4] = [5.0, 30.0, 12.0]
    records = censor_sample(data, 1)
    assert len(records) == 1
    np.testing.assert_allclose(records[0].x, [1.0, 3.0, 1.2])
    assert records[0].exceed_set == ComponentSet((1, 2), 3)


def test_censor_sample_validation():
    with pytest.raises(InvalidParameterError):
        censor_sample(np.ones((5, 2)), 0)
    with pytest.raises(InvalidParameterError):
        censor_sample(np.ones((5, 2)), 6)


def test_block_maxima_with_occurrence():
    data = np.array([
        [1.0, 9.0],
        [5.0, 2.0],
        [2.0, 1.0],
        [7.0, 3.0],
        [1.0, 1.0],
        [2.0, 8.0],
    ])
    records = block_maxima_with_occurrence(data, 2)
    assert len(records) == 2
    np.testing.assert_allclose(records[0].z, [5.0 / 3.0, 9.0 / 3.0])
    assert records[0].occurrence == Partition.singletons(2)
    np.testing.assert_allclose(records[1].z, [7.0 / 3.0, 8.0 / 3.0])


def test_block_maxima_shared_occurrence_and_trailing_rows():
    data = np.array([[3.0, 4.0], [1.0, 1.0], [2.0, 2.0], [9.0, 9.0], [1.0, 1.0]])
    records = block_maxima_with_occurrence(data, 2)
    assert records[0].occurrence == Partition.single_block(2)
    np.testing.assert_allclose(records[1].z, [3.6, 3.6])


def test_block_maxima_validation():
    with pytest.raises(InvalidParameterError):
        block_maxima_with_occurrence(np.ones((4, 2)), 0)
    with pytest.raises(DataError):
        block_maxima_with_occurrence(np.ones((5, 2)), 3)


def test_kendall_tau_of_antithetic_angles():
    w = np.linspace(0.1, 0.9, 12)
    r = np.linspace(50.0, 80.0, 12)[::-1]
    data = np.column_stack([r * w, r * (1.0 - w), r])
    tau = kendall_tau_matrix(data, norm_threshold=10.0)
    assert tau.shape == (3, 3)
    np.testing.assert_allclose(np.diag(tau), 1.0)
    assert tau[0, 1] == pytest.approx(-1.0)
    np.testing.assert_allclose(tau, tau.T)


def test_kendall_tau_needs_enough_large_rows():
    data = np.vstack([np.full((5, 2), 100.0) * np.arange(1, 6)[:, None], np.ones((20, 2))])
    with pytest.raises(DataError):
        kendall_tau_matrix(data, norm_threshold=10.0)


def test_cluster_sites_by_location():
    coords = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]])
    part = cluster_components(SiteSet(coords), max_block=3, seed=1)
    assert part == Partition.from_assignment([0, 0, 0, 1, 1, 1])


def test_cluster_similarity_by_pam():
    sim = np.full((5, 5), 0.05)
    sim[:3, :3] = 0.8
    sim[3:, 3:] = 0.7
    np.fill_diagonal(sim, 1.0)
    part = cluster_components(sim, max_block=3)
    assert part == Partition.from_assignment([0, 0, 0, 1, 1])
    assert part.max_block_size() <= 3


def test_cluster_trivial_caps():
    sim = np.eye(4)
    assert cluster_components(sim, max_block=4) == Partition.single_block(4)
    assert cluster_components(sim, max_block=1) == Partition.singletons(4)
    with pytest.raises(InvalidParameterError):
        cluster_components(sim, max_block=0)
    with pytest.raises(DataError):
        cluster_components(np.ones((2, 3)), max_block=1)


def test_cluster_identical_components_exceed_cap():
    with pytest.raises(DataError):
        cluster_components(np.ones((4, 4)), max_block=2)


def test_exceedance_frequencies():
    data = np.ones((10, 2))
    data[0] = [20.0, 1.0]
    data[1] = [30.0, 1.0]
    data[2] = [15.0, 40.0]
    freqs = exceedance_frequencies(censor_sample(data, 1))
    assert freqs == {ComponentSet((0,), 2): pytest.approx(2 / 3), ComponentSet((0, 1), 2): pytest.approx(1 / 3)}
    assert exceedance_frequencies([]) == {}


@pytest.mark.slow
def test_hill_recovers_unit_pareto_index():
    hits = 0
    for seed in range(20):
        data = np.random.default_rng(seed).pareto(1.0, size=(10_000, 1)) + 1.0
        _, hill = hill_transform(data, k=500)
        hits += abs(hill.alpha_hat[0] - 1.0) < 0.15
    assert hits >= 18


@pytest.mark.slow
def test_exceedance_frequencies_approach_p_b_weights(gaussian2):
    data = sample_mda(SimConfig(gaussian2, 50_000, seed=11))
    freqs = exceedance_frequencies(censor_sample(data, 500))
    weights = p_b_weights(gaussian2, np.ones(2))
    assert set(freqs) <= set(weights)
    for B, p in weights.items():
        assert freqs.get(B, 0.0) == pytest.approx(p, abs=0.06)
