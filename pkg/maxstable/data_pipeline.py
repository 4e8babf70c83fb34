"""From raw data to inference-ready observations.

Marginal standardization (empirical ranks or Hill), threshold censoring,
block maxima with occurrence partitions, Kendall's tau of the spectral
approximation, and clustering of components under a block-size cap.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple, Union

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.stats import kendalltau, rankdata

from .combinatorics import ComponentSet, Partition
from .errors import DataError, InvalidParameterError
from .likelihoods import BlockMaximaRecord, ExceedanceRecord
from .spatial import SiteSet

logger = logging.getLogger(__name__)

MIN_KENDALL_ROWS = 10


@dataclass(frozen=True, eq=False)
class HillFit:
    alpha_hat: np.ndarray
    u_hat: np.ndarray
    k: int

    def to_dict(self) -> Dict[str, object]:
        return {"alpha_hat": self.alpha_hat.tolist(), "u_hat": self.u_hat.tolist(), "k": self.k}


def _raw(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"Expected an n x m matrix with n, m >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("Data must be finite (missing values are not supported)")
    return arr


def rank_pareto_transform(data) -> np.ndarray:
    """Map each column to (n+1)/(n+1-rank); ties take their first-occurrence order."""
    arr = _raw(data)
    n = arr.shape[0]
    constant = np.all(arr == arr[0], axis=0)
    if n > 1 and np.any(constant):
        raise DataError(f"Constant columns cannot be rank-transformed: {np.nonzero(constant)[0] + 1}")
    ranks = rankdata(arr, method="ordinal", axis=0)
    return (n + 1.0) / (n + 1.0 - ranks)


def hill_transform(data, k: int) -> Tuple[np.ndarray, HillFit]:
    """Standardize Frechet-type margins with the Hill estimate over the top k order statistics.

    Output is (Y_j / u_j)^alpha_j floored at 1, with u_j the (n-k)-th order statistic.
    """
    arr = _raw(data)
    n, m = arr.shape
    if not 1 <= k < n:
        raise InvalidParameterError(f"Hill needs 1 <= k < n, got k={k}, n={n}")
    if np.any(arr <= 0):
        raise DataError("Hill transform needs strictly positive data")
    s = np.sort(arr, axis=0)
    u = s[n - k - 1]
    top = s[n - k:]
    inv_alpha = np.mean(np.log(top / u[None, :]), axis=0)
    if np.any(inv_alpha <= 0):
        raise DataError("Hill estimate undefined: the top order statistics are tied with the threshold")
    alpha = 1.0 / inv_alpha
    out = np.maximum((arr / u[None, :]) ** alpha[None, :], 1.0)
    return out, HillFit(alpha, u, k)


def censor_sample(pareto_data, k: int) -> List[ExceedanceRecord]:
    """Scale by k/n, floor at 1, keep rows with at least one exceedance."""
    arr = _raw(pareto_data)
    n, m = arr.shape
    if not 1 <= k <= n:
        raise InvalidParameterError(f"censor_sample needs 1 <= k <= n, got k={k}, n={n}")
    x = np.maximum(arr * (k / n), 1.0)
    records = []
    for row in x:
        exceed = np.nonzero(row > 1.0)[0]
        if exceed.size:
            records.append(ExceedanceRecord(row, ComponentSet(tuple(exceed), m)))
    logger.debug("censor_sample: %d of %d rows exceed the threshold n/k=%g", len(records), n, n / k)
    return records


def block_maxima_with_occurrence(pareto_data, k: int) -> List[BlockMaximaRecord]:
    """Componentwise maxima of k consecutive blocks (trailing rows dropped), scaled by k/n.

    Components whose maxima sit on the same row share an occurrence block; ties
    inside a column resolve to the earliest row.
    """
    arr = _raw(pareto_data)
    n, m = arr.shape
    if k < 1:
        raise InvalidParameterError(f"Block count must be positive, got {k}")
    size = n // k
    if size < 2:
        raise DataError(f"Block size floor(n/k) = {size} is below 2 (n={n}, k={k})")
    records = []
    for b in range(k):
        block = arr[b * size:(b + 1) * size]
        where = np.argmax(block, axis=0)
        maxima = block[where, np.arange(m)] * (k / n)
        records.append(BlockMaximaRecord(maxima, Partition.from_assignment(where.tolist())))
    return records


def kendall_tau_matrix(data, norm_threshold: float) -> np.ndarray:
    """Pairwise Kendall's tau of Y_i / ||Y_i|| over rows with ||Y_i|| = mean_j Y_ij > threshold."""
    arr = _raw(data)
    norms = arr.mean(axis=1)
    keep = norms > norm_threshold
    count = int(keep.sum())
    if count < MIN_KENDALL_ROWS:
        raise DataError(f"Only {count} rows have norm above {norm_threshold}; need at least {MIN_KENDALL_ROWS}")
    w = arr[keep] / norms[keep][:, None]
    m = w.shape[1]
    tau = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            t = kendalltau(w[:, i], w[:, j]).statistic
            tau[i, j] = tau[j, i] = 0.0 if np.isnan(t) else t
    return tau


def _pam(dissimilarity: np.ndarray, n_clusters: int, rng: np.random.Generator,
         max_iter: int = 100) -> np.ndarray:
    """Partitioning around medoids (build by greedy seeding, then swap)."""
    m = dissimilarity.shape[0]
    medoids = [int(np.argmin(dissimilarity.sum(axis=1)))]
    while len(medoids) < n_clusters:
        nearest = dissimilarity[:, medoids].min(axis=1)
        gains = np.array([np.maximum(nearest - dissimilarity[:, c], 0.0).sum() if c not in medoids else -1.0
                          for c in range(m)])
        best = np.flatnonzero(gains == gains.max())
        medoids.append(int(rng.choice(best)))
    cost = dissimilarity[:, medoids].min(axis=1).sum()
    for _ in range(max_iter):
        improved = False
        for i in range(n_clusters):
            for c in range(m):
                if c in medoids:
                    continue
                trial = medoids.copy()
                trial[i] = c
                trial_cost = dissimilarity[:, trial].min(axis=1).sum()
                if trial_cost < cost - 1e-12:
                    medoids, cost, improved = trial, trial_cost, True
        if not improved:
            break
    return np.argmin(dissimilarity[:, medoids], axis=1)


def _kmeans(points: np.ndarray, n_clusters: int, seed: int, restarts: int = 10) -> np.ndarray:
    best_labels, best_ss = None, math.inf
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        centroids, labels = kmeans2(points, n_clusters, minit="++", seed=rng)
        ss = float(np.sum((points - centroids[labels]) ** 2))
        if ss < best_ss:
            best_labels, best_ss = labels, ss
    return best_labels


def cluster_components(features: Union[SiteSet, np.ndarray], max_block: int, seed: int = 0) -> Partition:
    """Group components into blocks of size <= max_block.

    A SiteSet is clustered by K-means on its coordinates; a square matrix is read
    as a similarity (Kendall's tau) and clustered by PAM on 1 - similarity. K
    starts at ceil(m / max_block) and grows until the cap holds.
    """
    if max_block < 1:
        raise InvalidParameterError(f"max_block must be at least 1, got {max_block}")
    if isinstance(features, SiteSet):
        points = features.coordinates
        m = points.shape[0]

        def splitter(K: int) -> np.ndarray:
            return _kmeans(points, K, seed)
    else:
        sim = np.asarray(features, dtype=float)
        if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
            raise DataError(f"Similarity matrix must be square, got shape {sim.shape}")
        m = sim.shape[0]
        dis = 1.0 - 0.5 * (sim + sim.T)
        np.fill_diagonal(dis, 0.0)

        def splitter(K: int) -> np.ndarray:
            return _pam(dis, K, np.random.default_rng(seed))
    if m <= max_block:
        return Partition.single_block(m)
    if max_block == 1:
        return Partition.singletons(m)
    for K in range(math.ceil(m / max_block), m + 1):
        labels = splitter(K)
        sizes = np.bincount(labels, minlength=K)
        if sizes.max() <= max_block:
            logger.debug("cluster_components: K=%d gives block sizes %s", K, sorted(sizes[sizes > 0].tolist()))
            return Partition.from_assignment(labels.tolist())
    raise DataError(f"Could not split {m} components into blocks of at most {max_block} "
                    f"(duplicate points exceed the cap)")


def exceedance_frequencies(records: List[ExceedanceRecord]) -> Dict[ComponentSet, float]:
    """Empirical share of each exceedance set among the censored records."""
    if not records:
        return {}
    counts: Dict[ComponentSet, int] = {}
    for rec in records:
        counts[rec.exceed_set] = counts.get(rec.exceed_set, 0) + 1
    total = len(records)
    return {B: c / total for B, c in sorted(counts.items(), key=lambda kv: kv[0].mask)}
