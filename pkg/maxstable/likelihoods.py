"""Log-likelihood objectives built on log mu, and their scores.

Five kinds are supported:

* full (l1): exp(-V*(z)) sum over partitions pi of prod_{B in pi} mu(B; z)
* partition composite (l2): sum over blocks B of a fixed clustering of |B| l1(z_B)
* pairwise (l3): sum over pairs of l1(z_{ij})
* censored exceedance: log mu(B; x) - log V*(e) for a threshold exceedance x
* maxima with occurrence: -V*(z) + sum_{B in R} log mu(B; z)
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from .combinatorics import ComponentSet, Partition, bell_number, partition_masks
from .errors import DataError, DimensionCapError, InvalidParameterError
from .mu_engine import (
    MuStrategy,
    default_strategy,
    grad_log_mu,
    grad_mu,
    grad_v_star,
    log_mu,
    log_mu_table,
    singleton_log_mus,
    v_star,
)
from .settings import get_settings
from .spectral import SpectralModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ExceedanceRecord:
    """Censored observation x >= 1 with x_j = 1 exactly outside the exceedance set."""

    x: np.ndarray
    exceed_set: ComponentSet

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        if x.size != self.exceed_set.m:
            raise DataError(f"Record has {x.size} entries but exceed_set lives in dimension {self.exceed_set.m}")
        if len(self.exceed_set) == 0:
            raise DataError("Exceedance set must be nonempty")
        inside = np.zeros(x.size, dtype=bool)
        inside[self.exceed_set.indices] = True
        if np.any(x[inside] <= 1.0) or np.any(x[~inside] != 1.0):
            raise DataError("Exceedance record must have x_j > 1 exactly on the exceedance set and 1 elsewhere")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @classmethod
    def from_vector(cls, x) -> "ExceedanceRecord":
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(x, ComponentSet(tuple(np.nonzero(x > 1.0)[0]), x.size, allow_empty=True))


@dataclass(frozen=True, eq=False)
class BlockMaximaRecord:
    """Rescaled block maxima z with the partition R of simultaneous occurrences."""

    z: np.ndarray
    occurrence: Partition

    def __post_init__(self):
        z = np.array(self.z, dtype=float).reshape(-1)
        if z.size != self.occurrence.m:
            raise DataError(f"Block maxima have {z.size} entries, occurrence partition has {self.occurrence.m}")
        if not np.all(np.isfinite(z)) or np.any(z <= 0):
            raise DataError("Block maxima must be positive and finite")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


class LikelihoodName(str, Enum):
    FULL = "full"
    PARTITION = "partition"
    PAIRWISE = "pairwise"
    CENSORED = "censored"
    OCCURRENCE = "occurrence"


@dataclass(frozen=True)
class LikelihoodKind:
    name: LikelihoodName
    clustering: Optional[Partition] = None
    weighted: bool = True

    def __post_init__(self):
        object.__setattr__(self, "name", LikelihoodName(self.name))
        if self.name == LikelihoodName.PARTITION:
            if self.clustering is None:
                raise InvalidParameterError("The partition likelihood needs a clustering")
            cap = get_settings().caps.full_likelihood
            if self.clustering.max_block_size() > cap:
                raise DimensionCapError(
                    f"Clustering block of size {self.clustering.max_block_size()} exceeds the "
                    f"full-likelihood cap {cap}")

    @classmethod
    def full(cls) -> "LikelihoodKind":
        return cls(LikelihoodName.FULL)

    @classmethod
    def partition(cls, clustering: Partition, weighted: bool = True) -> "LikelihoodKind":
        return cls(LikelihoodName.PARTITION, clustering, weighted)

    @classmethod
    def pairwise(cls) -> "LikelihoodKind":
        return cls(LikelihoodName.PAIRWISE)

    @classmethod
    def censored(cls) -> "LikelihoodKind":
        return cls(LikelihoodName.CENSORED)

    @classmethod
    def occurrence(cls) -> "LikelihoodKind":
        return cls(LikelihoodName.OCCURRENCE)


@dataclass
class LikelihoodValue:
    loglik: float
    per_observation: np.ndarray
    n_mu_evals: int = 0


Observation = Union[np.ndarray, ExceedanceRecord, BlockMaximaRecord]


def _as_z(model: SpectralModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.dim:
        raise DataError(f"Observation has {z.size} components, model has {model.dim}")
    if not np.all(np.isfinite(z)) or np.any(z <= 0):
        raise DataError("Observations must be strictly positive and finite")
    return z


def _check_full_cap(m: int) -> None:
    caps = get_settings().caps
    if m > caps.full_likelihood:
        raise DimensionCapError(
            f"Full likelihood at m={m} exceeds the cap {caps.full_likelihood} "
            f"(Bell-number growth); use the partition composite likelihood instead")
    if m >= caps.full_likelihood_warn:
        logger.warning("Full likelihood at m=%d sums %d partitions per observation", m, bell_number(m))


def _partition_logsumexp(log_mu_by_mask: Dict[int, float], m: int) -> float:
    """log sum_pi prod_{B in pi} mu(B), streamed with a running maximum."""
    running_max = -np.inf
    acc = 0.0
    for masks in partition_masks(m, cap=get_settings().caps.full_likelihood):
        term = math.fsum(log_mu_by_mask[mk] for mk in masks)
        if term == -np.inf:
            continue
        if term > running_max:
            acc = acc * math.exp(running_max - term) + 1.0
            running_max = term
        else:
            acc += math.exp(term - running_max)
    return running_max + math.log(acc) if acc > 0 else -np.inf


def loglik_full(model: SpectralModel, z, strategy: Optional[MuStrategy] = None) -> float:
    z = _as_z(model, z)
    m = model.dim
    _check_full_cap(m)
    table = {mk: v[0] for mk, v in log_mu_table(model, z, strategy).items()}
    vstar = math.fsum(z[l] * math.exp(table[1 << l]) for l in range(m))
    return -vstar + _partition_logsumexp(table, m)


def loglik_partition(model: SpectralModel, z, clustering: Partition, weighted: bool = True,
                     strategy: Optional[MuStrategy] = None) -> float:
    z = _as_z(model, z)
    if clustering.m != model.dim:
        raise InvalidParameterError(f"Clustering over {clustering.m} components, model has {model.dim}")
    terms = []
    for block in clustering:
        sub = model.restrict(block.members)
        weight = len(block) if weighted else 1
        terms.append(weight * loglik_full(sub, z[block.indices], strategy))
    return math.fsum(terms)


def loglik_pairwise(model: SpectralModel, z, strategy: Optional[MuStrategy] = None) -> float:
    z = _as_z(model, z)
    if model.dim < 2:
        raise InvalidParameterError("Pairwise likelihood needs m >= 2")
    return math.fsum(loglik_full(model.restrict(pair), z[list(pair)], strategy)
                     for pair in combinations(range(model.dim), 2))


def loglik_censored(model: SpectralModel, rec: ExceedanceRecord, strategy: Optional[MuStrategy] = None,
                    v_star_e: Optional[float] = None) -> float:
    """log mu(B; (x_B, e_{B^c})) - log V*(e)."""
    if rec.x.size != model.dim:
        raise DataError(f"Record has {rec.x.size} components, model has {model.dim}")
    if v_star_e is None:
        v_star_e = v_star(model, np.ones(model.dim), strategy)
    return log_mu(model, rec.exceed_set, rec.x, strategy) - math.log(v_star_e)


def loglik_maxima_occurrence(model: SpectralModel, rec: BlockMaximaRecord,
                             strategy: Optional[MuStrategy] = None) -> float:
    z = _as_z(model, rec.z)
    vstar = math.fsum(z * np.exp(singleton_log_mus(model, z, strategy)))
    return -vstar + math.fsum(log_mu(model, B, z, strategy) for B in rec.occurrence)


# scores

def _score_full(model: SpectralModel, z: np.ndarray, strategy: Optional[MuStrategy]) -> np.ndarray:
    """Gradient of l1: -sum_l z_l grad mu({l}) + sum_B w_B grad log mu(B).

    w_B = sum over partitions containing B of chi_pi / delta, collected in a
    second pass over the partition stream.
    """
    m = model.dim
    _check_full_cap(m)
    strategy = strategy or default_strategy(model)
    table = log_mu_table(model, z, strategy)
    logs = {mk: v[0] for mk, v in table.items()}
    log_delta = _partition_logsumexp(logs, m)
    weights: Dict[int, float] = {}
    for masks in partition_masks(m, cap=get_settings().caps.full_likelihood):
        log_chi = math.fsum(logs[mk] for mk in masks)
        if log_chi == -np.inf:
            continue
        w = math.exp(log_chi - log_delta)
        for mk in masks:
            weights[mk] = weights.get(mk, 0.0) + w
    needed = {mk for mk, w in weights.items() if w > 0} | {1 << l for l in range(m)}
    grads = {mk: grad_log_mu(model, ComponentSet.from_mask(mk, m), z, strategy, table[mk])
             for mk in sorted(needed)}
    out = np.zeros(len(model.theta.free))
    for mk, w in weights.items():
        if w > 0:
            out += w * grads[mk]
    for l in range(m):
        # grad mu = mu * grad log mu
        out -= z[l] * math.exp(logs[1 << l]) * grads[1 << l]
    return out


def score(model: SpectralModel, kind: LikelihoodKind, observation: Observation,
          strategy: Optional[MuStrategy] = None, v_star_e: Optional[float] = None,
          grad_v_star_e: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of the per-observation log-likelihood over the free parameters."""
    name = kind.name
    if name == LikelihoodName.FULL:
        return _score_full(model, _as_z(model, observation), strategy)
    if name == LikelihoodName.PARTITION:
        z = _as_z(model, observation)
        out = np.zeros(len(model.theta.free))
        for block in kind.clustering:
            weight = len(block) if kind.weighted else 1
            out += weight * _score_full(model.restrict(block.members), z[block.indices], strategy)
        return out
    if name == LikelihoodName.PAIRWISE:
        z = _as_z(model, observation)
        out = np.zeros(len(model.theta.free))
        for pair in combinations(range(model.dim), 2):
            out += _score_full(model.restrict(pair), z[list(pair)], strategy)
        return out
    if name == LikelihoodName.CENSORED:
        rec = observation
        e = np.ones(model.dim)
        if v_star_e is None:
            v_star_e = v_star(model, e, strategy)
        if grad_v_star_e is None:
            grad_v_star_e = grad_v_star(model, e, strategy)
        return grad_log_mu(model, rec.exceed_set, rec.x, strategy) - grad_v_star_e / v_star_e
    rec = observation
    z = _as_z(model, rec.z)
    out = np.zeros(len(model.theta.free))
    for l in range(model.dim):
        out -= z[l] * grad_mu(model, ComponentSet((l,), model.dim), z, strategy)
    for B in rec.occurrence:
        out += grad_log_mu(model, B, z, strategy)
    return out


# dataset evaluation

def n_mu_evals(kind: LikelihoodKind, m: int, observation: Optional[Observation] = None) -> int:
    """Number of distinct mu values one observation needs."""
    name = kind.name
    if name == LikelihoodName.FULL:
        return (1 << m) - 1
    if name == LikelihoodName.PARTITION:
        return sum((1 << len(b)) - 1 for b in kind.clustering)
    if name == LikelihoodName.PAIRWISE:
        return 3 * m * (m - 1) // 2
    if name == LikelihoodName.CENSORED:
        return 1
    return m + (len(observation.occurrence) if observation is not None else 0)


def _single(model: SpectralModel, kind: LikelihoodKind, obs: Observation,
            strategy: Optional[MuStrategy], v_star_e: Optional[float]) -> float:
    name = kind.name
    if name == LikelihoodName.FULL:
        return loglik_full(model, obs, strategy)
    if name == LikelihoodName.PARTITION:
        return loglik_partition(model, obs, kind.clustering, kind.weighted, strategy)
    if name == LikelihoodName.PAIRWISE:
        return loglik_pairwise(model, obs, strategy)
    if name == LikelihoodName.CENSORED:
        return loglik_censored(model, obs, strategy, v_star_e)
    return loglik_maxima_occurrence(model, obs, strategy)


def _check_observation_types(kind: LikelihoodKind, observations: Sequence[Observation]) -> None:
    expected = {LikelihoodName.CENSORED: ExceedanceRecord,
                LikelihoodName.OCCURRENCE: BlockMaximaRecord}.get(kind.name)
    for obs in observations:
        if expected is not None and not isinstance(obs, expected):
            raise DataError(f"{kind.name.value} likelihood needs {expected.__name__} observations")
        if expected is None and isinstance(obs, (ExceedanceRecord, BlockMaximaRecord)):
            raise DataError(f"{kind.name.value} likelihood needs raw observation vectors")


def _ordered_map(func: Callable, items: Sequence, threads: int, progress: bool, desc: str) -> List:
    if threads <= 1:
        return [func(x) for x in tqdm(items, desc=desc, disable=not progress)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(tqdm(pool.map(func, items), total=len(items), desc=desc, disable=not progress))


def evaluate(model: SpectralModel, kind: LikelihoodKind, observations: Sequence[Observation],
             strategy: Optional[MuStrategy] = None, threads: Optional[int] = None,
             progress: bool = False) -> LikelihoodValue:
    """Log-likelihood of a dataset; per-observation values are summed with fsum."""
    observations = list(observations)
    if not observations:
        raise DataError("Cannot evaluate a likelihood on an empty dataset")
    _check_observation_types(kind, observations)
    threads = threads or get_settings().threads
    strategy = strategy or default_strategy(model)
    v_star_e = None
    evals = 0
    if kind.name == LikelihoodName.CENSORED:
        v_star_e = v_star(model, np.ones(model.dim), strategy)
        evals += model.dim
    values = _ordered_map(lambda obs: _single(model, kind, obs, strategy, v_star_e),
                          observations, threads, progress, f"loglik[{kind.name.value}]")
    per_obs = np.asarray(values, dtype=float)
    evals += sum(n_mu_evals(kind, model.dim, obs) for obs in observations)
    return LikelihoodValue(math.fsum(values), per_obs, evals)


def scores(model: SpectralModel, kind: LikelihoodKind, observations: Sequence[Observation],
           strategy: Optional[MuStrategy] = None, threads: Optional[int] = None,
           progress: bool = False) -> np.ndarray:
    """(n, p) matrix of per-observation scores."""
    observations = list(observations)
    if not observations:
        raise DataError("Cannot compute scores on an empty dataset")
    _check_observation_types(kind, observations)
    threads = threads or get_settings().threads
    strategy = strategy or default_strategy(model)
    v_e = g_e = None
    if kind.name == LikelihoodName.CENSORED:
        e = np.ones(model.dim)
        v_e = v_star(model, e, strategy)
        g_e = grad_v_star(model, e, strategy)
    rows = _ordered_map(lambda obs: score(model, kind, obs, strategy, v_e, g_e),
                        observations, threads, progress, f"score[{kind.name.value}]")
    return np.asarray(rows, dtype=float).reshape(len(observations), len(model.theta.free))
