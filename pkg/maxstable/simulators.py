"""Seedable generators for max-domain-of-attraction and approximate max-stable samples.

Rows are produced in fixed-size chunks, each with its own child of
``SeedSequence(seed)``, so the output does not depend on the number of
worker threads.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from .errors import InvalidParameterError
from .settings import get_settings
from .spectral import SpectralModel

logger = logging.getLogger(__name__)

CHUNK_ROWS = 256
POINT_BLOCK = 100
BOUND_DRAWS = 1000
SCALINGS = ("pareto", "uniform_ratio")


@dataclass(frozen=True)
class SimConfig:
    model: SpectralModel
    n: int
    seed: int = 0
    noise_mean: Optional[float] = None
    truncation: int = 1000
    scaling: str = "pareto"

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameterError(f"Sample size n must be at least 1, got {self.n}")
        if self.truncation < 1:
            raise InvalidParameterError(f"Truncation N must be at least 1, got {self.truncation}")
        if self.noise_mean is not None and not self.noise_mean > 0:
            raise InvalidParameterError(f"Noise mean must be positive, got {self.noise_mean}")
        if self.scaling not in SCALINGS:
            raise InvalidParameterError(f"Unknown scaling {self.scaling!r}; expected one of {SCALINGS}")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "noise_mean": self.noise_mean,
            "truncation": self.truncation,
            "scaling": self.scaling,
            "model": self.model.to_config(),
        }


def _chunks(n: int) -> List[Tuple[int, int]]:
    return [(start, min(start + CHUNK_ROWS, n)) for start in range(0, n, CHUNK_ROWS)]


def _run_chunks(worker, cfg: SimConfig, threads: Optional[int], progress: bool, desc: str) -> list:
    bounds = _chunks(cfg.n)
    streams = np.random.SeedSequence(cfg.seed).spawn(len(bounds))
    jobs = [(stop - start, np.random.default_rng(ss)) for (start, stop), ss in zip(bounds, streams)]
    threads = threads or get_settings().threads

    def call(job):
        return worker(*job)

    if threads <= 1:
        return [call(job) for job in tqdm(jobs, desc=desc, disable=not progress)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(tqdm(pool.map(call, jobs), total=len(jobs), desc=desc, disable=not progress))


def _scale_variable(rows: int, scaling: str, rng: np.random.Generator) -> np.ndarray:
    if scaling == "pareto":
        return rng.pareto(1.0, size=rows) + 1.0
    # 1/R with R uniform on (0, 1]
    return 1.0 / (1.0 - rng.random(rows))


def sample_mda(cfg: SimConfig, threads: Optional[int] = None, progress: bool = False) -> np.ndarray:
    """Rows Y = Gamma * U (+ E), Gamma unit Pareto (or 1/R), E i.i.d. exponential noise."""
    model = cfg.model

    def worker(rows: int, rng: np.random.Generator) -> np.ndarray:
        gamma = _scale_variable(rows, cfg.scaling, rng)
        u = model.sample(rows, rng)
        y = gamma[:, None] * u
        if cfg.noise_mean is not None:
            y = y + rng.exponential(cfg.noise_mean, size=y.shape)
        return y

    out = np.vstack(_run_chunks(worker, cfg, threads, progress, "sample_mda"))
    logger.debug("sample_mda: %d x %d rows (scaling=%s, noise=%s)", out.shape[0], out.shape[1],
                 cfg.scaling, cfg.noise_mean)
    return out


def _max_stable_chunk(model: SpectralModel, rows: int, N: int,
                      rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    m = model.dim
    z = np.zeros((rows, m))
    arrivals = np.zeros(rows)
    for start in range(0, N, POINT_BLOCK):
        size = min(POINT_BLOCK, N - start)
        arrivals_block = arrivals[:, None] + np.cumsum(rng.standard_exponential((rows, size)), axis=1)
        arrivals = arrivals_block[:, -1]
        u = np.maximum(model.sample(rows * size, rng).reshape(rows, size, m), 0.0)
        np.maximum(z, np.max(u / arrivals_block[:, :, None], axis=1), out=z)
    # Points beyond N have zeta <= 1/Gamma_N; the expected number exceeding Z_l is
    # E[(U_l - Z_l Gamma_N)^+] / Z_l, estimated from one batch of U draws.
    u_ref = np.maximum(model.sample(BOUND_DRAWS, rng), 0.0)
    bound = np.empty(rows)
    for i in range(rows):
        level = z[i] * arrivals[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            excess = np.mean(np.maximum(u_ref - level[None, :], 0.0), axis=0) / z[i]
        excess = np.where(z[i] > 0, excess, 1.0)
        bound[i] = min(1.0, float(np.sum(excess)))
    return z, bound


def sample_max_stable(cfg: SimConfig, threads: Optional[int] = None, progress: bool = False,
                      return_bound: bool = False) -> Union[np.ndarray, Tuple[np.ndarray, float]]:
    """Approximate max-stable rows max_{j <= N} zeta_j U_j^+ with zeta_j = 1/(E_1 + ... + E_j).

    With ``return_bound`` the mean (over rows) bound on the probability that a
    point beyond the truncation would change the row is returned as well.
    """
    if cfg.truncation < 100:
        logger.warning("Truncation N=%d is small; max-stable samples will be visibly biased", cfg.truncation)
    model = cfg.model

    def worker(rows: int, rng: np.random.Generator):
        return _max_stable_chunk(model, rows, cfg.truncation, rng)

    parts = _run_chunks(worker, cfg, threads, progress, "sample_max_stable")
    out = np.vstack([p[0] for p in parts])
    bound = math.fsum(float(np.sum(p[1])) for p in parts) / cfg.n
    logger.info("sample_max_stable: %d x %d rows, N=%d, truncation bound %.3g",
                out.shape[0], out.shape[1], cfg.truncation, bound)
    if return_bound:
        return out, bound
    return out
