"""Site geometry and the Whittle-Matern correlation family."""
import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gammaln, kve

from .errors import DataError, InvalidParameterError
from .matrix_io import read_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SiteSet:
    """Planar site coordinates, one row per site."""

    coordinates: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coordinates, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DataError(f"Sites must be an (m, 2) array, got shape {coords.shape}")
        if coords.shape[0] < 1:
            raise DataError("At least one site is required")
        if not np.all(np.isfinite(coords)):
            raise DataError("Site coordinates must be finite")
        coords.setflags(write=False)
        object.__setattr__(self, "coordinates", coords)

    def __len__(self) -> int:
        return self.coordinates.shape[0]

    def subset(self, indices: Sequence[int]) -> "SiteSet":
        return SiteSet(self.coordinates[np.asarray(indices, dtype=int)])

    def distances(self) -> np.ndarray:
        return cdist(self.coordinates, self.coordinates)

    @classmethod
    def uniform_square(cls, m: int, side: float, rng: np.random.Generator) -> "SiteSet":
        return cls(rng.uniform(0.0, side, size=(m, 2)))


@dataclass(frozen=True)
class MaternParams:
    c: float
    nu: float

    def __post_init__(self):
        for name in ("c", "nu"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise InvalidParameterError(f"Matern {name} must be positive and finite, got {v}")


def whittle_matern(h: Union[float, np.ndarray], p: MaternParams) -> Union[float, np.ndarray]:
    """rho(h) = 2^(1-nu)/Gamma(nu) (h/c)^nu K_nu(h/c), with rho(0) = 1."""
    h_arr = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h_arr)):
        raise InvalidParameterError("Distances must be finite")
    if np.any(h_arr < 0):
        raise InvalidParameterError("Distances must be nonnegative")
    x = h_arr / p.c
    out = np.ones_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        # kve(nu, x) = K_nu(x) exp(x)
        log_rho = ((1.0 - p.nu) * np.log(2.0) - gammaln(p.nu) + p.nu * np.log(xp)
                   + np.log(kve(p.nu, xp)) - xp)
        out[pos] = np.minimum(np.exp(log_rho), 1.0)
    if np.ndim(h) == 0:
        return float(out)
    return out


def correlation_matrix(sites: SiteSet, p: MaternParams) -> np.ndarray:
    dist = sites.distances()
    corr = whittle_matern(dist, p)
    np.fill_diagonal(corr, 1.0)
    corr = 0.5 * (corr + corr.T)
    m = len(sites)
    if m > 1 and np.any(dist[np.triu_indices(m, 1)] == 0):
        logger.warning("Coincident sites give unit off-diagonal correlation; "
                       "the covariance is singular and will be jittered")
    return corr


def variogram_covariance(sites: SiteSet, c: float, kappa: float) -> np.ndarray:
    """Covariance gamma(x)+gamma(y)-gamma(x-y) of a Gaussian field anchored at the origin.

    gamma(h) = (|h|/c)^kappa with 0 < kappa <= 2 (Brown-Resnick style).
    """
    if c <= 0 or not 0 < kappa <= 2:
        raise InvalidParameterError(f"Need c > 0 and 0 < kappa <= 2, got c={c}, kappa={kappa}")
    coords = sites.coordinates
    gamma_origin = (np.linalg.norm(coords, axis=1) / c) ** kappa
    gamma_pairs = (sites.distances() / c) ** kappa
    return gamma_origin[:, None] + gamma_origin[None, :] - gamma_pairs


def load_sites_csv(path: str) -> SiteSet:
    """Read a two-column ``x,y`` CSV (header optional)."""
    values, _ = read_matrix(path)
    if values.shape[1] != 2:
        raise DataError(f"{path}: expected 2 columns (x,y), found {values.shape[1]}")
    return SiteSet(values)
