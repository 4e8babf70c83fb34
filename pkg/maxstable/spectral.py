"""Spectral random vectors U with E[U_j^+] = 1 and the kernel of the mu integral.

Three families are supported:

* ``GaussianSpectral``: U = sqrt(2 pi) T with T a unit-variance Gaussian field
  (Whittle-Matern correlation over sites, or a fixed correlation matrix).
* ``LogNormalSpectral``: log U = eps - Var(eps)/2 with eps Gaussian.
* ``ClusteredArchimedeanSpectral``: independent clusters, each an Archimedean
  copula (Gumbel or Clayton) with mean-one margins.

Every model exposes ``log_kernel(gammas, B, z)``, the log of
Pr(U_{B^c} <= z_{B^c} g | U_B = z_B g) f_{U_B}(z_B g) for a vector of g values,
and ``log_cdf`` for the rectangle probabilities used by ``mu_engine.v_b_star``.
Models are immutable; ``with_theta`` returns a new instance.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from .archimedean import Generator, Margin, make_generator, make_margin
from .combinatorics import ComponentSet, Partition, submasks
from .errors import DimensionCapError, InvalidParameterError
from .gaussian import (
    GaussianSpec,
    cholesky_with_jitter,
    conditional_gaussian,
    genz_order,
    log_mvn_cdf_batch,
)
from .parameters import Parameter, ThetaVector
from .settings import get_settings
from .spatial import MaternParams, SiteSet, correlation_matrix, variogram_covariance

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class SpectralKind(str, Enum):
    GAUSSIAN = "gaussian"
    LOGNORMAL = "lognormal"
    CLUSTERED_ARCHIMEDEAN = "clustered"


@dataclass(frozen=True, eq=False)
class BlockFactor:
    """Quantities of a Gaussian vector conditioned on the block B."""

    b: np.ndarray
    c: np.ndarray
    chol_b: np.ndarray
    log_norm: float
    regression: np.ndarray
    conditional: np.ndarray

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Sigma_B^{-1} v for v of shape (k,) or (k, n)."""
        return cho_solve((self.chol_b, True), v)


def _check_z(z, m: int) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != m:
        raise InvalidParameterError(f"z has {z.size} entries, model dimension is {m}")
    if not np.all(np.isfinite(z)) or np.any(z <= 0):
        raise InvalidParameterError("z must be strictly positive and finite")
    return z


class SpectralModel(ABC):
    kind: SpectralKind

    def __init__(self, theta: ThetaVector):
        self.theta = theta
        self._blocks: Dict[int, object] = {}

    @property
    @abstractmethod
    def dim(self) -> int:
        ...

    @abstractmethod
    def with_theta(self, theta: ThetaVector) -> "SpectralModel":
        ...

    @abstractmethod
    def restrict(self, indices: Sequence[int]) -> "SpectralModel":
        """Marginal model of the components ``indices`` (0-based), same theta."""

    @abstractmethod
    def _log_kernel(self, gammas: np.ndarray, B: ComponentSet, z: np.ndarray,
                    seed: Optional[int]) -> np.ndarray:
        ...

    @abstractmethod
    def _log_cdf(self, gammas: np.ndarray, T: np.ndarray, z: np.ndarray,
                 seed: Optional[int]) -> np.ndarray:
        ...

    @abstractmethod
    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def to_config(self) -> Dict[str, object]:
        ...

    def with_free_values(self, values: Sequence[float]) -> "SpectralModel":
        return self.with_theta(self.theta.with_free_values(values))

    def _check_B(self, B: ComponentSet) -> None:
        if B.m != self.dim or len(B) == 0:
            raise InvalidParameterError(f"B={B} is not a nonempty subset of {self.dim} components")

    def log_kernel(self, gammas, B: ComponentSet, z, seed: Optional[int] = None) -> np.ndarray:
        """log lambda(g; B, z) for every g in ``gammas`` (-inf where it underflows)."""
        self._check_B(B)
        z = _check_z(z, self.dim)
        gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
        out = self._log_kernel(gammas, B, z, seed)
        out = np.where(np.isnan(out) | (gammas <= 0), -np.inf, out)
        return out

    def log_cdf(self, gammas, T: Sequence[int], z, seed: Optional[int] = None) -> np.ndarray:
        """log Pr(U_T <= g z_T) for every g; T empty gives 0."""
        z = _check_z(z, self.dim)
        gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
        T = np.asarray(T, dtype=int)
        if T.size == 0:
            return np.zeros(gammas.size)
        out = self._log_cdf(gammas, T, z, seed)
        return np.where(np.isnan(out), -np.inf, out)

    def rect_prob(self, gammas, B: ComponentSet, z, seed: Optional[int] = None) -> np.ndarray:
        """Pr(U_B > g z_B, U_{B^c} <= g z_{B^c}) by inclusion-exclusion over subsets of B."""
        self._check_B(B)
        cap = get_settings().caps.v_b_star
        if len(B) > cap:
            raise DimensionCapError(f"|B|={len(B)} exceeds the v_b_star cap {cap}")
        gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
        comp = B.complement().members
        total = np.zeros(gammas.size)
        for sub in submasks(B.mask):
            inside = [j for j in B.members if sub >> j & 1]
            T = sorted(inside + list(comp))
            sign = -1.0 if len(inside) % 2 else 1.0
            total += sign * np.exp(self.log_cdf(gammas, T, z, seed))
        return np.clip(total, 0.0, 1.0)

    def log_density(self, u) -> float:
        """log f_U(u) for a strictly positive point u."""
        return float(self.log_kernel(np.array([1.0]), ComponentSet.full(self.dim), u)[0])

    def __repr__(self) -> str:
        return f"{type(self).__name__}(m={self.dim}, {self.theta!r})"


class _GaussianBase(SpectralModel):
    """Models whose randomness is a centered Gaussian vector with covariance ``covariance``."""

    covariance: np.ndarray

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    @property
    def jitter_scale(self) -> float:
        return float(np.mean(np.diag(self.covariance)))

    def block(self, B: ComponentSet) -> BlockFactor:
        cached = self._blocks.get(B.mask)
        if cached is not None:
            return cached
        b = B.indices
        c = B.complement().indices
        regression, conditional = conditional_gaussian(GaussianSpec(self.covariance), B)
        chol_b = cholesky_with_jitter(self.covariance[np.ix_(b, b)], scale=self.jitter_scale)
        log_norm = -0.5 * (b.size * LOG_2PI) - float(np.sum(np.log(np.diag(chol_b))))
        out = BlockFactor(b, c, chol_b, log_norm, regression, conditional)
        self._blocks[B.mask] = out
        return out

    def _gaussian_draws(self, count: int, rng: np.random.Generator) -> np.ndarray:
        chol = cholesky_with_jitter(self.covariance, scale=self.jitter_scale)
        return rng.standard_normal((count, self.dim)) @ chol.T


class GaussianSpectral(_GaussianBase):
    """U ~ N(0, 2 pi R), so that E[U_j^+] = 1."""

    kind = SpectralKind.GAUSSIAN

    def __init__(self, theta: ThetaVector, sites: Optional[SiteSet] = None,
                 correlation: Optional[np.ndarray] = None):
        super().__init__(theta)
        if (sites is None) == (correlation is None):
            raise InvalidParameterError("GaussianSpectral needs exactly one of sites or correlation")
        self.sites = sites
        if sites is not None:
            corr = correlation_matrix(sites, MaternParams(theta["c"], theta["nu"]))
        else:
            corr = np.array(correlation, dtype=float)
            if corr.ndim != 2 or corr.shape[0] != corr.shape[1] or not np.allclose(np.diag(corr), 1.0):
                raise InvalidParameterError("correlation must be a square matrix with unit diagonal")
            if not np.allclose(corr, corr.T):
                raise InvalidParameterError("correlation must be symmetric")
        self.correlation = corr
        self.covariance = 2.0 * math.pi * corr

    @classmethod
    def from_correlation(cls, correlation) -> "GaussianSpectral":
        return cls(ThetaVector([]), correlation=np.atleast_2d(correlation))

    def with_theta(self, theta):
        if self.sites is None:
            return GaussianSpectral(theta, correlation=self.correlation)
        return GaussianSpectral(theta, sites=self.sites)

    def restrict(self, indices):
        idx = np.asarray(indices, dtype=int)
        if self.sites is None:
            return GaussianSpectral(self.theta, correlation=self.correlation[np.ix_(idx, idx)])
        return GaussianSpectral(self.theta, sites=self.sites.subset(idx))

    def _log_kernel(self, gammas, B, z, seed):
        f = self.block(B)
        zb = z[f.b]
        q2 = float(zb @ f.solve(zb))
        out = -0.5 * gammas ** 2 * q2 + f.log_norm
        if f.c.size == 0:
            return out
        w = z[f.c] - f.regression @ zb
        order = genz_order(f.conditional, w)
        return out + log_mvn_cdf_batch(f.conditional, gammas[:, None] * w[None, :],
                                       jitter_scale=self.jitter_scale, seed=seed, order=order)

    def _log_cdf(self, gammas, T, z, seed):
        cov = self.covariance[np.ix_(T, T)]
        return log_mvn_cdf_batch(cov, gammas[:, None] * z[T][None, :],
                                 jitter_scale=self.jitter_scale, seed=seed)

    def sample(self, count, rng):
        return self._gaussian_draws(count, rng)

    def to_config(self):
        out: Dict[str, object] = {"kind": self.kind.value}
        if self.sites is not None:
            out["matern"] = {"c": self.theta["c"], "nu": self.theta["nu"]}
            out["sites"] = self.sites.coordinates.tolist()
        else:
            out["correlation"] = self.correlation.tolist()
        return out


class LogNormalSpectral(_GaussianBase):
    """log U = eps - nu with eps ~ N(0, Sigma) and nu = diag(Sigma)/2, so E[U_j] = 1.

    ``family`` selects how Sigma depends on theta:

    * ``covariance``: fixed matrix, no parameters
    * ``matern``: sigma2 * WhittleMatern(c, nu) over sites
    * ``brown_resnick``: variogram covariance (|h|/c)^kappa anchored at the origin
    """

    kind = SpectralKind.LOGNORMAL
    FAMILIES = ("covariance", "matern", "brown_resnick")

    def __init__(self, theta: ThetaVector, family: str = "covariance",
                 sites: Optional[SiteSet] = None, covariance: Optional[np.ndarray] = None):
        super().__init__(theta)
        if family not in self.FAMILIES:
            raise InvalidParameterError(f"Unknown log-normal family {family!r}")
        self.family = family
        self.sites = sites
        if family == "covariance":
            if covariance is None:
                raise InvalidParameterError("family 'covariance' needs a covariance matrix")
            cov = np.atleast_2d(np.array(covariance, dtype=float))
        elif sites is None:
            raise InvalidParameterError(f"family {family!r} needs sites")
        elif family == "matern":
            cov = theta["sigma2"] * correlation_matrix(sites, MaternParams(theta["c"], theta["nu"]))
        else:
            cov = variogram_covariance(sites, theta["c"], theta["kappa"])
        GaussianSpec(cov)
        if np.any(np.diag(cov) <= 0):
            raise InvalidParameterError(
                "Log-normal spectral vector needs Var(eps_j) > 0 for every j; "
                "a zero variance gives the degenerate U_j = 1")
        w = np.linalg.eigvalsh(0.5 * (cov + cov.T))
        if w[0] < -1e-10 * max(1.0, abs(w[-1])):
            raise InvalidParameterError(f"Covariance is not positive semi-definite (min eigenvalue {w[0]:.3e})")
        self.covariance = 0.5 * (cov + cov.T)
        self.nu = 0.5 * np.diag(self.covariance)

    @classmethod
    def from_covariance(cls, covariance) -> "LogNormalSpectral":
        return cls(ThetaVector([]), family="covariance", covariance=covariance)

    def with_theta(self, theta):
        return LogNormalSpectral(theta, family=self.family, sites=self.sites,
                                 covariance=self.covariance if self.family == "covariance" else None)

    def restrict(self, indices):
        idx = np.asarray(indices, dtype=int)
        if self.family == "covariance":
            return LogNormalSpectral(self.theta, covariance=self.covariance[np.ix_(idx, idx)])
        return LogNormalSpectral(self.theta, family=self.family, sites=self.sites.subset(idx))

    def _log_kernel(self, gammas, B, z, seed):
        f = self.block(B)
        k = f.b.size
        t = np.log(gammas)
        l0 = np.log(z[f.b]) + self.nu[f.b]
        ones = np.ones(k)
        p_l0 = f.solve(l0)
        p_one = f.solve(ones)
        # (l0 + t e)' P (l0 + t e)
        quad = float(l0 @ p_l0) + 2.0 * t * float(ones @ p_l0) + t ** 2 * float(ones @ p_one)
        out = -0.5 * quad + f.log_norm - float(np.sum(np.log(z[f.b]))) - k * t
        if f.c.size == 0:
            return out
        a = np.log(z[f.c]) + self.nu[f.c] - f.regression @ l0
        beta = 1.0 - f.regression @ ones
        order = genz_order(f.conditional, a)
        return out + log_mvn_cdf_batch(f.conditional, a[None, :] + t[:, None] * beta[None, :],
                                       jitter_scale=self.jitter_scale, seed=seed, order=order)

    def _log_cdf(self, gammas, T, z, seed):
        cov = self.covariance[np.ix_(T, T)]
        with np.errstate(divide="ignore"):
            upper = np.log(gammas)[:, None] + np.log(z[T])[None, :] + self.nu[T][None, :]
        return log_mvn_cdf_batch(cov, upper, jitter_scale=self.jitter_scale, seed=seed)

    def sample(self, count, rng):
        return np.exp(self._gaussian_draws(count, rng) - self.nu[None, :])

    def to_config(self):
        out: Dict[str, object] = {"kind": self.kind.value, "family": self.family}
        if self.family == "covariance":
            out["covariance"] = self.covariance.tolist()
        else:
            out["params"] = {p.name: p.value for p in self.theta}
            out["sites"] = self.sites.coordinates.tolist()
        return out


@dataclass(frozen=True)
class CopulaSpec:
    family: str
    theta: float
    fixed: bool = False


@dataclass(frozen=True)
class MarginSpec:
    family: str
    alpha: float
    fixed: bool = False


@dataclass(frozen=True)
class ArchimedeanClusterSpec:
    """One cluster; ``cluster`` may be empty only inside a restricted model."""

    cluster: ComponentSet
    copula: CopulaSpec
    margin: MarginSpec


class ClusteredArchimedeanSpectral(SpectralModel):
    """Independent sub-vectors U_{P_i}, each Archimedean with mean-one margins.

    Parameters are named ``theta_i`` (copula) and ``alpha_i`` (margin) with i the
    1-based cluster number.
    """

    kind = SpectralKind.CLUSTERED_ARCHIMEDEAN

    def __init__(self, specs: Sequence[ArchimedeanClusterSpec], m: Optional[int] = None):
        specs = tuple(specs)
        if not specs:
            raise InvalidParameterError("At least one cluster is required")
        m = specs[0].cluster.m if m is None else m
        nonempty = [s.cluster for s in specs if len(s.cluster)]
        Partition(tuple(nonempty), m)
        self.specs = specs
        self._m = m
        self.generators: List[Generator] = [make_generator(s.copula.family, s.copula.theta) for s in specs]
        self.margins: List[Margin] = [make_margin(s.margin.family, s.margin.alpha) for s in specs]
        params = []
        for i, (s, g, mg) in enumerate(zip(specs, self.generators, self.margins), start=1):
            params.append(Parameter(f"theta_{i}", s.copula.theta, lower=g.lower, fixed=s.copula.fixed))
            params.append(Parameter(f"alpha_{i}", s.margin.alpha, lower=mg.lower, fixed=s.margin.fixed))
        super().__init__(ThetaVector(params))

    @property
    def dim(self) -> int:
        return self._m

    @property
    def clusters(self) -> List[ComponentSet]:
        return [s.cluster for s in self.specs]

    def cluster_parameter_names(self, i: int) -> Tuple[str, str]:
        """Names of the copula and margin parameters of cluster i (0-based)."""
        return f"theta_{i + 1}", f"alpha_{i + 1}"

    def with_theta(self, theta):
        specs = []
        for i, s in enumerate(self.specs, start=1):
            t = next(p for p in theta if p.name == f"theta_{i}")
            a = next(p for p in theta if p.name == f"alpha_{i}")
            specs.append(ArchimedeanClusterSpec(
                s.cluster, replace(s.copula, theta=t.value, fixed=t.fixed),
                replace(s.margin, alpha=a.value, fixed=a.fixed)))
        return ClusteredArchimedeanSpectral(specs, self._m)

    def restrict(self, indices):
        idx = [int(j) for j in indices]
        position = {j: n for n, j in enumerate(idx)}
        m = len(idx)
        specs = []
        for s in self.specs:
            members = tuple(sorted(position[j] for j in s.cluster if j in position))
            specs.append(replace(s, cluster=ComponentSet(members, m, allow_empty=True)))
        return ClusteredArchimedeanSpectral(specs, m)

    def _log_kernel(self, gammas, B, z, seed):
        x = gammas[:, None] * z[None, :]
        out = np.zeros(gammas.size)
        b_mask = B.mask
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            for s, gen, margin in zip(self.specs, self.generators, self.margins):
                members = s.cluster.indices
                if members.size == 0:
                    continue
                in_b = np.array([b_mask >> j & 1 for j in members], dtype=bool)
                xp = x[:, members]
                L = margin.log_neg_logcdf(xp)
                if members.size == 1:
                    out += margin.logpdf(xp[:, 0]) if in_b[0] else -np.exp(L[:, 0])
                    continue
                log_t = gen.log_t_from_log_neg_logu(L)
                out += gen.log_abs_derivative(int(in_b.sum()), logsumexp(log_t, axis=1))
                if in_b.any():
                    out += np.sum(margin.logpdf(xp[:, in_b])
                                  - gen.log_abs_derivative(1, log_t[:, in_b]), axis=1)
        return out

    def _log_cdf(self, gammas, T, z, seed):
        x = gammas[:, None] * z[None, :]
        t_set = set(int(j) for j in T)
        out = np.zeros(gammas.size)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            for s, gen, margin in zip(self.specs, self.generators, self.margins):
                members = np.array([j for j in s.cluster if j in t_set], dtype=int)
                if members.size == 0:
                    continue
                L = margin.log_neg_logcdf(x[:, members])
                if len(s.cluster) == 1:
                    out += -np.exp(L[:, 0])
                else:
                    log_t = gen.log_t_from_log_neg_logu(L)
                    out += gen.log_abs_derivative(0, logsumexp(log_t, axis=1))
        return out

    def sample(self, count, rng):
        out = np.empty((count, self._m))
        for s, gen, margin in zip(self.specs, self.generators, self.margins):
            members = s.cluster.indices
            if members.size == 0:
                continue
            frailty = gen.sample_frailty(count, rng)
            e = rng.standard_exponential((count, members.size))
            # U_j = F_j^{-1}(psi(E_j / V)); 1 - psi taken directly to keep upper tails exact
            out[:, members] = margin.isf(gen.survival_from_exponential(e / frailty[:, None]))
        return out

    def to_config(self):
        return {
            "kind": self.kind.value,
            "clusters": [
                {
                    "members": s.cluster.labels(),
                    "copula": {"family": s.copula.family, "theta": s.copula.theta, "fixed": s.copula.fixed},
                    "margin": {"family": s.margin.family, "alpha": s.margin.alpha, "fixed": s.margin.fixed},
                }
                for s in self.specs
            ],
        }


def build_gaussian_spectral(sites: SiteSet, p: MaternParams,
                            fixed: Sequence[str] = ()) -> GaussianSpectral:
    theta = ThetaVector([
        Parameter("c", p.c, lower=0.0, fixed="c" in fixed),
        Parameter("nu", p.nu, lower=0.0, fixed="nu" in fixed),
    ])
    return GaussianSpectral(theta, sites=sites)


def build_lognormal_spectral(cov_eps) -> LogNormalSpectral:
    return LogNormalSpectral.from_covariance(cov_eps)


def build_lognormal_matern(sites: SiteSet, sigma2: float, p: MaternParams,
                           fixed: Sequence[str] = ()) -> LogNormalSpectral:
    theta = ThetaVector([
        Parameter("sigma2", sigma2, lower=0.0, fixed="sigma2" in fixed),
        Parameter("c", p.c, lower=0.0, fixed="c" in fixed),
        Parameter("nu", p.nu, lower=0.0, fixed="nu" in fixed),
    ])
    return LogNormalSpectral(theta, family="matern", sites=sites)


def build_brown_resnick(sites: SiteSet, c: float, kappa: float,
                        fixed: Sequence[str] = ()) -> LogNormalSpectral:
    theta = ThetaVector([
        Parameter("c", c, lower=0.0, fixed="c" in fixed),
        Parameter("kappa", kappa, lower=0.0, upper=2.0, fixed="kappa" in fixed),
    ])
    return LogNormalSpectral(theta, family="brown_resnick", sites=sites)


def build_clustered_archimedean(specs: Sequence[ArchimedeanClusterSpec]) -> ClusteredArchimedeanSpectral:
    return ClusteredArchimedeanSpectral(specs)


def build_logistic(m: int, alpha: float, fixed_alpha: bool = False) -> ClusteredArchimedeanSpectral:
    """i.i.d. Frechet(alpha) spectral components: V*(z) = (sum z_j^-alpha)^(1/alpha)."""
    return ClusteredArchimedeanSpectral([ArchimedeanClusterSpec(
        ComponentSet.full(m), CopulaSpec("gumbel", 1.0, fixed=True),
        MarginSpec("frechet", alpha, fixed=fixed_alpha))])


def lambda_kernel(model: SpectralModel, gamma: float, B: ComponentSet, z) -> float:
    if not gamma > 0:
        raise InvalidParameterError(f"gamma must be positive, got {gamma}")
    return float(np.exp(model.log_kernel(np.array([gamma]), B, z)[0]))


def sample_spectral(model: SpectralModel, count: int, seed) -> np.ndarray:
    if count < 1:
        raise InvalidParameterError(f"count must be at least 1, got {count}")
    return model.sample(int(count), np.random.default_rng(seed))
