"""Archimedean generators, their derivatives, frailties and mean-one margins.

Internally every generator is evaluated from log t so that the clustered
kernel stays finite when the margins are far in their tails.
"""
import math
from abc import ABC, abstractmethod
from typing import Union

import numpy as np
from scipy import stats
from scipy.special import gamma as gamma_fn
from scipy.special import log_ndtr, logsumexp

from .errors import DimensionCapError, InvalidParameterError
from .settings import get_settings

ArrayLike = Union[float, np.ndarray]


def _log_expm1(v: np.ndarray) -> np.ndarray:
    """log(exp(v) - 1) for v > 0 without overflow."""
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(v > 30.0, v + np.log1p(-np.exp(-np.minimum(v, 700.0))),
                        np.log(np.expm1(np.minimum(v, 30.0))))


class Generator(ABC):
    """Completely monotone generator psi with psi(0) = 1."""

    family: str
    lower: float

    def __init__(self, theta: float):
        self.theta = float(theta)
        self.validate()

    @abstractmethod
    def validate(self) -> None:
        ...

    @abstractmethod
    def log_t_from_log_neg_logu(self, log_neg_logu: np.ndarray) -> np.ndarray:
        """log psi^{-1}(u) given log(-log u)."""

    @abstractmethod
    def log_abs_derivative(self, k: int, log_t: np.ndarray) -> np.ndarray:
        """log |psi^{(k)}(t)| evaluated at t = exp(log_t)."""

    @abstractmethod
    def sample_frailty(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Positive variable whose Laplace transform is psi."""

    def survival_from_exponential(self, x: np.ndarray) -> np.ndarray:
        """1 - psi(x), accurate when psi(x) is close to 1."""
        return -np.expm1(self.log_abs_derivative(0, np.log(x)))

    def check_order(self, k: int) -> None:
        cap = get_settings().caps.psi_order
        if k < 0:
            raise InvalidParameterError(f"Derivative order must be nonnegative, got {k}")
        if k > cap:
            raise DimensionCapError(f"psi derivative order {k} exceeds supported order {cap}")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(theta={self.theta:g})"


class GumbelGenerator(Generator):
    """psi(t) = exp(-t^(1/theta)), theta >= 1; theta = 1 is independence."""

    family = "gumbel"
    lower = 1.0

    def validate(self) -> None:
        if not math.isfinite(self.theta) or self.theta < 1.0:
            raise InvalidParameterError(f"Gumbel theta must be >= 1, got {self.theta}")

    def log_t_from_log_neg_logu(self, log_neg_logu):
        return self.theta * np.asarray(log_neg_logu, dtype=float)

    def coefficients(self, k: int) -> np.ndarray:
        """c[j] with psi^{(k)}(t) = psi(t) * sum_j c[j] t^(j a - k), a = 1/theta.

        Built by c_{k+1,j} = c_{k,j} (j a - k) - a c_{k,j-1}; all c_{k,j} share the sign (-1)^k.
        """
        a = 1.0 / self.theta
        c = np.zeros(k + 1)
        c[0] = 1.0
        for order in range(k):
            nxt = np.zeros(k + 1)
            j = np.arange(order + 1)
            nxt[: order + 1] += c[: order + 1] * (j * a - order)
            nxt[1: order + 2] -= a * c[: order + 1]
            c = nxt
        return c

    def log_abs_derivative(self, k, log_t):
        self.check_order(k)
        log_t = np.asarray(log_t, dtype=float)
        a = 1.0 / self.theta
        log_psi = -np.exp(a * log_t)
        if k == 0:
            return log_psi
        c = self.coefficients(k)
        j = np.nonzero(c)[0]
        exponents = j * a - k
        with np.errstate(invalid="ignore"):
            terms = np.where(exponents == 0.0, 0.0, exponents * log_t[..., None])
        return log_psi + logsumexp(np.log(np.abs(c[j])) + terms, axis=-1)

    def sample_frailty(self, size, rng):
        if self.theta == 1.0:
            return np.ones(size)
        alpha = 1.0 / self.theta
        scale = math.cos(math.pi / (2.0 * self.theta)) ** self.theta
        return stats.levy_stable.rvs(alpha, 1.0, loc=0.0, scale=scale, size=size, random_state=rng)


class ClaytonGenerator(Generator):
    """psi(t) = (1 + t)^(-1/theta), theta > 0."""

    family = "clayton"
    lower = 0.0

    def validate(self) -> None:
        if not math.isfinite(self.theta) or self.theta <= 0.0:
            raise InvalidParameterError(f"Clayton theta must be > 0, got {self.theta}")

    def log_t_from_log_neg_logu(self, log_neg_logu):
        # t = u^(-theta) - 1 = expm1(theta * (-log u))
        return _log_expm1(self.theta * np.exp(np.asarray(log_neg_logu, dtype=float)))

    def log_abs_derivative(self, k, log_t):
        self.check_order(k)
        log_t = np.asarray(log_t, dtype=float)
        inv = 1.0 / self.theta
        log1p_t = np.logaddexp(0.0, log_t)
        rising = float(np.sum(np.log(inv + np.arange(k)))) if k else 0.0
        return rising - (inv + k) * log1p_t

    def sample_frailty(self, size, rng):
        return rng.gamma(1.0 / self.theta, 1.0, size=size)


GENERATORS = {"gumbel": GumbelGenerator, "clayton": ClaytonGenerator}


def make_generator(family: str, theta: float) -> Generator:
    try:
        return GENERATORS[family.lower()](theta)
    except KeyError:
        raise InvalidParameterError(f"Unknown copula family {family!r}; expected one of {sorted(GENERATORS)}")


def psi_derivatives(generator: Generator, k: int, t: ArrayLike) -> ArrayLike:
    """k-th derivative of the generator at t >= 0 (signed)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise InvalidParameterError("psi is defined for t >= 0")
    if k >= 1 and isinstance(generator, GumbelGenerator) and generator.theta != 1.0 and np.any(t_arr == 0):
        raise InvalidParameterError("Gumbel derivatives of order >= 1 need t > 0")
    with np.errstate(divide="ignore"):
        log_t = np.log(t_arr)
    out = (-1.0) ** k * np.exp(generator.log_abs_derivative(k, log_t))
    return float(out) if np.ndim(t) == 0 else out


class Margin(ABC):
    """Positive margin scaled to mean one, backed by a frozen scipy distribution."""

    family: str
    lower: float

    def __init__(self, alpha: float):
        self.alpha = float(alpha)
        self.validate()
        self.dist = self.build()

    @abstractmethod
    def validate(self) -> None:
        ...

    @abstractmethod
    def build(self):
        ...

    @abstractmethod
    def log_neg_logcdf(self, x: np.ndarray) -> np.ndarray:
        """log(-log F(x)), accurate in both tails."""

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return self.dist.logpdf(x)

    def isf(self, q: np.ndarray) -> np.ndarray:
        return self.dist.isf(q)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(alpha={self.alpha:g})"


class LogNormalMargin(Margin):
    family = "lognormal"
    lower = 0.0

    def validate(self):
        if not math.isfinite(self.alpha) or self.alpha <= 0:
            raise InvalidParameterError(f"LogNormal margin needs alpha > 0, got {self.alpha}")

    def build(self):
        return stats.lognorm(s=self.alpha, scale=math.exp(-0.5 * self.alpha ** 2))

    def log_neg_logcdf(self, x):
        w = (np.log(x) + 0.5 * self.alpha ** 2) / self.alpha
        with np.errstate(divide="ignore"):
            return np.where(w > 6.0, log_ndtr(-w), np.log(-log_ndtr(np.minimum(w, 6.0))))


class WeibullMargin(Margin):
    family = "weibull"
    lower = 0.0

    def validate(self):
        if not math.isfinite(self.alpha) or self.alpha <= 0:
            raise InvalidParameterError(f"Weibull margin needs alpha > 0, got {self.alpha}")

    def build(self):
        return stats.weibull_min(self.alpha, scale=1.0 / gamma_fn(1.0 + 1.0 / self.alpha))

    def log_neg_logcdf(self, x):
        y = (np.asarray(x, dtype=float) / self.dist.kwds["scale"]) ** self.alpha
        with np.errstate(divide="ignore"):
            small = np.log(-np.log(-np.expm1(-np.minimum(y, 30.0))))
        return np.where(y > 30.0, -y, small)


class FrechetMargin(Margin):
    family = "frechet"
    lower = 1.0

    def validate(self):
        if not math.isfinite(self.alpha) or self.alpha <= 1:
            raise InvalidParameterError(
                f"Frechet margin needs alpha > 1 for a finite mean, got {self.alpha}")

    def build(self):
        return stats.invweibull(self.alpha, scale=1.0 / gamma_fn(1.0 - 1.0 / self.alpha))

    def log_neg_logcdf(self, x):
        return -self.alpha * np.log(np.asarray(x, dtype=float) / self.dist.kwds["scale"])


MARGINS = {"lognormal": LogNormalMargin, "weibull": WeibullMargin, "frechet": FrechetMargin}


def make_margin(family: str, alpha: float) -> Margin:
    try:
        return MARGINS[family.lower()](alpha)
    except KeyError:
        raise InvalidParameterError(f"Unknown margin family {family!r}; expected one of {sorted(MARGINS)}")
