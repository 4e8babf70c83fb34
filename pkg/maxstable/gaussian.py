"""Multivariate normal rectangle probabilities and negative-orthant moments.

Both are computed with the Genz separation-of-variables transform driven by
randomized (scrambled) Sobol point sets. Each of the R independent
scramblings gives one estimate; the reported error is three standard errors
of their mean.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.special import gammaln, log_ndtr, logsumexp, ndtri_exp
from scipy.stats import chi, qmc

from .combinatorics import ComponentSet
from .errors import DimensionCapError, InvalidParameterError, NumericalError
from .settings import get_settings

logger = logging.getLogger(__name__)

_U_EPS = 1e-16
# rows of uniforms processed per vectorized block
_BLOCK_ELEMENTS = 1 << 17


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    covariance: np.ndarray
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        cov = np.atleast_2d(np.array(self.covariance, dtype=float))
        d = cov.shape[0]
        if cov.shape != (d, d):
            raise InvalidParameterError(f"Covariance must be square, got shape {cov.shape}")
        scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
            raise InvalidParameterError("Covariance must be symmetric")
        mean = np.zeros(d) if self.mean is None else np.array(self.mean, dtype=float).reshape(d)
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]


@dataclass(frozen=True)
class ProbEstimate:
    value: float
    abs_error: float
    n_points: int
    log_value: float = field(default=float("nan"), compare=False)


def check_dimension(d: int) -> None:
    caps = get_settings().caps
    if d > caps.gaussian_dim:
        raise DimensionCapError(f"Gaussian dimension {d} exceeds cap {caps.gaussian_dim}")
    if d > caps.gaussian_dim_warn:
        logger.warning("Gaussian integrals in dimension %d (> %d) have degraded accuracy",
                       d, caps.gaussian_dim_warn)


def cholesky_with_jitter(cov: np.ndarray, scale: Optional[float] = None) -> np.ndarray:
    """Lower Cholesky factor, adding diagonal jitter 0, 1e-12 ... 1e-8 (times scale) on failure."""
    s = get_settings().gaussian
    d = cov.shape[0]
    if d == 0:
        return np.zeros((0, 0))
    if scale is None:
        diag_mean = float(np.mean(np.abs(np.diag(cov))))
        scale = diag_mean if diag_mean > 0 else 1.0
    ladder = [0.0]
    eps = s.jitter_min
    while eps <= s.jitter_max * (1 + 1e-9):
        ladder.append(eps)
        eps *= 10.0
    for eps in ladder:
        try:
            return np.linalg.cholesky(cov + eps * scale * np.eye(d))
        except np.linalg.LinAlgError:
            continue
    w = np.linalg.eigvalsh(cov)
    raise NumericalError(
        f"Covariance not factorizable after jitter {s.jitter_max:g}: "
        f"smallest eigenvalue {w[0]:.3e}, largest {w[-1]:.3e}"
    )


def check_condition(mat: np.ndarray, what: str) -> float:
    if mat.size == 0:
        return 1.0
    cond = float(np.linalg.cond(mat))
    cap = get_settings().gaussian.condition_cap
    if not np.isfinite(cond) or cond > cap:
        w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
        raise NumericalError(
            f"{what} is ill-conditioned (condition number {cond:.3e} > {cap:.0e}; "
            f"eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}])"
        )
    return cond


@lru_cache(maxsize=64)
def sobol_points(dim: int, log2n: int, shifts: int, seed: int) -> np.ndarray:
    """(shifts, 2**log2n, dim) independently scrambled Sobol point sets, read-only."""
    n = 1 << log2n
    if dim == 0:
        out = np.empty((shifts, n, 0))
    else:
        children = np.random.SeedSequence(seed).spawn(shifts)
        out = np.stack([
            qmc.Sobol(d=dim, scramble=True, seed=np.random.default_rng(child)).random_base2(log2n)
            for child in children
        ])
        np.clip(out, _U_EPS, 1.0 - _U_EPS, out=out)
    out.setflags(write=False)
    return out


def genz_order(cov: np.ndarray, upper: np.ndarray, first: Optional[int] = None,
               first_value: float = 0.0) -> np.ndarray:
    """Variable order putting the smallest conditional probability outermost.

    Each chosen variable is replaced by its truncated-normal expectation before
    the next one is selected.
    """
    d = len(upper)
    cond = np.array(cov, dtype=float)
    mean = np.zeros(d)
    remaining = list(range(d))
    order = []

    def condition_on(j: int, value: float) -> None:
        cjj = cond[j, j]
        if cjj > 0:
            mean[:] += cond[:, j] / cjj * (value - mean[j])
            cond[:] -= np.outer(cond[:, j], cond[j, :]) / cjj

    if first is not None:
        order.append(first)
        remaining.remove(first)
        condition_on(first, first_value)
    while remaining:
        best, best_a = None, None
        for j in remaining:
            sd = math.sqrt(max(cond[j, j], 0.0))
            if sd > 0:
                a = (upper[j] - mean[j]) / sd
            else:
                a = np.inf if upper[j] >= mean[j] else -np.inf
            if best is None or a < best_a:
                best, best_a = j, a
        sd = math.sqrt(max(cond[best, best], 0.0))
        if sd > 0 and np.isfinite(best_a):
            value = mean[best] - sd * math.exp(-0.5 * best_a ** 2 - 0.5 * math.log(2 * math.pi)
                                               - float(log_ndtr(best_a)))
        else:
            value = min(upper[best], mean[best])
        order.append(best)
        remaining.remove(best)
        condition_on(best, value)
    return np.asarray(order, dtype=int)


def _orthant_weight_log_constant(power: int) -> float:
    """log of integral over x <= 0 of |x|^p phi(x) dx."""
    return (power / 2.0 - 1.0) * math.log(2.0) + float(gammaln((power + 1) / 2.0)) - 0.5 * math.log(math.pi)


def _genz_log_integrand(chol: np.ndarray, upper: np.ndarray, u: np.ndarray,
                        weight_power: Optional[int] = None) -> np.ndarray:
    """log of the Genz integrand for every (row of upper, point of u) pair.

    With ``weight_power`` the first variable carries the weight |y|^p on y <= 0
    and is drawn from its normalized law (a negated chi variable).
    """
    g, d = upper.shape
    n = u.shape[0]
    logf = np.zeros((g, n))
    y = np.zeros((g, n, max(d - 1, 0)))
    start = 0
    if weight_power is not None:
        logf += weight_power * math.log(chol[0, 0]) + _orthant_weight_log_constant(weight_power)
        if d > 1:
            y[:, :, 0] = -chi.ppf(u[:, 0], df=weight_power + 1)[None, :]
        start = 1
    for i in range(start, d):
        shift = y[:, :, :i] @ chol[i, :i] if i > 0 else 0.0
        log_e = log_ndtr((upper[:, i, None] - shift) / chol[i, i])
        logf += log_e
        if i < d - 1:
            y[:, :, i] = ndtri_exp(np.log(u[None, :, i]) + log_e)
    return logf


def _shift_log_means(chol, upper, points, weight_power=None) -> np.ndarray:
    """(shifts, rows) log of the per-shift sample means."""
    shifts, n, _ = points.shape
    g, d = upper.shape
    out = np.empty((shifts, g))
    rows_per_block = max(1, _BLOCK_ELEMENTS // max(n * max(d, 1), 1))
    for r in range(shifts):
        for lo in range(0, g, rows_per_block):
            hi = min(g, lo + rows_per_block)
            logf = _genz_log_integrand(chol, upper[lo:hi], points[r], weight_power)
            out[r, lo:hi] = logsumexp(logf, axis=1) - math.log(n)
    return out


def _combine_shifts(log_means: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    shifts = log_means.shape[0]
    top = np.max(log_means, axis=0)
    ref = np.where(np.isfinite(top), top, 0.0)
    scaled = np.exp(log_means - ref)
    mean = scaled.mean(axis=0)
    se = scaled.std(axis=0, ddof=1) / math.sqrt(shifts)
    with np.errstate(divide="ignore"):
        log_est = np.log(mean) + ref
    return log_est, 3.0 * se * np.exp(ref)


def _integrate(chol, upper_row, weight_power, seed, target_err, rel_err):
    s = get_settings().gaussian
    d = upper_row.size
    total = 0
    log2n = s.qmc_log2_points
    while True:
        points = sobol_points(d - 1, log2n, s.qmc_shifts, seed)
        log_means = _shift_log_means(chol, upper_row[None, :], points, weight_power)
        log_est, err = _combine_shifts(log_means)
        total += points.shape[0] * points.shape[1]
        value = float(np.exp(log_est[0]))
        error = float(err[0])
        done = error <= target_err or (rel_err is not None and error <= rel_err * value)
        if done or log2n >= s.qmc_max_log2_points:
            if not done:
                logger.debug("QMC stopped at 2^%d points per shift with error %.2e", log2n, error)
            return float(log_est[0]), error, total
        log2n += 1


def mvn_cdf(upper, g: GaussianSpec, target_err: Optional[float] = None, seed: int = 0,
            rel_err: Optional[float] = None) -> ProbEstimate:
    """Pr(X <= upper) for X ~ g, randomized QMC over the Genz transform."""
    s = get_settings().gaussian
    target_err = s.target_err if target_err is None else target_err
    if target_err <= 0:
        raise InvalidParameterError(f"target_err must be positive, got {target_err}")
    b = np.asarray(upper, dtype=float).reshape(g.dim) - g.mean
    check_dimension(b.size)
    if np.any(np.isnan(b)):
        raise InvalidParameterError("Upper bounds must not be NaN")
    if np.any(b == -np.inf):
        return ProbEstimate(0.0, 0.0, 0, -np.inf)
    keep = np.isfinite(b)
    b = b[keep]
    cov = g.covariance[np.ix_(keep, keep)]
    d = b.size
    if d == 0:
        return ProbEstimate(1.0, 0.0, 0, 0.0)
    if d == 1:
        sd = math.sqrt(max(cov[0, 0], s.jitter_min))
        lv = float(log_ndtr(b[0] / sd))
        return ProbEstimate(math.exp(lv), 0.0, 1, lv)
    order = genz_order(cov, b)
    chol = cholesky_with_jitter(cov[np.ix_(order, order)])
    lv, err, n = _integrate(chol, b[order], None, seed, target_err, rel_err)
    return ProbEstimate(min(max(math.exp(lv), 0.0), 1.0), err, n, lv)


def mvn_orthant_moment(g: GaussianSpec, weight_index: int, power: int, seed: int = 0,
                       target_err: Optional[float] = None,
                       rel_err: Optional[float] = None) -> ProbEstimate:
    """E[|Y_k|^p 1{Y <= 0}] for centered Y ~ g.

    The value is a moment, not a probability, so it may exceed 1 when p > 0.
    """
    s = get_settings().gaussian
    target_err = s.target_err if target_err is None else target_err
    d = g.dim
    check_dimension(d)
    if power < 0 or int(power) != power:
        raise InvalidParameterError(f"power must be a nonnegative integer, got {power}")
    if not 0 <= weight_index < d:
        raise InvalidParameterError(f"weight_index {weight_index} outside 0..{d - 1}")
    if np.any(g.mean != 0):
        raise InvalidParameterError("mvn_orthant_moment needs a centered Gaussian")
    power = int(power)
    cov = g.covariance
    if d == 1:
        sd = math.sqrt(max(cov[0, 0], 0.0))
        if sd == 0:
            raise InvalidParameterError("mvn_orthant_moment needs a positive variance")
        lv = power * math.log(sd) + _orthant_weight_log_constant(power)
        return ProbEstimate(math.exp(lv), 0.0, 1, lv)
    sd_k = math.sqrt(max(cov[weight_index, weight_index], 0.0))
    order = genz_order(cov, np.zeros(d), first=weight_index,
                       first_value=-sd_k * float(chi.mean(power + 1)))
    chol = cholesky_with_jitter(cov[np.ix_(order, order)])
    lv, err, n = _integrate(chol, np.zeros(d), power, seed, target_err, rel_err)
    return ProbEstimate(math.exp(lv), err, n, lv)


def conditional_gaussian(g: GaussianSpec, B: ComponentSet) -> Tuple[np.ndarray, np.ndarray]:
    """Regression matrix Sigma_{B^c B} Sigma_B^{-1} and Schur complement Sigma_{B^c|B}."""
    cov = g.covariance
    b = B.indices
    c = B.complement().indices
    if c.size == 0:
        return np.zeros((0, b.size)), np.zeros((0, 0))
    sigma_b = cov[np.ix_(b, b)]
    check_condition(sigma_b, f"Sigma_B for B={B}")
    chol = cholesky_with_jitter(sigma_b)
    cross = cov[np.ix_(c, b)]
    # A = cross @ inv(Sigma_B) via two triangular solves
    tmp = np.linalg.solve(chol, cross.T)
    regression = np.linalg.solve(chol.T, tmp).T
    conditional = cov[np.ix_(c, c)] - cross @ regression.T
    return regression, 0.5 * (conditional + conditional.T)


def log_mvn_cdf_batch(cov: np.ndarray, uppers: np.ndarray, jitter_scale: Optional[float] = None,
                      log2n: Optional[int] = None, seed: Optional[int] = None,
                      order: Optional[np.ndarray] = None) -> np.ndarray:
    """log Pr(X <= b) for many upper vectors b sharing one covariance.

    Uses one fixed point set, so the result is a smooth function of b (common
    random numbers across calls). Passing ``order`` keeps the variable order
    fixed as well.
    """
    s = get_settings().gaussian
    uppers = np.atleast_2d(np.asarray(uppers, dtype=float))
    g, d = uppers.shape
    if d == 0:
        return np.zeros(g)
    if jitter_scale is None:
        diag_mean = float(np.mean(np.abs(np.diag(cov))))
        jitter_scale = diag_mean if diag_mean > 0 else 1.0
    if d == 1:
        sd = math.sqrt(max(cov[0, 0], s.jitter_min * jitter_scale))
        return log_ndtr(uppers[:, 0] / sd)
    check_dimension(d)
    dead = np.any(uppers == -np.inf, axis=1)
    work = np.where(dead[:, None], 0.0, uppers)
    if order is None:
        order = genz_order(cov, np.median(work, axis=0))
    chol = cholesky_with_jitter(cov[np.ix_(order, order)], scale=jitter_scale)
    points = sobol_points(d - 1, s.kernel_log2_points if log2n is None else log2n, s.qmc_shifts,
                          s.kernel_seed if seed is None else seed)
    flat = points.reshape(-1, d - 1)
    out = np.empty(g)
    n = flat.shape[0]
    rows_per_block = max(1, _BLOCK_ELEMENTS // max(n, 1))
    for lo in range(0, g, rows_per_block):
        hi = min(g, lo + rows_per_block)
        logf = _genz_log_integrand(chol, work[lo:hi][:, order], flat)
        out[lo:hi] = logsumexp(logf, axis=1) - math.log(n)
    out[dead] = -np.inf
    return out
