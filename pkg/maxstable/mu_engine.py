"""mu(B; z) = int_0^inf g^|B| lambda(g; B, z) dg, V*(z) and their theta-gradients.

All public values are computed in log space first. Strategies:

* QUADRATURE: adaptive composite Gauss-Legendre on u in (0, 1), g = u/(1-u)
* ANALYTIC_GAUSSIAN: one negative-orthant moment of a (|B^c|+1)-dim Gaussian
* ANALYTIC_LOGNORMAL: closed factor times a |B^c|-dim normal probability
* ARCHIMEDEAN_QUADRATURE: the quadrature rule on the clustered kernel
* MONTE_CARLO: average of a(V_s) over one shared unit-Pareto sample
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .combinatorics import ComponentSet, enumerate_nonempty_subsets
from .errors import InvalidParameterError, ModelMismatchError, NumericalError
from .gaussian import GaussianSpec, mvn_cdf, mvn_orthant_moment
from .settings import get_settings
from .spectral import LOG_2PI, SpectralKind, SpectralModel

logger = logging.getLogger(__name__)

# relative QMC accuracy requested on the analytic paths
ANALYTIC_REL_ERR = 1e-6


class StrategyKind(str, Enum):
    QUADRATURE = "quadrature"
    ANALYTIC_GAUSSIAN = "analytic_gaussian"
    ANALYTIC_LOGNORMAL = "analytic_lognormal"
    ARCHIMEDEAN_QUADRATURE = "archimedean_quadrature"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True, eq=False)
class SharedMcSample:
    """S unit-Pareto draws reused for every mu evaluation of a fit."""

    values: np.ndarray
    seed: int

    @property
    def size(self) -> int:
        return self.values.size

    @classmethod
    def create(cls, size: int, seed: int) -> "SharedMcSample":
        if size < 1:
            raise InvalidParameterError(f"Shared sample size must be positive, got {size}")
        values = np.random.default_rng(seed).pareto(1.0, size) + 1.0
        values.setflags(write=False)
        return cls(values, seed)


@dataclass(frozen=True)
class MuStrategy:
    kind: StrategyKind
    sample: Optional[SharedMcSample] = field(default=None, compare=False)
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind == StrategyKind.MONTE_CARLO and self.sample is None:
            raise InvalidParameterError("MONTE_CARLO strategy needs a SharedMcSample")

    @classmethod
    def monte_carlo(cls, sample: SharedMcSample) -> "MuStrategy":
        return cls(StrategyKind.MONTE_CARLO, sample)


_COMPATIBLE = {
    StrategyKind.QUADRATURE: set(SpectralKind),
    StrategyKind.ANALYTIC_GAUSSIAN: {SpectralKind.GAUSSIAN},
    StrategyKind.ANALYTIC_LOGNORMAL: {SpectralKind.LOGNORMAL},
    StrategyKind.ARCHIMEDEAN_QUADRATURE: {SpectralKind.CLUSTERED_ARCHIMEDEAN},
    StrategyKind.MONTE_CARLO: set(SpectralKind),
}


def default_strategy(model: SpectralModel) -> MuStrategy:
    if model.kind == SpectralKind.LOGNORMAL:
        return MuStrategy(StrategyKind.ANALYTIC_LOGNORMAL)
    if model.kind == SpectralKind.CLUSTERED_ARCHIMEDEAN:
        return MuStrategy(StrategyKind.ARCHIMEDEAN_QUADRATURE)
    return MuStrategy(StrategyKind.QUADRATURE)


def _check_strategy(model: SpectralModel, strategy: MuStrategy) -> None:
    if model.kind not in _COMPATIBLE[strategy.kind]:
        raise ModelMismatchError(f"Strategy {strategy.kind.value} cannot evaluate a {model.kind.value} model")


# quadrature

@lru_cache(maxsize=8)
def _legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return nodes, np.log(weights)


@dataclass(frozen=True, eq=False)
class QuadratureResult:
    log_value: float
    residual: float
    panels: np.ndarray  # (P, 2) leaf intervals in u

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def _panel_log_values(log_f, lo: np.ndarray, hi: np.ndarray, nodes: int) -> np.ndarray:
    """log of the Gauss-Legendre estimate on every interval [lo_i, hi_i]."""
    x, log_w = _legendre(nodes)
    half = 0.5 * (hi - lo)
    u = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    vals = np.asarray(log_f(u.reshape(-1)), dtype=float).reshape(u.shape)
    with np.errstate(divide="ignore"):
        return logsumexp(vals + log_w[None, :], axis=1) + np.log(half)


def _halves(log_f, lo, hi, nodes):
    mid = 0.5 * (lo + hi)
    both = _panel_log_values(log_f, np.concatenate([lo, mid]), np.concatenate([mid, hi]), nodes)
    n = lo.size
    return both[:n], both[n:]


def integrate_log(log_f, rel_tol: Optional[float] = None, max_panels: Optional[int] = None,
                  nodes: Optional[int] = None, initial_panels: Optional[int] = None) -> QuadratureResult:
    """Adaptive bisection of int_0^1 exp(log_f(u)) du.

    Each panel keeps a coarse rule and the sum of its two halves; panels whose
    difference exceeds their share of the tolerance are split.
    """
    q = get_settings().quadrature
    rel_tol = q.rel_tol if rel_tol is None else rel_tol
    max_panels = q.max_panels if max_panels is None else max_panels
    nodes = q.nodes if nodes is None else nodes
    initial_panels = q.initial_panels if initial_panels is None else initial_panels

    edges = np.linspace(0.0, 1.0, initial_panels + 1)
    lo, hi = edges[:-1], edges[1:]
    coarse = _panel_log_values(log_f, lo, hi, nodes)
    left, right = _halves(log_f, lo, hi, nodes)
    while True:
        fine = np.logaddexp(left, right)
        ref = float(np.max(fine))
        if ref == -np.inf:
            return QuadratureResult(-np.inf, 0.0, np.column_stack([lo, hi]))
        err = np.abs(np.exp(fine - ref) - np.exp(np.where(np.isfinite(coarse), coarse, -np.inf) - ref))
        total = float(np.sum(np.exp(fine - ref)))
        log_total = ref + math.log(total)
        residual = float(np.sum(err)) / total
        if not np.isfinite(log_total):
            raise NumericalError("Quadrature produced a non-finite value", last_estimate=log_total,
                                 residual=residual)
        if residual <= rel_tol:
            return QuadratureResult(log_total, residual, np.column_stack([lo, hi]))
        split = err > rel_tol * total / lo.size
        if not split.any():
            split = err >= np.max(err)
        if lo.size + int(split.sum()) > max_panels:
            raise NumericalError(
                f"Quadrature did not reach rel_tol {rel_tol:g} within {max_panels} panels "
                f"(estimate {math.exp(log_total):.6e}, residual {residual:.2e})",
                last_estimate=math.exp(log_total), residual=residual)
        mid = 0.5 * (lo[split] + hi[split])
        new_lo = np.concatenate([lo[~split], lo[split], mid])
        new_hi = np.concatenate([hi[~split], mid, hi[split]])
        new_coarse = np.concatenate([coarse[~split], left[split], right[split]])
        keep_l, keep_r = left[~split], right[~split]
        sub_l, sub_r = _halves(log_f, np.concatenate([lo[split], mid]),
                               np.concatenate([mid, hi[split]]), nodes)
        order = np.argsort(new_lo, kind="stable")
        lo, hi, coarse = new_lo[order], new_hi[order], new_coarse[order]
        left = np.concatenate([keep_l, sub_l])[order]
        right = np.concatenate([keep_r, sub_r])[order]


def integrate_log_fixed(log_f, panels: np.ndarray, nodes: Optional[int] = None) -> float:
    """The same composite rule on a frozen panel set (smooth in the integrand)."""
    nodes = get_settings().quadrature.nodes if nodes is None else nodes
    left, right = _halves(log_f, panels[:, 0], panels[:, 1], nodes)
    return float(logsumexp(np.concatenate([left, right])))


def _mu_integrand(model: SpectralModel, B: ComponentSet, z: np.ndarray, seed: Optional[int]):
    k = len(B)

    def log_f(u: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            gam = u / (1.0 - u)
            out = k * np.log(gam) + model.log_kernel(gam, B, z, seed) - 2.0 * np.log1p(-u)
        return np.where(np.isnan(out), -np.inf, out)

    return log_f


# analytic reductions

def _log_mu_analytic_gaussian(model, B: ComponentSet, z: np.ndarray, seed: Optional[int]) -> float:
    f = model.block(B)
    k = f.b.size
    zb = z[f.b]
    q2 = float(zb @ f.solve(zb))
    q = math.sqrt(q2)
    # f.log_norm already holds -(k/2) log 2 pi - (1/2) log det Sigma_B
    log_const = f.log_norm + 0.5 * LOG_2PI - (k + 1) * math.log(q)
    if f.c.size == 0:
        mom = mvn_orthant_moment(GaussianSpec(np.ones((1, 1))), 0, k)
        return log_const + mom.log_value
    w = (z[f.c] - f.regression @ zb) / q
    d = f.c.size + 1
    cov = np.empty((d, d))
    cov[0, 0] = 1.0
    cov[0, 1:] = w
    cov[1:, 0] = w
    cov[1:, 1:] = f.conditional + np.outer(w, w)
    mom = mvn_orthant_moment(GaussianSpec(cov), 0, k, seed=seed or 0, rel_err=ANALYTIC_REL_ERR)
    return log_const + mom.log_value


def _log_mu_analytic_lognormal(model, B: ComponentSet, z: np.ndarray, seed: Optional[int]) -> float:
    f = model.block(B)
    k = f.b.size
    ones = np.ones(k)
    l0 = np.log(z[f.b]) + model.nu[f.b]
    p_l0 = f.solve(l0)
    p_one = f.solve(ones)
    epe = float(ones @ p_one)
    epl = float(ones @ p_l0)
    s2 = 1.0 / epe
    t0 = (1.0 - epl) / epe
    log_val = (f.log_norm + 0.5 * LOG_2PI + 0.5 * math.log(s2) - float(np.sum(np.log(z[f.b])))
               + 0.5 * (epl - 1.0) ** 2 / epe - 0.5 * float(l0 @ p_l0))
    if f.c.size == 0:
        return log_val
    a = np.log(z[f.c]) + model.nu[f.c] - f.regression @ l0
    beta = 1.0 - f.regression @ ones
    cov = f.conditional + s2 * np.outer(beta, beta)
    prob = mvn_cdf(a + beta * t0, GaussianSpec(cov), seed=seed or 0, rel_err=ANALYTIC_REL_ERR)
    return log_val + prob.log_value


def _log_mu_monte_carlo(model, B: ComponentSet, z: np.ndarray, sample: SharedMcSample,
                        seed: Optional[int]) -> float:
    v = sample.values
    k = len(B)
    log_v = np.log(v)
    low = -k * log_v + model.log_kernel(1.0 / v, B, z, seed)
    high = (2 + k) * log_v + model.log_kernel(v, B, z, seed)
    return float(logsumexp(np.logaddexp(low, high)) - math.log(v.size))


# public operations

def _prepare(model: SpectralModel, B: ComponentSet, z) -> Tuple[np.ndarray, float]:
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.dim:
        raise InvalidParameterError(f"z has {z.size} entries, model dimension is {model.dim}")
    if not np.all(np.isfinite(z)) or np.any(z <= 0):
        raise InvalidParameterError("z must be strictly positive and finite")
    if len(B) == 0 or B.m != model.dim:
        raise InvalidParameterError(f"B={B} is not a nonempty subset of {model.dim} components")
    log_c = float(np.mean(np.log(z)))
    return z / math.exp(log_c), log_c


def log_mu_with_panels(model: SpectralModel, B: ComponentSet, z, strategy: Optional[MuStrategy] = None,
                       panels: Optional[np.ndarray] = None) -> Tuple[float, Optional[np.ndarray]]:
    """log mu(B; z) and, for quadrature strategies, the leaf panels used.

    With ``panels`` given the adaptive search is skipped and the frozen rule is applied.
    z is scaled by its geometric mean c first and the result shifted by
    -(|B|+1) log c (homogeneity).
    """
    strategy = strategy or default_strategy(model)
    _check_strategy(model, strategy)
    zs, log_c = _prepare(model, B, z)
    shift = -(len(B) + 1) * log_c
    kind = strategy.kind
    if kind in (StrategyKind.QUADRATURE, StrategyKind.ARCHIMEDEAN_QUADRATURE):
        log_f = _mu_integrand(model, B, zs, strategy.seed)
        if panels is not None:
            return integrate_log_fixed(log_f, panels) + shift, panels
        res = integrate_log(log_f)
        return res.log_value + shift, res.panels
    if kind == StrategyKind.ANALYTIC_GAUSSIAN:
        return _log_mu_analytic_gaussian(model, B, zs, strategy.seed) + shift, None
    if kind == StrategyKind.ANALYTIC_LOGNORMAL:
        return _log_mu_analytic_lognormal(model, B, zs, strategy.seed) + shift, None
    return _log_mu_monte_carlo(model, B, zs, strategy.sample, strategy.seed) + shift, None


def log_mu(model: SpectralModel, B: ComponentSet, z, strategy: Optional[MuStrategy] = None) -> float:
    return log_mu_with_panels(model, B, z, strategy)[0]


def mu(model: SpectralModel, B: ComponentSet, z, strategy: Optional[MuStrategy] = None) -> float:
    return math.exp(log_mu(model, B, z, strategy))


def singleton_log_mus(model: SpectralModel, z, strategy: Optional[MuStrategy] = None) -> np.ndarray:
    m = model.dim
    return np.array([log_mu(model, ComponentSet((l,), m), z, strategy) for l in range(m)])


def v_star(model: SpectralModel, z, strategy: Optional[MuStrategy] = None) -> float:
    """V*(z) = sum_l z_l mu({l}; z)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    return math.fsum(z * np.exp(singleton_log_mus(model, z, strategy)))


def v_star_monte_carlo(model: SpectralModel, z, draws: int, seed) -> Tuple[float, float]:
    """Direct estimate of E[max_j U_j^+ / z_j] and its standard error."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if draws < 2:
        raise InvalidParameterError("v_star_monte_carlo needs at least 2 draws")
    rng = np.random.default_rng(seed)
    chunk = 1 << 16
    total, total_sq, done = 0.0, 0.0, 0
    while done < draws:
        n = min(chunk, draws - done)
        u = model.sample(n, rng)
        vals = np.max(np.maximum(u, 0.0) / z[None, :], axis=1)
        total += math.fsum(vals)
        total_sq += math.fsum(vals ** 2)
        done += n
    mean = total / draws
    var = max(total_sq / draws - mean ** 2, 0.0) * draws / (draws - 1)
    return mean, math.sqrt(var / draws)


def v_b_star(model: SpectralModel, B: ComponentSet, z, seed: Optional[int] = None) -> float:
    """V_B*(z) = int_0^inf Pr(U_B > g z_B, U_{B^c} <= g z_{B^c}) dg by adaptive quadrature."""
    zs, log_c = _prepare(model, B, z)

    def log_f(u):
        with np.errstate(divide="ignore"):
            gam = u / (1.0 - u)
            return np.log(model.rect_prob(gam, B, zs, seed)) - 2.0 * np.log1p(-u)

    res = integrate_log(log_f)
    return math.exp(res.log_value - log_c)


def p_b_weights(model: SpectralModel, z, seed: Optional[int] = None) -> Dict[ComponentSet, float]:
    """p_B(z) = V_B*(z) / V*(z) over every nonempty B (normalized to sum to one)."""
    cap = get_settings().caps.v_b_star
    raw = {B: v_b_star(model, B, z, seed) for B in enumerate_nonempty_subsets(model.dim, cap=cap)}
    total = math.fsum(raw.values())
    if not total > 0:
        raise NumericalError("All V_B* values vanished", last_estimate=total)
    return {B: v / total for B, v in raw.items()}


def _fd_steps(model: SpectralModel) -> List[Tuple[float, float, float]]:
    """(value, minus offset, plus offset) per free parameter, one-sided at bounds."""
    base = get_settings().fd_step
    steps = []
    for p in model.theta.free:
        h = base * max(1.0, abs(p.value))
        lo_ok = p.value - h > p.lower
        hi_ok = p.value + h < p.upper
        if lo_ok and hi_ok:
            steps.append((p.value, -h, h))
        elif hi_ok:
            logger.warning("%s=%g is within %g of its lower bound; using a forward difference", p.name, p.value, h)
            steps.append((p.value, 0.0, h))
        elif lo_ok:
            logger.warning("%s=%g is within %g of its upper bound; using a backward difference", p.name, p.value, h)
            steps.append((p.value, -h, 0.0))
        else:
            raise InvalidParameterError(f"No room for a finite difference on {p.name}={p.value}")
    return steps


def grad_log_mu(model: SpectralModel, B: ComponentSet, z, strategy: Optional[MuStrategy] = None,
                base: Optional[Tuple[float, Optional[np.ndarray]]] = None) -> np.ndarray:
    """Finite-difference gradient of log mu over the free parameters.

    The quadrature panels, QMC points and shared Monte-Carlo sample of the base
    evaluation are reused at theta +- h.
    """
    strategy = strategy or default_strategy(model)
    if base is None:
        base = log_mu_with_panels(model, B, z, strategy)
    base_value, panels = base
    free = model.theta.free_values
    grad = np.zeros(free.size)
    for i, (value, dm, dp) in enumerate(_fd_steps(model)):
        vals = []
        for offset in (dm, dp):
            if offset == 0.0:
                vals.append(base_value)
                continue
            shifted = free.copy()
            shifted[i] = value + offset
            vals.append(log_mu_with_panels(model.with_free_values(shifted), B, z, strategy, panels)[0])
        diff = vals[1] - vals[0]
        # both sides -inf: the block carries no mass either way
        grad[i] = 0.0 if not np.isfinite(diff) and vals[0] == vals[1] else diff / (dp - dm)
    return grad


def grad_mu(model: SpectralModel, B: ComponentSet, z, strategy: Optional[MuStrategy] = None) -> np.ndarray:
    base = log_mu_with_panels(model, B, z, strategy)
    return math.exp(base[0]) * grad_log_mu(model, B, z, strategy, base)


def grad_v_star(model: SpectralModel, z, strategy: Optional[MuStrategy] = None) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    m = model.dim
    out = np.zeros(len(model.theta.free))
    for l in range(m):
        out += z[l] * grad_mu(model, ComponentSet((l,), m), z, strategy)
    return out


def log_mu_table(model: SpectralModel, z, strategy: Optional[MuStrategy] = None,
                 masks: Optional[Sequence[int]] = None) -> Dict[int, Tuple[float, Optional[np.ndarray]]]:
    """log mu and panels keyed by subset bitmask (all nonempty subsets by default)."""
    m = model.dim
    masks = range(1, 1 << m) if masks is None else masks
    return {mk: log_mu_with_panels(model, ComponentSet.from_mask(mk, m), z, strategy) for mk in masks}
