"""Nelder-Mead fits of every likelihood kind and their asymptotic covariances."""
import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import minimize

from . import __version__
from .data_pipeline import censor_sample
from .errors import DataError, InvalidParameterError, MaxStableError, NumericalError
from .likelihoods import (
    BlockMaximaRecord,
    ExceedanceRecord,
    LikelihoodKind,
    LikelihoodName,
    evaluate,
    scores,
)
from .mu_engine import MuStrategy, SharedMcSample, v_star
from .parameters import Parameter, ThetaVector
from .settings import get_settings
from .spectral import ClusteredArchimedeanSpectral, SpectralModel

logger = logging.getLogger(__name__)

MARGINS_ESTIMATED_NOTE = "margins-estimated: variance approximate"


class OptimizerOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_iters: int = Field(gt=0)
    simplex_scale: float = Field(gt=0)
    f_rtol: float = Field(gt=0)
    x_rtol: float = Field(gt=0)
    restarts: int = Field(ge=0)

    @classmethod
    def from_settings(cls, **overrides) -> "OptimizerOptions":
        return cls(**{**get_settings().optimizer.model_dump(), **overrides})


class CovarianceMethod(str, Enum):
    FULL_INFO = "full_info"
    SANDWICH = "sandwich"
    CENSORED_INFO = "censored_info"
    OCCURRENCE_INFO = "occurrence_info"
    NONE = "none"


def _bound(v: float) -> Optional[float]:
    return v if math.isfinite(v) else None


class FitReport(BaseModel):
    """Outcome of one fit, serialized as the JSON report of ``maxstable fit``."""

    model_config = ConfigDict(populate_by_name=True)

    schema_version: int = Field(1, alias="schema")
    version: str = __version__
    likelihood: str
    parameters: List[Dict[str, Any]]
    theta_hat: Dict[str, float]
    loglik: float
    converged: bool
    reason: str
    covariance: Optional[List[List[float]]] = None
    covariance_method: CovarianceMethod = CovarianceMethod.NONE
    standard_errors: Optional[Dict[str, float]] = None
    information: Optional[str] = None
    n_obs: int
    k_effective: Optional[float] = None
    iterations: int = 0
    evaluations: int = 0
    wall_time: float = 0.0
    mean_score_inf: Optional[float] = None
    margins_estimated: bool = False
    notes: List[str] = Field(default_factory=list)
    smle: Optional[Dict[str, Any]] = None
    config: Optional[Dict[str, Any]] = None

    def theta(self) -> ThetaVector:
        return ThetaVector([
            Parameter(p["name"], p["value"],
                      lower=-math.inf if p["lower"] is None else p["lower"],
                      upper=math.inf if p["upper"] is None else p["upper"],
                      fixed=p["fixed"])
            for p in self.parameters
        ])

    def covariance_matrix(self) -> Optional[np.ndarray]:
        return None if self.covariance is None else np.asarray(self.covariance, dtype=float)

    def to_json_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)


def _parameter_rows(theta: ThetaVector) -> List[Dict[str, Any]]:
    rows = []
    for p in theta:
        row = p.to_dict()
        row["lower"], row["upper"] = _bound(p.lower), _bound(p.upper)
        rows.append(row)
    return rows


# optimizer

def _initial_simplex(x0: np.ndarray, scale: float) -> np.ndarray:
    p = x0.size
    simplex = np.tile(x0, (p + 1, 1))
    for i in range(p):
        simplex[i + 1, i] += scale * max(1.0, abs(x0[i]))
    return simplex


def _perturbed_simplex(x0: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    p = x0.size
    steps = scale * np.maximum(1.0, np.abs(x0))
    simplex = np.tile(x0, (p + 1, 1))
    simplex[1:] += np.diag(steps) * np.sign(rng.standard_normal(p))[:, None]
    simplex += 0.25 * steps * rng.standard_normal((p + 1, p))
    return simplex


def nelder_mead(objective: Callable[[ThetaVector], float], theta0: ThetaVector,
                opts: Optional[OptimizerOptions] = None) -> Tuple[ThetaVector, float, Dict[str, Any]]:
    """Minimize ``objective`` over the free parameters on their unconstrained scale.

    Returns (theta_hat, value, diagnostics). Restarts begin from deterministic
    perturbed simplices around the incumbent and only the best point is kept.
    """
    opts = opts or OptimizerOptions.from_settings()
    f0 = float(objective(theta0))
    if not math.isfinite(f0):
        raise NumericalError(f"Objective is not finite at the initial point {theta0!r}", last_estimate=f0)
    diagnostics: Dict[str, Any] = {"iterations": 0, "evaluations": 1, "restarts": 0,
                                   "converged": True, "reason": ""}
    if not theta0.free:
        diagnostics["reason"] = "no free parameters"
        return theta0, f0, diagnostics

    x0 = theta0.to_unconstrained()
    counter = [0]

    def f(x: np.ndarray) -> float:
        counter[0] += 1
        try:
            v = float(objective(theta0.from_unconstrained(x)))
        except (NumericalError, InvalidParameterError) as e:
            logger.debug("Objective failed at %s: %s", x, e)
            return math.inf
        return v if math.isfinite(v) else math.inf

    fatol = opts.f_rtol * max(1.0, abs(f0))
    xatol = opts.x_rtol * max(1.0, float(np.max(np.abs(x0))))
    simplex = _initial_simplex(x0, opts.simplex_scale)
    vertex_values = np.array([f(v) for v in simplex[1:]])
    if np.all(np.abs(vertex_values - f0) <= fatol):
        diagnostics.update(evaluations=1 + counter[0], reason="objective flat around the initial point")
        return theta0, f0, diagnostics

    p = x0.size
    best_x, best_f, best_res = x0, f0, None
    for r in range(opts.restarts + 1):
        start = simplex if r == 0 else _perturbed_simplex(best_x, opts.simplex_scale, np.random.default_rng(r))
        res = minimize(f, start[0], method="Nelder-Mead",
                       options={"initial_simplex": start, "maxiter": opts.max_iters,
                                "maxfev": opts.max_iters * (p + 1), "xatol": xatol, "fatol": fatol})
        diagnostics["iterations"] += int(res.nit)
        logger.debug("Nelder-Mead run %d: f=%.10g after %d iterations (%s)", r, res.fun, res.nit, res.message)
        if best_res is None or res.fun < best_f:
            best_x, best_f, best_res = np.asarray(res.x, dtype=float), float(res.fun), res
    diagnostics.update(evaluations=1 + counter[0], restarts=opts.restarts,
                       converged=bool(best_res.success), reason=str(best_res.message))
    if not best_res.success:
        logger.warning("Nelder-Mead stopped before tolerance: %s", best_res.message)
    if best_f > f0:
        return theta0, f0, diagnostics
    return theta0.from_unconstrained(best_x), best_f, diagnostics


# covariances

def _invert_information(info: np.ndarray, what: str) -> Optional[np.ndarray]:
    info = 0.5 * (info + info.T)
    if info.size == 0:
        return np.zeros((0, 0))
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        logger.warning("%s information matrix is singular or not positive definite; covariance omitted", what)
        return None
    inv_chol = np.linalg.inv(chol)
    return inv_chol.T @ inv_chol


def _opg(score_matrix: np.ndarray) -> np.ndarray:
    s = np.atleast_2d(np.asarray(score_matrix, dtype=float))
    return s.T @ s / s.shape[0]


def covariance_full(score_matrix: np.ndarray, hessian: Optional[np.ndarray], n: int,
                    sandwich: bool = False) -> Optional[np.ndarray]:
    """I^{-1}/n (MLE) or I^{-1} J I^{-1}/n (composite likelihoods).

    I = -hessian of the mean log-likelihood; with ``hessian=None`` the outer
    product of scores stands in for I (information identity).
    """
    if n < 1:
        raise DataError("covariance_full needs n >= 1")
    J = _opg(score_matrix)
    I = J if hessian is None else -np.asarray(hessian, dtype=float)
    I_inv = _invert_information(I, "Fisher")
    if I_inv is None:
        return None
    cov = I_inv @ J @ I_inv if sandwich else I_inv
    return 0.5 * (cov + cov.T) / n


def covariance_censored(score_matrix: np.ndarray, v_star_e: float,
                        k_effective: Optional[float] = None) -> Optional[np.ndarray]:
    """(k V*(e) I)^{-1}; by default k = N / V*(e) for N exceedances."""
    s = np.atleast_2d(np.asarray(score_matrix, dtype=float))
    n_exceed = s.shape[0]
    k = n_exceed / v_star_e if k_effective is None else k_effective
    I_inv = _invert_information(_opg(s), "Censored")
    if I_inv is None:
        return None
    return I_inv / (k * v_star_e)


def covariance_occurrence(score_matrix: np.ndarray, k: int) -> Optional[np.ndarray]:
    if k < 1:
        raise DataError("covariance_occurrence needs k >= 1")
    I_inv = _invert_information(_opg(score_matrix), "Occurrence")
    return None if I_inv is None else I_inv / k


def score_hessian(model: SpectralModel, kind: LikelihoodKind, observations: Sequence,
                  strategy: Optional[MuStrategy] = None, threads: Optional[int] = None,
                  step: Optional[float] = None) -> np.ndarray:
    """Central differences of the mean score over the free parameters."""
    step = get_settings().hessian_step if step is None else step
    free = model.theta.free
    values = model.theta.free_values
    p = values.size
    H = np.zeros((p, p))
    for i, par in enumerate(free):
        h = step * max(1.0, abs(par.value))
        lo = max(par.value - h, 0.5 * (par.value + par.lower) if math.isfinite(par.lower) else -math.inf)
        hi = min(par.value + h, 0.5 * (par.value + par.upper) if math.isfinite(par.upper) else math.inf)
        cols = []
        for v in (lo, hi):
            shifted = values.copy()
            shifted[i] = v
            cols.append(scores(model.with_free_values(shifted), kind, observations, strategy, threads).mean(axis=0))
        H[:, i] = (cols[1] - cols[0]) / (hi - lo)
    return 0.5 * (H + H.T)


# fitting

def _observations(dataset, kind: LikelihoodKind) -> List:
    if isinstance(dataset, np.ndarray):
        if kind.name in (LikelihoodName.CENSORED, LikelihoodName.OCCURRENCE):
            raise DataError(f"{kind.name.value} fits need records, not a raw matrix")
        data = np.atleast_2d(dataset)
        return [row for row in data] if data.size else []
    return list(dataset)


def fit(dataset, model: SpectralModel, kind: LikelihoodKind, theta0: Optional[ThetaVector] = None,
        opts: Optional[OptimizerOptions] = None, strategy: Optional[MuStrategy] = None,
        threads: Optional[int] = None, information: str = "hessian",
        margins_estimated: bool = False, with_covariance: bool = True) -> FitReport:
    """Maximize the summed log-likelihood of ``dataset`` under ``kind``.

    ``dataset`` is an (n, m) matrix for the full, partition and pairwise kinds,
    a list of ExceedanceRecord for the censored kind and a list of
    BlockMaximaRecord for the occurrence kind.
    """
    observations = _observations(dataset, kind)
    n = len(observations)
    if n == 0:
        raise DataError("Cannot fit an empty dataset")
    if information not in ("hessian", "opg"):
        raise InvalidParameterError(f"information must be 'hessian' or 'opg', got {information!r}")
    theta0 = model.theta if theta0 is None else theta0
    start = time.perf_counter()

    def objective(theta: ThetaVector) -> float:
        return -evaluate(model.with_theta(theta), kind, observations, strategy, threads).loglik / n

    theta_hat, value, diag = nelder_mead(objective, theta0, opts)
    fitted = model.with_theta(theta_hat)
    report = FitReport(
        likelihood=kind.name.value,
        parameters=_parameter_rows(theta_hat),
        theta_hat=theta_hat.as_dict(),
        loglik=-value * n,
        converged=diag["converged"],
        reason=diag["reason"],
        n_obs=n,
        iterations=diag["iterations"],
        evaluations=diag["evaluations"],
        margins_estimated=margins_estimated,
    )
    if kind.name == LikelihoodName.OCCURRENCE:
        report.k_effective = float(n)
    if margins_estimated:
        report.notes.append(MARGINS_ESTIMATED_NOTE)
        logger.warning("Margins were estimated; the reported covariance ignores that step")
    if report.converged and theta_hat.free and with_covariance:
        _attach_covariance(report, fitted, kind, observations, strategy, threads, information)
    elif not report.converged:
        report.notes.append("covariance omitted: optimizer did not converge")
    report.wall_time = time.perf_counter() - start
    return report


def _attach_covariance(report: FitReport, model: SpectralModel, kind: LikelihoodKind,
                       observations: List, strategy: Optional[MuStrategy], threads: Optional[int],
                       information: str) -> None:
    n = len(observations)
    try:
        S = scores(model, kind, observations, strategy, threads)
    except MaxStableError as e:
        logger.warning("Scores failed at the estimate (%s); covariance omitted", e)
        return
    report.mean_score_inf = float(np.max(np.abs(S.mean(axis=0))))
    name = kind.name
    cov = None
    if name == LikelihoodName.CENSORED:
        v_e = v_star(model, np.ones(model.dim), strategy)
        report.k_effective = n / v_e
        cov = covariance_censored(S, v_e)
        method = CovarianceMethod.CENSORED_INFO
    elif name == LikelihoodName.OCCURRENCE:
        cov = covariance_occurrence(S, n)
        method = CovarianceMethod.OCCURRENCE_INFO
    else:
        hessian = None
        if name != LikelihoodName.FULL or information == "hessian":
            hessian = score_hessian(model, kind, observations, strategy, threads)
        sandwich = name != LikelihoodName.FULL
        cov = covariance_full(S, hessian, n, sandwich=sandwich)
        method = CovarianceMethod.SANDWICH if sandwich else CovarianceMethod.FULL_INFO
        report.information = None if sandwich else information
    if cov is None:
        report.notes.append("covariance omitted: singular information")
        return
    report.covariance = cov.tolist()
    report.covariance_method = method
    names = model.theta.free_names
    report.standard_errors = {nm: math.sqrt(max(cov[i, i], 0.0)) for i, nm in enumerate(names)}


def fit_smle(dataset, model: SpectralModel, S: int, seed: int, theta0: Optional[ThetaVector] = None,
             opts: Optional[OptimizerOptions] = None, kind: Optional[LikelihoodKind] = None,
             threads: Optional[int] = None) -> FitReport:
    """Simulated likelihood fit: every mu uses one shared unit-Pareto sample of size S."""
    if S < 100:
        raise InvalidParameterError(f"fit_smle needs S >= 100, got {S}")
    kind = kind or LikelihoodKind.full()
    strategy = MuStrategy.monte_carlo(SharedMcSample.create(S, seed))
    report = fit(dataset, model, kind, theta0, opts, strategy, threads)
    report.smle = {"S": S, "seed": seed, "n_over_S": report.n_obs / S}
    return report


@dataclass
class TwoStepResult:
    per_cluster: List[FitReport]
    joint: FitReport


def fit_two_step(pareto_data: np.ndarray, model: ClusteredArchimedeanSpectral, k: int,
                 opts: Optional[OptimizerOptions] = None, threads: Optional[int] = None,
                 margins_estimated: bool = False) -> TwoStepResult:
    """Censored fits of each cluster's (theta_i, alpha_i), then one joint censored fit from them."""
    pareto_data = np.atleast_2d(np.asarray(pareto_data, dtype=float))
    if pareto_data.shape[1] != model.dim:
        raise DataError(f"Data has {pareto_data.shape[1]} columns, model has {model.dim}")
    per_cluster = []
    estimates: Dict[str, float] = {}
    for i, cluster in enumerate(model.clusters):
        names = model.cluster_parameter_names(i)
        sub = model.restrict(cluster.members)
        sub = sub.with_theta(sub.theta.freeze_except(names))
        records = censor_sample(pareto_data[:, cluster.indices], k)
        logger.info("Step 1, cluster %d (%d components): %d exceedances", i + 1, len(cluster), len(records))
        rep = fit(records, sub, LikelihoodKind.censored(), opts=opts, threads=threads,
                  margins_estimated=margins_estimated)
        per_cluster.append(rep)
        estimates.update({nm: rep.theta_hat[nm] for nm in names})
    start = model.theta.with_values({nm: v for nm, v in estimates.items()
                                     if not next(p for p in model.theta if p.name == nm).fixed})
    joint = fit(censor_sample(pareto_data, k), model.with_theta(start), LikelihoodKind.censored(),
                opts=opts, threads=threads, margins_estimated=margins_estimated)
    return TwoStepResult(per_cluster, joint)
