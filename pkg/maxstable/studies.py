"""Desk-scale simulation studies.

Each study simulates replicates, fits them and returns a ``StudyResult``: one
row of estimates per (replicate, method) plus a per-parameter summary (mean,
empirical SD, RMSE against the truth). Replicate seeds are spawned from one
root seed.
"""
import inspect
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .combinatorics import ComponentSet
from .data_pipeline import censor_sample, cluster_components, rank_pareto_transform
from .errors import ConfigError, InvalidParameterError
from .estimation import FitReport, OptimizerOptions, fit, fit_smle, fit_two_step
from .likelihoods import LikelihoodKind
from .simulators import SimConfig, sample_max_stable, sample_mda
from .spatial import MaternParams, SiteSet
from .spectral import (
    ArchimedeanClusterSpec,
    ClusteredArchimedeanSpectral,
    CopulaSpec,
    MarginSpec,
    build_gaussian_spectral,
    build_logistic,
)

logger = logging.getLogger(__name__)

SITE_SIDE = 2.0

# (copula, theta, margin, alpha) of the three planted clusters
PLANTED_CLUSTERS: List[Tuple[str, float, str, float]] = [
    ("gumbel", 1.7, "lognormal", 0.9),
    ("clayton", 0.4, "weibull", 1.5),
    ("gumbel", 1.2, "frechet", 1.7),
]


@dataclass
class StudyResult:
    design: str
    truth: Dict[str, float]
    estimates: pd.DataFrame
    summary: pd.DataFrame

    def to_dict(self) -> Dict[str, object]:
        return {
            "design": self.design,
            "truth": self.truth,
            "summary": self.summary.to_dict(orient="records"),
            "estimates": self.estimates.to_dict(orient="records"),
        }


def _replicate_seeds(seed: int, replicates: int) -> List[int]:
    if replicates < 1:
        raise InvalidParameterError(f"replicates must be at least 1, got {replicates}")
    return [int(ss.generate_state(1)[0]) for ss in np.random.SeedSequence(seed).spawn(replicates)]


def _row(replicate: int, method: str, report: FitReport) -> Dict[str, object]:
    return {"replicate": replicate, "method": method, "converged": report.converged,
            "loglik": report.loglik, **report.theta_hat}


def summarize(estimates: pd.DataFrame, truth: Dict[str, float]) -> pd.DataFrame:
    """Mean, empirical SD and RMSE per (method, parameter) over converged replicates."""
    rows = []
    for method, group in estimates.groupby("method", sort=False):
        ok = group[group["converged"]]
        for name, true_value in truth.items():
            if name not in ok:
                continue
            values = ok[name].to_numpy(dtype=float)
            rows.append({
                "method": method,
                "parameter": name,
                "truth": true_value,
                "mean": float(np.mean(values)) if values.size else np.nan,
                "sd": float(np.std(values, ddof=1)) if values.size > 1 else np.nan,
                "rmse": float(np.sqrt(np.mean((values - true_value) ** 2))) if values.size else np.nan,
                "n_converged": int(values.size),
                "n_replicates": int(len(group)),
            })
    return pd.DataFrame(rows)


def composite_study(m: int = 10, n: int = 40, c: float = 1.0, nu: float = 2.0, replicates: int = 20,
                    cap: int = 5, truncation: int = 1000, seed: int = 0,
                    opts: Optional[OptimizerOptions] = None, threads: Optional[int] = None,
                    progress: bool = False) -> StudyResult:
    """Partition (MpcLE, K-means blocks of at most ``cap`` sites) against pairwise (MpmLE) fits.

    Sites are uniform on [0, 2]^2 and data are approximate max-stable samples of
    the Gaussian spectral model. Both fits start at the truth. The summary gains
    a relative efficiency column, MSE(pairwise) / MSE(partition).
    """
    truth = {"c": c, "nu": nu}
    rows = []
    for r, rep_seed in enumerate(tqdm(_replicate_seeds(seed, replicates), desc="composite", disable=not progress)):
        rng = np.random.default_rng(rep_seed)
        sites = SiteSet.uniform_square(m, SITE_SIDE, rng)
        model = build_gaussian_spectral(sites, MaternParams(c, nu))
        data = sample_max_stable(SimConfig(model, n, seed=rep_seed, truncation=truncation), threads=threads)
        clustering = cluster_components(sites, cap, seed=rep_seed)
        for method, kind in (("partition", LikelihoodKind.partition(clustering)),
                             ("pairwise", LikelihoodKind.pairwise())):
            report = fit(data, model, kind, opts=opts, threads=threads, with_covariance=False)
            rows.append(_row(r, method, report))
    estimates = pd.DataFrame(rows)
    summary = summarize(estimates, truth)
    mse = summary.assign(mse=summary["rmse"] ** 2).pivot(index="parameter", columns="method", values="mse")
    summary["re"] = summary["parameter"].map(mse["pairwise"] / mse["partition"])
    return StudyResult("composite", truth, estimates, summary)


def censored_study(m: int = 5, n: int = 1000, c: float = 1.0, nu: float = 1.0, k_ratio: float = 0.1,
                   replicates: int = 20, seed: int = 0, opts: Optional[OptimizerOptions] = None,
                   threads: Optional[int] = None, progress: bool = False) -> StudyResult:
    """Censored MLE of (c, nu) on Y = U / R data, U the Gaussian spectral vector at uniform sites."""
    if not 0 < k_ratio <= 1:
        raise InvalidParameterError(f"k_ratio must lie in (0, 1], got {k_ratio}")
    truth = {"c": c, "nu": nu}
    k = max(1, int(round(k_ratio * n)))
    rows = []
    for r, rep_seed in enumerate(tqdm(_replicate_seeds(seed, replicates), desc="censored", disable=not progress)):
        rng = np.random.default_rng(rep_seed)
        model = build_gaussian_spectral(SiteSet.uniform_square(m, SITE_SIDE, rng), MaternParams(c, nu))
        data = sample_mda(SimConfig(model, n, seed=rep_seed, scaling="uniform_ratio"), threads=threads)
        records = censor_sample(data, k)
        report = fit(records, model, LikelihoodKind.censored(), opts=opts, threads=threads,
                     with_covariance=False)
        rows.append(_row(r, "censored", report))
    estimates = pd.DataFrame(rows)
    return StudyResult("censored", truth, estimates, summarize(estimates, truth))


def planted_clustered_model(sizes: Sequence[int] = (5, 4, 3)) -> ClusteredArchimedeanSpectral:
    """Contiguous clusters carrying the Gumbel/LogNormal, Clayton/Weibull and Gumbel/Frechet pairs."""
    if len(sizes) != len(PLANTED_CLUSTERS):
        raise InvalidParameterError(f"Expected {len(PLANTED_CLUSTERS)} cluster sizes, got {len(sizes)}")
    m = int(sum(sizes))
    specs = []
    start = 0
    for size, (copula, theta, margin, alpha) in zip(sizes, PLANTED_CLUSTERS):
        members = ComponentSet(tuple(range(start, start + size)), m)
        specs.append(ArchimedeanClusterSpec(members, CopulaSpec(copula, theta), MarginSpec(margin, alpha)))
        start += size
    return ClusteredArchimedeanSpectral(specs, m)


def clustered_study(sizes: Sequence[int] = (5, 4, 3), n: int = 2500, threshold: float = 10.0,
                    noise_mean: float = 10.0, replicates: int = 10, seed: int = 0,
                    opts: Optional[OptimizerOptions] = None, threads: Optional[int] = None,
                    progress: bool = False) -> StudyResult:
    """Two-step censored estimation on Y = Gamma U + E after a rank transform to unit Pareto.

    Rows of the estimates table carry method "step1" (per-cluster fits) and
    "step2" (joint fit started at the step-1 values).
    """
    model = planted_clustered_model(sizes)
    truth = model.theta.as_dict()
    k = max(1, int(round(n / threshold)))
    rows = []
    for r, rep_seed in enumerate(tqdm(_replicate_seeds(seed, replicates), desc="clustered", disable=not progress)):
        data = sample_mda(SimConfig(model, n, seed=rep_seed, noise_mean=noise_mean), threads=threads)
        result = fit_two_step(rank_pareto_transform(data), model, k, opts=opts, threads=threads,
                              margins_estimated=True)
        step1: Dict[str, float] = {}
        for rep in result.per_cluster:
            step1.update(rep.theta_hat)
        rows.append({"replicate": r, "method": "step1",
                     "converged": all(rep.converged for rep in result.per_cluster),
                     "loglik": float(sum(rep.loglik for rep in result.per_cluster)), **step1})
        rows.append(_row(r, "step2", result.joint))
    estimates = pd.DataFrame(rows)
    return StudyResult("clustered", truth, estimates, summarize(estimates, truth))


def smle_study(m: int = 3, n: int = 200, alpha: float = 2.0, sample_sizes: Sequence[int] = (100, 100000),
               replicates: int = 20, truncation: int = 1000, seed: int = 0,
               opts: Optional[OptimizerOptions] = None, threads: Optional[int] = None,
               progress: bool = False) -> StudyResult:
    """Simulated-likelihood fits of one logistic dataset across Monte-Carlo seeds and sizes S.

    The exact full-likelihood fit is stored under method "exact"; each S adds
    ``replicates`` rows under method "smle_S". The spread across seeds shrinks as
    S grows relative to n.
    """
    truth = {"alpha_1": alpha}
    model = build_logistic(m, alpha)
    data = sample_max_stable(SimConfig(model, n, seed=seed, truncation=truncation), threads=threads)
    exact = fit(data, model, LikelihoodKind.full(), opts=opts, threads=threads, with_covariance=False)
    rows = [_row(0, "exact", exact)]
    seeds = _replicate_seeds(seed, replicates)
    for S in sample_sizes:
        for r, mc_seed in enumerate(tqdm(seeds, desc=f"smle S={S}", disable=not progress)):
            report = fit_smle(data, model, S, mc_seed, opts=opts, threads=threads)
            rows.append(_row(r, f"smle_{S}", report))
    estimates = pd.DataFrame(rows)
    summary = summarize(estimates, truth)
    summary["distance_to_exact"] = (summary["mean"] - exact.theta_hat["alpha_1"]).abs()
    return StudyResult("smle", truth, estimates, summary)


STUDIES: Dict[str, Callable[..., StudyResult]] = {
    "composite": composite_study,
    "censored": censored_study,
    "clustered": clustered_study,
    "smle": smle_study,
}


def run_study(design: str, **params) -> StudyResult:
    try:
        study = STUDIES[design]
    except KeyError:
        raise ConfigError(f"Unknown study design {design!r}; expected one of {sorted(STUDIES)}")
    unknown = set(params) - set(inspect.signature(study).parameters)
    if unknown:
        raise ConfigError(f"Unknown parameters for the {design} study: {sorted(unknown)}")
    logger.info("Running %s study with %s", design, params)
    return study(**params)
