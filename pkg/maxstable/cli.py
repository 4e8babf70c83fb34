"""Command-line surface: simulate, fit, diagnose and study from one JSON run config.

Each command returns a status dict in the style
``{"status": "success" | "failed" | "not_converged", "step": ..., "error": ...}``;
``main`` maps it to the exit code (0 ok, 1 input error, 2 non-convergence).
"""
import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .combinatorics import ComponentSet, Partition
from .config_loader import load_document
from .data_pipeline import (
    block_maxima_with_occurrence,
    censor_sample,
    cluster_components,
    exceedance_frequencies,
    hill_transform,
    kendall_tau_matrix,
    rank_pareto_transform,
)
from .errors import ConfigError, MaxStableError, NumericalError
from .estimation import FitReport, OptimizerOptions, fit, fit_smle, fit_two_step
from .likelihoods import LikelihoodKind, LikelihoodName
from .log import setup_logging
from .matrix_io import read_matrix, write_json, write_matrix
from .mu_engine import MuStrategy, StrategyKind
from .simulators import SimConfig, sample_max_stable, sample_mda
from .spatial import MaternParams, SiteSet, load_sites_csv
from .spectral import (
    ArchimedeanClusterSpec,
    ClusteredArchimedeanSpectral,
    CopulaSpec,
    GaussianSpectral,
    MarginSpec,
    SpectralModel,
    build_brown_resnick,
    build_gaussian_spectral,
    build_lognormal_matern,
    build_lognormal_spectral,
    build_logistic,
)
from .studies import run_study

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MaternConfig(_Section):
    c: float = Field(gt=0)
    nu: float = Field(gt=0)


class VariogramConfig(_Section):
    c: float = Field(gt=0)
    kappa: float = Field(gt=0, le=2)


class CopulaConfig(_Section):
    family: Literal["gumbel", "clayton"]
    theta: float
    fixed: bool = False


class MarginConfig(_Section):
    family: Literal["lognormal", "weibull", "frechet"]
    alpha: float
    fixed: bool = False


class ClusterConfig(_Section):
    members: List[int] = Field(min_length=1)
    copula: CopulaConfig
    margin: MarginConfig


class ModelConfig(_Section):
    kind: Literal["gaussian", "lognormal", "clustered", "logistic"]
    family: Literal["covariance", "matern", "brown_resnick"] = "covariance"
    sites_csv: Optional[str] = None
    sites: Optional[List[List[float]]] = None
    matern: Optional[MaternConfig] = None
    sigma2: Optional[float] = Field(None, gt=0)
    variogram: Optional[VariogramConfig] = None
    cov_csv: Optional[str] = None
    clusters: Optional[List[ClusterConfig]] = None
    m: Optional[int] = Field(None, ge=1)
    alpha: Optional[float] = None
    fixed: List[str] = Field(default_factory=list)


class SimulateConfig(_Section):
    method: Literal["mda", "max_stable"] = "mda"
    n: int = Field(ge=1)
    seed: int = 0
    noise_mean: Optional[float] = Field(None, gt=0)
    truncation: int = Field(1000, ge=1)
    scaling: Literal["pareto", "uniform_ratio"] = "pareto"


class LikelihoodConfig(_Section):
    kind: Literal["full", "partition", "pairwise", "censored", "occurrence"]
    clustering: Optional[Union[List[List[int]], Literal["kmeans"]]] = None
    cap: int = Field(5, ge=1)
    k: Optional[int] = Field(None, ge=1)
    weights: bool = True
    strategy: Optional[Literal["quadrature", "analytic_gaussian", "analytic_lognormal",
                               "archimedean_quadrature"]] = None


class TransformConfig(_Section):
    kind: Literal["none", "rank", "hill"] = "none"
    k: Optional[int] = Field(None, ge=1)


class OptimizerOverrides(_Section):
    max_iters: Optional[int] = Field(None, gt=0)
    simplex_scale: Optional[float] = Field(None, gt=0)
    f_rtol: Optional[float] = Field(None, gt=0)
    x_rtol: Optional[float] = Field(None, gt=0)
    restarts: Optional[int] = Field(None, ge=0)


class SmleConfig(_Section):
    S: int = Field(ge=100)
    seed: int = 0


class FitConfig(_Section):
    init: Optional[List[float]] = None
    optimizer: OptimizerOverrides = OptimizerOverrides()
    smle: Optional[SmleConfig] = None
    information: Literal["hessian", "opg"] = "hessian"
    covariance: bool = True
    two_step: bool = False


class IoConfig(_Section):
    data_csv: Optional[str] = None
    out_json: Optional[str] = None
    out_csv: Optional[str] = None


class DiagnoseConfig(_Section):
    norm_threshold: float = 20.0
    max_block: int = Field(5, ge=1)
    k: Optional[int] = Field(None, ge=1)
    hill_k: Optional[int] = Field(None, ge=1)
    seed: int = 0


class StudyConfig(_Section):
    design: Literal["composite", "censored", "clustered", "smle"]
    params: Dict[str, Any] = Field(default_factory=dict)


class RunConfig(_Section):
    """One JSON document driving every command; sections a command needs must be present."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal[1] = Field(alias="schema")
    model: Optional[ModelConfig] = None
    simulate: Optional[SimulateConfig] = None
    likelihood: Optional[LikelihoodConfig] = None
    transform: TransformConfig = TransformConfig()
    fit: FitConfig = FitConfig()
    io: IoConfig = IoConfig()
    diagnose: DiagnoseConfig = DiagnoseConfig()
    study: Optional[StudyConfig] = None
    threads: Optional[int] = Field(None, ge=1)

    def to_json_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)


def _resolve(base: Path, path: Optional[str]) -> Optional[str]:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else (base / p).resolve())


def load_run_config(path: str) -> RunConfig:
    """Validate the config document and make its file paths absolute (relative to the config)."""
    raw = load_document(path)
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid run config {path}:\n{e}") from e
    base = Path(path).resolve().parent
    io = cfg.io.model_copy(update={k: _resolve(base, getattr(cfg.io, k))
                                   for k in ("data_csv", "out_json", "out_csv")})
    update: Dict[str, Any] = {"io": io}
    if cfg.model is not None:
        update["model"] = cfg.model.model_copy(update={"sites_csv": _resolve(base, cfg.model.sites_csv),
                                                       "cov_csv": _resolve(base, cfg.model.cov_csv)})
    return cfg.model_copy(update=update)


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"Run config is missing {what}")
    return value


def _sites(mc: ModelConfig) -> SiteSet:
    if mc.sites_csv is not None:
        return load_sites_csv(mc.sites_csv)
    return SiteSet(np.asarray(_require(mc.sites, "model.sites or model.sites_csv"), dtype=float))


def build_model(mc: ModelConfig) -> SpectralModel:
    """Spectral model described by the ``model`` section."""
    if mc.kind == "gaussian":
        if mc.cov_csv is not None:
            correlation, _ = read_matrix(mc.cov_csv)
            return GaussianSpectral.from_correlation(correlation)
        matern = _require(mc.matern, "model.matern")
        return build_gaussian_spectral(_sites(mc), MaternParams(matern.c, matern.nu), fixed=mc.fixed)
    if mc.kind == "lognormal":
        if mc.family == "covariance":
            cov, _ = read_matrix(_require(mc.cov_csv, "model.cov_csv"))
            return build_lognormal_spectral(cov)
        if mc.family == "matern":
            matern = _require(mc.matern, "model.matern")
            return build_lognormal_matern(_sites(mc), _require(mc.sigma2, "model.sigma2"),
                                          MaternParams(matern.c, matern.nu), fixed=mc.fixed)
        vg = _require(mc.variogram, "model.variogram")
        return build_brown_resnick(_sites(mc), vg.c, vg.kappa, fixed=mc.fixed)
    if mc.kind == "logistic":
        return build_logistic(_require(mc.m, "model.m"), _require(mc.alpha, "model.alpha"),
                              fixed_alpha="alpha" in mc.fixed)
    clusters = _require(mc.clusters, "model.clusters")
    m = mc.m or sum(len(c.members) for c in clusters)
    specs = [ArchimedeanClusterSpec(ComponentSet.from_labels(c.members, m),
                                    CopulaSpec(c.copula.family, c.copula.theta, c.copula.fixed),
                                    MarginSpec(c.margin.family, c.margin.alpha, c.margin.fixed))
             for c in clusters]
    return ClusteredArchimedeanSpectral(specs, m)


def _model_sites(model: SpectralModel) -> Optional[SiteSet]:
    return getattr(model, "sites", None)


def build_likelihood(lc: LikelihoodConfig, model: SpectralModel, seed: int = 0) -> LikelihoodKind:
    if lc.kind == "full":
        return LikelihoodKind.full()
    if lc.kind == "pairwise":
        return LikelihoodKind.pairwise()
    if lc.kind == "censored":
        return LikelihoodKind.censored()
    if lc.kind == "occurrence":
        return LikelihoodKind.occurrence()
    clustering = _require(lc.clustering, "likelihood.clustering")
    if clustering == "kmeans":
        sites = _model_sites(model)
        if sites is None:
            raise ConfigError("likelihood.clustering = 'kmeans' needs a site-based model")
        partition = cluster_components(sites, lc.cap, seed=seed)
        logger.info("K-means clustering (cap %d): %s", lc.cap, partition.to_label_lists())
    else:
        partition = Partition.from_label_lists(clustering, model.dim)
    return LikelihoodKind.partition(partition, weighted=lc.weights)


def _parse_init(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--init must be comma-separated numbers, got {text!r}") from e


def _threads(cfg: RunConfig, override: Optional[int]) -> Optional[int]:
    return override or cfg.threads


def cmd_simulate(cfg: RunConfig, threads: Optional[int] = None) -> Dict[str, Any]:
    sc = _require(cfg.simulate, "the simulate section")
    model = build_model(_require(cfg.model, "the model section"))
    data_csv = _require(cfg.io.data_csv, "io.data_csv")
    sim = SimConfig(model, sc.n, seed=sc.seed, noise_mean=sc.noise_mean,
                    truncation=sc.truncation, scaling=sc.scaling)
    meta: Dict[str, Any] = {"schema": 1, "version": __version__, "seed": sc.seed,
                            "generator": {"method": sc.method, "scaling": sc.scaling,
                                          "bit_generator": "PCG64", "seed_sequence": "chunked"},
                            "model": model.to_config(), "n": sc.n}
    if sc.method == "mda":
        data = sample_mda(sim, threads=_threads(cfg, threads))
        meta["noise_mean"] = sc.noise_mean
    else:
        data, bound = sample_max_stable(sim, threads=_threads(cfg, threads), return_bound=True)
        meta.update(truncation=sc.truncation, truncation_bound=bound)
    write_matrix(data_csv, data)
    sidecar = str(Path(data_csv).with_suffix(".json"))
    meta["config"] = cfg.to_json_dict()
    write_json(sidecar, meta)
    return {"status": "success", "action": "simulated", "data_csv": data_csv, "sidecar": sidecar}


def _transform(data: np.ndarray, tc: TransformConfig):
    if tc.kind == "none":
        return data, None
    if tc.kind == "rank":
        return rank_pareto_transform(data), None
    out, hill = hill_transform(data, _require(tc.k, "transform.k"))
    return out, hill


def _observations(data: np.ndarray, cfg: RunConfig, kind: LikelihoodKind):
    lc = cfg.likelihood
    n = data.shape[0]
    if kind.name == LikelihoodName.CENSORED:
        # Hill output is already in threshold units
        k = n if cfg.transform.kind == "hill" else _require(lc.k, "likelihood.k")
        return censor_sample(data, k), k
    if kind.name == LikelihoodName.OCCURRENCE:
        k = _require(lc.k, "likelihood.k (number of blocks)")
        return block_maxima_with_occurrence(data, k), k
    return data, None


def cmd_fit(cfg: RunConfig, threads: Optional[int] = None, init: Optional[List[float]] = None) -> Dict[str, Any]:
    lc = _require(cfg.likelihood, "the likelihood section")
    model = build_model(_require(cfg.model, "the model section"))
    out_json = _require(cfg.io.out_json, "io.out_json")
    data, _ = read_matrix(_require(cfg.io.data_csv, "io.data_csv"))
    if data.shape[1] != model.dim:
        raise ConfigError(f"Data has {data.shape[1]} columns but the model has {model.dim} components")
    kind = build_likelihood(lc, model, seed=cfg.diagnose.seed)
    data, hill = _transform(data, cfg.transform)
    margins_estimated = cfg.transform.kind != "none"
    observations, k = _observations(data, cfg, kind)
    init = init if init is not None else cfg.fit.init
    theta0 = model.theta.with_free_values(init) if init is not None else None
    opts = OptimizerOptions.from_settings(**cfg.fit.optimizer.model_dump(exclude_none=True))
    strategy = MuStrategy(StrategyKind(lc.strategy)) if lc.strategy else None
    workers = _threads(cfg, threads)
    extra: Dict[str, Any] = {}

    if cfg.fit.two_step:
        if not isinstance(model, ClusteredArchimedeanSpectral) or kind.name != LikelihoodName.CENSORED:
            raise ConfigError("fit.two_step needs a clustered model and a censored likelihood")
        if theta0 is not None:
            model = model.with_theta(theta0)
        result = fit_two_step(data, model, k, opts=opts, threads=workers, margins_estimated=margins_estimated)
        report = result.joint
        extra["step1"] = [rep.to_json_dict() for rep in result.per_cluster]
    elif cfg.fit.smle is not None:
        report = fit_smle(observations, model, cfg.fit.smle.S, cfg.fit.smle.seed, theta0, opts, kind, workers)
    else:
        report = fit(observations, model, kind, theta0, opts, strategy, workers,
                     information=cfg.fit.information, margins_estimated=margins_estimated,
                     with_covariance=cfg.fit.covariance)
    report.config = cfg.to_json_dict()
    payload = {**report.to_json_dict(), **extra}
    if hill is not None:
        payload["hill"] = hill.to_dict()
    write_json(out_json, payload)
    if not report.converged:
        logger.warning("Optimizer did not converge (%s); report written to %s", report.reason, out_json)
        return {"status": "not_converged", "step": "fit", "error": report.reason, "report": out_json}
    return {"status": "success", "action": "fitted", "report": out_json, "loglik": report.loglik}


def cmd_diagnose(cfg: RunConfig, threads: Optional[int] = None) -> Dict[str, Any]:
    dc = cfg.diagnose
    out_json = _require(cfg.io.out_json, "io.out_json")
    data, _ = read_matrix(_require(cfg.io.data_csv, "io.data_csv"))
    n, m = data.shape
    tau = kendall_tau_matrix(data, dc.norm_threshold)
    clustering = cluster_components(tau, dc.max_block, seed=dc.seed)
    k = dc.k or max(1, n // 10)
    records = censor_sample(rank_pareto_transform(data), k)
    freqs = exceedance_frequencies(records)
    payload: Dict[str, Any] = {
        "schema": 1,
        "version": __version__,
        "n": n,
        "m": m,
        "kendall_tau": tau,
        "norm_threshold": dc.norm_threshold,
        "suggested_clustering": clustering.to_label_lists(),
        "exceedance_frequencies": [{"set": B.labels(), "frequency": f} for B, f in freqs.items()],
        "censoring_k": k,
        "hill": None,
    }
    if dc.hill_k is not None:
        if np.any(data <= 0):
            payload["hill_note"] = "Hill fits skipped: data are not strictly positive"
        else:
            payload["hill"] = hill_transform(data, dc.hill_k)[1].to_dict()
    payload["config"] = cfg.to_json_dict()
    write_json(out_json, payload)
    return {"status": "success", "action": "diagnosed", "report": out_json,
            "clusters": len(clustering)}


def cmd_study(cfg: RunConfig, threads: Optional[int] = None) -> Dict[str, Any]:
    sc = _require(cfg.study, "the study section")
    out_json = _require(cfg.io.out_json, "io.out_json")
    params = dict(sc.params)
    workers = _threads(cfg, threads)
    if workers is not None:
        params.setdefault("threads", workers)
    result = run_study(sc.design, **params)
    write_json(out_json, {"schema": 1, "version": __version__, **result.to_dict(),
                          "config": cfg.to_json_dict()})
    if cfg.io.out_csv:
        Path(cfg.io.out_csv).parent.mkdir(parents=True, exist_ok=True)
        result.estimates.to_csv(cfg.io.out_csv, index=False)
    logger.info("Study summary:\n%s", result.summary.to_string(index=False))
    return {"status": "success", "action": "study", "report": out_json}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "study": cmd_study,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="Path to the JSON run config")
    common.add_argument("--threads", type=int, default=None, help="Cap on worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser = argparse.ArgumentParser(prog="maxstable",
                                     description="Likelihood inference for high-dimensional max-stable models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="Simulate a data CSV and its sidecar JSON")
    fit_parser = sub.add_parser("fit", parents=[common], help="Transform, fit and write a FitReport")
    fit_parser.add_argument("--init", default=None, help="Comma-separated starting values of the free parameters")
    sub.add_parser("diagnose", parents=[common], help="Kendall tau, clustering and exceedance summaries")
    sub.add_parser("study", parents=[common], help="Run a simulation study")
    return parser


def run(command: str, config_path: str, threads: Optional[int] = None,
        init: Optional[str] = None) -> Dict[str, Any]:
    """Run one command and report the outcome as a status dict (never raises on bad input)."""
    try:
        cfg = load_run_config(config_path)
        if command == "fit":
            return cmd_fit(cfg, threads, _parse_init(init))
        return COMMANDS[command](cfg, threads)
    except NumericalError as e:
        logger.error("Numerical failure: %s", e)
        return {"status": "not_converged", "step": command, "error": str(e)}
    except (MaxStableError, FileNotFoundError, ValidationError) as e:
        logger.error("%s", e)
        return {"status": "failed", "step": command, "error": str(e)}


def exit_code(result: Dict[str, Any]) -> int:
    return {"success": EXIT_OK, "not_converged": EXIT_NOT_CONVERGED}.get(result["status"], EXIT_INPUT)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.INFO)
    if args.threads is not None and args.threads < 1:
        logger.error("--threads must be at least 1")
        return EXIT_INPUT
    result = run(args.command, args.config, args.threads, getattr(args, "init", None))
    logger.info("Result: %s", result)
    return exit_code(result)
