"""Numeric defaults loaded from configs/defaults.yaml.

Values can be replaced wholesale by pointing ``MAXSTABLE_SETTINGS`` at another
YAML file; ``MAXSTABLE_THREADS`` overrides the worker count alone.
"""
import os
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .config_loader import load_document
from .errors import ConfigError

DEFAULTS_PATH = Path(__file__).resolve().parent.parent / "configs" / "defaults.yaml"


class CapSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    partitions: int = Field(12, ge=1)
    subsets: int = Field(25, ge=1)
    full_likelihood: int = Field(10, ge=1)
    full_likelihood_warn: int = Field(8, ge=1)
    v_b_star: int = Field(12, ge=1)
    gaussian_dim: int = Field(25, ge=1)
    gaussian_dim_warn: int = Field(20, ge=1)
    psi_order: int = Field(12, ge=1)


class GaussianSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    qmc_shifts: int = Field(12, ge=2)
    qmc_log2_points: int = Field(10, ge=4, le=20)
    qmc_max_log2_points: int = Field(16, ge=4, le=24)
    kernel_log2_points: int = Field(9, ge=4, le=20)
    kernel_seed: int = 20160101
    target_err: float = Field(1e-6, gt=0)
    jitter_min: float = Field(1e-12, gt=0)
    jitter_max: float = Field(1e-8, gt=0)
    condition_cap: float = Field(1e12, gt=1)


class QuadratureSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rel_tol: float = Field(1e-8, gt=0)
    max_panels: int = Field(4096, ge=2)
    nodes: int = Field(10, ge=2)
    initial_panels: int = Field(8, ge=1)


class OptimizerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_iters: int = Field(5000, ge=1)
    simplex_scale: float = Field(0.1, gt=0)
    f_rtol: float = Field(1e-10, gt=0)
    x_rtol: float = Field(1e-8, gt=0)
    restarts: int = Field(2, ge=0)


class Settings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    caps: CapSettings = CapSettings()
    gaussian: GaussianSettings = GaussianSettings()
    quadrature: QuadratureSettings = QuadratureSettings()
    optimizer: OptimizerSettings = OptimizerSettings()
    fd_step: float = Field(1e-5, gt=0)
    hessian_step: float = Field(1e-3, gt=0)
    threads: int = Field(1, ge=1)


def load_settings(path: Optional[str] = None) -> Settings:
    """Build Settings from a YAML file, falling back to built-in defaults."""
    source = Path(path) if path else DEFAULTS_PATH
    data = load_document(str(source)) if source.exists() or path else {}
    threads = os.getenv("MAXSTABLE_THREADS")
    if threads:
        data = {**data, "threads": threads}
    try:
        return Settings.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid settings in {source}: {e}") from e


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return load_settings(os.getenv("MAXSTABLE_SETTINGS"))
