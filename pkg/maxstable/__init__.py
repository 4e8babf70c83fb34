"""maxstable package initialization."""

__all__ = [
    "combinatorics",
    "spatial",
    "gaussian",
    "parameters",
    "archimedean",
    "spectral",
    "mu_engine",
    "likelihoods",
    "estimation",
    "data_pipeline",
    "simulators",
    "studies",
    "cli",
]

__version__ = "0.1.0"
