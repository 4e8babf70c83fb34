"""CSV matrices and JSON artifacts."""
import json
import logging
from pathlib import Path
from typing import Any, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import DataError

logger = logging.getLogger(__name__)


def read_matrix(path: str) -> Tuple[np.ndarray, Optional[List[str]]]:
    """Read a comma-separated numeric matrix with an optional header row.

    Returns the (n, m) float array and the header names, or None when the
    first row is numeric.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Data file not found: {path}")
    try:
        raw = pd.read_csv(p, header=None, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} is empty")
    except pd.errors.ParserError as e:
        raise DataError(f"{path} is not a well-formed CSV matrix: {e}")
    if raw.empty:
        raise DataError(f"{path} contains no rows")
    header: Optional[List[str]] = None
    first = pd.to_numeric(raw.iloc[0], errors="coerce")
    if first.isna().any():
        header = [str(v).strip() for v in raw.iloc[0]]
        raw = raw.iloc[1:]
    values = raw.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    if values.size == 0:
        raise DataError(f"{path} contains a header but no data rows")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path} contains missing or non-numeric entries")
    return values, header


def write_matrix(path: str, values: np.ndarray, columns: Optional[List[str]] = None) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(np.atleast_2d(values), columns=columns)
    frame.to_csv(p, index=False, header=columns is not None, float_format="%.17g")
    logger.info("Wrote %d x %d matrix to %s", frame.shape[0], frame.shape[1], p)
    return p


def _to_jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(path: str, payload: Any) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, default=_to_jsonable)
        f.write("\n")
    logger.info("Saved %s", p)
    return p
