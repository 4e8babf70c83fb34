"""Named model parameters with box bounds and unconstrained reparameterization."""
import math
from dataclasses import dataclass, replace
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import InvalidParameterError


@dataclass(frozen=True)
class Parameter:
    name: str
    value: float
    lower: float = -math.inf
    upper: float = math.inf
    fixed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        if not self.lower < self.upper:
            raise InvalidParameterError(f"{self.name}: lower bound {self.lower} >= upper {self.upper}")
        if not math.isfinite(self.value) or not self.lower <= self.value <= self.upper:
            raise InvalidParameterError(
                f"{self.name}={self.value} outside [{self.lower}, {self.upper}]")

    def interior(self) -> bool:
        return self.lower < self.value < self.upper

    def to_unconstrained(self) -> float:
        v, lo, hi = self.value, self.lower, self.upper
        if not self.interior():
            raise InvalidParameterError(f"{self.name}={v} sits on a bound; start strictly inside")
        if math.isinf(lo) and math.isinf(hi):
            return v
        if math.isinf(hi):
            return math.log(v - lo)
        if math.isinf(lo):
            return math.log(hi - v)
        return math.log((v - lo) / (hi - v))

    def from_unconstrained(self, x: float) -> "Parameter":
        lo, hi = self.lower, self.upper
        if math.isinf(lo) and math.isinf(hi):
            v = x
        elif math.isinf(hi):
            v = lo + math.exp(x)
        elif math.isinf(lo):
            v = hi - math.exp(x)
        else:
            v = lo + (hi - lo) * float(expit(x))
        return replace(self, value=min(max(v, lo), hi))

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "value": self.value, "lower": self.lower,
                "upper": self.upper, "fixed": self.fixed}


class ThetaVector:
    """Ordered parameters; only the non-fixed ones are optimized."""

    def __init__(self, params: Sequence[Parameter]):
        self.params: Tuple[Parameter, ...] = tuple(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise InvalidParameterError(f"Duplicate parameter names in {names}")

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def __getitem__(self, name: str) -> float:
        for p in self.params:
            if p.name == name:
                return p.value
        raise KeyError(name)

    def __eq__(self, other) -> bool:
        return isinstance(other, ThetaVector) and self.params == other.params

    def __hash__(self) -> int:
        return hash(self.params)

    def __repr__(self) -> str:
        inner = ", ".join(f"{p.name}={p.value:.6g}{'*' if p.fixed else ''}" for p in self.params)
        return f"ThetaVector({inner})"

    @property
    def free(self) -> List[Parameter]:
        return [p for p in self.params if not p.fixed]

    @property
    def free_names(self) -> List[str]:
        return [p.name for p in self.free]

    @property
    def free_values(self) -> np.ndarray:
        return np.array([p.value for p in self.free], dtype=float)

    def as_dict(self) -> Dict[str, float]:
        return {p.name: p.value for p in self.params}

    def with_free_values(self, values: Sequence[float]) -> "ThetaVector":
        values = np.asarray(values, dtype=float).reshape(-1)
        free = self.free
        if values.size != len(free):
            raise InvalidParameterError(f"Expected {len(free)} free values, got {values.size}")
        it = iter(values)
        return ThetaVector([p if p.fixed else replace(p, value=float(next(it))) for p in self.params])

    def with_values(self, values: Dict[str, float]) -> "ThetaVector":
        """Replace values by name, fixed or not."""
        unknown = set(values) - {p.name for p in self.params}
        if unknown:
            raise InvalidParameterError(f"Unknown parameter names {sorted(unknown)}")
        return ThetaVector([replace(p, value=float(values[p.name])) if p.name in values else p
                            for p in self.params])

    def freeze_except(self, names: Sequence[str]) -> "ThetaVector":
        """Fix every parameter not listed in ``names``."""
        keep = set(names)
        return ThetaVector([p if p.name in keep else replace(p, fixed=True) for p in self.params])

    def to_unconstrained(self) -> np.ndarray:
        return np.array([p.to_unconstrained() for p in self.free], dtype=float)

    def from_unconstrained(self, x: Sequence[float]) -> "ThetaVector":
        x = np.asarray(x, dtype=float).reshape(-1)
        free = self.free
        if x.size != len(free):
            raise InvalidParameterError(f"Expected {len(free)} unconstrained values, got {x.size}")
        return self.with_free_values([p.from_unconstrained(v).value for p, v in zip(free, x)])

    def to_list(self) -> List[Dict[str, object]]:
        return [p.to_dict() for p in self.params]
