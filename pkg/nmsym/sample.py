from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


class DegenerateSampleError(ValueError):
    """Sample cannot support the requested computation"""


@dataclass(frozen=True, eq=False)
class Sample:
    """
    An ordered collection of finite real observations x_1..x_n.

    The values are stored as a read-only float64 array. Summary statistics
    use divisor n (maximum likelihood convention).

    example usage:
    sample = Sample.from_values([1.2, 0.4, 3.3])
    sample.mean, sample.variance
    """
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size == 0:
            raise DegenerateSampleError("Sample must contain at least one observation")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise DegenerateSampleError(f"Sample contains a non-finite value at index {int(bad[0])}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "Sample":
        return cls(np.asarray(list(values), dtype=float))

    def __len__(self):
        return self.values.size

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def median(self) -> float:
        return float(np.median(self.values))

    @property
    def variance(self) -> float:
        return float(np.mean((self.values - self.mean) ** 2))

    @property
    def mad(self) -> float:
        """Median absolute deviation from the median (unscaled)."""
        return float(np.median(np.abs(self.values - self.median)))

    @property
    def min(self) -> float:
        return float(np.min(self.values))

    @property
    def max(self) -> float:
        return float(np.max(self.values))

    def affine(self, scale: float, shift: float) -> "Sample":
        """Return the sample scale * x + shift."""
        return Sample(scale * self.values + shift)

    def require_nondegenerate(self):
        if self.variance <= 0:
            raise DegenerateSampleError("Sample variance is zero; at least two distinct values are required")

    def digest(self) -> dict:
        return {
            "n": self.n,
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "median": self.median,
        }
