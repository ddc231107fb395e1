"""
Seed-reproducible random generation for the simulation study.

Every stream is a (master_seed, stream_index) pair, optionally nested under
a parent key. The sub-seed of a stream is

    SeedSequence(master_seed, spawn_key=parent_key + (stream_index,))

which is the rule numpy's ``SeedSequence.spawn`` applies, so distinct keys
give independent PCG64 generators and equal keys give bit-identical draws.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Tuple

import numpy as np

from nmsym.sample import Sample

RNG_ALGORITHM = "numpy.PCG64+SeedSequence"


class ConfigurationError(ValueError):
    """Invalid generator or study configuration"""


@dataclass(frozen=True)
class RandomStream:
    """
    A value-like handle to an independent random sequence.

    Args:
        master_seed (int): 64-bit unsigned master seed.
        stream_index (int): Index of this stream under its parent.
        parent_key (tuple, optional): Spawn key of the parent stream. Defaults to ().
    """
    master_seed: int
    stream_index: int = 0
    parent_key: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ConfigurationError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.stream_index < 0 or any(key < 0 for key in self.parent_key):
            raise ConfigurationError("stream indices must be nonnegative")

    @property
    def spawn_key(self) -> Tuple[int, ...]:
        return tuple(self.parent_key) + (int(self.stream_index),)

    def child(self, index: int) -> "RandomStream":
        """Derive an independent stream nested under this one."""
        return RandomStream(self.master_seed, index, self.spawn_key)

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        seed_seq = np.random.SeedSequence(int(self.master_seed), spawn_key=self.spawn_key)
        return np.random.Generator(np.random.PCG64(seed_seq))


class DistributionTag(Enum):
    """
    The eight generators of the simulation study.

    The value is the tag accepted on the command line.
    """
    STD_NORMAL = "StdNormal"
    STUDENT_T5 = "StudentT5"
    LAPLACE = "Laplace"
    SYM_NM3 = "SymNM3"
    CHISQ1 = "ChiSq1"
    CHISQ5 = "ChiSq5"
    CHISQ10 = "ChiSq10"
    LOGNORMAL01 = "LogNormal01"

    @property
    def is_symmetric(self) -> bool:
        return self in (DistributionTag.STD_NORMAL, DistributionTag.STUDENT_T5,
                        DistributionTag.LAPLACE, DistributionTag.SYM_NM3)

    @classmethod
    def parse(cls, tag: str) -> "DistributionTag":
        for member in cls:
            if member.value.lower() == tag.lower():
                return member
        valid = ", ".join(member.value for member in cls)
        raise ConfigurationError(f"Unknown distribution tag '{tag}'. Valid tags: {valid}")


_CHISQ_DF = {
    DistributionTag.CHISQ1: 1,
    DistributionTag.CHISQ5: 5,
    DistributionTag.CHISQ10: 10,
}


@dataclass(frozen=True)
class NM3Params:
    """
    Parameter block of the symmetric three-component normal mixture.

    Defaults give three well separated groups: means (-2, 0, 2),
    common variance 1 and weights (1/4, 1/2, 1/4).
    """
    means: Tuple[float, float, float] = (-2.0, 0.0, 2.0)
    variance: float = 1.0
    weights: Tuple[float, float, float] = (0.25, 0.5, 0.25)

    def validate(self):
        if len(self.means) != 3 or len(self.weights) != 3:
            raise ConfigurationError("NM3 needs exactly three means and three weights")
        if not self.variance > 0:
            raise ConfigurationError(f"NM3 variance must be positive, got {self.variance}")
        weights = np.asarray(self.weights, dtype=float)
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"NM3 weights must be positive and sum to 1, got {self.weights}")
        if weights[0] != weights[2]:
            raise ConfigurationError(f"NM3 weights must satisfy pi_1 = pi_3, got {self.weights}")
        means = np.asarray(self.means, dtype=float)
        if abs(means[0] + means[2]) > 1e-12 or means[1] != 0 or not means[0] < means[1] < means[2]:
            raise ConfigurationError(f"NM3 means must be increasing and symmetric about 0, got {self.means}")

    @classmethod
    def from_string(cls, text: str) -> "NM3Params":
        """
        Parse 'm1,m2,m3;variance;w1,w2,w3' (the --nm3-params format).
        """
        try:
            means_part, variance_part, weights_part = text.split(";")
            params = cls(
                means=tuple(float(v) for v in means_part.split(",")),
                variance=float(variance_part),
                weights=tuple(float(v) for v in weights_part.split(",")),
            )
        except ValueError as e:
            raise ConfigurationError(f"Cannot parse NM3 parameters '{text}': {e}") from e
        params.validate()
        return params

    def as_dict(self) -> dict:
        return {"means": list(self.means), "variance": self.variance, "weights": list(self.weights)}


@dataclass(frozen=True)
class SimDistribution:
    tag: DistributionTag
    nm3: NM3Params = field(default_factory=NM3Params)

    @property
    def name(self) -> str:
        return self.tag.value

    def as_dict(self) -> dict:
        result = {"tag": self.tag.value}
        if self.tag is DistributionTag.SYM_NM3:
            result["nm3"] = self.nm3.as_dict()
        return result


def draw_normal_mixture(means: Sequence[float], variance: float, weights: Sequence[float],
                        n: int, generator: np.random.Generator) -> np.ndarray:
    """Categorical component pick followed by a normal draw."""
    components = generator.choice(len(weights), size=n, p=np.asarray(weights, dtype=float))
    return np.asarray(means, dtype=float)[components] + np.sqrt(variance) * generator.standard_normal(n)


def _student_t(df, n, generator):
    z = generator.standard_normal(n)
    chi2 = generator.gamma(df / 2.0, 2.0, size=n)
    return z / np.sqrt(chi2 / df)


def _laplace(n, generator):
    # inverse CDF of |X| ~ Exp(1) with an independent sign
    u = generator.random(n)
    magnitude = -np.log1p(-u)
    sign = np.where(generator.random(n) < 0.5, -1.0, 1.0)
    return sign * magnitude


def draw_sample(dist: SimDistribution, n: int, stream: RandomStream) -> Sample:
    """
    Draw n independent observations from dist.

    The result depends only on (dist, n, stream).

    Raises:
        ConfigurationError: If n < 1 or the NM3 block is invalid.
    """
    if n < 1:
        raise ConfigurationError(f"Sample size must be positive, got {n}")
    generator = stream.generator()
    tag = dist.tag

    if tag is DistributionTag.STD_NORMAL:
        values = generator.standard_normal(n)
    elif tag is DistributionTag.STUDENT_T5:
        values = _student_t(5, n, generator)
    elif tag is DistributionTag.LAPLACE:
        values = _laplace(n, generator)
    elif tag is DistributionTag.SYM_NM3:
        dist.nm3.validate()
        values = draw_normal_mixture(dist.nm3.means, dist.nm3.variance, dist.nm3.weights, n, generator)
    elif tag in _CHISQ_DF:
        values = generator.gamma(_CHISQ_DF[tag] / 2.0, 2.0, size=n)
    elif tag is DistributionTag.LOGNORMAL01:
        values = np.exp(generator.standard_normal(n))
    else:
        raise ConfigurationError(f"Unsupported distribution {tag}")

    return Sample(values)
