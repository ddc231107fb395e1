"""
Monte Carlo study of level and power of the symmetry tests.

For every (distribution, n, replicate) a sample is drawn from its own
child stream, the requested tests are run and the p-values and selected k
are kept. Replicates are independent work items run with joblib; results
come back in submission order, so the report does not depend on the number
of workers.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import datetime
import logging
import math
import time

from joblib import Parallel, delayed

from nmsym.mixture import EMFitter, EmOptions, EstimationError, NumericalError
from nmsym.rng import (RNG_ALGORITHM, ConfigurationError, DistributionTag, RandomStream,
                       SimDistribution, draw_sample)
from nmsym.sample import DegenerateSampleError
from nmsym.selection import Criterion, SelectionError, select_k
from nmsym.specfun import DomainError
from nmsym.symmetry import GUPTA_MIN_N, DiagnosticsError, gupta_test, is_rejected, result_from_table

MAX_FAILURE_RATE = 0.01

# Failures that count against a replicate instead of stopping the study
REPLICATE_ERRORS = (EstimationError, SelectionError, DiagnosticsError, NumericalError,
                    DegenerateSampleError, DomainError)


class StudyAbortedError(RuntimeError):
    """Too many replicates failed"""


class TestKind(Enum):
    MIXTURE_AIC = "MixtureAIC"
    MIXTURE_BIC = "MixtureBIC"
    GUPTA = "Gupta"

    __test__ = False

    @property
    def criterion(self) -> Optional[Criterion]:
        return {TestKind.MIXTURE_AIC: Criterion.AIC, TestKind.MIXTURE_BIC: Criterion.BIC}.get(self)

    @classmethod
    def parse(cls, text: str) -> "TestKind":
        for member in cls:
            if member.value.lower() == text.lower():
                return member
        valid = ", ".join(member.value for member in cls)
        raise ConfigurationError(f"Unknown test '{text}'. Valid tests: {valid}")


class KBuckets:
    """
    Buckets of selected k values: 1, 3, 5 and >5.
    """
    LABELS = ("1", "3", "5", ">5")

    @classmethod
    def bucket(cls, k: int) -> int:
        if k < 1 or k % 2 == 0:
            raise DomainError(f"Selected k must be odd and positive, got {k}")
        return min(k // 2, 3)


def k_frequency_table(per_replicate_k: Sequence[int]) -> Tuple[float, ...]:
    """
    Percentage of replicates in each k bucket (1, 3, 5, >5).

    Raises:
        DomainError: If the list is empty or holds an even k.
    """
    if len(per_replicate_k) == 0:
        raise DomainError("k frequencies need at least one replicate")
    counts = [0] * len(KBuckets.LABELS)
    for k in per_replicate_k:
        counts[KBuckets.bucket(k)] += 1
    return tuple(100.0 * count / len(per_replicate_k) for count in counts)


def _all_distributions() -> List[SimDistribution]:
    return [SimDistribution(tag) for tag in DistributionTag]


@dataclass
class StudySpec:
    """
    Design of a simulation study.

    Args:
        distributions (list): Generators to simulate from. Defaults to all eight.
        sample_sizes (tuple): Defaults to (20, 50, 100).
        replicates (int): Samples per (distribution, n). Defaults to 1000.
        levels (tuple): Nominal levels. Defaults to (0.01, 0.05, 0.10).
        tests (tuple): Tests to run. Defaults to all three.
        master_seed (int): Seed of every stream in the study. Defaults to 0.
        k_max (int): Largest k for selection; k = k_max fills the '>5' bucket. Defaults to 7.
        em_options (EmOptions): EM options for the mixture tests.
    """
    distributions: List[SimDistribution] = field(default_factory=_all_distributions)
    sample_sizes: Tuple[int, ...] = (20, 50, 100)
    replicates: int = 1000
    levels: Tuple[float, ...] = (0.01, 0.05, 0.10)
    tests: Tuple[TestKind, ...] = (TestKind.MIXTURE_AIC, TestKind.MIXTURE_BIC, TestKind.GUPTA)
    master_seed: int = 0
    k_max: int = 7
    em_options: EmOptions = field(default_factory=EmOptions)

    def validate(self):
        if self.replicates < 1:
            raise ConfigurationError(f"replicates must be at least 1, got {self.replicates}")
        if not self.distributions or not self.sample_sizes or not self.tests or not self.levels:
            raise ConfigurationError("distributions, sample sizes, tests and levels must be nonempty")
        if any(not 0 < level < 1 for level in self.levels):
            raise ConfigurationError(f"levels must lie in (0, 1), got {self.levels}")
        if any(n < 1 for n in self.sample_sizes):
            raise ConfigurationError(f"sample sizes must be positive, got {self.sample_sizes}")
        if TestKind.GUPTA in self.tests and any(n < GUPTA_MIN_N for n in self.sample_sizes):
            raise ConfigurationError(f"sample sizes must be at least {GUPTA_MIN_N} when the Gupta test is included")
        if self.k_max < 1 or self.k_max % 2 == 0:
            raise ConfigurationError(f"k_max must be odd and positive, got {self.k_max}")
        for dist in self.distributions:
            if dist.tag is DistributionTag.SYM_NM3:
                dist.nm3.validate()
        self.em_options.validate()

    @property
    def mixture_tests(self) -> List[TestKind]:
        return [test for test in self.tests if test.criterion is not None]

    def as_dict(self) -> dict:
        return {
            "distributions": [dist.as_dict() for dist in self.distributions],
            "sample_sizes": list(self.sample_sizes),
            "replicates": self.replicates,
            "levels": list(self.levels),
            "tests": [test.value for test in self.tests],
            "master_seed": self.master_seed,
            "k_max": self.k_max,
            "em_options": {
                "tolerance": self.em_options.tolerance,
                "max_iter": self.em_options.max_iter,
                "n_restarts": self.em_options.n_restarts,
                "sigma2_floor_ratio": self.em_options.sigma2_floor_ratio,
                "escalate": self.em_options.escalate,
            },
        }


@dataclass(frozen=True)
class ReplicateOutcome:
    dist_index: int
    n_index: int
    replicate: int
    p_values: Dict[TestKind, Optional[float]]
    chosen_k: Dict[Criterion, Optional[int]]
    errors: Dict[TestKind, str]


@dataclass(frozen=True)
class RateCell:
    """Empirical rejection rate over the successful replicates of one cell."""
    rate: float
    standard_error: float
    rejections: int
    successes: int
    failures: int

    @classmethod
    def from_counts(cls, rejections: int, successes: int, failures: int) -> "RateCell":
        if successes == 0:
            return cls(math.nan, math.nan, 0, 0, failures)
        rate = rejections / successes
        return cls(rate, math.sqrt(rate * (1.0 - rate) / successes), rejections, successes, failures)


RateKey = Tuple[TestKind, str, int, float]
KKey = Tuple[Criterion, str, int]


@dataclass
class StudyReport:
    spec: StudySpec
    rejection_rates: Dict[RateKey, RateCell]
    k_frequencies: Dict[KKey, Tuple[float, ...]]
    failures: Dict[Tuple[TestKind, str, int], int]
    rng_algorithm: str = RNG_ALGORITHM
    started_at: str = ""
    elapsed_seconds: float = 0.0
    workers: int = 1

    def rate(self, test: TestKind, dist: str, n: int, level: float) -> float:
        return self.rejection_rates[(test, dist, n, level)].rate

    def k_row(self, criterion: Criterion, dist: str, n: int) -> Tuple[float, ...]:
        return self.k_frequencies[(criterion, dist, n)]

    def as_dict(self) -> dict:
        return {
            "spec": self.spec.as_dict(),
            "rng_algorithm": self.rng_algorithm,
            "started_at": self.started_at,
            "elapsed_seconds": self.elapsed_seconds,
            "workers": self.workers,
            "rejection_rates": [
                {"test": test.value, "distribution": dist, "n": n, "level": level,
                 "rate": cell.rate, "standard_error": cell.standard_error,
                 "rejections": cell.rejections, "successes": cell.successes, "failures": cell.failures}
                for (test, dist, n, level), cell in self.rejection_rates.items()
            ],
            "k_frequencies": [
                {"criterion": criterion.value, "distribution": dist, "n": n,
                 "buckets": dict(zip(KBuckets.LABELS, row))}
                for (criterion, dist, n), row in self.k_frequencies.items()
            ],
        }


def replicate_streams(master_seed: int, dist_index: int, n_index: int, replicate: int) -> Tuple[RandomStream, RandomStream]:
    """Data stream and EM initialisation stream of one replicate."""
    data = RandomStream(master_seed, replicate, (dist_index, n_index, 0))
    init = RandomStream(master_seed, replicate, (dist_index, n_index, 1))
    return data, init


def run_replicate(spec: StudySpec, dist_index: int, n_index: int, replicate: int) -> ReplicateOutcome:
    """Draw one sample and run every requested test on it."""
    dist = spec.distributions[dist_index]
    n = spec.sample_sizes[n_index]
    data_stream, init_stream = replicate_streams(spec.master_seed, dist_index, n_index, replicate)
    sample = draw_sample(dist, n, data_stream)

    p_values: Dict[TestKind, Optional[float]] = {}
    chosen_k: Dict[Criterion, Optional[int]] = {}
    errors: Dict[TestKind, str] = {}

    if TestKind.GUPTA in spec.tests:
        try:
            p_values[TestKind.GUPTA] = gupta_test(sample).p_value
        except REPLICATE_ERRORS as e:
            p_values[TestKind.GUPTA] = None
            errors[TestKind.GUPTA] = f"{type(e).__name__}: {e}"

    mixture_tests = spec.mixture_tests
    if mixture_tests:
        fitter = EMFitter(spec.em_options)
        try:
            table = select_k(sample, Criterion.BIC, spec.k_max, stream=init_stream, fitter=fitter)
        except REPLICATE_ERRORS as e:
            table = None
            for test in mixture_tests:
                p_values[test] = None
                chosen_k[test.criterion] = None
                errors[test] = f"{type(e).__name__}: {e}"
        if table is not None:
            for test in mixture_tests:
                try:
                    result = result_from_table(table, test.criterion, spec.em_options.boundary_tol)
                    p_values[test] = result.p_value
                    chosen_k[test.criterion] = result.chosen_k
                except REPLICATE_ERRORS as e:
                    p_values[test] = None
                    chosen_k[test.criterion] = None
                    errors[test] = f"{type(e).__name__}: {e}"

    return ReplicateOutcome(dist_index, n_index, replicate, p_values, chosen_k, errors)


class MonteCarloStudy:
    """
    Runs a StudySpec and aggregates a StudyReport.

    Args:
        spec (StudySpec): The study design.
        workers (int, optional): joblib worker processes. Defaults to 1.
        logger (logging.Logger, optional): Defaults to the module logger.
    """

    def __init__(self, spec: StudySpec, workers: int = 1, logger=None):
        spec.validate()
        self.spec = spec
        self.workers = max(1, int(workers))
        self.logger = logger or logging.getLogger(__name__)

    def _work_items(self):
        for dist_index in range(len(self.spec.distributions)):
            for n_index in range(len(self.spec.sample_sizes)):
                for replicate in range(self.spec.replicates):
                    yield dist_index, n_index, replicate

    def run(self) -> StudyReport:
        spec = self.spec
        started_at = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        start = time.monotonic()
        total = len(spec.distributions) * len(spec.sample_sizes) * spec.replicates
        self.logger.info(f"Running {total} replicates on {self.workers} worker(s), master seed {spec.master_seed}")

        if self.workers == 1:
            outcomes = [run_replicate(spec, *item) for item in self._work_items()]
        else:
            outcomes = Parallel(n_jobs=self.workers)(
                delayed(run_replicate)(spec, *item) for item in self._work_items())

        report = self._aggregate(outcomes)
        report.started_at = started_at
        report.elapsed_seconds = time.monotonic() - start
        report.workers = self.workers
        self._check_failures(report, outcomes)
        self.logger.info(f"Study finished in {report.elapsed_seconds:.1f}s")
        return report

    def _aggregate(self, outcomes: List[ReplicateOutcome]) -> StudyReport:
        spec = self.spec
        cells: Dict[Tuple[int, int], List[ReplicateOutcome]] = {}
        for outcome in sorted(outcomes, key=lambda o: (o.dist_index, o.n_index, o.replicate)):
            cells.setdefault((outcome.dist_index, outcome.n_index), []).append(outcome)

        rejection_rates: Dict[RateKey, RateCell] = {}
        k_frequencies: Dict[KKey, Tuple[float, ...]] = {}
        failures: Dict[Tuple[TestKind, str, int], int] = {}

        for (dist_index, n_index), cell in cells.items():
            dist = spec.distributions[dist_index].name
            n = spec.sample_sizes[n_index]
            for test in spec.tests:
                p_values = [o.p_values.get(test) for o in cell]
                successful = [p for p in p_values if p is not None]
                n_failed = len(p_values) - len(successful)
                failures[(test, dist, n)] = n_failed
                for level in spec.levels:
                    rejections = sum(1 for p in successful if is_rejected(p, level))
                    rejection_rates[(test, dist, n, level)] = RateCell.from_counts(rejections, len(successful), n_failed)
                if test.criterion is not None:
                    ks = [o.chosen_k.get(test.criterion) for o in cell]
                    ks = [k for k in ks if k is not None]
                    if ks:
                        k_frequencies[(test.criterion, dist, n)] = k_frequency_table(ks)
            self.logger.info(f"cell {dist} n={n}: {len(cell)} replicates aggregated")

        return StudyReport(spec, rejection_rates, k_frequencies, failures)

    def _check_failures(self, report: StudyReport, outcomes: List[ReplicateOutcome]):
        over = {key: count for key, count in report.failures.items()
                if count / self.spec.replicates > MAX_FAILURE_RATE}
        for key, count in report.failures.items():
            if count:
                self.logger.warning(f"{key[0].value} {key[1]} n={key[2]}: {count} failed replicate(s)")
        if over:
            examples = [f"replicate {o.replicate} of {self.spec.distributions[o.dist_index].name} "
                        f"n={self.spec.sample_sizes[o.n_index]}: {message}"
                        for o in outcomes for message in o.errors.values()][:5]
            cells = ", ".join(f"{test.value}/{dist}/n={n} ({count})" for (test, dist, n), count in over.items())
            raise StudyAbortedError(f"Failure rate above {MAX_FAILURE_RATE:.0%} in {cells}. First errors: {examples}")


def run_study(spec: StudySpec, workers: int = 1, logger=None) -> StudyReport:
    """Run the study described by spec; see MonteCarloStudy."""
    return MonteCarloStudy(spec, workers, logger).run()
