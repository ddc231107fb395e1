"""
Tests of symmetry about an unknown centre.

Two tests are provided:

  * the mixture likelihood-ratio test: symmetry is pi_j = pi_{k-j+1} in an
    equispaced normal mixture; the deviance between the unconstrained and
    constrained fits is referred to a chi-square with [k/2] degrees of freedom;
  * the third-moment test: b1 = m3 / m2^(3/2) standardised by its estimated
    asymptotic standard deviation under symmetry, two-sided normal p-value.
"""
from dataclasses import dataclass
from typing import Optional, Union

import logging
import math

import numpy as np

from nmsym.mixture import EMFitter, EmOptions, EstimationError, FitResult, NumericalError, make_grid
from nmsym.rng import RandomStream
from nmsym.sample import DegenerateSampleError, Sample
from nmsym.selection import Criterion, SelectionModel, SelectionTable, select_k
from nmsym.specfun import DomainError, chi2_sf, two_sided_normal_p

NEGATIVE_DEVIANCE_TOL = 1e-6
GUPTA_MIN_N = 7

logger = logging.getLogger(__name__)


class DiagnosticsError(RuntimeError):
    """Constrained fit found a better optimum than the unconstrained one"""


def is_rejected(p_value: float, level: float) -> bool:
    """Reject symmetry at `level`: p_value < level, so p equal to the level is kept."""
    return p_value < level


@dataclass(frozen=True)
class TestMode:
    """
    How k is obtained: selected by a criterion up to k_max, or fixed.

    example usage:
    TestMode.by_criterion(Criterion.BIC, k_max=7)
    TestMode.fixed_k(3)
    """
    criterion: Optional[Criterion] = Criterion.BIC
    k_max: int = 7
    k: Optional[int] = None

    __test__ = False  # not a pytest class

    @classmethod
    def by_criterion(cls, criterion: Criterion, k_max: int = 7) -> "TestMode":
        make_grid(k_max)
        return cls(criterion=criterion, k_max=k_max, k=None)

    @classmethod
    def fixed_k(cls, k: int) -> "TestMode":
        make_grid(k)
        return cls(criterion=None, k_max=k, k=k)

    @property
    def label(self) -> str:
        return "FixedK" if self.k is not None else self.criterion.value


@dataclass(frozen=True)
class SymmetryTestResult:
    chosen_k: int
    deviance: float
    df: int
    p_value: float
    criterion: str
    unconstrained_fit: FitResult
    constrained_fit: FitResult
    auto_accepted: bool
    boundary: bool = False
    selection: Optional[SelectionTable] = None

    def rejects(self, level: float) -> bool:
        return is_rejected(self.p_value, level)

    def as_dict(self) -> dict:
        return {
            "chosen_k": self.chosen_k,
            "deviance": self.deviance,
            "df": self.df,
            "p_value": self.p_value,
            "criterion": self.criterion,
            "auto_accepted": self.auto_accepted,
            "boundary": self.boundary,
            "unconstrained_fit": self.unconstrained_fit.as_dict(),
            "constrained_fit": self.constrained_fit.as_dict(),
        }


@dataclass(frozen=True)
class GuptaResult:
    """
    Third-moment test.

    sigma2_hat is the estimated variance of b1 under symmetry,
    (m6 - 6 m2 m4 + 9 m2^3) / (n m2^3), so s1 = b1 / sqrt(sigma2_hat).
    """
    n: int
    b1: float
    sigma2_hat: float
    s1: float
    p_value: float
    m2: float
    m3: float
    m4: float
    m6: float

    @property
    def asymptotic_variance(self) -> float:
        """Estimated asymptotic variance of sqrt(n) * b1."""
        return self.n * self.sigma2_hat

    def rejects(self, level: float) -> bool:
        return is_rejected(self.p_value, level)

    def as_dict(self) -> dict:
        return {
            "b1": self.b1,
            "sigma2_hat": self.sigma2_hat,
            "s1": self.s1,
            "p_value": self.p_value,
            "central_moments": {"m2": self.m2, "m3": self.m3, "m4": self.m4, "m6": self.m6},
        }


def central_moment(sample: Sample, r: int) -> float:
    """r-th sample central moment with divisor n."""
    if int(r) != r or r < 1:
        raise DomainError(f"moment order must be a positive integer, got {r}")
    deviations = sample.values - sample.mean
    return float(np.mean(deviations ** int(r)))


def gupta_test(sample: Sample) -> GuptaResult:
    """
    Test of symmetry based on the sample third standardised moment.

    Raises:
        DomainError: If n < 7.
        DegenerateSampleError: If the sample is constant.
        NumericalError: If the estimated variance is not positive.
    """
    if sample.n < GUPTA_MIN_N:
        raise DomainError(f"The third-moment test needs at least {GUPTA_MIN_N} observations, got {sample.n}")
    m2, m3, m4, m6 = (central_moment(sample, r) for r in (2, 3, 4, 6))
    if m2 <= 0:
        raise DegenerateSampleError("Constant sample: second central moment is zero")

    b1 = m3 / m2 ** 1.5
    sigma2_hat = (m6 - 6.0 * m2 * m4 + 9.0 * m2 ** 3) / (sample.n * m2 ** 3)
    if not sigma2_hat > 0:
        raise NumericalError(f"Estimated variance of b1 is not positive ({sigma2_hat})")
    s1 = b1 / math.sqrt(sigma2_hat)
    return GuptaResult(sample.n, b1, sigma2_hat, s1, two_sided_normal_p(s1), m2, m3, m4, m6)


def deviance_test(deviance: float, k: int):
    """
    Reference a deviance at k components to the chi-square with [k/2] df.

    Returns:
        tuple: (df, p_value). For k = 1 this is (0, 1.0).
    """
    make_grid(k)
    df = k // 2
    if df == 0:
        return 0, 1.0
    return df, chi2_sf(max(deviance, 0.0), df)


def _result_from_fits(k, unconstrained, constrained, label, boundary_tol, selection=None) -> SymmetryTestResult:
    if k == 1:
        return SymmetryTestResult(
            chosen_k=1, deviance=0.0, df=0, p_value=1.0, criterion=label,
            unconstrained_fit=unconstrained, constrained_fit=constrained,
            auto_accepted=True, boundary=False, selection=selection,
        )

    deviance = 2.0 * (unconstrained.loglik - constrained.loglik)
    if deviance < -NEGATIVE_DEVIANCE_TOL:
        raise DiagnosticsError(
            f"Negative deviance {deviance:.3g} at k={k}: the constrained fit found a better optimum; "
            f"increase the number of restarts")
    deviance = max(deviance, 0.0)
    df, p_value = deviance_test(deviance, k)
    boundary = unconstrained.on_boundary(boundary_tol) or constrained.on_boundary(boundary_tol)
    if boundary:
        logger.warning(f"k={k}: weights on the simplex boundary, chi-square reference is approximate")
    return SymmetryTestResult(
        chosen_k=k, deviance=deviance, df=df, p_value=p_value, criterion=label,
        unconstrained_fit=unconstrained, constrained_fit=constrained,
        auto_accepted=False, boundary=boundary, selection=selection,
    )


def result_from_table(table: SelectionTable, criterion: Criterion, boundary_tol: float = 1e-8,
                      model: Optional[SelectionModel] = None) -> SymmetryTestResult:
    """Mixture test at the k a selection table chooses under `criterion`, without refitting."""
    k = table.choose(criterion, model)
    row = table.row(k)
    return _result_from_fits(k, row.unconstrained, row.constrained, criterion.value, boundary_tol, table)


def result_at_k(table: SelectionTable, k: int, boundary_tol: float = 1e-8) -> SymmetryTestResult:
    """Mixture test at a given k from the fits already in a selection table."""
    try:
        row = table.row(k)
    except KeyError:
        raise DomainError(f"k={k} is not among the fitted candidates "
                          f"{[r.k for r in table.rows]}") from None
    if row.failed:
        raise EstimationError(f"k={k} could not be fitted: {row.error}")
    return _result_from_fits(k, row.unconstrained, row.constrained, TestMode.fixed_k(k).label, boundary_tol)


def mixture_symmetry_test(sample: Sample, mode: Union[TestMode, int] = TestMode(),
                          options: Optional[EmOptions] = None, stream: Optional[RandomStream] = None,
                          model: SelectionModel = SelectionModel.UNCONSTRAINED,
                          fitter: Optional[EMFitter] = None) -> SymmetryTestResult:
    """
    Likelihood-ratio test of pi_j = pi_{k-j+1}.

    Args:
        sample (Sample): Nondegenerate data.
        mode (TestMode or int): Selection by criterion, or a fixed odd k.
        options (EmOptions, optional): EM options.
        stream (RandomStream, optional): Initialisation stream.
        model (SelectionModel, optional): Fits that drive the choice of k.

    Returns:
        SymmetryTestResult: k = 1 gives auto_accepted with p_value 1.

    Raises:
        DiagnosticsError: If the deviance is below -1e-6 after escalation.
    """
    if isinstance(mode, int):
        mode = TestMode.fixed_k(mode)
    sample.require_nondegenerate()
    fitter = fitter or EMFitter(options)
    boundary_tol = fitter.options.boundary_tol

    if mode.k is not None:
        unconstrained, constrained = fitter.fit_pair(sample, mode.k, stream)
        result = _result_from_fits(mode.k, unconstrained, constrained, mode.label, boundary_tol)
    else:
        table = select_k(sample, mode.criterion, mode.k_max, stream=stream, model=model, fitter=fitter)
        result = result_from_table(table, mode.criterion, boundary_tol, model)

    fitter.logger.info(f"mixture test ({result.criterion}): k={result.chosen_k} deviance={result.deviance:.4f} "
                       f"df={result.df} p={result.p_value:.5g}")
    return result
