"""
Choice of the number of mixture components by AIC or BIC over odd k.
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import math

from nmsym.mixture import EMFitter, EmOptions, EstimationError, FitResult, make_grid
from nmsym.rng import RandomStream
from nmsym.sample import Sample
from nmsym.specfun import DomainError


class SelectionError(RuntimeError):
    """No candidate number of components could be fitted"""


class Criterion(Enum):
    AIC = "AIC"
    BIC = "BIC"

    @classmethod
    def parse(cls, text: str) -> "Criterion":
        try:
            return cls(text.upper())
        except ValueError:
            raise DomainError(f"Unknown criterion '{text}', expected aic or bic") from None


class SelectionModel(Enum):
    """Which fits drive the choice of k."""
    UNCONSTRAINED = "unconstrained"
    CONSTRAINED = "constrained"


def information_criteria(loglik: float, npar: int, n: int) -> Tuple[float, float]:
    """
    AIC and BIC of a fitted model.

    Returns:
        tuple: (aic, bic) = (-2 loglik + 2 npar, -2 loglik + npar ln n).
    """
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    if npar < 0:
        raise DomainError(f"npar must be nonnegative, got {npar}")
    return -2.0 * loglik + 2.0 * npar, -2.0 * loglik + npar * math.log(n)


def _criterion_value(fit: FitResult, criterion: Criterion) -> float:
    return fit.aic if criterion is Criterion.AIC else fit.bic


@dataclass(frozen=True)
class SelectionRow:
    k: int
    unconstrained: Optional[FitResult]
    constrained: Optional[FitResult]
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.unconstrained is None or self.constrained is None

    def fit(self, model: SelectionModel) -> Optional[FitResult]:
        return self.unconstrained if model is SelectionModel.UNCONSTRAINED else self.constrained

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "failed": self.failed,
            "error": self.error,
            "unconstrained": self.unconstrained.as_dict() if self.unconstrained else None,
            "constrained": self.constrained.as_dict() if self.constrained else None,
        }


@dataclass(frozen=True)
class SelectionTable:
    """
    One row per candidate k with both fits, and the k minimising the criterion.

    Both criteria are stored, so `choose` can replay the selection under the
    other criterion (or the other model) without refitting.
    """
    rows: Tuple[SelectionRow, ...]
    chosen_k: int
    criterion: Criterion
    model: SelectionModel = SelectionModel.UNCONSTRAINED

    def row(self, k: int) -> SelectionRow:
        for row in self.rows:
            if row.k == k:
                return row
        raise KeyError(f"No row for k={k}")

    def choose(self, criterion: Criterion, model: Optional[SelectionModel] = None) -> int:
        """Smallest k minimising `criterion` among the non-failed rows of `model`."""
        model = model or self.model
        best_k, best_value = None, math.inf
        for row in sorted(self.rows, key=lambda r: r.k):
            fit = row.fit(model)
            if row.failed or fit is None:
                continue
            value = _criterion_value(fit, criterion)
            # strict inequality keeps the smaller k on ties
            if value < best_value:
                best_k, best_value = row.k, value
        if best_k is None:
            raise SelectionError("Every candidate k failed to fit")
        return best_k

    def as_dict(self) -> dict:
        return {
            "criterion": self.criterion.value,
            "model": self.model.value,
            "chosen_k": self.chosen_k,
            "rows": [row.as_dict() for row in self.rows],
        }


def candidate_ks(k_max: int) -> List[int]:
    make_grid(k_max)
    return list(range(1, k_max + 1, 2))


def select_k(sample: Sample, criterion: Criterion, k_max: int = 7, options: Optional[EmOptions] = None,
             stream: Optional[RandomStream] = None, model: SelectionModel = SelectionModel.UNCONSTRAINED,
             fitter: Optional[EMFitter] = None) -> SelectionTable:
    """
    Fit unconstrained and constrained models for k = 1, 3, ..., k_max and pick k.

    Args:
        sample (Sample): Nondegenerate data.
        criterion (Criterion): AIC or BIC.
        k_max (int, optional): Largest odd k considered. Defaults to 7.
        options (EmOptions, optional): EM options, ignored when `fitter` is given.
        stream (RandomStream, optional): Initialisation stream shared by all k.
        model (SelectionModel, optional): Fits that drive the choice. Defaults to unconstrained.

    Raises:
        SelectionError: If every candidate fit is degenerate.
    """
    sample.require_nondegenerate()
    fitter = fitter or EMFitter(options)
    rows = []
    for k in candidate_ks(k_max):
        try:
            unconstrained, constrained = fitter.fit_pair(sample, k, stream)
            rows.append(SelectionRow(k, unconstrained, constrained))
            fitter.logger.debug(f"k={k}: loglik={unconstrained.loglik:.4f}/{constrained.loglik:.4f} "
                                f"aic={unconstrained.aic:.3f} bic={unconstrained.bic:.3f}")
        except EstimationError as e:
            fitter.logger.warning(f"k={k} excluded from selection: {e}")
            rows.append(SelectionRow(k, None, None, error=str(e)))

    table = SelectionTable(tuple(rows), chosen_k=1, criterion=criterion, model=model)
    chosen_k = table.choose(criterion, model)
    fitter.logger.info(f"{criterion.value} selects k={chosen_k} ({model.value} fits, n={sample.n})")
    return SelectionTable(tuple(rows), chosen_k=chosen_k, criterion=criterion, model=model)
