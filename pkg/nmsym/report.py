"""
Analysis and study reports.

JSON is the machine output; the text rendering lays the numbers out as
selection, test and parameter tables. Density grids and study tables are written as CSV.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import csv
import json
import logging
import math

import numpy as np

from nmsym import __version__
from nmsym.mixture import FitResult, log_density_grid
from nmsym.montecarlo import KBuckets, StudyReport, TestKind
from nmsym.selection import Criterion, SelectionError, SelectionModel, SelectionTable
from nmsym.specfun import DomainError
from nmsym.symmetry import GuptaResult, SymmetryTestResult

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
DEFAULT_GRID_POINTS = 512

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class DensityGrid:
    x: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)

    def integral(self) -> float:
        """Trapezoid rule over the grid."""
        return float(np.sum(np.diff(self.x) * (self.density[1:] + self.density[:-1]) / 2.0))


def default_range(fit: FitResult) -> Tuple[float, float]:
    """[min(sample) - 2 sigma, max(sample) + 2 sigma]."""
    sigma = math.sqrt(fit.params.sigma2)
    return fit.sample_min - 2.0 * sigma, fit.sample_max + 2.0 * sigma


def emit_density_grid(fit: FitResult, n_points: int = DEFAULT_GRID_POINTS,
                      x_range: Optional[Tuple[float, float]] = None) -> DensityGrid:
    """
    Fitted density on n_points equally spaced abscissae.

    Args:
        fit (FitResult): A fitted model.
        n_points (int, optional): Number of abscissae, at least 2. Defaults to 512.
        x_range (tuple, optional): (low, high). Defaults to the sample range widened by 2 sigma.

    Raises:
        DomainError: If n_points < 2 or the range is empty.
    """
    if int(n_points) != n_points or n_points < 2:
        raise DomainError(f"n_points must be an integer of at least 2, got {n_points}")
    low, high = x_range if x_range is not None else default_range(fit)
    if not (math.isfinite(low) and math.isfinite(high) and low < high):
        raise DomainError(f"Invalid density range ({low}, {high})")
    x = np.linspace(low, high, int(n_points))
    return DensityGrid(x, np.exp(log_density_grid(x, fit.params)))


def density_pair(unconstrained: FitResult, constrained: FitResult,
                 n_points: int = DEFAULT_GRID_POINTS) -> Tuple[DensityGrid, DensityGrid]:
    """Both fitted densities on one abscissa covering both default ranges."""
    low_u, high_u = default_range(unconstrained)
    low_c, high_c = default_range(constrained)
    x_range = (min(low_u, low_c), max(high_u, high_c))
    return (emit_density_grid(unconstrained, n_points, x_range),
            emit_density_grid(constrained, n_points, x_range))


def write_density_csv(path: PathLike, unconstrained: FitResult, constrained: FitResult,
                      n_points: int = DEFAULT_GRID_POINTS):
    """Write x,density_unconstrained,density_constrained rows."""
    grid_u, grid_c = density_pair(unconstrained, constrained, n_points)
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "density_unconstrained", "density_constrained"])
        for x, du, dc in zip(grid_u.x, grid_u.density, grid_c.density):
            writer.writerow([repr(float(x)), repr(float(du)), repr(float(dc))])
    logger.info(f"Density grid ({n_points} points) written to {path}")


def format_p(p: float) -> str:
    if p >= 1e-4:
        return f"{p:.6f}"
    return f"{p:.3e}"


@dataclass
class AnalysisReport:
    """
    Everything `nmsym test` computed for one input file.

    Args:
        input_path (str): The analysed file.
        digest (dict): n, min, max, mean and median of the sample.
        config (dict): Resolved options, echoed so the run can be repeated.
        selection (SelectionTable, optional): Fits for every candidate k.
        mixture (list): One SymmetryTestResult per requested criterion (or the fixed k).
        extra_k (list): Deviance tests at additionally requested k.
        gupta (GuptaResult, optional): Third-moment test.
        density (tuple, optional): (unconstrained, constrained) DensityGrid pair.
    """
    input_path: str
    digest: dict
    config: dict
    selection: Optional[SelectionTable] = None
    mixture: List[SymmetryTestResult] = field(default_factory=list)
    extra_k: List[SymmetryTestResult] = field(default_factory=list)
    gupta: Optional[GuptaResult] = None
    density: Optional[Tuple[DensityGrid, DensityGrid]] = None
    tool_version: str = __version__
    schema_version: str = SCHEMA_VERSION

    def as_dict(self) -> dict:
        result = {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "input": {"path": self.input_path, **self.digest},
            "config": self.config,
            "selection": self.selection.as_dict() if self.selection else None,
            "mixture_tests": [test.as_dict() for test in self.mixture],
            "extra_k_tests": [test.as_dict() for test in self.extra_k],
            "gupta": self.gupta.as_dict() if self.gupta else None,
            "density": None,
        }
        if self.density is not None:
            grid_u, grid_c = self.density
            result["density"] = {
                "x": grid_u.x.tolist(),
                "unconstrained": grid_u.density.tolist(),
                "constrained": grid_c.density.tolist(),
            }
        return result

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"nmsym {self.tool_version}", f"input: {self.input_path}"]
        lines.append("  ".join(f"{key}={_num(value)}" for key, value in self.digest.items()))

        if self.selection is not None:
            lines.append("")
            lines.extend(_selection_lines(self.selection))

        for result in self.mixture:
            lines.append("")
            lines.extend(_mixture_lines(result))
            if not result.auto_accepted:
                lines.append("")
                lines.extend(_parameter_lines(result.unconstrained_fit, result.constrained_fit))

        if self.extra_k:
            lines.append("")
            lines.append("Deviance tests at requested k")
            lines.append(f"  {'k':>3} {'deviance':>10} {'df':>4} {'p-value':>12}")
            for result in self.extra_k:
                lines.append(f"  {result.chosen_k:>3} {result.deviance:>10.3f} {result.df:>4} "
                             f"{format_p(result.p_value):>12}")

        if self.gupta is not None:
            lines.append("")
            lines.extend(_gupta_lines(self.gupta))
        return "\n".join(lines) + "\n"


def _num(value) -> str:
    return f"{value:.6g}" if isinstance(value, float) else str(value)


def _selection_lines(table: SelectionTable) -> List[str]:
    lines = [f"Model selection ({table.criterion.value}, {table.model.value} fits): k = {table.chosen_k}",
             f"  {'model':<14} {'k':>3} {'loglik':>10} {'npar':>5} {'AIC':>10} {'BIC':>10}"]
    for model in SelectionModel:
        for row in table.rows:
            fit = row.fit(model)
            if row.failed or fit is None:
                lines.append(f"  {model.value:<14} {row.k:>3}   failed: {row.error}")
                continue
            lines.append(f"  {model.value:<14} {row.k:>3} {fit.loglik:>10.3f} {fit.npar:>5} "
                         f"{fit.aic:>10.3f} {fit.bic:>10.3f}")
    for criterion in Criterion:
        chosen = []
        for model in SelectionModel:
            try:
                chosen.append(f"k={table.choose(criterion, model)} ({model.value})")
            except SelectionError:
                chosen.append(f"none ({model.value})")
        lines.append(f"  minimum {criterion.value}: " + ", ".join(chosen))
    return lines


def _mixture_lines(result: SymmetryTestResult) -> List[str]:
    lines = [f"Mixture likelihood-ratio test ({result.criterion}, k = {result.chosen_k})"]
    if result.auto_accepted:
        lines.append("  k = 1 selected: symmetry accepted without a test")
    lines.extend([
        f"  deviance  {result.deviance:.3f}",
        f"  df        {result.df}",
        f"  p-value   {format_p(result.p_value)}",
    ])
    if result.boundary:
        lines.append("  note: estimated weights on the boundary, chi-square reference is approximate")
    return lines


def _parameter_lines(unconstrained: FitResult, constrained: FitResult) -> List[str]:
    lines = [f"Parameter estimates (k = {unconstrained.k})",
             f"  {'':<8} {'unconstrained':>14} {'constrained':>14}"]
    pu, pc = unconstrained.params, constrained.params
    for j in range(pu.k):
        lines.append(f"  {f'pi_{j + 1}':<8} {pu.weights[j]:>14.4f} {pc.weights[j]:>14.4f}")
    lines.append(f"  {'alpha':<8} {pu.alpha:>14.4f} {pc.alpha:>14.4f}")
    lines.append(f"  {'beta':<8} {pu.beta:>14.4f} {pc.beta:>14.4f}")
    for j, (mu_u, mu_c) in enumerate(zip(pu.support_points, pc.support_points)):
        lines.append(f"  {f'mu_{j + 1}':<8} {mu_u:>14.4f} {mu_c:>14.4f}")
    lines.append(f"  {'sigma2':<8} {pu.sigma2:>14.4f} {pc.sigma2:>14.4f}")
    return lines


def _gupta_lines(gupta: GuptaResult) -> List[str]:
    return [
        "Third-moment test",
        f"  b1        {gupta.b1:.4f}",
        f"  var(b1)   {gupta.sigma2_hat:.6g}",
        f"  S1        {gupta.s1:.3f}",
        f"  p-value   {format_p(gupta.p_value)}",
    ]


LEVEL_FILE = "level.csv"
POWER_FILE = "power.csv"
K_SYMMETRIC_FILE = "k_frequencies_symmetric.csv"
K_SKEWED_FILE = "k_frequencies_skewed.csv"
STUDY_JSON_FILE = "study.json"

_RATE_HEADER = ["test", "distribution", "n", "level", "rate", "standard_error", "rejections", "successes", "failures"]
_K_HEADER = ["criterion", "distribution", "n"] + [f"k{label}" if label[0].isdigit() else "k_gt5"
                                                  for label in KBuckets.LABELS]


def _is_symmetric(report: StudyReport, dist_name: str) -> bool:
    for dist in report.spec.distributions:
        if dist.name == dist_name:
            return dist.tag.is_symmetric
    raise KeyError(dist_name)


def _write_rows(path: Path, header: List[str], rows: List[list]):
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def write_study_csv(report: StudyReport, out_dir: PathLike) -> List[Path]:
    """
    Write the study tables, one CSV per table.

    level.csv holds the rejection rates of the symmetric generators,
    power.csv those of the skewed ones; the k frequency files hold the
    percentage of replicates per selected-k bucket. The files carry no
    timing information, so equal seeds give byte-identical files.

    Returns:
        list: Paths of the written files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rate_rows = {True: [], False: []}
    for (test, dist, n, level), cell in report.rejection_rates.items():
        rate_rows[_is_symmetric(report, dist)].append([
            test.value, dist, n, repr(level), repr(cell.rate), repr(cell.standard_error),
            cell.rejections, cell.successes, cell.failures,
        ])
    k_rows = {True: [], False: []}
    for (criterion, dist, n), row in report.k_frequencies.items():
        k_rows[_is_symmetric(report, dist)].append([criterion.value, dist, n] + [repr(p) for p in row])

    paths = []
    for name, header, rows in ((LEVEL_FILE, _RATE_HEADER, rate_rows[True]),
                               (POWER_FILE, _RATE_HEADER, rate_rows[False]),
                               (K_SYMMETRIC_FILE, _K_HEADER, k_rows[True]),
                               (K_SKEWED_FILE, _K_HEADER, k_rows[False])):
        if not rows:
            continue
        path = out_dir / name
        _write_rows(path, header, rows)
        paths.append(path)
    logger.info(f"Study tables written to {out_dir}: {', '.join(p.name for p in paths)}")
    return paths


def write_study_json(report: StudyReport, path: PathLike):
    with Path(path).open("w", encoding="utf-8") as f:
        json.dump(report.as_dict(), f, indent=2)


def study_summary(report: StudyReport, level: float = 0.05) -> str:
    """Console table of rejection rates at one level, distributions by rows, tests and n by columns."""
    spec = report.spec
    if level not in spec.levels:
        level = spec.levels[0]
    columns = [(test, n) for test in spec.tests for n in spec.sample_sizes]
    header = f"{'distribution':<14}" + "".join(f"{f'{test.value} n={n}':>18}" for test, n in columns)
    lines = [f"Rejection rates at level {level}", header]
    for dist in spec.distributions:
        cells = [report.rate(test, dist.name, n, level) for test, n in columns]
        kind = "" if dist.tag.is_symmetric else " *"
        lines.append(f"{dist.name + kind:<14}" + "".join(f"{rate:>18.3f}" for rate in cells))
    lines.append("* skewed: rates are power, otherwise level")
    mixture = [test for test in spec.tests if test is not TestKind.GUPTA]
    if mixture:
        lines.append("")
        lines.append(f"Selected k, % of replicates ({' / '.join(KBuckets.LABELS)})")
        for test in mixture:
            for dist in spec.distributions:
                for n in spec.sample_sizes:
                    row = report.k_frequencies.get((test.criterion, dist.name, n))
                    if row is None:
                        continue
                    values = " / ".join(f"{p:.1f}" for p in row)
                    lines.append(f"  {test.criterion.value} {dist.name:<14} n={n:<5} {values}")
    return "\n".join(lines) + "\n"
