"""
Mixtures of k normal components with common variance whose means lie on an
equispaced grid, nu_j = alpha + beta * delta_j with delta_j equispaced in [-1, 1].

Estimation is by EM. The M-step is closed form: (alpha, beta) solve the
weighted least squares problem of x_i on delta_j with weights z_ij, sigma2
is the weighted residual mean square, and the weights are either the
column means of the responsibilities (unconstrained) or their averages over
mirror pairs j, k-j+1 (symmetry constraint).

Example usage:
    sample = Sample.from_values(data)
    fitter = EMFitter(EmOptions(n_restarts=5))
    unconstrained, constrained = fitter.fit_pair(sample, k=3)
    deviance = 2 * (unconstrained.loglik - constrained.loglik)
"""
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Tuple

import logging
import math

import numpy as np

from nmsym.rng import RandomStream
from nmsym.sample import Sample
from nmsym.specfun import DomainError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class NumericalError(ArithmeticError):
    """Computation lost all precision"""


class EstimationError(RuntimeError):
    """EM estimation failed for every restart"""


@dataclass(frozen=True, eq=False)
class EquispacedGrid:
    k: int
    deltas: np.ndarray = field(repr=False)


def make_grid(k: int) -> EquispacedGrid:
    """
    Equispaced grid of k points in [-1, 1], k odd.

    Raises:
        DomainError: If k is even or not positive.
    """
    if int(k) != k or k < 1 or k % 2 == 0:
        raise DomainError(f"k must be an odd positive integer, got {k}")
    k = int(k)
    if k == 1:
        deltas = np.zeros(1)
    else:
        deltas = -1.0 + 2.0 * np.arange(k) / (k - 1)
        # exact mirror symmetry, delta_j + delta_{k-j+1} = 0
        deltas = (deltas - deltas[::-1]) / 2.0
    deltas.setflags(write=False)
    return EquispacedGrid(k, deltas)


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """
    Parameters of an equispaced normal mixture.

    Args:
        grid (EquispacedGrid): The fixed support grid delta_1..delta_k.
        alpha (float): Centre of symmetry, data units.
        beta (float): Nonnegative scale of the grid, data units.
        sigma2 (float): Common component variance.
        weights (np.ndarray): Mixing weights pi_1..pi_k.
    """
    grid: EquispacedGrid
    alpha: float
    beta: float
    sigma2: float
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        if weights.shape != (self.grid.k,):
            raise DomainError(f"Expected {self.grid.k} weights, got shape {weights.shape}")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise DomainError(f"Weights must be nonnegative and sum to 1, got {weights}")
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)) or self.beta < 0:
            raise DomainError(f"alpha must be finite and beta nonnegative, got alpha={self.alpha} beta={self.beta}")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def k(self) -> int:
        return self.grid.k

    @property
    def support_points(self) -> np.ndarray:
        """Component means nu_j = alpha + beta * delta_j."""
        return self.alpha + self.beta * self.grid.deltas

    @property
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.weights, self.weights[::-1]))

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "alpha": self.alpha,
            "beta": self.beta,
            "sigma2": self.sigma2,
            "weights": self.weights.tolist(),
            "means": self.support_points.tolist(),
        }


def _canonical(grid, alpha, beta, sigma2, weights) -> MixtureParams:
    # (beta, pi_1..pi_k) and (-beta, pi_k..pi_1) give the same density
    if beta < 0:
        beta = -beta
        weights = weights[::-1]
    return MixtureParams(grid, alpha, beta, sigma2, weights)


def symmetrize_params(params: MixtureParams) -> MixtureParams:
    """Average the weights over mirror pairs."""
    weights = (params.weights + params.weights[::-1]) / 2.0
    return replace(params, weights=weights / weights.sum())


@dataclass(frozen=True, eq=False)
class Responsibilities:
    z_hat: np.ndarray = field(repr=False)

    @property
    def column_sums(self) -> np.ndarray:
        return self.z_hat.sum(axis=0)

    @property
    def n(self) -> int:
        return self.z_hat.shape[0]

    @property
    def k(self) -> int:
        return self.z_hat.shape[1]


def count_parameters(k: int, constrained: bool) -> int:
    """Free parameters: alpha and sigma2, plus beta and the free weights when k > 1."""
    if k == 1:
        return 2
    if constrained:
        return 3 + k // 2
    return 3 + (k - 1)


def _log_joint(x: np.ndarray, params: MixtureParams) -> np.ndarray:
    """n x k matrix of log(pi_j) + log phi(x_i; nu_j, sigma2)."""
    residuals = x[:, None] - params.support_points[None, :]
    log_phi = -LOG_SQRT_2PI - 0.5 * math.log(params.sigma2) - 0.5 * residuals ** 2 / params.sigma2
    with np.errstate(divide="ignore"):
        log_weights = np.log(params.weights)
    return log_phi + log_weights[None, :]


def _log_sum_exp_rows(log_joint: np.ndarray) -> np.ndarray:
    row_max = np.max(log_joint, axis=1)
    bad = np.flatnonzero(~np.isfinite(row_max))
    if bad.size:
        raise NumericalError(f"Mixture density underflows in log space at observation index {int(bad[0])}")
    return row_max + np.log(np.sum(np.exp(log_joint - row_max[:, None]), axis=1))


def log_density(x: float, params: MixtureParams) -> float:
    """
    ln f(x) for the mixture, via a max-shifted sum of exponentials.

    Raises:
        DomainError: If x is not finite.
    """
    if not math.isfinite(x):
        raise DomainError(f"x must be finite, got {x}")
    return float(_log_sum_exp_rows(_log_joint(np.array([float(x)]), params))[0])


def log_density_grid(xs: np.ndarray, params: MixtureParams) -> np.ndarray:
    """Vectorised log_density over an array of abscissae."""
    return _log_sum_exp_rows(_log_joint(np.asarray(xs, dtype=float), params))


def log_likelihood(sample: Sample, params: MixtureParams) -> float:
    """Sum over observations of log_density."""
    if sample.n == 0:
        raise DomainError("log-likelihood of an empty sample")
    return float(np.sum(_log_sum_exp_rows(_log_joint(sample.values, params))))


def _e_step_with_loglik(sample: Sample, params: MixtureParams) -> Tuple[Responsibilities, float]:
    log_joint = _log_joint(sample.values, params)
    log_norm = _log_sum_exp_rows(log_joint)
    z_hat = np.exp(log_joint - log_norm[:, None])
    z_hat /= z_hat.sum(axis=1, keepdims=True)
    return Responsibilities(z_hat), float(np.sum(log_norm))


def e_step(sample: Sample, params: MixtureParams) -> Responsibilities:
    """
    Posterior component memberships z_hat_ij.

    Raises:
        NumericalError: If a row underflows even in log space.
    """
    return _e_step_with_loglik(sample, params)[0]


@dataclass(frozen=True, eq=False)
class MStepResult:
    params: MixtureParams
    beta_degenerate: bool = False
    sigma2_floored: bool = False


def _m_step(sample: Sample, resp: Responsibilities, grid: EquispacedGrid, constrained: bool,
            sigma2_floor: float = 0.0) -> MStepResult:
    x = sample.values
    n = sample.n
    if resp.n != n or resp.k != grid.k:
        raise DomainError(f"Responsibilities of shape {resp.z_hat.shape} do not match n={n}, k={grid.k}")
    z = resp.z_hat
    deltas = grid.deltas
    col = resp.column_sums
    x_bar = float(np.mean(x))

    beta_degenerate = False
    if grid.k == 1:
        beta = 0.0
        delta_bar = 0.0
    else:
        delta_bar = float(np.dot(col, deltas)) / n
        numerator = float(np.sum(z * (x - x_bar)[:, None] * deltas[None, :]))
        denominator = float(np.dot(col, (deltas - delta_bar) * deltas))
        if denominator <= n * np.finfo(float).eps:
            beta = 0.0
            beta_degenerate = True
        else:
            beta = numerator / denominator
    alpha = x_bar - beta * delta_bar

    residuals = x[:, None] - (alpha + beta * deltas)[None, :]
    sigma2 = float(np.sum(z * residuals ** 2)) / n
    sigma2_floored = False
    if sigma2 < sigma2_floor or sigma2 <= 0:
        sigma2 = max(sigma2_floor, np.finfo(float).tiny)
        sigma2_floored = True

    if constrained:
        weights = (col + col[::-1]) / (2.0 * n)
    else:
        weights = col / n
    # elementwise ops keep the constrained weights bitwise mirror-symmetric
    weights = np.clip(weights, 0.0, None)
    weights = weights / weights.sum()

    return MStepResult(_canonical(grid, alpha, beta, sigma2, weights), beta_degenerate, sigma2_floored)


def m_step(sample: Sample, resp: Responsibilities, grid: EquispacedGrid, constrained: bool,
           sigma2_floor: float = 0.0) -> MixtureParams:
    """
    Closed-form maximisation of the expected complete-data log-likelihood.

    beta = sum_ij z_ij (x_i - x_bar) delta_j / sum_j z_.j (delta_j - delta_bar) delta_j
    with delta_bar = sum_j z_.j delta_j / n, alpha = x_bar - beta * delta_bar and
    sigma2 the weighted mean squared residual. For k = 1 beta stays 0.
    A negative beta is reported as (-beta, reversed weights).
    """
    return _m_step(sample, resp, grid, constrained, sigma2_floor).params


@dataclass
class EmOptions:
    """
    Options for EM estimation.

    Args:
        tolerance (float): Stop when |l_new - l_old| < tolerance * (1 + n). The threshold does not
            depend on the level of l, which moves by -n ln a under x -> a x + b. Defaults to 1e-8.
        max_iter (int): Maximum E/M iterations per restart. Defaults to 5000.
        n_restarts (int): Restarts per fit, the first one deterministic. Defaults to 10.
        sigma2_floor_ratio (float): Variance floor as a fraction of the sample variance. Defaults to 1e-8.
        seed (int): Master seed of the initialisation stream. Defaults to 0.
        escalate (bool): Re-run the unconstrained fit from the constrained optimum when the
            latter is better. Defaults to True.
        boundary_tol (float): Weights below this count as on the simplex boundary. Defaults to 1e-8.
    """
    tolerance: float = 1e-8
    max_iter: int = 5000
    n_restarts: int = 10
    sigma2_floor_ratio: float = 1e-8
    seed: int = 0
    escalate: bool = True
    boundary_tol: float = 1e-8

    def validate(self):
        if not self.tolerance > 0:
            raise DomainError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iter < 1 or self.n_restarts < 1:
            raise DomainError("max_iter and n_restarts must be at least 1")
        if self.sigma2_floor_ratio < 0:
            raise DomainError("sigma2_floor_ratio must be nonnegative")


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    Outcome of an EM fit: the best restart plus bookkeeping.

    aic = -2 loglik + 2 npar, bic = -2 loglik + npar ln(n).
    """
    params: MixtureParams
    loglik: float
    constrained: bool
    npar: int
    aic: float
    bic: float
    iterations: int
    converged: bool
    restart_index: int
    n: int
    sample_min: float
    sample_max: float
    loglik_trace: Tuple[float, ...] = field(default=(), repr=False)
    beta_degenerate: bool = False
    degenerate_restarts: int = 0

    @property
    def k(self) -> int:
        return self.params.k

    def on_boundary(self, tol: float = 1e-8) -> bool:
        return bool(np.any(self.params.weights < tol))

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "constrained": self.constrained,
            "npar": self.npar,
            "loglik": self.loglik,
            "aic": self.aic,
            "bic": self.bic,
            "iterations": self.iterations,
            "converged": self.converged,
            "restart_index": self.restart_index,
            "degenerate_restarts": self.degenerate_restarts,
            "params": self.params.as_dict(),
        }


def init_params(sample: Sample, k: int, constrained: bool, restart_index: int,
                stream: RandomStream) -> MixtureParams:
    """
    Starting values for restart `restart_index`.

    Restart 0 is deterministic: alpha = median, beta = half the range,
    sigma2 = variance / k, uniform weights. Later restarts draw the weights
    from a flat Dirichlet, jitter alpha by up to 0.5 MAD and perturb beta and
    sigma2, using stream.child(restart_index). Every start scales with the
    data, so an affine map of the sample maps the starts the same way.
    """
    grid = make_grid(k)
    if k > 1:
        sample.require_nondegenerate()
    variance = sample.variance
    half_range = (sample.max - sample.min) / 2.0
    if variance <= 0:
        # k == 1 on a constant sample
        variance = max(abs(sample.mean), 1.0) * 1e-8

    if restart_index == 0:
        alpha = sample.median
        beta = half_range if k > 1 else 0.0
        sigma2 = variance / k
        weights = np.full(k, 1.0 / k)
    else:
        generator = stream.child(restart_index).generator()
        weights = generator.dirichlet(np.ones(k))
        spread = sample.mad if sample.mad > 0 else math.sqrt(variance)
        alpha = sample.median + generator.uniform(-0.5, 0.5) * spread
        beta = half_range * generator.uniform(0.5, 1.0) if k > 1 else 0.0
        sigma2 = variance / k * generator.uniform(0.5, 1.5)

    if constrained:
        weights = (weights + weights[::-1]) / 2.0
    return MixtureParams(grid, alpha, beta, sigma2, weights / weights.sum())


@dataclass
class _RunOutcome:
    params: MixtureParams
    loglik: float
    iterations: int
    converged: bool
    trace: List[float]
    beta_degenerate: bool
    sigma2_floored: bool


class EMFitter:
    """
    Runs EM with restarts.

    Args:
        options (EmOptions, optional): Estimation options. Defaults to EmOptions().
        logger (logging.Logger, optional): Defaults to the module logger.
    """

    def __init__(self, options: Optional[EmOptions] = None, logger=None):
        self.options = options or EmOptions()
        self.options.validate()
        self.logger = logger or logging.getLogger(__name__)

    def default_stream(self) -> RandomStream:
        return RandomStream(self.options.seed)

    def _run(self, sample: Sample, start: MixtureParams, constrained: bool) -> _RunOutcome:
        options = self.options
        floor = options.sigma2_floor_ratio * sample.variance
        params = start
        resp, loglik = _e_step_with_loglik(sample, params)
        trace = [loglik]
        converged = False
        beta_degenerate = sigma2_floored = False
        iterations = 0
        stop = options.tolerance * (1.0 + sample.n)

        for iterations in range(1, options.max_iter + 1):
            step = _m_step(sample, resp, start.grid, constrained, floor)
            params = step.params
            beta_degenerate, sigma2_floored = step.beta_degenerate, step.sigma2_floored
            resp, new_loglik = _e_step_with_loglik(sample, params)
            trace.append(new_loglik)
            change = abs(new_loglik - loglik)
            loglik = new_loglik
            if change < stop:
                converged = True
                break

        return _RunOutcome(params, loglik, iterations, converged, trace, beta_degenerate, sigma2_floored)

    def _result(self, sample, constrained, outcome: _RunOutcome, restart_index, degenerate) -> FitResult:
        npar = count_parameters(outcome.params.k, constrained)
        return FitResult(
            params=outcome.params,
            loglik=outcome.loglik,
            constrained=constrained,
            npar=npar,
            aic=-2.0 * outcome.loglik + 2.0 * npar,
            bic=-2.0 * outcome.loglik + npar * math.log(sample.n),
            iterations=outcome.iterations,
            converged=outcome.converged,
            restart_index=restart_index,
            n=sample.n,
            sample_min=sample.min,
            sample_max=sample.max,
            loglik_trace=tuple(outcome.trace),
            beta_degenerate=outcome.beta_degenerate,
            degenerate_restarts=degenerate,
        )

    def fit(self, sample: Sample, k: int, constrained: bool, stream: Optional[RandomStream] = None,
            extra_starts: Iterable[MixtureParams] = ()) -> FitResult:
        """
        Fit an NM_k model, keeping the best of the configured restarts.

        Args:
            sample (Sample): The data.
            k (int): Odd number of components.
            constrained (bool): Impose pi_j = pi_{k-j+1}.
            stream (RandomStream, optional): Initialisation stream. Defaults to the options seed.
            extra_starts (iterable, optional): Additional starting values tried after the
                regular restarts (restart indices n_restarts, n_restarts + 1, ...).

        Returns:
            FitResult: The restart with the highest log-likelihood.

        Raises:
            DegenerateSampleError: If k > 1 and the sample variance is zero.
            EstimationError: If every restart is degenerate.
        """
        make_grid(k)
        if k > 1:
            sample.require_nondegenerate()
        stream = stream or self.default_stream()
        n_restarts = 1 if k == 1 else self.options.n_restarts

        starts = [(index, lambda index=index: init_params(sample, k, constrained, index, stream))
                  for index in range(n_restarts)]
        for offset, start in enumerate(extra_starts):
            if constrained and not start.is_symmetric:
                start = symmetrize_params(start)
            starts.append((n_restarts + offset, lambda start=start: start))

        best: Optional[Tuple[int, _RunOutcome]] = None
        degenerate = 0
        for restart_index, make_start in starts:
            try:
                outcome = self._run(sample, make_start(), constrained)
            except NumericalError as e:
                degenerate += 1
                self.logger.warning(f"k={k} constrained={constrained} restart {restart_index}: {e}")
                continue
            if outcome.sigma2_floored:
                degenerate += 1
                self.logger.debug(f"k={k} constrained={constrained} restart {restart_index}: variance floored, discarded")
                continue
            self.logger.debug(f"k={k} constrained={constrained} restart {restart_index}: "
                              f"loglik={outcome.loglik:.6f} iterations={outcome.iterations} converged={outcome.converged}")
            if best is None or outcome.loglik > best[1].loglik:
                best = (restart_index, outcome)

        if best is None:
            raise EstimationError(f"All {len(starts)} restarts degenerate for k={k} (constrained={constrained})")

        restart_index, outcome = best
        if not outcome.converged:
            self.logger.warning(f"k={k} constrained={constrained}: no convergence within {self.options.max_iter} iterations")
        if outcome.beta_degenerate:
            self.logger.warning(f"k={k} constrained={constrained}: all mass in the central component, beta set to 0")
        return self._result(sample, constrained, outcome, restart_index, degenerate)

    def fit_pair(self, sample: Sample, k: int, stream: Optional[RandomStream] = None) -> Tuple[FitResult, FitResult]:
        """
        Unconstrained and constrained fits at k under one initialisation schedule.

        The constrained fit also starts from the symmetrised unconstrained
        solution. If the constrained optimum is still better than the
        unconstrained one, the unconstrained EM is re-run from it (escalation).
        """
        unconstrained = self.fit(sample, k, False, stream)
        constrained = self.fit(sample, k, True, stream, extra_starts=[unconstrained.params])

        if self.options.escalate and constrained.loglik > unconstrained.loglik + 1e-9:
            self.logger.info(f"k={k}: constrained fit beats unconstrained by "
                             f"{constrained.loglik - unconstrained.loglik:.3g}, escalating restarts")
            escalated = self.refine(sample, constrained.params, False,
                                    restart_index=self.options.n_restarts + 1)
            if escalated is not None and escalated.loglik > unconstrained.loglik:
                unconstrained = escalated
        return unconstrained, constrained

    def refine(self, sample: Sample, start: MixtureParams, constrained: bool,
               restart_index: int = 0) -> Optional[FitResult]:
        """Run EM once from `start`; None if that run is degenerate."""
        if constrained and not start.is_symmetric:
            start = symmetrize_params(start)
        try:
            outcome = self._run(sample, start, constrained)
        except NumericalError as e:
            self.logger.warning(f"refinement from given start failed: {e}")
            return None
        if outcome.sigma2_floored:
            return None
        return self._result(sample, constrained, outcome, restart_index, 0)


def fit_em(sample: Sample, k: int, constrained: bool, options: Optional[EmOptions] = None,
           stream: Optional[RandomStream] = None) -> FitResult:
    """Fit an NM_k model by EM with restarts (see EMFitter.fit)."""
    return EMFitter(options).fit(sample, k, constrained, stream)
