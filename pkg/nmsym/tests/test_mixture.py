"""
Tests for the equispaced normal mixture: density, E-step, M-step and the
EM fitter with restarts.
"""
import math

import numpy as np
import pytest
from scipy import stats

from nmsym.mixture import (EMFitter, EmOptions, EstimationError, MixtureParams, NumericalError,
                           Responsibilities, count_parameters, e_step, fit_em, init_params, log_density,
                           log_density_grid, log_likelihood, m_step, make_grid, symmetrize_params)
from nmsym.rng import RandomStream
from nmsym.sample import DegenerateSampleError, Sample
from nmsym.specfun import DomainError


def params(k, alpha, beta, sigma2, weights):
    return MixtureParams(make_grid(k), alpha, beta, sigma2, np.asarray(weights, dtype=float))


def oracle_density(x, p: MixtureParams):
    means = p.alpha + p.beta * np.linspace(-1.0, 1.0, p.k) if p.k > 1 else np.array([p.alpha])
    return float(np.sum(p.weights * stats.norm.pdf(x, means, math.sqrt(p.sigma2))))


def mixture_sample(seed, n=200, alpha=0.0, beta=2.0, sigma2=0.25, weights=(0.2, 0.5, 0.3)):
    generator = np.random.Generator(np.random.PCG64(seed))
    k = len(weights)
    components = generator.choice(k, size=n, p=np.asarray(weights))
    means = alpha + beta * np.linspace(-1.0, 1.0, k)
    return Sample(means[components] + math.sqrt(sigma2) * generator.standard_normal(n))


def expected_complete_loglik(sample, z, alpha, beta, sigma2, weights, k):
    deltas = np.linspace(-1.0, 1.0, k)
    log_phi = stats.norm.logpdf(sample.values[:, None], alpha + beta * deltas[None, :], math.sqrt(sigma2))
    return float(np.sum(z * (np.log(weights)[None, :] + log_phi)))


def em_configuration(index):
    """Randomised (sample, k) pair: gamma, lognormal or three-cluster data with n in [20, 120)."""
    generator = np.random.Generator(np.random.PCG64(1000 + index))
    k = int(generator.choice([3, 5, 7]))
    n = int(generator.integers(20, 120))
    family = index % 3
    if family == 0:
        values = generator.gamma(2.0, 1.0, size=n)
    elif family == 1:
        values = generator.lognormal(0.0, 0.7, size=n)
    else:
        values = np.linspace(-2.0, 2.0, 3)[generator.integers(3, size=n)] + 0.5 * generator.standard_normal(n)
    return Sample(values), k


class TestGrid:
    """Equispaced support grid."""

    def test_points(self):
        """Test the grids for k = 1, 3, 5."""
        assert make_grid(1).deltas.tolist() == [0.0]
        assert make_grid(3).deltas.tolist() == [-1.0, 0.0, 1.0]
        assert make_grid(5).deltas.tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]

    @pytest.mark.parametrize("k", [1, 3, 5, 7, 9, 11])
    def test_exact_mirror(self, k):
        """Test delta_j = -delta_{k-j+1} bitwise."""
        deltas = make_grid(k).deltas
        assert np.array_equal(deltas, -deltas[::-1])

    @pytest.mark.parametrize("k", [0, 2, 4, -1, 2.5])
    def test_invalid_k(self, k):
        """Test even, nonpositive and fractional k raise."""
        with pytest.raises(DomainError):
            make_grid(k)


class TestParameters:
    """Parameter validation and counting."""

    def test_weights_must_sum_to_one(self):
        """Test invalid weight vectors are rejected."""
        with pytest.raises(DomainError):
            params(3, 0.0, 1.0, 1.0, [0.5, 0.5, 0.5])
        with pytest.raises(DomainError):
            params(3, 0.0, 1.0, 1.0, [0.5, 0.5])

    def test_nonpositive_variance(self):
        """Test sigma2 <= 0 is rejected."""
        with pytest.raises(DomainError):
            params(1, 0.0, 0.0, 0.0, [1.0])

    def test_support_points(self):
        """Test nu_j = alpha + beta delta_j."""
        p = params(3, 1.0, 2.0, 1.0, [0.2, 0.5, 0.3])
        assert p.support_points.tolist() == [-1.0, 1.0, 3.0]

    def test_symmetrize(self):
        """Test mirror averaging of the weights."""
        p = symmetrize_params(params(3, 0.0, 1.0, 1.0, [0.2, 0.5, 0.3]))
        assert p.weights.tolist() == pytest.approx([0.25, 0.5, 0.25])
        assert p.is_symmetric

    @pytest.mark.parametrize("k,constrained,expected", [
        (1, False, 2), (1, True, 2), (3, False, 5), (5, False, 7), (7, False, 9),
        (3, True, 4), (5, True, 5), (7, True, 6),
    ])
    def test_count_parameters(self, k, constrained, expected):
        """Test free parameter counts."""
        assert count_parameters(k, constrained) == expected


class TestDensity:
    """Mixture log density and log-likelihood."""

    def test_standard_normal_at_zero(self):
        """Test ln phi(0) for k = 1."""
        assert log_density(0.0, params(1, 0.0, 0.0, 1.0, [1.0])) == pytest.approx(-0.9189385332046727, abs=1e-14)

    def test_symmetric_weights_give_even_density(self):
        """Test f(x) = f(-x) for symmetric weights and alpha = 0."""
        p = params(5, 0.0, 1.7, 0.4, [0.1, 0.25, 0.3, 0.25, 0.1])
        for x in (0.3, 1.1, 2.9, 7.0):
            assert log_density(x, p) == pytest.approx(log_density(-x, p), abs=1e-12)

    def test_matches_direct_sum(self):
        """Test against a direct sum of three normal densities."""
        p = params(3, 0.0, 1.0, 1.0, [0.2, 0.5, 0.3])
        assert log_density(0.7, p) == pytest.approx(math.log(oracle_density(0.7, p)), rel=1e-13)

    def test_far_tail_stays_finite(self):
        """Test the shifted log-sum-exp keeps far observations finite."""
        p = params(3, 0.0, 1.0, 0.01, [0.2, 0.5, 0.3])
        value = log_density(50.0, p)
        assert math.isfinite(value)
        assert value == pytest.approx(math.log(0.3) - 0.5 * math.log(2 * math.pi * 0.01) - 49.0 ** 2 / 0.02)

    def test_grid_matches_pointwise(self):
        """Test the vectorised evaluation."""
        p = params(3, 0.5, 1.0, 0.3, [0.3, 0.3, 0.4])
        xs = np.array([-1.0, 0.0, 2.5])
        assert log_density_grid(xs, p).tolist() == pytest.approx([log_density(x, p) for x in xs], rel=1e-14)

    def test_underflow_reports_index(self):
        """Test a density that underflows even in log space raises with the index."""
        p = params(1, 0.0, 0.0, 1e-10, [1.0])
        with pytest.raises(NumericalError, match="index 1"):
            log_likelihood(Sample.from_values([0.0, 1e200]), p)

    def test_non_finite_x(self):
        """Test x must be finite."""
        with pytest.raises(DomainError):
            log_density(math.inf, params(1, 0.0, 0.0, 1.0, [1.0]))

    def test_single_observation(self):
        """Test the log-likelihood of one observation at alpha."""
        assert log_likelihood(Sample.from_values([2.0]), params(1, 2.0, 0.0, 1.0, [1.0])) == \
            pytest.approx(-0.9189385332046727)

    def test_duplication_doubles(self):
        """Test additivity over observations."""
        sample = mixture_sample(1, n=30)
        doubled = Sample(np.concatenate([sample.values, sample.values]))
        p = params(3, 0.1, 1.9, 0.3, [0.2, 0.5, 0.3])
        assert log_likelihood(doubled, p) == pytest.approx(2.0 * log_likelihood(sample, p), rel=1e-13)


class TestEStep:
    """Posterior memberships."""

    def test_single_component(self):
        """Test all responsibilities are 1 when k = 1."""
        resp = e_step(Sample.from_values([0.1, 5.0, -3.0]), params(1, 0.0, 0.0, 1.0, [1.0]))
        assert np.all(resp.z_hat == 1.0)

    def test_rows_sum_to_one(self):
        """Test each row is a probability vector."""
        resp = e_step(mixture_sample(2, n=50), params(5, 0.0, 2.0, 0.5, [0.1, 0.2, 0.4, 0.2, 0.1]))
        assert resp.z_hat.sum(axis=1) == pytest.approx(np.ones(50), abs=1e-14)

    def test_midpoint_is_shared(self):
        """Test x midway between nu_1 and nu_2 with equal weights splits evenly."""
        p = params(3, 0.0, 1.0, 0.2, [0.45, 0.45, 0.1])
        resp = e_step(Sample.from_values([-0.5]), p)
        assert resp.z_hat[0, 0] == pytest.approx(resp.z_hat[0, 1], rel=1e-12)

    def test_matches_direct_evaluation(self):
        """Test one row against direct normal density evaluation."""
        p = params(3, 0.0, 2.0, 0.25, [1 / 3, 1 / 3, 1 / 3])
        densities = stats.norm.pdf(1.9, np.array([-2.0, 0.0, 2.0]), 0.5) / 3.0
        resp = e_step(Sample.from_values([1.9]), p)
        assert resp.z_hat[0].tolist() == pytest.approx((densities / densities.sum()).tolist(), rel=1e-10, abs=1e-300)


class TestMStep:
    """Closed-form maximisation."""

    def test_single_component_is_normal_mle(self):
        """Test k = 1 gives the sample mean and the divisor-n variance."""
        sample = mixture_sample(3, n=40)
        resp = Responsibilities(np.ones((40, 1)))
        p = m_step(sample, resp, make_grid(1), constrained=False)
        assert p.alpha == pytest.approx(sample.mean, rel=1e-14)
        assert p.beta == 0.0
        assert p.sigma2 == pytest.approx(sample.variance, rel=1e-12)

    def test_constrained_weights_average_mirror_pairs(self):
        """Test column sums (10, 20, 30) over n = 60 give (1/3, 1/3, 1/3)."""
        z = np.zeros((60, 3))
        z[:10, 0] = 1.0
        z[10:30, 1] = 1.0
        z[30:, 2] = 1.0
        sample = Sample(np.concatenate([np.full(10, -1.0), np.zeros(20), np.full(30, 1.0)])
                        + np.linspace(0.0, 0.01, 60))
        p = m_step(sample, Responsibilities(z), make_grid(3), constrained=True)
        assert p.weights.tolist() == pytest.approx([1 / 3, 1 / 3, 1 / 3], abs=1e-15)
        unconstrained = m_step(sample, Responsibilities(z), make_grid(3), constrained=False)
        assert unconstrained.weights.tolist() == pytest.approx([1 / 6, 1 / 3, 1 / 2], abs=1e-15)

    def test_hard_assignments_solve_normal_equations(self):
        """Test (alpha, beta, sigma2) equal least squares of x on delta_{j(i)}."""
        generator = np.random.Generator(np.random.PCG64(4))
        labels = np.repeat([0, 1, 2, 3, 4], [5, 8, 12, 9, 6])
        deltas = np.linspace(-1.0, 1.0, 5)
        x = 1.5 + 3.0 * deltas[labels] + 0.3 * generator.standard_normal(labels.size)
        z = np.zeros((labels.size, 5))
        z[np.arange(labels.size), labels] = 1.0

        p = m_step(Sample(x), Responsibilities(z), make_grid(5), constrained=False)
        design = np.column_stack([np.ones(labels.size), deltas[labels]])
        (alpha, beta), *_ = np.linalg.lstsq(design, x, rcond=None)
        residuals = x - design @ np.array([alpha, beta])
        assert p.alpha == pytest.approx(alpha, rel=1e-12)
        assert p.beta == pytest.approx(beta, rel=1e-12)
        assert p.sigma2 == pytest.approx(np.mean(residuals ** 2), rel=1e-10)

    def test_negative_slope_is_flipped(self):
        """Test a negative beta is reported as (-beta, reversed weights)."""
        x = np.array([2.0, 2.1, 0.0, -0.1, -2.0, -1.9, -2.1])
        z = np.zeros((7, 3))
        z[[0, 1], 0] = 1.0
        z[[2, 3], 1] = 1.0
        z[[4, 5, 6], 2] = 1.0
        p = m_step(Sample(x), Responsibilities(z), make_grid(3), constrained=False)
        assert p.beta > 0
        assert p.weights.tolist() == pytest.approx([3 / 7, 2 / 7, 2 / 7])

    @pytest.mark.parametrize("seed", range(100))
    @pytest.mark.parametrize("constrained", [False, True])
    def test_stationarity(self, seed, constrained):
        """Test the expected complete-data log-likelihood is flat at the M-step solution."""
        sample = mixture_sample(seed, n=60, weights=(0.3, 0.4, 0.3) if constrained else (0.2, 0.5, 0.3))
        start = params(3, 0.2, 1.5, 0.5, [0.3, 0.4, 0.3])
        z = e_step(sample, start).z_hat
        p = m_step(sample, Responsibilities(z), make_grid(3), constrained)
        assert p.beta > 0

        def q(alpha=p.alpha, beta=p.beta, sigma2=p.sigma2, weights=p.weights):
            return expected_complete_loglik(sample, z, alpha, beta, sigma2, np.asarray(weights), 3)

        h = 1e-6
        assert (q(alpha=p.alpha + h) - q(alpha=p.alpha - h)) / (2 * h) == pytest.approx(0.0, abs=1e-6)
        assert (q(beta=p.beta + h) - q(beta=p.beta - h)) / (2 * h) == pytest.approx(0.0, abs=1e-6)
        assert (q(sigma2=p.sigma2 + h) - q(sigma2=p.sigma2 - h)) / (2 * h) == pytest.approx(0.0, abs=1e-6)
        if constrained:
            direction = np.array([1.0, -2.0, 1.0])
        else:
            direction = np.array([1.0, -1.0, 0.0])
        slope = (q(weights=p.weights + h * direction) - q(weights=p.weights - h * direction)) / (2 * h)
        assert slope == pytest.approx(0.0, abs=1e-6)

    def test_shape_mismatch(self):
        """Test responsibilities must match the sample and grid."""
        with pytest.raises(DomainError):
            m_step(Sample.from_values([1.0, 2.0]), Responsibilities(np.ones((3, 1))), make_grid(1), False)


class TestInitParams:
    """Starting values."""

    def test_deterministic_start(self):
        """Test restart 0: median, half range, variance / k, uniform weights."""
        sample = Sample.from_values([1.0, 2.0, 3.0, 4.0, 10.0])
        p = init_params(sample, 3, False, 0, RandomStream(0))
        assert p.alpha == 3.0
        assert p.beta == 4.5
        assert p.sigma2 == pytest.approx(10.0 / 3.0)
        assert p.weights.tolist() == pytest.approx([1 / 3, 1 / 3, 1 / 3])

    def test_random_start_reproducible(self):
        """Test equal (sample, k, restart, stream) give equal starts."""
        sample = mixture_sample(5, n=50)
        a = init_params(sample, 5, False, 3, RandomStream(9))
        b = init_params(sample, 5, False, 3, RandomStream(9))
        assert (a.alpha, a.beta, a.sigma2) == (b.alpha, b.beta, b.sigma2)
        assert np.array_equal(a.weights, b.weights)

    def test_random_start_ranges(self):
        """Test alpha within 0.5 MAD of the median and positive weights."""
        sample = mixture_sample(6, n=50)
        for restart in range(1, 20):
            p = init_params(sample, 5, False, restart, RandomStream(1))
            assert abs(p.alpha - sample.median) <= 0.5 * sample.mad + 1e-12
            assert np.all(p.weights > 0)

    def test_constrained_starts_symmetric(self):
        """Test constrained starts have mirror-symmetric weights."""
        sample = mixture_sample(7, n=50)
        for restart in range(5):
            assert init_params(sample, 7, True, restart, RandomStream(2)).is_symmetric

    def test_degenerate_sample(self):
        """Test k > 1 needs a nonconstant sample."""
        with pytest.raises(DegenerateSampleError):
            init_params(Sample.from_values([1.0, 1.0, 1.0]), 3, False, 0, RandomStream(0))


class TestEMFitter:
    """EM with restarts."""

    def test_single_component_fit(self):
        """Test k = 1 is the normal MLE with npar 2 and the AIC/BIC identities."""
        sample = mixture_sample(8, n=40)
        fit = fit_em(sample, 1, constrained=False)
        assert fit.params.alpha == pytest.approx(sample.mean, rel=1e-12)
        assert fit.params.sigma2 == pytest.approx(sample.variance, rel=1e-10)
        assert fit.npar == 2
        assert fit.aic == pytest.approx(-2 * fit.loglik + 4)
        assert fit.bic == pytest.approx(-2 * fit.loglik + 2 * math.log(40))
        assert fit.loglik == pytest.approx(log_likelihood(sample, fit.params), rel=1e-12)

    def test_location_scale_equivariance(self):
        """Test fitting 3x + 5 maps every estimate the same way."""
        sample = mixture_sample(9, n=150, beta=3.0, sigma2=0.2)
        options = EmOptions(n_restarts=4)
        fit = EMFitter(options).fit(sample, 3, False, RandomStream(4))
        mapped = EMFitter(options).fit(sample.affine(3.0, 5.0), 3, False, RandomStream(4))
        assert mapped.params.alpha == pytest.approx(3.0 * fit.params.alpha + 5.0, rel=1e-6)
        assert mapped.params.beta == pytest.approx(3.0 * fit.params.beta, rel=1e-6)
        assert mapped.params.sigma2 == pytest.approx(9.0 * fit.params.sigma2, rel=1e-6)
        assert mapped.params.weights.tolist() == pytest.approx(fit.params.weights.tolist(), abs=1e-6)
        assert mapped.loglik == pytest.approx(fit.loglik - sample.n * math.log(3.0), abs=1e-6)

    def test_symmetric_data_constraint_costs_nothing(self):
        """Test exactly mirrored data: constrained and unconstrained optima coincide."""
        half = mixture_sample(10, n=60, alpha=1.0, beta=4.0, sigma2=0.25, weights=(0.3, 0.4, 0.3)).values
        sample = Sample(np.concatenate([half, 2.0 - half]))
        unconstrained, constrained = EMFitter(EmOptions(n_restarts=5, tolerance=1e-12)).fit_pair(
            sample, 3, RandomStream(0))
        assert constrained.loglik == pytest.approx(unconstrained.loglik, abs=1e-6)

    def test_recovers_known_mixture(self):
        """Test n = 200 from (alpha 0, beta 2, sigma2 0.25, pi (0.2, 0.5, 0.3))."""
        fit = EMFitter().fit(mixture_sample(11), 3, False, RandomStream(0))
        assert fit.params.alpha == pytest.approx(0.0, abs=0.2)
        assert fit.params.beta == pytest.approx(2.0, abs=0.2)
        assert fit.params.weights.tolist() == pytest.approx([0.2, 0.5, 0.3], abs=0.1)
        assert fit.converged

    def test_deterministic(self):
        """Test equal inputs give identical fits."""
        sample = mixture_sample(12, n=80)
        a = EMFitter(EmOptions(n_restarts=4)).fit(sample, 5, False, RandomStream(3))
        b = EMFitter(EmOptions(n_restarts=4)).fit(sample, 5, False, RandomStream(3))
        assert a.loglik == b.loglik
        assert a.restart_index == b.restart_index
        assert np.array_equal(a.params.weights, b.params.weights)

    def test_all_restarts_degenerate(self):
        """Test EstimationError when every restart ends on the variance floor."""
        options = EmOptions(n_restarts=3, sigma2_floor_ratio=10.0)
        with pytest.raises(EstimationError):
            EMFitter(options).fit(mixture_sample(13, n=40), 3, False, RandomStream(0))

    def test_refine_from_constrained_start(self):
        """Test a refined unconstrained run is at least as good as its start."""
        sample = mixture_sample(14, n=80)
        fitter = EMFitter(EmOptions(n_restarts=3))
        constrained = fitter.fit(sample, 3, True, RandomStream(0))
        refined = fitter.refine(sample, constrained.params, False)
        assert refined is not None
        assert not refined.constrained
        assert refined.loglik >= constrained.loglik - 1e-9

    def test_boundary_flag(self):
        """Test on_boundary reports vanishing weights."""
        sample = mixture_sample(15, n=80)
        fit = EMFitter(EmOptions(n_restarts=2)).fit(sample, 3, False, RandomStream(0))
        assert fit.on_boundary(tol=1.1) is True
        assert fit.on_boundary(tol=0.0) is False

    def test_invalid_options(self):
        """Test nonpositive tolerance and restarts are rejected."""
        with pytest.raises(DomainError):
            EMFitter(EmOptions(tolerance=0.0))
        with pytest.raises(DomainError):
            EMFitter(EmOptions(n_restarts=0))

    @pytest.mark.parametrize("seed", range(6))
    def test_default_stop_is_affine_invariant(self, seed):
        """Test default options give the same deviance on 7x - 3 as on x."""
        generator = np.random.Generator(np.random.PCG64(500 + seed))
        sample = Sample(generator.chisquare(5.0, size=100))
        fit_u, fit_c = EMFitter().fit_pair(sample, 3, RandomStream(seed))
        mapped_u, mapped_c = EMFitter().fit_pair(sample.affine(7.0, -3.0), 3, RandomStream(seed))
        assert mapped_u.iterations == fit_u.iterations
        assert mapped_c.iterations == fit_c.iterations
        deviance = 2.0 * (fit_u.loglik - fit_c.loglik)
        assert 2.0 * (mapped_u.loglik - mapped_c.loglik) == pytest.approx(deviance, abs=1e-6)


class TestEMProperties:
    """Properties of fit_pair over 200 randomised (sample, k) configurations."""

    OPTIONS = EmOptions(n_restarts=2, max_iter=500)

    @pytest.mark.parametrize("index", range(200))
    def test_fit_pair_properties(self, index):
        """Test monotone traces, mirrored constrained weights and constrained <= unconstrained."""
        sample, k = em_configuration(index)
        unconstrained, constrained = EMFitter(self.OPTIONS).fit_pair(sample, k, RandomStream(index))
        assert np.all(np.diff(unconstrained.loglik_trace) >= -1e-9)
        assert np.all(np.diff(constrained.loglik_trace) >= -1e-9)
        assert np.array_equal(constrained.params.weights, constrained.params.weights[::-1])
        assert constrained.loglik <= unconstrained.loglik + 1e-6

    @pytest.mark.parametrize("index", range(200))
    def test_affine_equivariance(self, index):
        """Test 2.5x + 1 shifts both log-likelihoods by -n ln 2.5."""
        sample, k = em_configuration(index)
        fit_u, fit_c = EMFitter(self.OPTIONS).fit_pair(sample, k, RandomStream(index))
        mapped_u, mapped_c = EMFitter(self.OPTIONS).fit_pair(sample.affine(2.5, 1.0), k, RandomStream(index))
        shift = sample.n * math.log(2.5)
        assert mapped_u.loglik == pytest.approx(fit_u.loglik - shift, abs=1e-6)
        assert mapped_c.loglik == pytest.approx(fit_c.loglik - shift, abs=1e-6)
