"""
Special functions used by the symmetry tests.

Only what the tests need: ln Gamma, the regularized incomplete gamma
function (and through it the chi-square tail) and the standard normal
tail. Everything works on plain floats.

The incomplete gamma implementation follows the usual split:
series representation for x < a + 1, Lentz continued fraction otherwise.
"""
import math
import sys

EPSILON = sys.float_info.epsilon
FPMIN = sys.float_info.min / EPSILON


class DomainError(ValueError):
    """Argument outside the domain of a special function"""


def _require_finite(name, value):
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value}")


def _probability(value: float) -> float:
    # rounding can push a tail probability a hair outside [0, 1]
    return min(1.0, max(0.0, value))


def log_gamma(x: float) -> float:
    """
    Natural logarithm of the gamma function for positive x.

    Raises:
        DomainError: If x is not finite or not positive.
    """
    _require_finite("x", x)
    if x <= 0:
        raise DomainError(f"log_gamma is only defined for x > 0, got {x}")
    return math.lgamma(x)


def _gamma_series(a, x, accuracy, max_iteration):
    if x == 0.0:
        return 0.0
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(max_iteration):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * accuracy:
            return total * math.exp(-x + a * math.log(x) - log_gamma(a))
    raise ArithmeticError(f"Incomplete gamma series did not converge for a={a}, x={x}")


def _gamma_continued_fraction(a, x, accuracy, max_iteration):
    b = x + 1.0 - a
    c = 1.0 / FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, max_iteration + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < FPMIN:
            d = FPMIN
        c = b + an / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < accuracy:
            return math.exp(-x + a * math.log(x) - log_gamma(a)) * h
    raise ArithmeticError(f"Incomplete gamma continued fraction did not converge for a={a}, x={x}")


def _validate_gamma_args(a, x):
    _require_finite("a", a)
    _require_finite("x", x)
    if a <= 0:
        raise DomainError(f"shape a must be positive, got {a}")
    if x < 0:
        raise DomainError(f"x must be nonnegative, got {x}")


def regularized_gamma_p(a: float, x: float, accuracy: float = 1e-15, max_iteration: int = 1000) -> float:
    """Lower regularized incomplete gamma P(a, x)."""
    _validate_gamma_args(a, x)
    if x < a + 1.0:
        return _probability(_gamma_series(a, x, accuracy, max_iteration))
    return _probability(1.0 - _gamma_continued_fraction(a, x, accuracy, max_iteration))


def regularized_gamma_q(a: float, x: float, accuracy: float = 1e-15, max_iteration: int = 1000) -> float:
    """Upper regularized incomplete gamma Q(a, x) = 1 - P(a, x)."""
    _validate_gamma_args(a, x)
    if x < a + 1.0:
        return _probability(1.0 - _gamma_series(a, x, accuracy, max_iteration))
    return _probability(_gamma_continued_fraction(a, x, accuracy, max_iteration))


def _validate_chi2_args(x, df):
    _require_finite("x", x)
    if x < 0:
        raise DomainError(f"chi-square argument must be nonnegative, got {x}")
    if int(df) != df or df < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {df}")


def chi2_sf(x: float, df: int) -> float:
    """
    Survival function P(X > x) of a chi-square variable with df degrees of freedom.

    Raises:
        DomainError: If x is negative or df is not a positive integer.
    """
    _validate_chi2_args(x, df)
    if x == 0:
        return 1.0
    return regularized_gamma_q(df / 2.0, x / 2.0)


def chi2_cdf(x: float, df: int) -> float:
    """Distribution function P(X <= x) of a chi-square variable."""
    _validate_chi2_args(x, df)
    if x == 0:
        return 0.0
    return regularized_gamma_p(df / 2.0, x / 2.0)


def std_normal_sf(z: float) -> float:
    """
    Upper tail P(Z > z) of the standard normal distribution.

    Raises:
        DomainError: If z is not finite.
    """
    _require_finite("z", z)
    return _probability(0.5 * math.erfc(z / math.sqrt(2.0)))


def two_sided_normal_p(z: float) -> float:
    """Two-sided p-value 2 P(Z > |z|)."""
    return _probability(2.0 * std_normal_sf(abs(z)))
