"""Scalar special functions used by the expected-delay closed form.

Everything here works on plain Python floats and ints.  Probabilities are
built in log space and exponentiated last, so loads up to ~1e5 never
overflow an intermediate.

The exponential integral uses two regimes:

* ``x < EI_SWITCHOVER``: the ascending series
  ``Ei(x) = gamma + ln x + sum_{k>=1} x**k / (k * k!)``.  All terms are
  positive, so the only cancellation is against ``gamma + ln x`` near the
  positive zero of Ei (x0 ~ 0.3725); there the series is re-centred on x0.
* ``x >= EI_SWITCHOVER``: the asymptotic expansion
  ``exp(-x) Ei(x) ~ (1/x) sum_{k>=0} k! / x**k``, truncated before the
  terms start to grow.  At x = 40 the smallest term is below 1e-16.
"""

from __future__ import annotations

import math
import operator
import sys
from dataclasses import dataclass

from .exceptions import ConvergenceError

__all__ = [
    "EULER_GAMMA",
    "EI_SWITCHOVER",
    "EI_ONE",
    "Accuracy",
    "log_factorial",
    "log_poisson_pmf",
    "poisson_pmf",
    "poisson_cdf",
    "poisson_sf",
    "exp_integral_ei",
    "exp_integral_ei_scaled",
]

EULER_GAMMA = 0.5772156649015329
EI_SWITCHOVER = 40.0
# Ei(1), correctly rounded
EI_ONE = 1.8951178163559368

# positive zero of Ei, split so that hi + lo carries ~32 digits
_EI_ROOT_HI = 0.3725074107813666
_EI_ROOT_LO = 1.3140183414386028e-17
_EI_ROOT_BAND = 0.125

_EPS = sys.float_info.epsilon
_LOG_FACTORIAL_TABLE = tuple(math.log(math.factorial(n)) for n in range(256))


@dataclass(frozen=True)
class Accuracy:
    """Target relative accuracy and iteration budget for Ei."""

    rel_tol: float = 1e-13
    max_iter: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1e-3:
            raise ValueError(f"rel_tol must lie in (0, 1e-3), got {self.rel_tol!r}")
        if self.max_iter < 10:
            raise ValueError(f"max_iter must be >= 10, got {self.max_iter!r}")


_DEFAULT_ACCURACY = Accuracy()


def _check_count(n, name="n"):
    n = operator.index(n)
    if n < 0:
        raise ValueError(f"{name} must be a nonnegative integer, got {n}")
    return n


def _check_load(b):
    b = float(b)
    if not (b > 0.0 and math.isfinite(b)):
        raise ValueError(f"b must be positive and finite, got {b!r}")
    return b


def log_factorial(n: int) -> float:
    """Natural log of ``n!``.

    Exact-integer evaluation for ``n < 256``, ``lgamma`` above that.
    """
    n = _check_count(n)
    if n < len(_LOG_FACTORIAL_TABLE):
        return _LOG_FACTORIAL_TABLE[n]
    return math.lgamma(n + 1.0)


_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _stirling_error(n: int) -> float:
    """``ln n! - [(n + 1/2) ln n - n + ln sqrt(2 pi)]``."""
    if n < 16:
        return log_factorial(n) - (n + 0.5) * math.log(n) + n - _HALF_LOG_2PI
    inv = 1.0 / n
    inv2 = inv * inv
    return inv * (1 / 12 - inv2 * (1 / 360 - inv2 * (1 / 1260 - inv2 * (1 / 1680 - inv2 / 1188))))


def _deviance(x: float, mean: float) -> float:
    """``x ln(x/mean) + mean - x`` without cancellation when x ~ mean."""
    if abs(x - mean) < 0.1 * (x + mean):
        v = (x - mean) / (x + mean)
        total = (x - mean) * v
        odd = 2.0 * x * v
        v2 = v * v
        j = 1
        while True:
            odd *= v2
            nxt = total + odd / (2 * j + 1)
            if nxt == total:
                return total
            total = nxt
            j += 1
    return x * math.log(x / mean) + mean - x


def log_poisson_pmf(n: int, b: float) -> float:
    """``ln pmf(n, b)`` in saddle-point form.

    Writing ``n ln b - b - ln n!`` as ``-deviance(n, b) - stirling(n) -
    ln sqrt(2 pi n)`` keeps full relative accuracy of the pmf even when
    ``n`` and ``b`` are ~1e5 and the naive exponent terms are ~1e6.
    """
    if n == 0:
        return -b
    return -_stirling_error(n) - _deviance(float(n), b) - _HALF_LOG_2PI - 0.5 * math.log(n)


def poisson_pmf(n: int, b: float) -> float:
    """Probability that a Poisson(b) count equals ``n``."""
    n = _check_count(n)
    b = _check_load(b)
    return math.exp(log_poisson_pmf(n, b))


def _lower_sum(c: int, b: float) -> float:
    # sum_{k<=c} pmf(k, b) for c < b: terms grow with k, so walk down from c
    term = math.exp(log_poisson_pmf(c, b))
    if term == 0.0:
        return 0.0
    terms = [term]
    total = term
    k = c
    while k > 0:
        term *= k / b
        k -= 1
        terms.append(term)
        total += term
        if term <= 0.25 * _EPS * total:
            break
    return math.fsum(terms)


def _upper_sum(c: int, b: float) -> float:
    # sum_{k>c} pmf(k, b) for c >= b: ratio b/(k+1) < 1 from the first term on
    k = c + 1
    term = math.exp(log_poisson_pmf(k, b))
    if term == 0.0:
        return 0.0
    terms = [term]
    total = term
    while True:
        ratio = b / (k + 1)
        term *= ratio
        k += 1
        terms.append(term)
        total += term
        if term <= 0.25 * _EPS * total * (1.0 - ratio):
            break
    return math.fsum(terms)


def poisson_cdf(c: int, b: float) -> float:
    """``Pr{N <= c}`` for ``N ~ Poisson(b)``.

    Equal to the regularised upper incomplete gamma ``Q(c + 1, b)``.
    """
    c = _check_count(c, "c")
    b = _check_load(b)
    if c == 0:
        return math.exp(-b)
    if c < b:
        return min(1.0, _lower_sum(c, b))
    return max(0.0, 1.0 - _upper_sum(c, b))


def poisson_sf(c: int, b: float) -> float:
    """``Pr{N > c}``, computed without forming ``1 - cdf`` in the far tail."""
    c = _check_count(c, "c")
    b = _check_load(b)
    if c == 0:
        return -math.expm1(-b)
    if c < b:
        return max(0.0, 1.0 - _lower_sum(c, b))
    return min(1.0, _upper_sum(c, b))


def _ei_series(x: float, acc: Accuracy) -> float:
    base = EULER_GAMMA + math.log(x)
    power = 1.0  # x**k / k!
    terms = []
    partial = 0.0
    tail, ref = math.inf, 1.0
    for k in range(1, acc.max_iter + 1):
        power *= x / k
        term = power / k
        terms.append(term)
        partial += term
        if k + 1 > x:
            ratio = x / (k + 1)
            tail = term * ratio / (1.0 - ratio)
            ref = abs(base + partial)
            if tail <= 0.5 * _EPS * ref:
                break
    else:
        if tail > acc.rel_tol * ref:
            raise ConvergenceError(f"Ei series did not converge at x={x!r} within {acc.max_iter} terms")
    return math.fsum([base, *terms])


def _ei_near_root(x: float, acc: Accuracy) -> float:
    # Ei(x) - Ei(x0) with Ei(x0) = 0, expanded termwise in x**k - x0**k
    # so that nothing cancels against gamma + ln x.
    d = (x - _EI_ROOT_HI) - _EI_ROOT_LO
    x0 = _EI_ROOT_HI
    terms = [math.log1p(d / x0)]
    diff = d  # x**k - x0**k
    x0_pow = 1.0  # x0**(k-1)
    fact = 1.0
    for k in range(1, acc.max_iter + 1):
        if k > 1:
            x0_pow *= x0
            diff = x * diff + x0_pow * d
        fact *= k
        term = diff / (k * fact)
        terms.append(term)
        if abs(term) <= 0.25 * _EPS * abs(terms[0]):
            return math.fsum(terms)
    raise ConvergenceError(f"Ei root expansion did not converge at x={x!r}")


def _ei_asymptotic_scaled(x: float, acc: Accuracy) -> float:
    """``exp(-x) Ei(x)`` from the divergent asymptotic series, optimally truncated."""
    term = 1.0
    terms = [term]
    total = term
    for k in range(1, acc.max_iter + 1):
        nxt = term * k / x
        if nxt >= term:
            # smallest term reached; its size bounds the truncation error
            if term > acc.rel_tol * total:
                raise ConvergenceError(
                    f"asymptotic Ei expansion cannot reach rel_tol={acc.rel_tol} at x={x!r}"
                )
            break
        term = nxt
        terms.append(term)
        total += term
        if term <= 0.5 * _EPS * total:
            break
    else:
        raise ConvergenceError(f"asymptotic Ei expansion exhausted max_iter at x={x!r}")
    return math.fsum(terms) / x


def exp_integral_ei(x: float, acc: Accuracy = _DEFAULT_ACCURACY) -> float:
    """Exponential integral ``Ei(x)`` for ``x > 0``.

    Raises ``OverflowError`` once ``Ei(x)`` exceeds the float range
    (x above ~715); use :func:`exp_integral_ei_scaled` there.
    """
    x = float(x)
    if not (x > 0.0 and math.isfinite(x)):
        raise ValueError(f"Ei is implemented for finite x > 0 only, got {x!r}")
    if abs(x - _EI_ROOT_HI) < _EI_ROOT_BAND:
        return _ei_near_root(x, acc)
    if x < EI_SWITCHOVER:
        return _ei_series(x, acc)
    scaled = _ei_asymptotic_scaled(x, acc)
    if x < 700.0:
        return math.exp(x) * scaled
    # exp(x) alone overflows first; x / 2 is exact
    half = math.exp(0.5 * x)
    value = (half * scaled) * half
    if math.isinf(value):
        raise OverflowError(f"Ei({x!r}) exceeds the float range")
    return value


def exp_integral_ei_scaled(x: float, acc: Accuracy = _DEFAULT_ACCURACY) -> float:
    """``exp(-x) * Ei(x)``, finite for every finite ``x > 0``."""
    x = float(x)
    if not (x > 0.0 and math.isfinite(x)):
        raise ValueError(f"Ei is implemented for finite x > 0 only, got {x!r}")
    if x < EI_SWITCHOVER:
        return exp_integral_ei(x, acc) * math.exp(-x)
    return _ei_asymptotic_scaled(x, acc)
