"""Expected per-packet processing delay of a capacity-limited flow table.

A cell holds ``N ~ Poisson(b)`` users with ``b = lambda_u * area``.  Each
slot the base station caches the rules of ``C`` users chosen uniformly at
random, so a packet misses the table with probability ``(1 - C/N)^+`` and
then waits ``d_ctrl`` for the controller.  The expected delay is

    E[delay] / d_ctrl = Pr{N > C} - C * E_C(b),
    E_C(b)            = sum_{k>C} b**k / (k * k!) * exp(-b).

``E_C`` solves ``E' + E = (1 - Pr{N <= C}) / b`` with ``E(0) = 0``, which
integrates to

    E_C(b) = [Ei(b) - Ei(1) - ln b - sum_{k=1}^{C} b**k / (k * k!) + beta] exp(-b)

The boundary condition forces ``beta = Ei(1) - gamma`` (Euler's constant).
``ConstantMode.PAPER_LITERAL`` keeps the published ``beta = -1`` so the
discrepancy can be measured; everything else defaults to the corrected
constant.
"""

from __future__ import annotations

import enum
import math
import operator
from dataclasses import dataclass

from .exceptions import CancellationError, ConvergenceError
from .specfun import (
    EI_ONE,
    EULER_GAMMA,
    exp_integral_ei_scaled,
    log_poisson_pmf,
    poisson_sf,
)

__all__ = [
    "ConstantMode",
    "Method",
    "ModelParams",
    "SeriesOptions",
    "DelayResult",
    "BETA_CORRECTED",
    "BETA_PAPER",
    "MIN_SIGNIFICANCE",
    "beta_for",
    "per_packet_delay",
    "ec_tail_direct",
    "ec_closed",
    "expected_delay_direct",
    "expected_delay_closed",
    "expected_delay",
    "closed_form_preferred",
]


class ConstantMode(str, enum.Enum):
    CORRECTED = "corrected"
    PAPER_LITERAL = "paper_literal"


class Method(str, enum.Enum):
    DIRECT_SERIES = "direct_series"
    CLOSED_FORM = "closed_form"
    HYBRID = "hybrid"


BETA_CORRECTED = EI_ONE - EULER_GAMMA
BETA_PAPER = -1.0

# Smallest |bracket| / (largest bracket term) the closed form accepts.
# Ei is good to ~1e-15 relative, so this keeps >= 9 correct digits.
MIN_SIGNIFICANCE = 1e-5


def beta_for(mode: ConstantMode | str) -> float:
    """Integration constant for the given mode."""
    return BETA_CORRECTED if ConstantMode(mode) is ConstantMode.CORRECTED else BETA_PAPER


@dataclass(frozen=True)
class ModelParams:
    """Cell, population and flow-table parameters.

    ``lambda_u`` is users per m^2, ``area`` is m^2, ``capacity`` is the
    number of rules the table holds and ``d_ctrl`` the controller fetch
    delay in seconds.
    """

    lambda_u: float
    area: float
    capacity: int
    d_ctrl: float = 1.0

    def __post_init__(self):
        if not (self.lambda_u > 0 and math.isfinite(self.lambda_u)):
            raise ValueError(f"lambda_u must be positive and finite, got {self.lambda_u!r}")
        if not (self.area > 0 and math.isfinite(self.area)):
            raise ValueError(f"area must be positive and finite, got {self.area!r}")
        try:
            capacity = operator.index(self.capacity)
        except TypeError:
            raise ValueError(f"capacity must be an integer, got {self.capacity!r}") from None
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        object.__setattr__(self, "capacity", capacity)
        if not (self.d_ctrl >= 0 and math.isfinite(self.d_ctrl)):
            raise ValueError(f"d_ctrl must be nonnegative and finite, got {self.d_ctrl!r}")
        if not math.isfinite(self.load):
            raise ValueError("lambda_u * area overflows")

    @classmethod
    def from_load(cls, b: float, capacity: int, d_ctrl: float = 1.0) -> "ModelParams":
        """Parameters with unit density and ``area = b``."""
        return cls(lambda_u=1.0, area=b, capacity=capacity, d_ctrl=d_ctrl)

    @property
    def load(self) -> float:
        """Expected number of users ``b = lambda_u * area``."""
        return self.lambda_u * self.area


@dataclass(frozen=True)
class SeriesOptions:
    """Truncation control for the infinite Poisson sums."""

    rel_tol: float = 1e-12
    max_terms: int = 2_000_000

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1e-3:
            raise ValueError(f"rel_tol must lie in (0, 1e-3), got {self.rel_tol!r}")
        if self.max_terms < 1:
            raise ValueError(f"max_terms must be positive, got {self.max_terms!r}")


@dataclass(frozen=True)
class DelayResult:
    normalized: float
    absolute: float
    method: Method
    error_bound: float = 0.0
    constant_mode: ConstantMode = ConstantMode.CORRECTED


def per_packet_delay(n: int, capacity: int, d_ctrl: float = 1.0) -> float:
    """Average delay of a packet when ``n`` users share a ``capacity``-rule table."""
    if n <= capacity:
        return 0.0
    return (1.0 - capacity / n) * d_ctrl


def _poisson_tail_sum(b, start, weight, opts):
    """``sum_{n>=start} weight(n) * pmf(n, b)`` for weights in [0, 1].

    Returns ``(value, bound)`` where ``bound`` is a rigorous upper bound on
    the omitted Poisson mass, hence on the truncation error.  The
    geometric bound ``pmf(M+1) / (1 - b/(M+2))`` is only used past ``2b``,
    where the term ratio is below 1/2.
    """
    terms = []
    running = 0.0
    n = start
    for _ in range(opts.max_terms):
        p = math.exp(log_poisson_pmf(n, b))
        term = weight(n) * p
        terms.append(term)
        running += term
        if n + 2 > 2.0 * b:
            bound = p * (b / (n + 1)) / (1.0 - b / (n + 2))
            if bound <= opts.rel_tol * running:
                return math.fsum(terms), bound
        n += 1
    raise ConvergenceError(
        f"Poisson tail series from n={start} at b={b!r} did not converge in {opts.max_terms} terms"
    )


def _check_b(b):
    b = float(b)
    if not (b > 0 and math.isfinite(b)):
        raise ValueError(f"b must be positive and finite, got {b!r}")
    return b


def _ec_tail(b, capacity, opts):
    return _poisson_tail_sum(b, capacity + 1, lambda k: 1.0 / k, opts)


def ec_tail_direct(b: float, capacity: int, opts: SeriesOptions = SeriesOptions()) -> float:
    """``E_C(b)`` by direct summation of its defining series."""
    b = _check_b(b)
    return _ec_tail(b, operator.index(capacity), opts)[0]


def ec_closed(
    b: float,
    capacity: int,
    constant_mode: ConstantMode | str = ConstantMode.CORRECTED,
    min_significance: float = MIN_SIGNIFICANCE,
) -> float:
    """``E_C(b)`` from the exponential-integral solution.

    Every bracket term is carried pre-multiplied by ``exp(-b)`` (Ei via its
    scaled form) so large loads do not overflow.  Raises
    :class:`CancellationError` when the bracket is smaller than
    ``min_significance`` times its largest term.
    """
    b = _check_b(b)
    capacity = operator.index(capacity)
    beta = beta_for(constant_mode)
    scale = math.exp(-b)
    log_b = math.log(b)

    partial = [math.exp(log_poisson_pmf(k, b)) / k for k in range(1, capacity + 1)]
    partial_sum = math.fsum(partial)
    head = [exp_integral_ei_scaled(b), -EI_ONE * scale, -log_b * scale, beta * scale]
    bracket = math.fsum(head + [-t for t in partial])

    largest = max(max(abs(t) for t in head), partial_sum)
    if abs(bracket) < min_significance * largest:
        raise CancellationError(
            f"closed form for E_C at b={b!r}, C={capacity} keeps fewer than "
            f"{-math.log10(min_significance):.0f} significant digits",
            ratio=abs(bracket) / largest,
        )
    return bracket


def expected_delay_direct(params: ModelParams, opts: SeriesOptions = SeriesOptions()) -> DelayResult:
    """Expected delay by summing ``(1 - C/n) pmf(n)`` over ``n > C``."""
    b = _check_b(params.load)
    c = params.capacity
    value, bound = _poisson_tail_sum(b, c + 1, lambda n: 1.0 - c / n, opts)
    return DelayResult(
        normalized=value,
        absolute=value * params.d_ctrl,
        method=Method.DIRECT_SERIES,
        error_bound=bound,
    )


def expected_delay_closed(
    params: ModelParams,
    constant_mode: ConstantMode | str = ConstantMode.CORRECTED,
    *,
    fallback: bool = False,
    opts: SeriesOptions = SeriesOptions(),
    min_significance: float = MIN_SIGNIFICANCE,
) -> DelayResult:
    """Expected delay from the closed form ``Pr{N > C} - C * E_C(b)``.

    With ``fallback=True`` a :class:`CancellationError` from :func:`ec_closed`
    is absorbed by evaluating ``E_C`` from its series instead; the result
    is then tagged ``Method.HYBRID`` and carries the series error bound.
    """
    mode = ConstantMode(constant_mode)
    b = _check_b(params.load)
    c = params.capacity
    method, bound = Method.CLOSED_FORM, 0.0
    if c == 0:
        normalized = poisson_sf(0, b)
    else:
        try:
            ec = ec_closed(b, c, mode, min_significance)
        except CancellationError:
            if not fallback:
                raise
            ec, ec_bound = _ec_tail(b, c, opts)
            if mode is ConstantMode.PAPER_LITERAL:
                ec += (BETA_PAPER - BETA_CORRECTED) * math.exp(-b)
            method, bound = Method.HYBRID, c * ec_bound
        normalized = poisson_sf(c, b) - c * ec
    return DelayResult(
        normalized=normalized,
        absolute=normalized * params.d_ctrl,
        method=method,
        error_bound=bound,
        constant_mode=mode,
    )


def closed_form_preferred(b: float, capacity: int) -> bool:
    """Whether the closed form is well conditioned: ``C + 1 <= b - 10 sqrt(b)``."""
    return capacity + 1 <= b - 10.0 * math.sqrt(b)


def expected_delay(params: ModelParams, opts: SeriesOptions = SeriesOptions()) -> DelayResult:
    """Expected delay, choosing the better-conditioned evaluation path.

    Deep in the overloaded regime (``C`` well below ``b``) the closed form
    is cheap and accurate while the direct series would have to walk
    through the whole Poisson bulk; elsewhere the direct series converges
    geometrically from its first term.
    """
    b = params.load
    if b == 0.0:
        return DelayResult(0.0, 0.0, Method.HYBRID)
    b = _check_b(b)
    bound = 0.0
    try:
        if not closed_form_preferred(b, params.capacity):
            raise CancellationError("outside the closed-form region")
        normalized = expected_delay_closed(params, opts=opts).normalized
    except CancellationError:
        try:
            res = expected_delay_direct(params, opts)
        except ConvergenceError:
            res = expected_delay_closed(params, fallback=True, opts=opts)
        normalized, bound = res.normalized, res.error_bound
    normalized = min(1.0, max(0.0, normalized))
    return DelayResult(
        normalized=normalized,
        absolute=normalized * params.d_ctrl,
        method=Method.HYBRID,
        error_bound=bound,
    )
