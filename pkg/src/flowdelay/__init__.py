"""Expected packet-processing delay of a capacity-limited SDN flow table.

A base station caches the rules of ``C`` users chosen uniformly at random
out of a Poisson(b) user population; packets of uncached users wait
``d_ctrl`` for the controller.  The package evaluates the expected delay
exactly (direct series), in closed form (exponential integral), by Monte
Carlo, and over the area / matched-capacity sweeps.
"""

__version__ = "0.1.0"

from .exceptions import CancellationError, ConvergenceError, OutputError
from .model import (
    ConstantMode,
    DelayResult,
    Method,
    ModelParams,
    SeriesOptions,
    ec_closed,
    ec_tail_direct,
    expected_delay,
    expected_delay_closed,
    expected_delay_direct,
    per_packet_delay,
)
from .simulator import Estimator, SimConfig, SimEstimate, estimate_expected_delay
from .specfun import (
    Accuracy,
    exp_integral_ei,
    exp_integral_ei_scaled,
    log_factorial,
    poisson_cdf,
    poisson_pmf,
    poisson_sf,
)

__all__ = [
    "Accuracy",
    "CancellationError",
    "ConstantMode",
    "ConvergenceError",
    "DelayResult",
    "Estimator",
    "Method",
    "ModelParams",
    "OutputError",
    "SeriesOptions",
    "SimConfig",
    "SimEstimate",
    "ec_closed",
    "ec_tail_direct",
    "estimate_expected_delay",
    "exp_integral_ei",
    "exp_integral_ei_scaled",
    "expected_delay",
    "expected_delay_closed",
    "expected_delay_direct",
    "log_factorial",
    "per_packet_delay",
    "poisson_cdf",
    "poisson_pmf",
    "poisson_sf",
]
