"""filterlab: correlated-noise nonlinear filtering at desk scale.

Simulate coupled signal/observation diffusions (with possibly rank-deficient
observation noise), propagate the unnormalized and normalized conditional
measures by weighted particles or a 1-D finite-difference density solver, and
probe the uniqueness machinery numerically: mass-process equivalence, an
extended product rule for measure-valued paths, and complex-exponential
duality pairings against a backward dual field.
"""

__version__ = "0.1.0"

from . import (acceptance, config, duality, filters, gridpde, measure, model,
               oracles, pinv, report, sde, testfunctions)
from .errors import FilterLabError

__all__ = [
    "__version__",
    "FilterLabError",
    "acceptance", "config", "duality", "filters", "gridpde", "measure",
    "model", "oracles", "pinv", "report", "sde", "testfunctions",
]
