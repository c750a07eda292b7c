"""Exception types raised by filterlab."""


class FilterLabError(Exception):
    """Base class for all filterlab errors."""


class InvalidInputError(FilterLabError):
    """Malformed numerical input (wrong shape, non-finite entries, ...)."""


class ModelEvaluationError(FilterLabError):
    """A coefficient function produced a non-finite value.

    Carries the evaluation time and a representative offending point so the
    failure can be reproduced.
    """

    def __init__(self, name, t, x=None, y=None):
        self.name = name
        self.t = t
        self.x = x
        self.y = y
        msg = f"coefficient {name!r} returned non-finite values at t={t!r}"
        if x is not None:
            msg += f", x={x!r}"
        if y is not None:
            msg += f", y={y!r}"
        super().__init__(msg)


class ExplosionError(FilterLabError):
    """A simulated path exceeded the overflow guard."""

    def __init__(self, step, bound):
        self.step = step
        self.bound = bound
        super().__init__(f"path exceeded |value| > {bound:g} at step {step}")


class DegenerateSelectionError(FilterLabError):
    """The minor selected for the full-rank factorization is numerically singular."""

    def __init__(self, minor_index, message=""):
        self.minor_index = minor_index
        super().__init__(
            f"selected minor {minor_index} yields a singular factorization"
            + (f": {message}" if message else "")
        )


class DegenerateMeasureError(FilterLabError):
    """Operation on a measure with zero (or negative) total mass."""


class PositivityLossError(FilterLabError):
    """A discretized positive process crossed zero; decrease dt or switch schemes."""


class StabilityError(FilterLabError):
    """Configured time step violates an explicit-scheme stability bound."""


class UnsupportedConfigurationError(FilterLabError):
    """The requested solver does not support this model configuration."""


class SupportCoverageError(FilterLabError):
    """Particle support extends beyond the grid a function is defined on."""


class ConfigError(FilterLabError):
    """Invalid experiment configuration file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}:"
            if line is not None:
                loc += f"{line}:"
            loc += " "
        super().__init__(loc + message)
