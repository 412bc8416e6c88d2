"""Exception taxonomy shared by every advkit module.

The CLI maps these onto exit codes (config 2, data 3, invariant 4), so
library code should raise the most specific class that applies.
"""


class AdvkitError(Exception):
    """Base class for every error raised by advkit."""


class ShapeError(AdvkitError, ValueError):
    """Operand shapes do not conform; the message names both shapes."""


class ContractError(AdvkitError, ValueError):
    """A caller violated an operation precondition (bad class index,
    non-one-hot target, empty gating mask, input outside the pixel
    domain, ...)."""


class ConfigError(AdvkitError, ValueError):
    """An invalid configuration value or document (negative epsilon,
    unknown model name, schema violation, ...)."""


class DataError(AdvkitError, ValueError):
    """A missing, corrupt, or inconsistent data or model file."""


class InvariantViolation(AdvkitError, RuntimeError):
    """A guaranteed numeric invariant failed at runtime (non-finite
    values, perturbation outside the epsilon ball).  Always fatal."""
