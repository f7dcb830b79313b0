"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A parameter set violates a structural constraint (sizes, ranges)."""


class GeometryError(ValueError):
    """Link geometry is infeasible (e.g. quadrature node below the horizon)."""


class EqualizationError(RuntimeError):
    """Linear equalization failed (singular or near-singular system)."""


class DegenerateInputError(ValueError):
    """An input is degenerate for the requested operation (e.g. all-zero)."""


class TrainingDivergedError(RuntimeError):
    """Training aborted because the loss or a gradient became non-finite."""
