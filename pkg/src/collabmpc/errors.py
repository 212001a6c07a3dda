"""Exception types shared across the package."""


class DimensionMismatch(ValueError):
    """An input vector or trajectory has the wrong dimension."""


class DegenerateDirection(ValueError):
    """A direction construction is singular (e.g. gripper ray parallel to up)."""


class TooShort(ValueError):
    """A trajectory has too few knots for the requested operation."""


class ConfigError(ValueError):
    """Invalid configuration (negative weights, missing model, bad CLI args)."""


class NonFiniteResidual(RuntimeError):
    """A residual or Jacobian evaluated to NaN or inf."""


class SingularNormalEquations(RuntimeError):
    """The damped normal equations stayed indefinite up to the damping cap."""


class InfeasibleScenario(RuntimeError):
    """A sampled scenario could not produce a collision-acceptable plan."""
