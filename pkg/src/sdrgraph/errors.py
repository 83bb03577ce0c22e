"""Exception types shared across the package."""


class NumericalFailure(ArithmeticError):
    """A dense decomposition failed or produced an unusable result."""


class ConstructionError(RuntimeError):
    """A population specification could not be realised."""


class DegenerateModelError(ValueError):
    """A restricted Fisher operator is singular on the requested subspace."""
