"""Exception types raised by the engine."""


class LatticeRangeError(IndexError):
    """A coordinate or flat index lies outside the lattice."""


class LevelError(ValueError):
    """An operation needs a finer level than the field provides."""


class PreconditionError(ValueError):
    """An input violates a documented precondition (e.g. nonzero mean)."""


class ConfigError(ValueError):
    """Invalid configuration. ``violations`` lists every failed constraint."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InsufficientDataError(RuntimeError):
    """Too few usable samples to form an estimate."""


class LargeFieldSingularity(ArithmeticError):
    """A block system is (numerically) singular.

    Attributes
    ----------
    level : int
        Lattice level of the failing block system.
    block : tuple of int or None
        Center of the failing block in that level's coordinates.
    sample : int or None
        Index of the failing sample within the batch.
    condition : float
        Condition estimate that triggered the failure.
    """

    def __init__(self, level, block=None, sample=None, condition=float("inf")):
        self.level = level
        self.block = block
        self.sample = sample
        self.condition = condition
        super().__init__(
            f"singular block system at level {level}, block {block}, "
            f"sample {sample} (condition {condition:.3g})")
