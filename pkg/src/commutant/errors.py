"""Exception hierarchy.

Errors deriving from :class:`PreconditionViolation` signal that the inputs are
well formed but violate a mathematical hypothesis (non-commuting generators,
rank deficiency). The CLI maps those to exit code 3 and everything else
derived from :class:`CommutantError` to exit code 2.
"""


class CommutantError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(CommutantError, ValueError):
    pass


class NonFiniteError(CommutantError, ValueError):
    pass


class DomainExitError(CommutantError):
    """A trajectory or evaluation left the declared domain box."""

    def __init__(self, message, exit_time=None, point=None):
        super().__init__(message)
        self.exit_time = exit_time
        self.point = point


class MissingInverseError(CommutantError):
    pass


class ScenarioError(CommutantError, ValueError):
    """Unknown scenario/item or a scenario file that fails validation."""


class ConditioningError(CommutantError, ArithmeticError):
    pass


class PreconditionViolation(CommutantError):
    pass


class NonCommutingError(PreconditionViolation):
    def __init__(self, pair, norm):
        super().__init__(
            f"generators {pair[0]} and {pair[1]} do not commute "
            f"(||[A_i, A_j]||_F = {norm:.3e})"
        )
        self.pair = tuple(pair)
        self.norm = float(norm)


class DefectiveGeneratorError(PreconditionViolation):
    pass


class RankDeficientError(PreconditionViolation):
    def __init__(self, message, point=None, rank=None):
        super().__init__(message)
        self.point = point
        self.rank = rank


class NonCommutingFactorsError(PreconditionViolation):
    def __init__(self, pair, defect):
        super().__init__(
            f"factor actions {pair[0]} and {pair[1]} do not commute "
            f"(max defect {defect:.3e}); their joint action is order dependent"
        )
        self.pair = tuple(pair)
        self.defect = float(defect)
