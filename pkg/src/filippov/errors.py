"""Exception hierarchy.  Every error raised by the package derives from
:class:`FilippovError` so the CLI can map it to exit code 1."""


class FilippovError(Exception):
    """Base class for computational errors."""


class ExprSyntaxError(FilippovError):
    def __init__(self, message: str, offset: int, expected: set[str] | frozenset[str] = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{message} at byte {offset}{detail}")


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ExprEvalError(FilippovError):
    """Division by zero, sqrt of a negative number, overflow."""


class NonDifferentiableError(FilippovError):
    pass


class ScenarioError(FilippovError):
    """Malformed or inconsistent scenario."""


class SignatureOverlapError(ScenarioError):
    pass


class SignatureCoverageError(ScenarioError):
    pass


class RegularValueError(ScenarioError):
    pass


class UnknownScenarioError(ScenarioError):
    pass


class OnSurfaceError(FilippovError):
    pass


class OffSurfaceError(FilippovError):
    pass


class OrderOverflowError(FilippovError):
    """All Lie derivatives up to the cap vanish."""


class DegenerateDenominatorError(FilippovError):
    pass


class WrongRegionError(FilippovError):
    pass


class StepUnderflowError(FilippovError):
    pass


class DeterministicBranchError(FilippovError):
    """A deterministic integration reached a point with several continuations."""


class NotClosedError(FilippovError):
    pass


class OrbitMeetsSeedError(FilippovError):
    pass


class ReturnMapError(FilippovError):
    """The orbit escaped or never returned to the switching surface."""


class InfeasibleDensityError(FilippovError):
    pass
