class PlatoonError(Exception):
    """Base class for every error raised by the platoon package."""


class ConfigError(PlatoonError):
    """Invalid or unknown configuration entry.

    Args:
        path (str): Dotted key path of the offending entry.
        message (str): What is wrong with it.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class InsufficientHistory(PlatoonError):
    """The Newell predictor needs a position that was never recorded."""


class DegenerateRate(PlatoonError):
    """A step-count formula divides by a closing rate that is exactly zero."""


class OutOfDomain(PlatoonError):
    """A closed-form bound was evaluated outside its admissible region."""

    def __init__(self, message, argument=None):
        self.argument = argument
        super().__init__(message)


class NotApplicable(PlatoonError):
    """A strategy was asked to plan from a state its premise excludes."""


class NoConvergence(PlatoonError):
    """A rollout hit its step cap before reaching its target."""


class NoSolution(PlatoonError):
    """Bisection could not bracket a terminal spacing error of zero."""

    def __init__(self, message, low_error=None, high_error=None):
        self.low_error = low_error
        self.high_error = high_error
        super().__init__(message)


class FeasibilityViolation(PlatoonError):
    """A control sequence left the feasible set during replay."""

    def __init__(self, message, step=None, residual=None):
        self.step = step
        self.residual = residual
        super().__init__(message)


class TraceFormatError(PlatoonError):
    """A trace file does not follow the CSV trace schema."""

    def __init__(self, message, column=None):
        self.column = column
        super().__init__(message)


class SolverFailure(PlatoonError):
    """The QP solve ended without an optimal point.

    The solver result is kept on ``result`` so callers can log or inspect it.
    """

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class InfeasibleProblem(SolverFailure):
    """The QP is infeasible; ``result.certificate`` holds the proof."""


class MaxIterations(SolverFailure):
    """Iteration budget exhausted; ``result`` carries the best iterate."""
