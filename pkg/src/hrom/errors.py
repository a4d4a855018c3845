"""Exception taxonomy shared across the package."""


class HromError(Exception):
    """Base class for all package errors."""


class PreconditionError(HromError, ValueError):
    """An argument violates an operation's contract (shape, range, coverage)."""


class DataError(HromError, ValueError):
    """Input data is unusable (non-finite entries, degenerate normalization)."""


class NonphysicalStateError(HromError, ValueError):
    """An Euler state left the physical region (rho <= 0 or p <= 0)."""


class ConvergenceError(HromError, RuntimeError):
    """An iterative solver hit its iteration cap.

    Carries the best iterate found so far in ``best`` when available.
    """

    def __init__(self, message, best=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.iterations = iterations


class TrainingError(HromError, RuntimeError):
    """Autoencoder training diverged; ``epoch`` locates the failure."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class SolverError(HromError, RuntimeError):
    """A time stepper failed; ``step_index`` locates the failing step."""

    def __init__(self, message, step_index=None, best=None):
        super().__init__(message)
        self.step_index = step_index
        self.best = best


class ConstructionError(HromError, ValueError):
    """An offline operator could not be assembled from the given inputs."""


class ConfigError(HromError, ValueError):
    """Experiment configuration failed schema validation."""


class ScheduleError(HromError, ValueError):
    """A local-manifold schedule is inconsistent (missing matrix, gap in cover)."""
