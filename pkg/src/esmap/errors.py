"""Exception types shared across the package."""


class EsmError(Exception):
    """Base class for all package-specific errors."""


class LimitExceeded(EsmError):
    """An egomotion violates the per-step action limits."""


class ParseError(EsmError):
    """Malformed maze or trajectory text."""


class InvalidMaze(EsmError):
    """Structurally broken maze (open boundary, missing start)."""


class OutsideWorld(EsmError):
    """A pose lies in a wall cell or out of bounds."""


class CollisionOnRollout(EsmError):
    """A trajectory step drives the agent into a wall."""

    def __init__(self, step_index, message=""):
        self.step_index = step_index
        super().__init__(message or f"collision at step {step_index}")


class ShapeMismatch(EsmError):
    """Operands have incompatible shapes."""


class EmptyResult(EsmError):
    """No valid triplet can be mined from the history."""


class NonMonotonicTime(EsmError):
    """A place write reuses or rewinds the step counter."""


class MissingHistory(EsmError):
    """Pose log does not cover the interval needed for drift correction."""


class DegenerateInput(EsmError):
    """A metric received a constant map where variation is required."""


class EmptyGroundTruth(EsmError):
    """The trajectory contains no revisits, so PR evaluation is undefined."""


class ConfigError(EsmError):
    """Invalid or incomplete run configuration."""


class StepFailure(EsmError):
    """Wraps an error raised inside the episode loop with its step index."""

    def __init__(self, step_index, cause):
        self.step_index = step_index
        self.cause = cause
        super().__init__(f"step {step_index}: {cause}")
