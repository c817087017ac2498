"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for configuration
problems, 3 for numerical failures, 4 for training failures.
"""


class NssError(Exception):
    exit_code = 2

    def __init__(self, message="", *, interval=None):
        self.interval = interval
        if interval is not None:
            message = f"event interval {interval}: {message}"
        super().__init__(message)


# configuration / input errors (exit 2)
class ConfigError(NssError):
    exit_code = 2


class ParseError(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class NonFiniteEntry(ConfigError):
    pass


class ShapeMismatch(ConfigError):
    pass


class ChecksumMismatch(ConfigError):
    pass


class SetTooLarge(ConfigError):
    pass


class ScheduleTooLong(ConfigError):
    pass


class SequentialTrainingError(ConfigError):
    """Solver-net training requested before a trained model net exists."""


# numerical failures (exit 3)
class NumericalError(NssError):
    exit_code = 3


class SingularConfiguration(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class StepUnderflow(NumericalError):
    pass


class NonFiniteOutput(NumericalError):
    pass


# training failures (exit 4)
class TrainingError(NssError):
    exit_code = 4


class NonFiniteGradient(TrainingError):
    pass


class DivergedTraining(TrainingError):
    pass
