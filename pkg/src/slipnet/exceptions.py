"""Exception hierarchy. ``exit_code`` is what the CLI returns for each kind."""


class SlipNetError(Exception):
    exit_code = 1


class DomainError(SlipNetError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = 2


class SingularSpeedError(DomainError):
    """Ground speed too low for the slip ratio to be defined."""


class DegenerateLoadError(DomainError):
    """Vertical load too small to normalise a tire force into a friction value."""


class FormatError(SlipNetError):
    """Corrupt, truncated or wrong-version artifact file."""

    exit_code = 3


class TruncationError(FormatError):
    def __init__(self, message, record_index=None):
        super().__init__(message)
        self.record_index = record_index


class DivergenceError(SlipNetError, ArithmeticError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch

    exit_code = 4


class ScenarioError(SlipNetError):
    def __init__(self, message, line=None):
        if line:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

    exit_code = 5
