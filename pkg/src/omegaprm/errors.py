"""Exception types shared across the package."""


class OmegaPRMError(Exception):
    """Base class for all package errors."""


class ConfigError(OmegaPRMError):
    """A configuration value violates its documented bounds."""


class InvalidAction(OmegaPRMError):
    """A state transition was attempted with an empty action."""


class TemplateError(OmegaPRMError):
    """A prompt template is missing a required placeholder."""


class CompleterUnavailable(OmegaPRMError):
    """The remote completer could not be reached within the retry budget."""


class EstimationFailed(OmegaPRMError):
    """A Monte Carlo estimation could not be completed."""


class InvalidSearchTarget(OmegaPRMError):
    """locate_first_error was called on a target violating its preconditions."""


class PoolExhausted(OmegaPRMError):
    """Selection was requested from an empty rollout pool."""


class InvalidProbability(OmegaPRMError):
    """A probability argument fell outside [0, 1]."""


class TargetTooLarge(OmegaPRMError):
    """Down-sampling was asked for more items than are available."""


class ParseError(OmegaPRMError):
    """A serialized record could not be parsed.

    Carries the 1-based line number when reading JSONL files.
    """

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class EmptyDataset(OmegaPRMError):
    """Training was requested on an empty dataset."""


class EmptySolution(OmegaPRMError):
    """Aggregation was requested over an empty list of step scores."""
