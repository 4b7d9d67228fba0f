"""Error taxonomy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 1, DataError (and
subclasses) -> 2, anything else -> 3.
"""


class PetlabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PetlabError):
    """Invalid configuration value, key, or combination."""


class DataError(PetlabError):
    """Invalid or missing input data."""


class ShapeError(DataError):
    """Array shapes do not conform to an operation's contract."""


class DegenerateInputError(DataError):
    """Input is technically well-formed but carries no usable signal."""


class StateError(PetlabError):
    """Operation invoked on an object whose state does not permit it."""


class ContractError(PetlabError):
    """An API contract was violated (e.g. backward on a non-scalar)."""


class NumericsError(PetlabError):
    """Non-finite value encountered where finite math was required."""


class TrainingAborted(PetlabError):
    """Training stopped early; carries the last-good checkpoint path if any."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
