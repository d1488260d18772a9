"""
Exception hierarchy for the Orthrus engine.

Library code raises the most specific subclass; the CLI and the service
handlers translate them into exit codes and HTTP responses.
"""


class OrthrusError(Exception):
    """Base class for every engine error"""


class InvalidInputError(OrthrusError, ValueError):
    """An argument is outside its documented domain"""


class InsufficientDataError(OrthrusError):
    """Not enough samples to fit a model"""


class MalformedNetlistError(OrthrusError):
    """Netlist violates a structural invariant (cycle, double driver, ...)"""


class NetlistParseError(OrthrusError):
    """Netlist document does not follow the schema"""


class LibraryMismatchError(OrthrusError):
    """A cell type used by a netlist is missing from the library"""


class DegenerateGeometryError(OrthrusError):
    """Frontier neighbourhood has no usable geometry"""


class ConstraintError(OrthrusError):
    """Technology parameters violate the CPP constraint"""


class InvalidNormalizationError(OrthrusError):
    """Normalization reference value is zero"""


class DivergenceError(OrthrusError):
    """Surrogate training produced a non-finite loss"""


class InvalidStateError(OrthrusError):
    """Optimizer state cannot be used (e.g. empty population)"""


class ConfigError(OrthrusError):
    """Campaign or data-file configuration is invalid"""


class StageFailure(OrthrusError):
    """A campaign stage failed; carries the stage name"""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
