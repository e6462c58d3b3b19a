"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: :class:`DataError` -> 2,
:class:`ContractError` (and :class:`DimensionError`) -> 3.
"""


class SpanError(Exception):
    """Base class for all library errors."""


class ContractError(SpanError, ValueError):
    """A precondition on arguments was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class DataError(SpanError, ValueError):
    """Input data is malformed (bad file, non-binary entry, ragged rows, ...)."""


class ModelFormatError(DataError):
    """A serialized model could not be parsed.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DegeneracyError(SpanError, ArithmeticError):
    """A normalisation group has zero total mass."""
