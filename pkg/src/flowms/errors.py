"""Exception types shared across the package."""


class FlowMSError(Exception):
    """Base class for all flowms errors."""


class SmilesParseError(FlowMSError):
    """Base for SMILES parse failures; ``offset`` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EmptyInput(SmilesParseError):
    pass


class InvalidToken(SmilesParseError):
    pass


class UnsupportedElement(SmilesParseError):
    pass


class UnclosedBranch(SmilesParseError):
    pass


class UnclosedRing(SmilesParseError):
    pass


class DomainError(FlowMSError):
    """An argument is outside its mathematical domain."""


class SingularTime(FlowMSError):
    """Rate matrix requested at t >= 1 where the denominator vanishes."""


class ShapeMismatch(FlowMSError):
    """Tensor or vector dimensions disagree with the configured model."""


class NonFiniteGradient(FlowMSError):
    """A gradient entry came back NaN or Inf."""


class BadMagic(FlowMSError):
    """Checkpoint file does not start with the expected magic bytes."""


class VersionMismatch(FlowMSError):
    """Checkpoint format version is not supported."""


class TruncatedFile(FlowMSError):
    """Checkpoint file ended before all declared sections were read."""


class LengthMismatch(FlowMSError):
    """Fingerprints of different lengths were combined."""


class BudgetExceeded(FlowMSError):
    """Graph too large for the requested exact computation."""


class MgfParseError(FlowMSError):
    """Base for MGF parse failures; ``line`` is the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


class MalformedBlock(MgfParseError):
    pass


class BadPeakLine(MgfParseError):
    pass


class MissingPrecursor(MgfParseError):
    pass


class DataError(FlowMSError):
    """Input data files are inconsistent (bad records, id mismatches)."""


class ConfigError(FlowMSError):
    """Bad configuration or command-line usage."""
