"""Exception hierarchy for the simulator.

Everything raised on purpose derives from SimError so callers can catch one
type at the CLI boundary and map it to an exit code.
"""


class SimError(Exception):
    """Base class for all simulator errors."""


# --- ISA level ---------------------------------------------------------------

class FieldOverflow(SimError):
    """An instruction field value does not fit its bit width."""


class IllegalInstruction(SimError):
    """The word does not match any legal opcode/funct pattern."""


class ReservedField(SimError):
    """A legal opcode/funct pattern with nonzero reserved bits (strict decode)."""


class ParseError(SimError):
    """Assembly source error; carries the 1-based line number."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


# --- machine level -----------------------------------------------------------

class OutOfBounds(SimError):
    """Memory access outside the allocated external memory."""


class Overflow(SimError):
    """A register-file write does not fit the destination region."""


class UnconfiguredPrecision(SimError):
    """VSAM issued before any VSACFG configured the array."""


class PrecisionMismatch(SimError):
    """Two packed elements of different precisions fed to one PE."""


class StreamUnderrun(SimError):
    """A systolic feed lane ran out of elements before `steps` completed."""


# --- planning / verification --------------------------------------------------

class Infeasible(SimError):
    """No schedule fits the register file even at minimum tiling."""


class ShapeMismatch(SimError):
    """Tensor dimensions inconsistent with the layer description."""


class UnknownModel(SimError):
    """Benchmark model name not in the shipped tables."""


class VerificationFailed(SimError):
    """Simulated output differs from the reference convolution."""

    def __init__(self, message: str, first_mismatch=None):
        super().__init__(message)
        self.first_mismatch = first_mismatch
